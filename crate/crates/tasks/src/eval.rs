//! pass@n evaluation against exact targets.

use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::instance::PuzzleInstance;

/// Ranked candidate outputs for one instance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Prediction {
    pub candidates: Vec<Grid>,
    /// Mean number of outer computation steps used per token.
    pub act_steps: f64,
    /// Set when fewer distinct candidates than requested were available.
    pub short: bool,
}

pub trait Predictor {
    type Error;
    /// Up to `n` ranked candidates per instance, in batch order.
    fn predict(&mut self, batch: &[PuzzleInstance], n: usize) -> Result<Vec<Prediction>, Self::Error>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub count: usize,
    /// `pass_at[k]` is the fraction solved within the first `k + 1` candidates.
    pub pass_at: Vec<f64>,
    /// Cell accuracy of the first candidate.
    pub cell_accuracy: f64,
    pub mean_act_steps: f64,
    pub short_predictions: usize,
}

impl EvalMetrics {
    pub fn pass1(&self) -> f64 {
        self.pass_at.first().copied().unwrap_or(0.0)
    }
}

pub fn evaluate_pass_n<P: Predictor + ?Sized>(
    predictor: &mut P,
    instances: &[PuzzleInstance],
    n: usize,
    batch_size: usize,
) -> Result<EvalMetrics, P::Error> {
    assert!(n >= 1, "pass@n needs n >= 1");
    let mut hits = vec![0usize; n];
    let (mut cells_ok, mut cells_total) = (0usize, 0usize);
    let mut act = 0.0;
    let mut short = 0;
    for chunk in instances.chunks(batch_size.max(1)) {
        let preds = predictor.predict(chunk, n)?;
        assert_eq!(preds.len(), chunk.len(), "predictor returned wrong batch size");
        for (inst, pred) in chunk.iter().zip(&preds) {
            let first_hit = pred.candidates.iter().take(n).position(|c| *c == inst.target);
            if let Some(k) = first_hit {
                hits[k..].iter_mut().for_each(|h| *h += 1);
            }
            cells_total += inst.target.cells().len();
            if let Some(c) = pred.candidates.first() {
                cells_ok += c.matching_cells(&inst.target);
            }
            act += pred.act_steps;
            short += usize::from(pred.short);
        }
    }
    let count = instances.len();
    let denom = count.max(1) as f64;
    Ok(EvalMetrics {
        count,
        pass_at: hits.iter().map(|&h| h as f64 / denom).collect(),
        cell_accuracy: cells_ok as f64 / cells_total.max(1) as f64,
        mean_act_steps: act / denom,
        short_predictions: short,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::TaskFamily;

    struct Oracle;
    impl Predictor for Oracle {
        type Error = std::convert::Infallible;
        fn predict(&mut self, batch: &[PuzzleInstance], _n: usize) -> Result<Vec<Prediction>, Self::Error> {
            Ok(batch
                .iter()
                .map(|i| Prediction {
                    candidates: vec![i.target.clone()],
                    act_steps: 1.0,
                    short: false,
                })
                .collect())
        }
    }

    #[test]
    fn perfect_model_scores_one() {
        let insts: Vec<_> = (0..5)
            .map(|id| crate::families::gen_grid_task(TaskFamily::Mirror, 3, 1, id).unwrap())
            .collect();
        let m = evaluate_pass_n(&mut Oracle, &insts, 1, 2).unwrap();
        assert_eq!(m.pass_at, vec![1.0]);
        assert_eq!(m.cell_accuracy, 1.0);
        assert_eq!(m.mean_act_steps, 1.0);
    }
}
