//! Decoding and ranked multi-candidate prediction.
//!
//! The first candidate is always the greedy decode of the untouched input.
//! Further candidates come from symmetry-augmented views of the input: each
//! view is decoded, mapped back through the inverse augmentation, and the
//! distinct grids are ranked by the log-sum-exp of their decode scores.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use urm_tasks::tokens::{cell_positions, COLOR_OFFSET};
use urm_tasks::{Augmentation, Grid, Prediction, Predictor, PuzzleInstance, NUM_COLORS};
use urm_tensor::Scalar;

use crate::error::{CoreError, Result};
use crate::model::{Batch, Urm};

/// Greedy decode of one sequence's logits (`[T × V]`, row-major) into a
/// `rows × cols` grid, with the summed log-probability of the chosen colors.
pub fn decode(logits: &[f64], vocab: usize, rows: usize, cols: usize) -> Result<(Grid, f64)> {
    let mut cells = Vec::with_capacity(rows * cols);
    let mut score = 0.0;
    for pos in cell_positions(rows, cols) {
        let row = logits
            .get(pos * vocab..(pos + 1) * vocab)
            .ok_or_else(|| CoreError::Batch(format!("logits too short for position {pos}")))?;
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let (color, best) = row[COLOR_OFFSET..COLOR_OFFSET + NUM_COLORS]
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (c, v)| if v > acc.1 { (c, v) } else { acc });
        cells.push(color as u8);
        score += best - lse;
    }
    Ok((Grid::new(rows, cols, cells)?, score))
}

fn logsumexp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Distinct augmentations for instance `inst`, identity first.
fn views(inst: &PuzzleInstance, count: usize, seed: u64) -> Vec<Augmentation> {
    let mut out = vec![Augmentation::identity()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ inst.id as u64);
    // valid sets can be small (gravity has 2 symmetries and no colors for
    // some sizes), so give up after a bounded number of draws
    for _ in 0..count * 20 {
        if out.len() >= count {
            break;
        }
        let a = Augmentation::random(inst.family, inst.input.rows(), 0, &mut rng);
        if !out.contains(&a) {
            out.push(a);
        }
    }
    out
}

/// Predicts up to `n` ranked candidates per instance.
pub fn predict_batch<S: Scalar>(model: &Urm<S>, insts: &[PuzzleInstance], n: usize, seed: u64) -> Result<Vec<Prediction>> {
    let per_inst: Vec<Vec<Augmentation>> = insts.iter().map(|i| views(i, n, seed)).collect();
    let mut expanded = Vec::new();
    for (inst, augs) in insts.iter().zip(&per_inst) {
        expanded.extend(augs.iter().map(|a| a.apply_instance(inst)));
    }
    let batch = Batch::from_instances(&expanded, &model.cfg)?;
    let out = model.infer(&batch, false)?;
    let logits = out.logits.to_f64_vec();
    let (t, v) = (batch.seq_len, model.cfg.vocab_size);

    let mut preds = Vec::with_capacity(insts.len());
    let mut seq = 0;
    for augs in &per_inst {
        let mut ranked: Vec<(Grid, f64)> = Vec::new();
        let mut slot: HashMap<Grid, usize> = HashMap::new();
        let mut greedy = None;
        let mut steps = 0.0;
        for (k, aug) in augs.iter().enumerate() {
            let view = &expanded[seq];
            let (g, score) = decode(&logits[seq * t * v..(seq + 1) * t * v], v, view.input.rows(), view.input.cols())?;
            if k == 0 {
                let halts = &out.act.halt_step[seq * t..(seq + 1) * t];
                steps = halts.iter().sum::<usize>() as f64 / t as f64;
            }
            seq += 1;
            let Ok(g) = aug.invert(&g) else { continue };
            if k == 0 {
                greedy = Some(g.clone());
            }
            match slot.get(&g) {
                Some(&i) => ranked[i].1 = logsumexp(ranked[i].1, score),
                None => {
                    slot.insert(g.clone(), ranked.len());
                    ranked.push((g, score));
                }
            }
        }
        let greedy = greedy.expect("identity view always inverts");
        let mut candidates = vec![greedy.clone()];
        ranked.retain(|(g, _)| *g != greedy);
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        candidates.extend(ranked.into_iter().map(|(g, _)| g).take(n.saturating_sub(1)));
        let short = candidates.len() < n;
        preds.push(Prediction {
            candidates,
            act_steps: steps,
            short,
        });
    }
    Ok(preds)
}

/// [`Predictor`] over a fixed model.
pub struct UrmPredictor<'a, S: Scalar> {
    pub model: &'a Urm<S>,
    pub seed: u64,
}

impl<S: Scalar> Predictor for UrmPredictor<'_, S> {
    type Error = CoreError;

    fn predict(&mut self, batch: &[PuzzleInstance], n: usize) -> Result<Vec<Prediction>> {
        predict_batch(self.model, batch, n, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use urm_tasks::tokens::VOCAB_SIZE;

    #[test]
    fn decode_ignores_structure_tokens() {
        // 1×1 grid: position 0 is the cell
        let mut logits = vec![0.0; 3 * VOCAB_SIZE];
        logits[0] = 50.0; // PAD wins overall but is not a color
        logits[COLOR_OFFSET + 4] = 3.0;
        let (g, score) = decode(&logits, VOCAB_SIZE, 1, 1).unwrap();
        assert_eq!(g.cells(), &[4]);
        assert!(score < -40.0);
    }

    #[test]
    fn logsumexp_matches_direct() {
        assert!((logsumexp(1.0, 2.0) - (1f64.exp() + 2f64.exp()).ln()).abs() < 1e-12);
        assert_eq!(logsumexp(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
    }
}
