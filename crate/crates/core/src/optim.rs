//! Optimizers, learning-rate schedule and the EMA shadow.
//!
//! Two update rules are provided. AdamAtan2 replaces Adam's `m / (√v + ε)`
//! by `atan2(m, √v)`, which is bounded by π/2 and needs no epsilon. Muon
//! orthogonalises the momentum of each projection matrix with a quintic
//! Newton–Schulz iteration; every non-matrix parameter still uses AdamAtan2.

use serde::{Deserialize, Serialize};
use urm_tensor::Scalar;

use crate::error::{CoreError, Result};
use crate::params::{ParamKind, ParamStore};

/// Quintic Newton–Schulz coefficients.
pub const NS_COEFFS: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);
pub const NS_STEPS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    AdamAtan2,
    Muon,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Constant,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Learning rate of the Muon-updated matrices.
    pub muon_lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub beta1: f64,
    pub beta2: f64,
    /// `θ ← θ − lr·a·atan2(m̂, b·√v̂)`.
    pub atan2_a: f64,
    pub atan2_b: f64,
    pub weight_decay: f64,
    pub puzzle_lr: f64,
    pub puzzle_weight_decay: f64,
    pub warmup_steps: u64,
    pub schedule: ScheduleKind,
    /// Cosine floor as a fraction of the base rate.
    pub min_lr_ratio: f64,
    pub ema_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::AdamAtan2,
            lr: 1e-4,
            muon_lr: 0.02,
            momentum: 0.95,
            nesterov: true,
            beta1: 0.9,
            beta2: 0.95,
            atan2_a: 1.0,
            atan2_b: 1.0,
            weight_decay: 0.1,
            puzzle_lr: 1e-2,
            puzzle_weight_decay: 0.1,
            warmup_steps: 0,
            schedule: ScheduleKind::Constant,
            min_lr_ratio: 0.0,
            ema_decay: 0.999,
        }
    }
}

impl OptimConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, x) in [("lr", self.lr), ("muon_lr", self.muon_lr), ("puzzle_lr", self.puzzle_lr)] {
            if !(x.is_finite() && x >= 0.0) {
                v.push(format!("{name} must be finite and non-negative"));
            }
        }
        for (name, x) in [("beta1", self.beta1), ("beta2", self.beta2), ("momentum", self.momentum)] {
            if !(0.0..1.0).contains(&x) {
                v.push(format!("{name} must lie in [0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            v.push("ema_decay must lie in [0, 1]".into());
        }
        if self.weight_decay < 0.0 || self.puzzle_weight_decay < 0.0 {
            v.push("weight decay must be non-negative".into());
        }
        v
    }
}

/// Learning-rate multiplier in `[0, 1]`: linear warmup, then constant or a
/// cosine decay down to `min_lr_ratio` at `total` steps.
pub fn lr_factor(cfg: &OptimConfig, step: u64, total: u64) -> f64 {
    if step < cfg.warmup_steps {
        return step as f64 / cfg.warmup_steps as f64;
    }
    match cfg.schedule {
        ScheduleKind::Constant => 1.0,
        ScheduleKind::Cosine => {
            let span = total.saturating_sub(cfg.warmup_steps).max(1) as f64;
            let progress = ((step - cfg.warmup_steps) as f64 / span).min(1.0);
            let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * cos
        }
    }
}

/// Hyperparameters of one AdamAtan2 update.
#[derive(Clone, Copy, Debug)]
pub struct AdamHp {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub a: f64,
    pub b: f64,
}

/// One AdamAtan2 step on a flat buffer. `t` is the 1-based step count used
/// for bias correction.
pub fn adam_atan2_step<S: Scalar>(theta: &mut [S], grad: &[S], m: &mut [S], v: &mut [S], t: u64, hp: &AdamHp) {
    let c1 = 1.0 - hp.beta1.powi(t as i32);
    let c2 = 1.0 - hp.beta2.powi(t as i32);
    let decay = 1.0 - hp.lr * hp.weight_decay;
    for i in 0..theta.len() {
        let g = grad[i].as_f64();
        let mi = hp.beta1 * m[i].as_f64() + (1.0 - hp.beta1) * g;
        let vi = hp.beta2 * v[i].as_f64() + (1.0 - hp.beta2) * g * g;
        m[i] = S::of(mi);
        v[i] = S::of(vi);
        let step = hp.a * (mi / c1).atan2(hp.b * (vi / c2).sqrt());
        theta[i] = S::of(theta[i].as_f64() * decay - hp.lr * step);
    }
}

fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            let row = &b[p * m..(p + 1) * m];
            for (o, &y) in out[i * m..(i + 1) * m].iter_mut().zip(row) {
                *o += x * y;
            }
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Approximately orthogonalises a `rows × cols` matrix: the result has the
/// same singular vectors with singular values pushed towards 1.
///
/// The input is first divided by its Frobenius norm, which bounds the
/// spectral norm by 1. A zero matrix maps to zero.
pub fn newton_schulz(g: &[f64], rows: usize, cols: usize, steps: usize) -> Vec<f64> {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return vec![0.0; g.len()];
    }
    // iterate on the wide orientation so X Xᵀ is the smaller Gram matrix
    let tall = rows > cols;
    let (r, c) = if tall { (cols, rows) } else { (rows, cols) };
    let mut x: Vec<f64> = g.iter().map(|v| v / norm).collect();
    if tall {
        x = transpose(&x, rows, cols);
    }
    let (a, b, cc) = NS_COEFFS;
    for _ in 0..steps {
        let gram = matmul(&x, &transpose(&x, r, c), r, c, r);
        let gram2 = matmul(&gram, &gram, r, r, r);
        let poly: Vec<f64> = gram.iter().zip(&gram2).map(|(g1, g2)| b * g1 + cc * g2).collect();
        let px = matmul(&poly, &x, r, r, c);
        x = x.iter().zip(&px).map(|(xi, pi)| a * xi + pi).collect();
    }
    if tall {
        transpose(&x, r, c)
    } else {
        x
    }
}

/// Hyperparameters of one Muon update.
#[derive(Clone, Copy, Debug)]
pub struct MuonHp {
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub nesterov: bool,
}

/// One Muon step on a `rows × cols` matrix.
pub fn muon_step<S: Scalar>(theta: &mut [S], grad: &[S], buf: &mut [S], rows: usize, cols: usize, hp: &MuonHp) {
    let mut update = Vec::with_capacity(grad.len());
    for (b, &g) in buf.iter_mut().zip(grad) {
        let g = g.as_f64();
        let nb = hp.momentum * b.as_f64() + g;
        *b = S::of(nb);
        update.push(if hp.nesterov { g + hp.momentum * nb } else { nb });
    }
    let ortho = newton_schulz(&update, rows, cols, NS_STEPS);
    let scale = (rows as f64 / cols as f64).max(1.0).sqrt();
    let decay = 1.0 - hp.lr * hp.weight_decay;
    for (p, o) in theta.iter_mut().zip(ortho) {
        *p = S::of(p.as_f64() * decay - hp.lr * scale * o);
    }
}

/// Which update rule and hyperparameters a parameter receives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub rule: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub params: Vec<String>,
}

/// Partitions parameters into groups. Muon only ever receives projection
/// matrices; puzzle embeddings get their own rate and decay; norm gains are
/// not decayed.
pub fn param_groups<S: Scalar>(cfg: &OptimConfig, store: &ParamStore<S>) -> Vec<ParamGroup> {
    let mut groups: Vec<ParamGroup> = Vec::new();
    for p in store.iter() {
        let (name, rule, lr, wd) = match (p.kind, cfg.kind) {
            (ParamKind::Matrix, OptimizerKind::Muon) => ("matrix", OptimizerKind::Muon, cfg.muon_lr, cfg.weight_decay),
            (ParamKind::PuzzleEmbedding, _) => ("puzzle", OptimizerKind::AdamAtan2, cfg.puzzle_lr, cfg.puzzle_weight_decay),
            (ParamKind::Vector, _) => ("norm", OptimizerKind::AdamAtan2, cfg.lr, 0.0),
            _ => ("main", OptimizerKind::AdamAtan2, cfg.lr, cfg.weight_decay),
        };
        match groups.iter_mut().find(|g| g.name == name) {
            Some(g) => g.params.push(p.name.clone()),
            None => groups.push(ParamGroup {
                name: name.into(),
                rule,
                lr,
                weight_decay: wd,
                params: vec![p.name.clone()],
            }),
        }
    }
    groups
}

#[derive(Clone, Debug, PartialEq)]
enum Slot<S> {
    Adam { m: Vec<S>, v: Vec<S> },
    Muon { buf: Vec<S> },
}

/// Per-parameter optimizer state plus the EMA shadow.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<S: Scalar> {
    pub cfg: OptimConfig,
    /// Number of completed updates.
    pub step: u64,
    /// Planned total steps, used by the cosine schedule.
    pub total_steps: u64,
    /// Per store index: group learning rate and decay.
    hp: Vec<(OptimizerKind, f64, f64)>,
    slots: Vec<Slot<S>>,
    pub ema: Ema<S>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(cfg: OptimConfig, store: &ParamStore<S>, total_steps: u64) -> Result<Self> {
        let bad = cfg.violations();
        if !bad.is_empty() {
            return Err(CoreError::Config(bad));
        }
        let groups = param_groups(&cfg, store);
        let mut hp = vec![(OptimizerKind::AdamAtan2, 0.0, 0.0); store.len()];
        for g in &groups {
            for name in &g.params {
                hp[store.index_of(name)?] = (g.rule, g.lr, g.weight_decay);
            }
        }
        let slots = store
            .iter()
            .zip(&hp)
            .map(|(p, (rule, _, _))| {
                let n = p.value.numel();
                match rule {
                    OptimizerKind::Muon => Slot::Muon { buf: vec![S::zero(); n] },
                    OptimizerKind::AdamAtan2 => Slot::Adam {
                        m: vec![S::zero(); n],
                        v: vec![S::zero(); n],
                    },
                }
            })
            .collect();
        Ok(Self {
            ema: Ema::new(store, cfg.ema_decay),
            cfg,
            step: 0,
            total_steps,
            hp,
            slots,
        })
    }

    /// Learning-rate multiplier for the next update.
    pub fn lr_factor(&self) -> f64 {
        lr_factor(&self.cfg, self.step, self.total_steps)
    }

    /// Applies one update and then refreshes the EMA. `grads[i]` belongs to
    /// store parameter `i`; a non-finite gradient aborts before anything is
    /// modified.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &[Vec<S>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(CoreError::Batch(format!("{} gradients for {} parameters", grads.len(), store.len())));
        }
        for (p, g) in store.iter().zip(grads) {
            if g.len() != p.value.numel() {
                return Err(CoreError::Batch(format!("gradient of `{}` has the wrong size", p.name)));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(CoreError::NonFinite {
                    what: "gradient",
                    name: p.name.clone(),
                });
            }
        }
        let factor = self.lr_factor();
        let t = self.step + 1;
        for (i, g) in grads.iter().enumerate() {
            let (_, lr, wd) = self.hp[i];
            let param = store.param_mut(i);
            let shape = param.value.shape().to_vec();
            let theta = param.value.data_mut();
            match &mut self.slots[i] {
                Slot::Adam { m, v } => {
                    let hp = AdamHp {
                        lr: lr * factor,
                        weight_decay: wd,
                        beta1: self.cfg.beta1,
                        beta2: self.cfg.beta2,
                        a: self.cfg.atan2_a,
                        b: self.cfg.atan2_b,
                    };
                    adam_atan2_step(theta, g, m, v, t, &hp);
                }
                Slot::Muon { buf } => {
                    let hp = MuonHp {
                        lr: lr * factor,
                        weight_decay: wd,
                        momentum: self.cfg.momentum,
                        nesterov: self.cfg.nesterov,
                    };
                    muon_step(theta, g, buf, shape[0], shape[1], &hp);
                }
            }
        }
        self.step = t;
        self.ema.update(store);
        Ok(())
    }

    /// Flat state buffers in a stable order, named by parameter and role.
    pub fn buffers(&self, store: &ParamStore<S>) -> Vec<(String, &[S])> {
        let mut out = Vec::new();
        for (p, slot) in store.iter().zip(&self.slots) {
            match slot {
                Slot::Adam { m, v } => {
                    out.push((format!("{}#m", p.name), m.as_slice()));
                    out.push((format!("{}#v", p.name), v.as_slice()));
                }
                Slot::Muon { buf } => out.push((format!("{}#momentum", p.name), buf.as_slice())),
            }
        }
        out
    }

    /// Restores buffers produced by [`Optimizer::buffers`].
    pub fn load_buffers(&mut self, store: &ParamStore<S>, mut named: Vec<(String, Vec<S>)>) -> Result<()> {
        named.reverse();
        for (p, slot) in store.iter().zip(&mut self.slots) {
            let mut next = |role: &str, dst: &mut Vec<S>| -> Result<()> {
                let want = format!("{}#{role}", p.name);
                match named.pop() {
                    Some((name, data)) if name == want && data.len() == dst.len() => {
                        *dst = data;
                        Ok(())
                    }
                    _ => Err(CoreError::Checkpoint(format!("missing or mis-sized optimizer buffer `{want}`"))),
                }
            };
            match slot {
                Slot::Adam { m, v } => {
                    next("m", m)?;
                    next("v", v)?;
                }
                Slot::Muon { buf } => next("momentum", buf)?,
            }
        }
        if named.is_empty() {
            Ok(())
        } else {
            Err(CoreError::Checkpoint(format!("{} unexpected optimizer buffers", named.len())))
        }
    }
}

/// Exponential moving average of the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Ema<S: Scalar> {
    pub decay: f64,
    pub shadow: Vec<Vec<S>>,
}

impl<S: Scalar> Ema<S> {
    /// Starts the shadow at the current parameters.
    pub fn new(store: &ParamStore<S>, decay: f64) -> Self {
        Self {
            decay,
            shadow: store.iter().map(|p| p.value.to_vec()).collect(),
        }
    }

    /// `shadow ← β·shadow + (1 − β)·θ`.
    pub fn update(&mut self, store: &ParamStore<S>) {
        let beta = self.decay;
        for (sh, p) in self.shadow.iter_mut().zip(store.iter()) {
            for (s, &x) in sh.iter_mut().zip(p.value.data()) {
                *s = S::of(beta * s.as_f64() + (1.0 - beta) * x.as_f64());
            }
        }
    }

    /// A copy of `store` holding the shadow values.
    pub fn apply_to(&self, store: &ParamStore<S>) -> ParamStore<S> {
        let mut out = store.clone();
        for (p, sh) in out.iter_mut().zip(&self.shadow) {
            p.value.data_mut().clone_from(sh);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_points() {
        let cfg = OptimConfig {
            warmup_steps: 10,
            schedule: ScheduleKind::Cosine,
            ..OptimConfig::default()
        };
        assert_eq!(lr_factor(&cfg, 0, 110), 0.0);
        assert_eq!(lr_factor(&cfg, 5, 110), 0.5);
        assert_eq!(lr_factor(&cfg, 10, 110), 1.0);
        assert!((lr_factor(&cfg, 60, 110) - 0.5).abs() < 1e-12);
        assert!(lr_factor(&cfg, 110, 110).abs() < 1e-12);
        let flat = OptimConfig {
            warmup_steps: 4,
            ..OptimConfig::default()
        };
        assert_eq!(lr_factor(&flat, 1000, 10), 1.0);
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut theta = vec![2.0f64, -1.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        let hp = AdamHp {
            lr: 0.1,
            weight_decay: 0.5,
            beta1: 0.9,
            beta2: 0.95,
            a: 1.0,
            b: 1.0,
        };
        adam_atan2_step(&mut theta, &[0.0, 0.0], &mut m, &mut v, 1, &hp);
        assert_eq!(theta, vec![2.0 * 0.95, -0.95]);
    }

    #[test]
    fn zero_matrix_orthogonalises_to_zero() {
        assert_eq!(newton_schulz(&[0.0; 6], 2, 3, 5), vec![0.0; 6]);
    }
}
