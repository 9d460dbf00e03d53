//! Central finite-difference gradient checks (double precision only).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::ops::nn::AttentionOptions;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Step and acceptance threshold for a finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so that entries whose true
    /// gradient is essentially zero are compared in absolute terms.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    pub passed: bool,
}

/// Relative error of one gradient entry.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of `f` with central differences over every
/// element of every input. `f` must return a single-element tensor.
pub fn check<F>(name: &str, inputs: &[Tensor<f64>], f: F, cfg: GradCheckConfig) -> Result<GradCheckResult>
where
    F: Fn(&Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let tape = Tape::new();
    let watched: Vec<Tensor<f64>> = inputs.iter().map(|t| tape.watch(t)).collect();
    let out = f(&tape, &watched)?;
    let grads = tape.backward(&out)?;
    let analytic: Vec<Vec<f64>> = watched.iter().map(|w| grads.get_or_zeros(w)).collect();

    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::inference();
        Ok(f(&tape, vals)?.item())
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    let (mut max_rel, mut max_abs, mut checked) = (0.0f64, 0.0f64, 0usize);
    for (i, grad) in analytic.iter().enumerate() {
        for (j, &a) in grad.iter().enumerate() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + cfg.step;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - cfg.step;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            max_abs = max_abs.max((a - numeric).abs());
            max_rel = max_rel.max(relative_error(a, numeric, cfg.floor));
            checked += 1;
        }
    }
    Ok(GradCheckResult {
        name: name.to_string(),
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        checked,
        passed: max_rel < cfg.tolerance,
    })
}

/// `Σ out ⊙ w` for a fixed random `w`, used to reduce op outputs to a scalar
/// without symmetric cancellations.
pub fn weighted_sum(tape: &Tape<f64>, out: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let w: Vec<f64> = (0..out.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = Tensor::new(out.shape().to_vec(), w)?;
    let prod = tape.mul(out, &w)?;
    tape.sum(&prod)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Uniform draws from `[−hi, −lo] ∪ [lo, hi]`, keeping clear of kinks at zero.
fn away_from_zero(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).expect("shape")
}

type OpCase = fn(&mut ChaCha8Rng, u64, GradCheckConfig) -> Result<GradCheckResult>;

fn case_matmul(rng: &mut ChaCha8Rng, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckResult> {
    let (m, k, n) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
    let a = random_tensor(rng, &[m, k], -1.0, 1.0);
    let b = random_tensor(rng, &[k, n], -1.0, 1.0);
    check("matmul", &[a, b], |t, x| weighted_sum(t, &t.matmul(&x[0], &x[1])?, seed), cfg)
}

fn case_transpose(rng: &mut ChaCha8Rng, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckResult> {
    let a = random_tensor(rng, &[3, 2], -1.0, 1.0);
    check("transpose", &[a], |t, x| weighted_sum(t, &t.transpose(&x[0])?, seed), cfg)
}

fn case_add_sub_mul(rng: &mut ChaCha8Rng, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckResult> {
    let a = random_tensor(rng, &[2, 3], -1.0, 1.0);
    let b = random_tensor(rng, &[2, 3], -1.0, 1.0);
    let c = random_tensor(rng, &[2, 3], -1.0, 1.0);
    check(
        "add/sub/mul",
        &[a, b, c],
        |t, x| {
            let s = t.add(&x[0], &x[1])?;
            let d = t.sub(&s, &x[2])?;
            let p = t.mul(&d, &x[1])?;
            let q = t.affine(&p, 0.7, 0.2)?;
            weighted_sum(t, &q, seed)
        },
        cfg,
    )
}

fn case_broadcasts(rng: &mut ChaCha8Rng, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckResult> {
    let x = random_tensor(rng, &[3, 4], -1.0, 1.0);
    let r = random_tensor(rng, &[4], -1.0, 1.0);
    let g = random_tensor(rng, &[4], -1.0, 1.0);
    let w = random_tensor(rng, &[3, 1], -1.0, 1.0);
    check(
        "add_row/mul_row/mul_col",
        &[x, r, g, w],
        |t, x| {
            let y = t.add_row(&x[0], &x[1])?;
            let y = t.mul_row(&y, &x[2])?;
            let y = t.mul_col(&y, &x[3])?;
            weighted_sum(t, &y, seed)
        },
        cfg,
    )
}

fn case_silu(rng: &mut ChaCha8Rng, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckResult> {
    let x = random_tensor(rng, &[2, 5], -4.0, 4.0);
    check("silu", &[x], |t, x| weighted_sum(t, &t.silu(&x[0])?, seed), cfg)
}

fn case_relu(rng: &mut ChaCha8Rng, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckResult> {
    let x = away_from_zero(rng, &[2, 5], 0.05, 2.0);
    check("relu", &[x], |t, x| weighted_sum(t, &t.relu(&x[0])?, seed), cfg)
}

fn case_sigmoid(rng: &mut ChaCha8Rng, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckResult> {
    let x = random_tensor(rng, &[2, 4], -5.0, 5.0);
    check("sigmoid", &[x], |t, x| weighted_sum(t, &t.sigmoid(&x[0])?, seed), cfg)
}

fn case_softmax(rng: &mut ChaCha8Rng, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckResult> {
    let x = random_tensor(rng, &[3, 4], -3.0, 3.0);
    check("softmax_lastdim", &[x], |t, x| weighted_sum(t, &t.softmax_lastdim(&x[0])?, seed), cfg)
}

fn case_rmsnorm(rng: &mut ChaCha8Rng, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckResult> {
    let x = random_tensor(rng, &[3, 5], -2.0, 2.0);
    let g = random_tensor(rng, &[5], 0.5, 1.5);
    check("rmsnorm", &[x, g], |t, x| weighted_sum(t, &t.rmsnorm(&x[0], &x[1], 1e-6)?, seed), cfg)
}

fn case_dwconv(rng: &mut ChaCha8Rng, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckResult> {
    let k = rng.random_range(1..4);
    let x = random_tensor(rng, &[6, 3], -1.0, 1.0);
    let w = random_tensor(rng, &[3, k], -1.0, 1.0);
    check(
        "dwconv1d",
        &[x, w],
        |t, x| weighted_sum(t, &t.dwconv1d(&x[0], &x[1], k - 1, 3)?, seed),
        cfg,
    )
}

fn case_cross_entropy(rng: &mut ChaCha8Rng, _seed: u64, cfg: GradCheckConfig) -> Result<GradCheckResult> {
    let x = random_tensor(rng, &[4, 5], -2.0, 2.0);
    let targets: Vec<usize> = (0..4)
        .map(|i| if i == 2 { usize::MAX } else { rng.random_range(0..5) })
        .collect();
    check("cross_entropy", &[x], move |t, x| t.cross_entropy(&x[0], &targets, usize::MAX), cfg)
}

fn case_embedding(rng: &mut ChaCha8Rng, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckResult> {
    let table = random_tensor(rng, &[4, 3], -1.0, 1.0);
    let ids: Vec<usize> = (0..5).map(|_| rng.random_range(0..4)).collect();
    check("embedding", &[table], move |t, x| weighted_sum(t, &t.embedding(&x[0], &ids)?, seed), cfg)
}

fn case_shape_ops(rng: &mut ChaCha8Rng, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckResult> {
    let a = random_tensor(rng, &[2, 4], -1.0, 1.0);
    let b = random_tensor(rng, &[2, 2], -1.0, 1.0);
    check(
        "concat/slice/repeat/reshape/mean",
        &[a, b],
        |t, x| {
            let c = t.concat_cols(&[&x[0], &x[1]])?;
            let s = t.slice_cols(&c, 1, 5)?;
            let r = t.repeat_rows(&s, 2)?;
            let top = t.slice_rows(&r, 1, 3)?;
            let stacked = t.concat_rows(&[&top, &s])?;
            let flat = t.reshape(&stacked, vec![16])?;
            let m = t.mean(&t.mul(&flat, &flat)?)?;
            let w = weighted_sum(t, &flat, seed)?;
            t.add(&m, &w)
        },
        cfg,
    )
}

fn case_segment_mean(rng: &mut ChaCha8Rng, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckResult> {
    let x = random_tensor(rng, &[6, 2], -1.0, 1.0);
    check(
        "segment_mean_broadcast",
        &[x],
        |t, x| weighted_sum(t, &t.segment_mean_broadcast(&x[0], 3)?, seed),
        cfg,
    )
}

fn case_attention(rng: &mut ChaCha8Rng, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckResult> {
    let softmax = rng.random_bool(0.75);
    let causal = rng.random_bool(0.3);
    let q = random_tensor(rng, &[6, 4], -1.0, 1.0);
    let k = random_tensor(rng, &[6, 4], -1.0, 1.0);
    let v = random_tensor(rng, &[6, 4], -1.0, 1.0);
    let mask: Vec<bool> = (0..6).map(|i| i % 3 != 2 || rng.random_bool(0.5)).collect();
    check(
        "attention",
        &[q, k, v],
        move |t, x| {
            let opts = AttentionOptions {
                seq_len: 3,
                heads: 2,
                scale: 0.7,
                softmax,
                causal,
                key_mask: Some(&mask),
            };
            let (out, _) = t.attention(&x[0], &x[1], &x[2], opts)?;
            weighted_sum(t, &out, seed)
        },
        cfg,
    )
}

fn case_rope(rng: &mut ChaCha8Rng, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckResult> {
    let x = random_tensor(rng, &[6, 8], -1.0, 1.0);
    check("rope", &[x], |t, x| weighted_sum(t, &t.rope(&x[0], 3, 2, 10000.0)?, seed), cfg)
}

const OP_CASES: &[OpCase] = &[
    case_matmul,
    case_transpose,
    case_add_sub_mul,
    case_broadcasts,
    case_silu,
    case_relu,
    case_sigmoid,
    case_softmax,
    case_rmsnorm,
    case_dwconv,
    case_cross_entropy,
    case_embedding,
    case_shape_ops,
    case_segment_mean,
    case_attention,
    case_rope,
];

/// Runs every differentiable op on `trials` random inputs and keeps the
/// worst result per op.
pub fn op_suite(trials: usize, seed: u64, cfg: GradCheckConfig) -> Result<Vec<GradCheckResult>> {
    let mut results = Vec::with_capacity(OP_CASES.len());
    for (i, case) in OP_CASES.iter().enumerate() {
        let mut worst: Option<GradCheckResult> = None;
        let mut checked = 0;
        for trial in 0..trials {
            let s = seed.wrapping_mul(1_000_003).wrapping_add((i * 1000 + trial) as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let r = case(&mut rng, s, cfg)?;
            checked += r.checked;
            if worst.as_ref().is_none_or(|w| r.max_rel_err > w.max_rel_err) {
                worst = Some(r);
            }
        }
        if let Some(mut w) = worst {
            w.checked = checked;
            results.push(w);
        }
    }
    Ok(results)
}
