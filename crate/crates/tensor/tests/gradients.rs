use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use urm_tensor::gradcheck::{check, op_suite, random_tensor, weighted_sum, GradCheckConfig};
use urm_tensor::{AttentionOptions, Tape, Tensor};

#[test]
fn every_op_passes_finite_differences_on_twenty_inputs() {
    let results = op_suite(20, 7, GradCheckConfig::default()).unwrap();
    assert!(results.len() >= 16);
    for r in &results {
        assert!(r.passed, "{} max rel err {:e}", r.name, r.max_rel_err);
    }
}

#[test]
fn matmul_sum_gradient_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let b = random_tensor(&mut rng, &[4, 2], -1.0, 1.0);
    let cfg = GradCheckConfig {
        tolerance: 1e-6,
        ..Default::default()
    };
    let r = check("sum(matmul)", &[a, b], |t, x| t.sum(&t.matmul(&x[0], &x[1])?), cfg).unwrap();
    assert!(r.passed, "{:e}", r.max_rel_err);
}

#[test]
fn silu_gradient_at_sampled_points() {
    let pts = [-6.0, -1.3, -0.2, 0.0, 0.4, 2.2, 7.5];
    let x = Tensor::from_f64(vec![pts.len()], &pts).unwrap();
    let cfg = GradCheckConfig {
        tolerance: 1e-6,
        ..Default::default()
    };
    let r = check("silu", &[x], |t, x| t.sum(&t.silu(&x[0])?), cfg).unwrap();
    assert!(r.passed, "{:e}", r.max_rel_err);
}

#[test]
fn rmsnorm_and_cross_entropy_at_1e5() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = GradCheckConfig {
        tolerance: 1e-5,
        ..Default::default()
    };
    let x = random_tensor(&mut rng, &[4, 6], -2.0, 2.0);
    let g = random_tensor(&mut rng, &[6], 0.5, 1.5);
    let r = check("rmsnorm", &[x, g], |t, x| weighted_sum(t, &t.rmsnorm(&x[0], &x[1], 1e-6)?, 3), cfg).unwrap();
    assert!(r.passed, "{:e}", r.max_rel_err);
    let logits = random_tensor(&mut rng, &[5, 7], -3.0, 3.0);
    let targets = [0, 6, 3, 3, 1];
    let r = check("ce", &[logits], |t, x| t.cross_entropy(&x[0], &targets, usize::MAX), cfg).unwrap();
    assert!(r.passed, "{:e}", r.max_rel_err);
}

#[test]
fn dwconv_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (t_len, m, k) = (5, 3, 2);
    let x = random_tensor(&mut rng, &[t_len, m], -1.0, 1.0);
    let w = random_tensor(&mut rng, &[m, k], -1.0, 1.0);
    let tape = Tape::new();
    let y = tape.dwconv1d(&x, &w, k - 1, t_len).unwrap();
    // zero-pad on the left, then correlate
    for t in 0..t_len {
        for c in 0..m {
            let mut acc = 0.0;
            for j in 0..k {
                let src = t as isize - (k as isize - 1) + j as isize;
                if src >= 0 {
                    acc += w.data()[c * k + j] * x.data()[src as usize * m + c];
                }
            }
            assert!((y.data()[t * m + c] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn detach_equals_constant_substitution_bitwise() {
    // g(w) = sum(silu(matmul(x, w)) * detach(matmul(x, w)))
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let w0 = random_tensor(&mut rng, &[4, 2], -1.0, 1.0);

    let tape = Tape::new();
    let w = tape.watch(&w0);
    let h = tape.matmul(&x, &w).unwrap();
    let stopped = tape.detach(&h);
    let y = tape.mul(&tape.silu(&h).unwrap(), &stopped).unwrap();
    let loss = tape.sum(&y).unwrap();
    let g1 = tape.backward(&loss).unwrap().get(&w).unwrap().to_vec();

    let constant = Tensor::new(h.shape().to_vec(), h.to_vec()).unwrap();
    let tape2 = Tape::new();
    let w2 = tape2.watch(&w0);
    let h2 = tape2.matmul(&x, &w2).unwrap();
    let y2 = tape2.mul(&tape2.silu(&h2).unwrap(), &constant).unwrap();
    let loss2 = tape2.sum(&y2).unwrap();
    let g2 = tape2.backward(&loss2).unwrap().get(&w2).unwrap().to_vec();
    assert_eq!(g1, g2);
}

#[test]
fn corrupted_backward_rule_is_caught() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&mut rng, &[6], 0.2, 2.0);
    let r = check(
        "square with wrong vjp",
        &[x],
        |t, x| {
            let data: Vec<f64> = x[0].data().iter().map(|v| v * v).collect();
            let xd = x[0].to_vec();
            // correct rule is 2x·g; this drops the factor 2
            let y = t.custom("bad_square", &[&x[0]], vec![6], data, move |g| {
                vec![g.iter().zip(&xd).map(|(g, x)| g * x).collect()]
            })?;
            t.sum(&y)
        },
        GradCheckConfig::default(),
    )
    .unwrap();
    assert!(!r.passed);
    assert!(r.max_rel_err > 0.4);
}

#[test]
fn correct_custom_rule_passes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&mut rng, &[6], 0.2, 2.0);
    let r = check(
        "square",
        &[x],
        |t, x| {
            let data: Vec<f64> = x[0].data().iter().map(|v| v * v).collect();
            let xd = x[0].to_vec();
            let y = t.custom("square", &[&x[0]], vec![6], data, move |g| {
                vec![g.iter().zip(&xd).map(|(g, x)| 2.0 * g * x).collect()]
            })?;
            t.sum(&y)
        },
        GradCheckConfig::default(),
    )
    .unwrap();
    assert!(r.passed);
}

fn attention_run(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q0 = random_tensor(&mut rng, &[8, 4], -1.0, 1.0);
    let tape = Tape::new();
    let q = tape.watch(&q0);
    let opts = AttentionOptions {
        seq_len: 4,
        heads: 2,
        scale: 0.5,
        softmax: true,
        causal: false,
        key_mask: None,
    };
    let (out, _) = tape.attention(&q, &q, &q, opts).unwrap();
    let loss = weighted_sum(&tape, &out, 4).unwrap();
    let g = tape.backward(&loss).unwrap();
    (out.to_vec(), g.get(&q).unwrap().to_vec())
}

#[test]
fn forward_and_backward_are_deterministic() {
    let a = attention_run(21);
    let b = attention_run(21);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn reverse_sweep_visits_each_record_once() {
    // y = x·x·x built from a chain of 2 records; gradient 3x².
    let tape = Tape::<f64>::new();
    let x = tape.watch(&Tensor::scalar(2.0));
    let x2 = tape.mul(&x, &x).unwrap();
    let x3 = tape.mul(&x2, &x).unwrap();
    assert_eq!(tape.len(), 2);
    let g = tape.backward(&x3).unwrap();
    assert_eq!(g.get(&x).unwrap(), &[12.0]);
}
