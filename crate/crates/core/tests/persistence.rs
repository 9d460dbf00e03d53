use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use urm_core::checkpoint::Checkpoint;
use urm_core::dump::AttentionDump;
use urm_core::{sample_batch, train_step, Batch, ModelConfig, OptimConfig, Optimizer, OptimizerKind, Urm};
use urm_tasks::sudoku::gen_mini_sudoku;
use urm_tasks::PuzzleInstance;

fn train_set() -> Vec<PuzzleInstance> {
    (0..12).map(|i| gen_mini_sudoku(4, 6, 2, i).unwrap().instance).collect()
}

fn cfg() -> ModelConfig {
    ModelConfig {
        layers: 2,
        hidden: 16,
        heads: 2,
        inner_loops: 3,
        forward_only_loops: 1,
        act_max_steps: 2,
        max_seq_len: 21,
        puzzle_count: 12,
        ..ModelConfig::default()
    }
}

fn run(model: &mut Urm<f32>, opt: &mut Optimizer<f32>, rng: &mut ChaCha8Rng, steps: usize) -> Vec<f64> {
    let data = train_set();
    (0..steps)
        .map(|_| {
            let batch = sample_batch(&data, 4, true, &model.cfg, rng).unwrap();
            train_step(model, opt, &batch).unwrap().loss
        })
        .collect()
}

#[test]
fn resume_from_checkpoint_is_bitwise_identical() {
    for kind in [OptimizerKind::AdamAtan2, OptimizerKind::Muon] {
        let ocfg = OptimConfig {
            kind,
            lr: 1e-3,
            warmup_steps: 2,
            ..OptimConfig::default()
        };
        let mut model = Urm::<f32>::new(cfg(), 5).unwrap();
        let mut opt = Optimizer::new(ocfg.clone(), &model.params, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        run(&mut model, &mut opt, &mut rng, 3);
        let bytes = Checkpoint::capture("{}".into(), &model, &opt, &rng).to_bytes();
        let straight = run(&mut model, &mut opt, &mut rng, 3);

        let ckpt = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ckpt.to_bytes(), bytes);
        let mut resumed = Urm::<f32>::new(cfg(), 999).unwrap();
        let mut ropt = Optimizer::new(ocfg, &resumed.params, 6).unwrap();
        ckpt.restore_into(&mut resumed, &mut ropt).unwrap();
        let mut rrng = ckpt.rng.restore();
        let again = run(&mut resumed, &mut ropt, &mut rrng, 3);

        assert_eq!(straight, again);
        for (a, b) in model.params.iter().zip(resumed.params.iter()) {
            assert_eq!(a.value.data(), b.value.data(), "{}", a.name);
        }
        assert_eq!(opt, ropt);
    }
}

#[test]
fn checkpoint_rejects_a_different_architecture() {
    let model = Urm::<f32>::new(cfg(), 5).unwrap();
    let opt = Optimizer::new(OptimConfig::default(), &model.params, 1).unwrap();
    let ckpt = Checkpoint::capture("{}".into(), &model, &opt, &ChaCha8Rng::seed_from_u64(0));
    let other_cfg = ModelConfig { hidden: 8, ..cfg() };
    let mut other = Urm::<f32>::new(other_cfg, 0).unwrap();
    let mut other_opt = Optimizer::new(OptimConfig::default(), &other.params, 1).unwrap();
    assert!(ckpt.restore_into(&mut other, &mut other_opt).is_err());
}

#[test]
fn attention_dump_round_trips_and_entropy_recomputes() {
    let model = Urm::<f32>::new(cfg(), 1).unwrap();
    let inst = &train_set()[0];
    let batch = Batch::from_instances(std::slice::from_ref(inst), &model.cfg).unwrap();
    let out = model.infer(&batch, true).unwrap();
    let dump = AttentionDump::from_record(&out.attention, model.cfg.layers).unwrap();
    let loops = out.act.steps_run * model.cfg.inner_loops;
    assert_eq!(dump.dims, [2, loops, 2, 21, 21]);

    let dir = tempfile::tempdir().unwrap();
    let (bin, json) = (dir.path().join("attn.bin"), dir.path().join("entropy.json"));
    dump.write(&bin, &json).unwrap();
    let back = AttentionDump::from_bytes(&std::fs::read(&bin).unwrap()).unwrap();
    assert_eq!(back, dump);

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    for (r, row) in back.data.chunks(21).enumerate() {
        let total: f64 = row.iter().map(|&p| p as f64).sum();
        assert!((total - 1.0).abs() < 1e-5);
        let entropy: f64 = row.iter().map(|&p| p as f64).filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum();
        let (q, rest) = (r % 21, r / 21);
        let (h, rest) = (rest % 2, rest / 2);
        let (lp, layer) = (rest % loops, rest / loops);
        let stored = summary["row_entropy"][layer][lp][h][q].as_f64().unwrap();
        assert!((stored - entropy).abs() < 1e-12);
    }
}
