use std::path::Path;
use std::process::Command;

use urm_core::predict::decode;
use urm_core::Batch;
use urm_harness::config::RunConfig;
use urm_harness::error::HarnessError;
use urm_harness::run::{eval_model, evaluate, evaluate_run, load_dataset, load_run, train, Limits};
use urm_harness::suite::{run_suite, CellStatus, ResultsTable, RunCache, SuiteFile};
use urm_tensor::Scalar;

/// Two layers of width 64, four loops with one forward-only.
const SMOKE: &str = r#"
schema_version = 1
seed = 11
steps = 50
batch_size = 8
eval_batch = 16

[data.spec]
family = "sudoku"
size = 4
holes = 6
train = 64
eval = 16
seed = 2

[model]
layers = 2
hidden = 64
heads = 4
inner_loops = 4
forward_only_loops = 1
act_max_steps = 2
max_seq_len = 21

[optim]
lr = 3e-3
ema_decay = 0.9
"#;

fn smoke() -> RunConfig {
    RunConfig::from_toml(SMOKE).unwrap()
}

fn short(steps: u64) -> RunConfig {
    RunConfig { steps, ..smoke() }
}

#[test]
fn smoke_run_stays_finite_and_learns() {
    let outcome = train(&smoke(), None, false, Limits::default()).unwrap();
    assert_eq!(outcome.history.len(), 50);
    assert!(outcome.history.iter().all(|r| r.loss.is_finite()));
    let first = outcome.history[0].loss;
    let last = outcome.history.last().unwrap().loss;
    assert!(last < 0.7 * first, "{first} -> {last}");
    assert!(outcome.summary.completed);
}

#[test]
fn identical_configs_give_identical_metric_streams() {
    let cfg = short(8);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train(&cfg, Some(a.path()), false, Limits::default()).unwrap();
    train(&cfg, Some(b.path()), false, Limits::default()).unwrap();
    for file in ["metrics.jsonl", "checkpoint.bin", "config.toml", "summary.json"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
    // The written config is the one used, with the puzzle table sized to
    // the dataset (64 train + 16 eval instances).
    let text = std::fs::read_to_string(a.path().join("config.toml")).unwrap();
    let written = RunConfig::from_toml(&text).unwrap();
    assert_eq!(written.model, cfg.effective_model(80));
    assert_eq!(RunConfig { model: cfg.model.clone(), ..written }, cfg);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let cfg = RunConfig {
        checkpoint_every: 2,
        eval_every: 2,
        ..short(7)
    };
    let (whole, split) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train(&cfg, Some(whole.path()), false, Limits::default()).unwrap();
    let stopped = train(
        &cfg,
        Some(split.path()),
        false,
        Limits {
            deadline: None,
            stop_after: Some(4),
        },
    )
    .unwrap();
    assert!(!stopped.summary.completed);
    assert_eq!(stopped.summary.steps, 4);
    train(&cfg, Some(split.path()), true, Limits::default()).unwrap();
    for file in ["metrics.jsonl", "checkpoint.bin"] {
        assert_eq!(
            std::fs::read(whole.path().join(file)).unwrap(),
            std::fs::read(split.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn resume_rejects_a_different_configuration() {
    let dir = tempfile::tempdir().unwrap();
    train(&short(2), Some(dir.path()), false, Limits::default()).unwrap();
    let other = RunConfig { seed: 99, ..short(2) };
    assert!(matches!(
        train(&other, Some(dir.path()), true, Limits::default()),
        Err(HarnessError::Usage(_))
    ));
}

fn trained(dir: &Path) {
    train(&short(30), Some(dir), false, Limits::default()).unwrap();
}

#[test]
fn evaluation_is_deterministic_and_single_candidate_is_greedy() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let a = evaluate_run(dir.path(), false, 3, 4).unwrap();
    let b = evaluate_run(dir.path(), false, 3, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.pass_at.len(), 3);
    assert!(a.pass_at.windows(2).all(|w| w[0] <= w[1]));

    let (cfg, model, opt) = load_run(dir.path()).unwrap();
    let model = eval_model(&model, &opt, true);
    let data = load_dataset(&cfg).unwrap();
    let batch = Batch::from_instances(&data.eval, &model.cfg).unwrap();
    let logits = model.infer(&batch, false).unwrap().logits;
    let v = model.cfg.vocab_size;
    let t = batch.seq_len;
    let hits = data
        .eval
        .iter()
        .enumerate()
        .filter(|(i, inst)| {
            let seq: Vec<f64> = logits.data()[i * t * v..(i + 1) * t * v].iter().map(|x| x.as_f64()).collect();
            decode(&seq, v, inst.target.rows(), inst.target.cols()).unwrap().0 == inst.target
        })
        .count();
    let one = evaluate(&model, &data.eval, 1, cfg.eval_batch, 0).unwrap();
    assert_eq!(one.pass1(), hits as f64 / data.eval.len() as f64);
    assert_eq!(one.pass1(), a.pass1());
}

#[test]
fn ema_and_raw_weights_evaluate_differently() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let ema = evaluate_run(dir.path(), false, 1, 0).unwrap();
    let raw = evaluate_run(dir.path(), true, 1, 0).unwrap();
    assert_ne!(ema, raw);
}

#[test]
fn exploding_updates_stop_with_a_numeric_error() {
    let mut cfg = short(20);
    cfg.optim.lr = 1e37;
    cfg.optim.weight_decay = 0.0;
    let err = train(&cfg, None, false, Limits::default()).err().expect("training must fail");
    assert_eq!(err.exit_code(), 2, "{err}");
}

const SUITE: &str = r#"
schema_version = 1
name = "tiny"
seeds = [1, 2]
threshold_loss = 1000.0
threshold_window = 2

[base]
schema_version = 1
seed = 0
steps = 3
batch_size = 4
eval_batch = 8

[base.data.spec]
family = "sudoku"
size = 4
holes = 6
train = 16
eval = 4
seed = 2

[base.model]
layers = 1
hidden = 16
heads = 2
inner_loops = 2
forward_only_loops = 0
act_max_steps = 1
max_seq_len = 21

[[rows]]
label = "two loops"

[[rows]]
label = "one loop"
overrides = { model = { inner_loops = 1 } }
"#;

#[test]
fn suite_table_round_trips_and_reuses_cells() {
    let suite = SuiteFile::from_toml(SUITE).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut cache = RunCache::default();
    let mut seen = 0;
    let table = run_suite(&suite, Some(dir.path()), &mut cache, |_, _| seen += 1).unwrap();
    assert_eq!(seen, 4);
    assert!(table.complete);
    assert_eq!(table.rows[0].params, table.rows[1].params);
    assert_eq!(table.rows[0].layer_applications, 2 * table.rows[1].layer_applications);
    assert!(table.rows.iter().all(|r| r.all_reached_threshold()));
    let text = std::fs::read_to_string(dir.path().join("results.json")).unwrap();
    assert_eq!(ResultsTable::from_json(&text).unwrap(), table);
    assert!(dir.path().join("two-loops/seed-1/metrics.jsonl").exists());

    assert_eq!(cache.len(), 4);
    let again = run_suite(&suite, None, &mut cache, |_, _| {}).unwrap();
    assert_eq!(again.rows, table.rows);
}

#[test]
fn exhausted_budget_yields_a_flagged_partial_table() {
    let mut suite = SuiteFile::from_toml(SUITE).unwrap();
    suite.budget_seconds = 1;
    suite.base.insert("steps".into(), toml::Value::Integer(1_000_000));
    let table = run_suite(&suite, None, &mut RunCache::default(), |_, _| {}).unwrap();
    assert!(!table.complete);
    let cells: Vec<CellStatus> = table.rows.iter().flat_map(|r| r.cells.iter().map(|c| c.status)).collect();
    assert_eq!(cells[0], CellStatus::Partial);
    assert!(cells[1..].iter().all(|&s| s == CellStatus::Skipped));
    assert_eq!(table.rows[1].mean_pass1(), None);
    assert_eq!(ResultsTable::from_json(&table.to_json().unwrap()).unwrap(), table);
}

fn urm(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_urm")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into(),
        String::from_utf8_lossy(&out.stderr).into(),
    )
}

#[test]
fn cli_reports_validation_failures_with_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let bad = SMOKE
        .replace("forward_only_loops = 1", "forward_only_loops = 4")
        .replace("hidden = 64", "hidden = 63");
    std::fs::write(&path, bad).unwrap();
    let (code, _, err) = urm(&["train", path.to_str().unwrap(), "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("forward_only_loops") && err.contains("hidden"), "{err}");
}

#[test]
fn cli_trains_evaluates_and_dumps_attention() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("smoke.toml");
    std::fs::write(&cfg, SMOKE).unwrap();
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    let (code, out, err) = urm(&["train", cfg.to_str().unwrap(), "--out", run_s, "--steps", "4", "--set", "model.inner_loops=3"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("\"steps\": 4"));
    let written = RunConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(written.model.inner_loops, 3);

    let (code, out, _) = urm(&["eval", run_s, "--n", "2"]);
    assert_eq!(code, 0);
    assert!(out.contains("pass_at") && run.join("eval.json").exists());

    let dump = dir.path().join("dump");
    let (code, _, err) = urm(&["dump-attention", run_s, "--out", dump.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(dump.join("attention.bin").exists() && dump.join("attention_entropy.json").exists());
}
