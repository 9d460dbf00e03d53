//! The training loop and evaluation driver.
//!
//! A run directory holds `config.toml` (the effective configuration),
//! `metrics.jsonl` (one record per step, fully deterministic),
//! `timing.jsonl` (wall-clock per step, kept apart so the metrics stream
//! stays diffable), `checkpoint.bin` and `summary.json`.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use urm_core::checkpoint::Checkpoint;
use urm_core::{sample_batch, train_step, Optimizer, Urm, UrmPredictor};
use urm_tasks::{evaluate_pass_n, rng_for, Dataset, EvalMetrics, PuzzleInstance};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};

/// Stream used for batch sampling; the model is initialised from the seed
/// itself.
const BATCH_STREAM: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub loss: f64,
    pub loss_terms: Vec<f64>,
    pub lr: f64,
    pub mean_act_steps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TimingRecord {
    step: u64,
    seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub params: usize,
    /// Loss of the last step taken; absent when no step ran.
    pub final_loss: Option<f64>,
    pub eval: EvalMetrics,
    /// False when the run stopped at its time budget.
    pub completed: bool,
}

pub struct TrainOutcome {
    pub model: Urm<f32>,
    pub opt: Optimizer<f32>,
    pub history: Vec<MetricsRecord>,
    pub summary: RunSummary,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    Ok(match &cfg.data.dir {
        Some(dir) => Dataset::load_or_generate(dir, &cfg.data.spec)?,
        None => urm_tasks::dataset::generate(&cfg.data.spec)?,
    })
}

/// The model that evaluation uses: the EMA shadow unless disabled.
pub fn eval_model(model: &Urm<f32>, opt: &Optimizer<f32>, ema: bool) -> Urm<f32> {
    if ema {
        Urm {
            cfg: model.cfg.clone(),
            params: opt.ema.apply_to(&model.params),
            layout: model.layout.clone(),
        }
    } else {
        model.clone()
    }
}

pub fn evaluate(model: &Urm<f32>, instances: &[PuzzleInstance], n: usize, batch: usize, seed: u64) -> Result<EvalMetrics> {
    let mut predictor = UrmPredictor { model, seed };
    Ok(evaluate_pass_n(&mut predictor, instances, n, batch)?)
}

fn append_json<T: Serialize>(w: &mut Option<BufWriter<File>>, value: &T) -> Result<()> {
    if let Some(w) = w {
        serde_json::to_writer(&mut *w, value)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Keeps the records of a JSON-lines file whose step is at most `step`.
fn truncate_stream(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let mut kept = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        let v: serde_json::Value = serde_json::from_str(&line)?;
        if v["step"].as_u64().is_some_and(|s| s <= step) {
            kept.push(line);
        }
    }
    let mut f = File::create(path)?;
    for line in kept {
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// Early stopping conditions; a run cut short is flagged as incomplete.
#[derive(Clone, Copy, Debug, Default)]
pub struct Limits {
    pub deadline: Option<Instant>,
    /// Stop once this many steps are done, as if interrupted.
    pub stop_after: Option<u64>,
}

/// Trains according to `cfg`. With `out`, streams metrics and writes
/// checkpoints there; with `resume`, continues from the checkpoint in `out`.
pub fn train(cfg: &RunConfig, out: Option<&Path>, resume: bool, limits: Limits) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let model_cfg = cfg.effective_model(data.id_count());
    let mut model = Urm::<f32>::new(model_cfg, cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optim.clone(), &model.params, cfg.steps)?;
    let mut rng: ChaCha8Rng = rng_for(cfg.seed, BATCH_STREAM);
    let mut effective = cfg.clone();
    effective.model = model.cfg.clone();
    let config_text = effective.to_toml()?;

    let mut metrics = None;
    let mut timing = None;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let ckpt_path = dir.join("checkpoint.bin");
        let mut start = 0;
        if resume && ckpt_path.exists() {
            let ckpt = Checkpoint::load(&ckpt_path)?;
            if ckpt.config != config_text {
                return Err(HarnessError::Usage(
                    "checkpoint was written by a different configuration".into(),
                ));
            }
            ckpt.restore_into(&mut model, &mut opt)?;
            rng = ckpt.rng.restore();
            start = ckpt.step;
        }
        std::fs::write(dir.join("config.toml"), &config_text)?;
        let open = |name: &str| -> Result<BufWriter<File>> {
            let path = dir.join(name);
            if start > 0 {
                truncate_stream(&path, start)?;
            }
            let f = OpenOptions::new()
                .create(true)
                .append(start > 0)
                .write(true)
                .truncate(start == 0)
                .open(path)?;
            Ok(BufWriter::new(f))
        };
        metrics = Some(open("metrics.jsonl")?);
        timing = Some(open("timing.jsonl")?);
    }

    let save = |model: &Urm<f32>, opt: &Optimizer<f32>, rng: &ChaCha8Rng| -> Result<()> {
        if let Some(dir) = out {
            Checkpoint::capture(config_text.clone(), model, opt, rng).save(&dir.join("checkpoint.bin"))?;
        }
        Ok(())
    };

    let mut history = Vec::new();
    let mut completed = true;
    let mut last_eval = None;
    while opt.step < cfg.steps {
        if limits.deadline.is_some_and(|d| Instant::now() >= d) || limits.stop_after.is_some_and(|s| opt.step >= s) {
            completed = false;
            break;
        }
        let t0 = Instant::now();
        let batch = sample_batch(&data.train, cfg.batch_size, cfg.augment, &model.cfg, &mut rng)?;
        let stats = train_step(&mut model, &mut opt, &batch)?;
        let step = opt.step;
        let eval = if cfg.eval_every > 0 && step % cfg.eval_every == 0 && step < cfg.steps {
            let m = evaluate(
                &eval_model(&model, &opt, cfg.eval_ema),
                &data.eval,
                cfg.eval_n,
                cfg.eval_batch,
                cfg.seed,
            )?;
            last_eval = Some(m.clone());
            Some(m)
        } else {
            None
        };
        let record = MetricsRecord {
            step,
            loss: stats.loss,
            loss_terms: stats.loss_terms,
            lr: stats.lr_factor * cfg.optim.lr,
            mean_act_steps: stats.mean_act_steps,
            eval,
        };
        append_json(&mut metrics, &record)?;
        append_json(
            &mut timing,
            &TimingRecord {
                step,
                seconds: t0.elapsed().as_secs_f64(),
            },
        )?;
        history.push(record);
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            save(&model, &opt, &rng)?;
        }
    }

    let final_eval = match last_eval {
        Some(e) if !completed => e,
        _ => evaluate(
            &eval_model(&model, &opt, cfg.eval_ema),
            &data.eval,
            cfg.eval_n,
            cfg.eval_batch,
            cfg.seed,
        )?,
    };
    save(&model, &opt, &rng)?;
    if let Some(w) = metrics.as_mut() {
        w.flush()?;
    }
    if let Some(w) = timing.as_mut() {
        w.flush()?;
    }
    let summary = RunSummary {
        steps: opt.step,
        params: model.param_count(),
        final_loss: history.last().map(|r| r.loss),
        eval: final_eval,
        completed,
    };
    if let Some(dir) = out {
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(TrainOutcome {
        model,
        opt,
        history,
        summary,
    })
}

/// Loads a run directory's checkpoint into a model and optimizer.
pub fn load_run(dir: &Path) -> Result<(RunConfig, Urm<f32>, Optimizer<f32>)> {
    let ckpt = Checkpoint::load(&dir.join("checkpoint.bin"))?;
    let cfg = RunConfig::from_toml(&ckpt.config)?;
    let mut model = Urm::<f32>::new(cfg.model.clone(), cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optim.clone(), &model.params, cfg.steps)?;
    ckpt.restore_into(&mut model, &mut opt)?;
    Ok((cfg, model, opt))
}

/// Evaluates a finished run on its eval split, with the EMA weights unless
/// `raw`.
pub fn evaluate_run(dir: &Path, raw: bool, n: usize, seed: u64) -> Result<EvalMetrics> {
    let (cfg, model, opt) = load_run(dir)?;
    let data = load_dataset(&cfg)?;
    evaluate(&eval_model(&model, &opt, !raw), &data.eval, n, cfg.eval_batch, seed)
}
