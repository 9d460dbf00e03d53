use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use urm_harness::config::RunConfig;
use urm_harness::diagnostics::{dump_attention, gradcheck_all, gradcheck_report};
use urm_harness::error::{HarnessError, Result};
use urm_harness::run::{evaluate_run, load_dataset, load_run, train, Limits};
use urm_harness::suite::{run_suite, RunCache, SuiteFile, BUILTIN};
use urm_tasks::{DatasetSpec, TaskFamily};

#[derive(Parser)]
#[command(name = "urm", version, about = "Train and probe weight-tied looped transformers on grid puzzles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a configuration file into a run directory.
    Train {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this many steps, leaving a resumable checkpoint.
        #[arg(long)]
        stop_after: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Override any field, e.g. `--set model.inner_loops=4`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a run's checkpoint on its eval split.
    Eval {
        run: PathBuf,
        /// Candidates per instance.
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Use the raw weights instead of the EMA shadow.
        #[arg(long)]
        raw: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of every op and a tiny end-to-end model.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Run an ablation suite, given by built-in name or file path.
    Ablate {
        suite: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the suite's seeds, e.g. `--seeds 1,2`.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Replace the suite's wall-clock budget in seconds.
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Write the attention maps of one eval instance.
    DumpAttention {
        run: PathBuf,
        /// Index into the eval split.
        #[arg(long, default_value_t = 0)]
        instance: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        raw: bool,
    },
    /// Generate a dataset directory.
    GenData {
        #[arg(long, value_parser = parse_family)]
        family: TaskFamily,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        holes: usize,
        #[arg(long)]
        train: usize,
        #[arg(long)]
        eval: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_family(s: &str) -> std::result::Result<TaskFamily, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|e| e.to_string())
}

fn set_path(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| HarnessError::Usage(format!("`{assignment}` is not KEY=VALUE")))?;
    // Parse the value as TOML, falling back to a bare string.
    let value = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.into()));
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut at = table;
    for p in parts {
        at = at
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| HarnessError::Usage(format!("`{p}` in `{key}` is not a table")))?;
    }
    at.insert(last.into(), value);
    Ok(())
}

fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| HarnessError::Config(vec![e.to_string()]))?;
    for o in overrides {
        set_path(&mut table, o)?;
    }
    RunConfig::from_toml(&toml::to_string(&table).map_err(|e| HarnessError::Config(vec![e.to_string()]))?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            out,
            resume,
            stop_after,
            seed,
            steps,
            batch_size,
            mut overrides,
        } => {
            overrides.extend(seed.map(|v| format!("seed={v}")));
            overrides.extend(steps.map(|v| format!("steps={v}")));
            overrides.extend(batch_size.map(|v| format!("batch_size={v}")));
            let cfg = load_config(&config, &overrides)?;
            let outcome = train(
                &cfg,
                Some(&out),
                resume,
                Limits {
                    deadline: None,
                    stop_after,
                },
            )?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
        }
        Command::Eval { run, n, raw, seed } => {
            let metrics = evaluate_run(&run, raw, n, seed)?;
            let text = serde_json::to_string_pretty(&metrics)?;
            let name = if raw { "eval_raw.json" } else { "eval.json" };
            std::fs::write(run.join(name), &text)?;
            println!("{text}");
        }
        Command::Gradcheck { trials, seed } => {
            print!("{}", gradcheck_report(&gradcheck_all(trials, seed)?)?);
        }
        Command::Ablate {
            suite,
            out,
            seeds,
            budget,
        } => {
            let mut s = match SuiteFile::builtin(&suite) {
                Some(s) => s?,
                None if Path::new(&suite).exists() => SuiteFile::from_toml(&std::fs::read_to_string(&suite)?)?,
                None => {
                    let names: Vec<&str> = BUILTIN.iter().map(|(n, _)| *n).collect();
                    return Err(HarnessError::Usage(format!(
                        "unknown suite `{suite}`; built-in suites are {}",
                        names.join(", ")
                    )));
                }
            };
            if !seeds.is_empty() {
                s.seeds = seeds;
            }
            if let Some(b) = budget {
                s.budget_seconds = b;
            }
            let table = run_suite(&s, out.as_deref(), &mut RunCache::default(), |label, cell| {
                eprintln!(
                    "{label} seed {}: {:?} pass@1 {:.3} loss {:?}",
                    cell.seed,
                    cell.status,
                    cell.pass1(),
                    cell.final_loss
                );
            })?;
            print!("{}", table.render());
        }
        Command::DumpAttention { run, instance, out, raw } => {
            let (cfg, model, opt) = load_run(&run)?;
            let data = load_dataset(&cfg)?;
            let inst = data
                .eval
                .get(instance)
                .ok_or_else(|| HarnessError::Usage(format!("eval split has {} instances", data.eval.len())))?;
            let model = urm_harness::run::eval_model(&model, &opt, !raw);
            let summary = dump_attention(&model, inst, &out)?;
            println!("dims {:?}, mean entropy per layer and loop written to {}", summary.dims, out.display());
        }
        Command::GenData {
            family,
            size,
            holes,
            train,
            eval,
            seed,
            out,
        } => {
            let spec = DatasetSpec {
                family,
                size,
                holes,
                train,
                eval,
                seed,
            };
            let data = urm_tasks::Dataset::load_or_generate(&out, &spec)?;
            println!("{} train and {} eval instances in {}", data.train.len(), data.eval.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
