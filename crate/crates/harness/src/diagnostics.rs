//! Gradient checking and attention dumps.

use std::path::Path;

use urm_core::dump::{AttentionDump, EntropySummary};
use urm_core::gradcheck::{model_gradcheck, tiny_config};
use urm_core::{Batch, Urm};
use urm_tasks::PuzzleInstance;
use urm_tensor::gradcheck::{op_suite, GradCheckConfig, GradCheckResult};

use crate::error::{HarnessError, Result};

/// Every differentiable op over `trials` random inputs, then the tiny
/// end-to-end model, all in double precision.
pub fn gradcheck_all(trials: usize, seed: u64) -> Result<Vec<GradCheckResult>> {
    let cfg = GradCheckConfig::default();
    let mut results = op_suite(trials, seed, cfg)?;
    results.push(model_gradcheck(tiny_config(), seed, cfg)?);
    Ok(results)
}

/// Formats results one per line and fails if any entry failed.
pub fn gradcheck_report(results: &[GradCheckResult]) -> Result<String> {
    let mut out = String::new();
    for r in results {
        out += &format!(
            "{:<5} {:<28} max rel {:.2e}  max abs {:.2e}  ({} entries)\n",
            if r.passed { "ok" } else { "FAIL" },
            r.name,
            r.max_rel_err,
            r.max_abs_err,
            r.checked
        );
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(out)
    } else {
        eprint!("{out}");
        Err(HarnessError::GradCheck(failed.join(", ")))
    }
}

/// Runs one instance through `model` with attention recording and writes
/// `attention.bin` plus `attention_entropy.json` into `out`.
pub fn dump_attention(model: &Urm<f32>, inst: &PuzzleInstance, out: &Path) -> Result<EntropySummary> {
    let batch = Batch::from_instances(std::slice::from_ref(inst), &model.cfg)?;
    let fwd = model.infer(&batch, true)?;
    let dump = AttentionDump::from_record(&fwd.attention, model.cfg.layers)?;
    std::fs::create_dir_all(out)?;
    dump.write(&out.join("attention.bin"), &out.join("attention_entropy.json"))?;
    Ok(dump.entropy())
}
