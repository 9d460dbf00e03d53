//! Deterministic dataset generation and JSON-lines persistence.
//!
//! A dataset directory holds `train.jsonl`, `eval.jsonl` (one instance per
//! line) and `manifest.json`. Instance ids are unique across both splits and
//! no input grid appears twice.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TaskError};
use crate::families;
use crate::instance::{PuzzleInstance, TaskFamily};
use crate::sudoku;
use crate::tokens;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub family: TaskFamily,
    /// Side length of the square grids.
    pub size: usize,
    /// Blank cells requested per sudoku board; ignored by other families.
    #[serde(default)]
    pub holes: usize,
    pub train: usize,
    pub eval: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn max_len(&self) -> usize {
        tokens::seq_len(self.size, self.size)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub spec: DatasetSpec,
    pub max_len: usize,
    pub train_count: usize,
    pub eval_count: usize,
    /// Sudoku boards that kept fewer blanks than requested.
    pub reduced_boards: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub train: Vec<PuzzleInstance>,
    pub eval: Vec<PuzzleInstance>,
}

/// Generates both splits. Candidate `k` is drawn from its own RNG stream,
/// so the output depends only on the spec.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    let total = spec.train + spec.eval;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(total);
    let mut reduced = 0;
    let budget = total.saturating_mul(50).max(100);
    for k in 0..budget {
        if out.len() == total {
            break;
        }
        let id = out.len();
        let (inst, was_reduced) = match spec.family {
            TaskFamily::Sudoku => {
                let g = sudoku::gen_mini_sudoku(spec.size, spec.holes, spec.seed, k)?;
                let r = g.reduced();
                (g.instance, r)
            }
            f => (families::gen_grid_task(f, spec.size, spec.seed, k)?, false),
        };
        if !seen.insert(inst.input.clone()) {
            continue;
        }
        reduced += usize::from(was_reduced);
        let inst = PuzzleInstance { id, ..inst };
        families::check_instance(&inst)?;
        out.push(inst);
    }
    if out.len() < total {
        return Err(TaskError::Unsupported(format!(
            "only {} distinct {} instances found, {total} requested",
            out.len(),
            spec.family.name()
        )));
    }
    let eval = out.split_off(spec.train);
    Ok(Dataset {
        manifest: Manifest {
            format_version: FORMAT_VERSION,
            spec: spec.clone(),
            max_len: spec.max_len(),
            train_count: out.len(),
            eval_count: eval.len(),
            reduced_boards: reduced,
        },
        train: out,
        eval,
    })
}

fn write_jsonl(path: &Path, items: &[PuzzleInstance]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for inst in items {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<PuzzleInstance>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

impl Dataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_jsonl(&dir.join("train.jsonl"), &self.train)?;
        write_jsonl(&dir.join("eval.jsonl"), &self.eval)?;
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(dir.join("manifest.json"), manifest + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(TaskError::Malformed(format!(
                "dataset format {} (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let train = read_jsonl(&dir.join("train.jsonl"))?;
        let eval = read_jsonl(&dir.join("eval.jsonl"))?;
        if train.len() != manifest.train_count || eval.len() != manifest.eval_count {
            return Err(TaskError::Malformed("split sizes disagree with manifest".into()));
        }
        Ok(Self {
            manifest,
            train,
            eval,
        })
    }

    /// Load from `dir` when a manifest with the same spec exists, otherwise
    /// generate and write.
    pub fn load_or_generate(dir: &Path, spec: &DatasetSpec) -> Result<Self> {
        if dir.join("manifest.json").exists() {
            let ds = Self::read(dir)?;
            if ds.manifest.spec == *spec {
                return Ok(ds);
            }
        }
        let ds = generate(spec)?;
        ds.write(dir)?;
        Ok(ds)
    }

    /// Number of distinct instance ids across both splits.
    pub fn id_count(&self) -> usize {
        self.train.len() + self.eval.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_sequential_and_disjoint() {
        let spec = DatasetSpec {
            family: TaskFamily::Gravity,
            size: 4,
            holes: 0,
            train: 12,
            eval: 5,
            seed: 2,
        };
        let ds = generate(&spec).unwrap();
        let ids: Vec<_> = ds.train.iter().chain(&ds.eval).map(|i| i.id).collect();
        assert_eq!(ids, (0..17).collect::<Vec<_>>());
        assert_eq!(ds.manifest.max_len, 21);
    }

    #[test]
    fn impossible_request_errors() {
        let spec = DatasetSpec {
            family: TaskFamily::Sudoku,
            size: 2,
            holes: 1,
            train: 1,
            eval: 1,
            seed: 0,
        };
        assert!(generate(&spec).is_err());
    }
}
