use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::Grid;
use crate::tokens;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    Sudoku,
    RecolorMap,
    Mirror,
    Gravity,
    LargestShapeFill,
    BorderDraw,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 6] = [
        TaskFamily::Sudoku,
        TaskFamily::RecolorMap,
        TaskFamily::Mirror,
        TaskFamily::Gravity,
        TaskFamily::LargestShapeFill,
        TaskFamily::BorderDraw,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&f| f == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskFamily::Sudoku => "sudoku",
            TaskFamily::RecolorMap => "recolor-map",
            TaskFamily::Mirror => "mirror",
            TaskFamily::Gravity => "gravity",
            TaskFamily::LargestShapeFill => "largest-shape-fill",
            TaskFamily::BorderDraw => "border-draw",
        }
    }
}

impl std::str::FromStr for TaskFamily {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown task family `{s}`"))
    }
}

/// One input/target grid pair. The instance id keys the puzzle embedding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PuzzleInstance {
    pub family: TaskFamily,
    pub id: usize,
    pub input: Grid,
    pub target: Grid,
}

impl PuzzleInstance {
    pub fn input_tokens(&self, budget: usize) -> Result<Vec<usize>> {
        tokens::tokenize(&self.input, budget)
    }

    pub fn target_ids(&self, budget: usize) -> Result<Vec<usize>> {
        tokens::cell_targets(&self.target, budget)
    }

    pub fn seq_len(&self) -> usize {
        tokens::seq_len(self.input.rows(), self.input.cols())
            .max(tokens::seq_len(self.target.rows(), self.target.cols()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_parse_back() {
        for f in TaskFamily::ALL {
            assert_eq!(f.name().parse::<TaskFamily>().unwrap(), f);
            let json = serde_json::to_string(&f).unwrap();
            assert_eq!(json, format!("\"{}\"", f.name()));
        }
        assert!("spiral".parse::<TaskFamily>().is_err());
    }
}
