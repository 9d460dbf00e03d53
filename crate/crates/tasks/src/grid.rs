//! Small rectangular grids of color cells.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, TaskError};

/// Number of cell colors; 0 is the background.
pub const NUM_COLORS: usize = 10;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Grid {
    rows: usize,
    cols: usize,
    cells: Vec<u8>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, cells: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(TaskError::Grid(format!("empty extent {rows}x{cols}")));
        }
        if cells.len() != rows * cols {
            return Err(TaskError::Grid(format!(
                "{} cells for a {rows}x{cols} grid",
                cells.len()
            )));
        }
        if let Some(&value) = cells.iter().find(|&&v| v as usize >= NUM_COLORS) {
            return Err(TaskError::Color {
                value,
                limit: NUM_COLORS,
            });
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn filled(rows: usize, cols: usize, value: u8) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TaskError::Grid("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.cells[r * self.cols + c]
    }

    /// Panics on out-of-range coordinates or colors; internal callers only
    /// write values they read from a valid grid.
    pub fn set(&mut self, r: usize, c: usize, value: u8) {
        assert!((value as usize) < NUM_COLORS);
        self.cells[r * self.cols + c] = value;
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.cells.chunks(self.cols).map(<[u8]>::to_vec).collect()
    }

    /// Cell-wise agreement count with another grid of the same shape.
    pub fn matching_cells(&self, other: &Grid) -> usize {
        if self.rows != other.rows || self.cols != other.cols {
            return 0;
        }
        self.cells.iter().zip(&other.cells).filter(|(a, b)| a == b).count()
    }

    pub fn map_colors(&self, map: &[u8; NUM_COLORS]) -> Grid {
        Grid {
            rows: self.rows,
            cols: self.cols,
            cells: self.cells.iter().map(|&v| map[v as usize]).collect(),
        }
    }
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Grid {}x{}", self.rows, self.cols)?;
        for row in self.cells.chunks(self.cols) {
            let line: String = row.iter().map(|v| char::from(b'0' + v)).collect();
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}

impl Serialize for Grid {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<u8>>::deserialize(d)?;
        Grid::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_colors() {
        assert!(Grid::new(2, 2, vec![0; 3]).is_err());
        assert!(Grid::new(0, 2, vec![]).is_err());
        assert!(matches!(
            Grid::new(1, 1, vec![10]),
            Err(TaskError::Color { value: 10, .. })
        ));
        assert!(Grid::from_rows(&[vec![1, 2], vec![3]]).is_err());
    }

    #[test]
    fn serializes_as_nested_arrays() {
        let g = Grid::from_rows(&[vec![1, 2], vec![3, 4]]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, "[[1,2],[3,4]]");
        let back: Grid = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
    }
}
