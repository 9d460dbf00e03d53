//! Grid ↔ token sequence conversion.
//!
//! Layout: cells in row-major order, a separator after every row, one end
//! token, then padding up to a fixed budget. A `rows`×`cols` grid therefore
//! needs `rows * (cols + 1) + 1` tokens.

use crate::error::{Result, TaskError};
use crate::grid::{Grid, NUM_COLORS};

pub const PAD: usize = 0;
pub const EOS: usize = 1;
pub const SEP: usize = 2;
pub const COLOR_OFFSET: usize = 3;
pub const VOCAB_SIZE: usize = COLOR_OFFSET + NUM_COLORS;
/// Target id for positions that carry no loss.
pub const IGNORE_INDEX: usize = usize::MAX;

pub fn seq_len(rows: usize, cols: usize) -> usize {
    rows * (cols + 1) + 1
}

pub fn color_token(color: u8) -> usize {
    COLOR_OFFSET + color as usize
}

pub fn token_color(token: usize) -> Option<u8> {
    (COLOR_OFFSET..VOCAB_SIZE)
        .contains(&token)
        .then(|| (token - COLOR_OFFSET) as u8)
}

pub fn tokenize(grid: &Grid, budget: usize) -> Result<Vec<usize>> {
    let needed = seq_len(grid.rows(), grid.cols());
    if needed > budget {
        return Err(TaskError::Overflow {
            rows: grid.rows(),
            cols: grid.cols(),
            needed,
            budget,
        });
    }
    let mut out = Vec::with_capacity(budget);
    for row in grid.cells().chunks(grid.cols()) {
        out.extend(row.iter().map(|&v| color_token(v)));
        out.push(SEP);
    }
    out.push(EOS);
    out.resize(budget, PAD);
    Ok(out)
}

pub fn detokenize(tokens: &[usize]) -> Result<Grid> {
    let end = tokens
        .iter()
        .position(|&t| t == EOS)
        .ok_or_else(|| TaskError::Malformed("missing end token".into()))?;
    if tokens[end + 1..].iter().any(|&t| t != PAD) {
        return Err(TaskError::Malformed("non-pad token after end".into()));
    }
    let body = &tokens[..end];
    let mut rows: Vec<Vec<u8>> = Vec::new();
    let mut current = Vec::new();
    for &t in body {
        if t == SEP {
            rows.push(std::mem::take(&mut current));
        } else {
            let c = token_color(t)
                .ok_or_else(|| TaskError::Malformed(format!("unexpected token {t}")))?;
            current.push(c);
        }
    }
    if !current.is_empty() {
        return Err(TaskError::Malformed("last row lacks a separator".into()));
    }
    Grid::from_rows(&rows)
}

/// Token ids to predict at each position: the cell color tokens of `grid`
/// and [`IGNORE_INDEX`] at separators, the end token and padding.
pub fn cell_targets(grid: &Grid, budget: usize) -> Result<Vec<usize>> {
    Ok(tokenize(grid, budget)?
        .into_iter()
        .map(|t| if token_color(t).is_some() { t } else { IGNORE_INDEX })
        .collect())
}

/// Sequence positions holding the cells of a `rows`×`cols` grid, row-major.
pub fn cell_positions(rows: usize, cols: usize) -> impl Iterator<Item = usize> {
    (0..rows).flat_map(move |r| (0..cols).map(move |c| r * (cols + 1) + c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_layout() {
        let g = Grid::new(1, 1, vec![0]).unwrap();
        let t = tokenize(&g, 4).unwrap();
        assert_eq!(t, vec![COLOR_OFFSET, SEP, EOS, PAD]);
        assert_eq!(detokenize(&t).unwrap(), g);
    }

    #[test]
    fn max_grid_fills_budget_exactly() {
        let g = Grid::filled(10, 10, 7).unwrap();
        let budget = 10 * 11 + 1;
        let t = tokenize(&g, budget).unwrap();
        assert_eq!(t.len(), budget);
        assert_eq!(*t.last().unwrap(), EOS);
        assert!(matches!(
            tokenize(&g, budget - 1),
            Err(TaskError::Overflow { needed: 111, .. })
        ));
    }

    #[test]
    fn targets_ignore_structure() {
        let g = Grid::from_rows(&[vec![1, 2], vec![3, 4]]).unwrap();
        let t = cell_targets(&g, 8).unwrap();
        assert_eq!(
            t,
            vec![4, 5, IGNORE_INDEX, 6, 7, IGNORE_INDEX, IGNORE_INDEX, IGNORE_INDEX]
        );
        let pos: Vec<_> = cell_positions(2, 2).collect();
        assert_eq!(pos, vec![0, 1, 3, 4]);
    }

    #[test]
    fn malformed_sequences_rejected() {
        assert!(detokenize(&[COLOR_OFFSET, SEP]).is_err());
        assert!(detokenize(&[COLOR_OFFSET, EOS]).is_err());
        assert!(detokenize(&[COLOR_OFFSET, SEP, EOS, SEP]).is_err());
        assert!(detokenize(&[PAD, SEP, EOS]).is_err());
    }
}
