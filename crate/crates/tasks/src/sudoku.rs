//! Mini-sudoku (4×4 with 2×2 boxes, 6×6 with 2×3 boxes) generation and an
//! exhaustive backtracking solver. Blank cells are 0; digits are 1..=side.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Result, TaskError};
use crate::grid::Grid;
use crate::instance::{PuzzleInstance, TaskFamily};
use crate::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub side: usize,
    pub box_rows: usize,
    pub box_cols: usize,
}

impl Layout {
    pub fn for_side(side: usize) -> Result<Self> {
        match side {
            4 => Ok(Self { side, box_rows: 2, box_cols: 2 }),
            6 => Ok(Self { side, box_rows: 2, box_cols: 3 }),
            _ => Err(TaskError::Unsupported(format!("sudoku side {side}"))),
        }
    }

    fn box_of(&self, r: usize, c: usize) -> usize {
        (r / self.box_rows) * (self.side / self.box_cols) + c / self.box_cols
    }
}

struct Masks {
    rows: Vec<u16>,
    cols: Vec<u16>,
    boxes: Vec<u16>,
}

impl Masks {
    fn from_cells(layout: &Layout, cells: &[u8]) -> Option<Self> {
        let n = layout.side;
        let mut m = Masks {
            rows: vec![0; n],
            cols: vec![0; n],
            boxes: vec![0; n],
        };
        for (i, &v) in cells.iter().enumerate() {
            if v == 0 {
                continue;
            }
            if v as usize > n {
                return None;
            }
            let (r, c) = (i / n, i % n);
            let bit = 1u16 << v;
            let b = layout.box_of(r, c);
            if (m.rows[r] | m.cols[c] | m.boxes[b]) & bit != 0 {
                return None;
            }
            m.toggle(r, c, b, bit);
        }
        Some(m)
    }

    fn toggle(&mut self, r: usize, c: usize, b: usize, bit: u16) {
        self.rows[r] ^= bit;
        self.cols[c] ^= bit;
        self.boxes[b] ^= bit;
    }

    fn free(&self, layout: &Layout, r: usize, c: usize) -> u16 {
        let all = ((1u16 << (layout.side + 1)) - 1) & !1;
        all & !(self.rows[r] | self.cols[c] | self.boxes[layout.box_of(r, c)])
    }
}

/// Counts solutions of a partially filled board, stopping at `limit`.
/// Solutions found are appended to `found` (up to `limit`).
pub fn solve(layout: &Layout, cells: &[u8], limit: usize, found: &mut Vec<Vec<u8>>) -> usize {
    let Some(mut masks) = Masks::from_cells(layout, cells) else {
        return 0;
    };
    let mut work = cells.to_vec();
    let mut count = 0;
    search::<rand_chacha::ChaCha8Rng>(layout, &mut work, &mut masks, limit, &mut count, found, &mut None);
    count
}

pub fn count_solutions(layout: &Layout, cells: &[u8], limit: usize) -> usize {
    solve(layout, cells, limit, &mut Vec::new())
}

fn search<R: Rng>(
    layout: &Layout,
    cells: &mut [u8],
    masks: &mut Masks,
    limit: usize,
    count: &mut usize,
    found: &mut Vec<Vec<u8>>,
    rng: &mut Option<&mut R>,
) {
    if *count >= limit {
        return;
    }
    let n = layout.side;
    // most constrained blank cell first
    let mut best: Option<(usize, u16)> = None;
    for (i, &c) in cells.iter().enumerate() {
        if c != 0 {
            continue;
        }
        let free = masks.free(layout, i / n, i % n);
        if free == 0 {
            return;
        }
        if best.is_none_or(|(_, f)| free.count_ones() < f.count_ones()) {
            best = Some((i, free));
        }
    }
    let Some((i, free)) = best else {
        *count += 1;
        found.push(cells.to_vec());
        return;
    };
    let mut digits: Vec<u8> = (1..=n as u8).filter(|d| free & (1 << d) != 0).collect();
    if let Some(r) = rng.as_deref_mut() {
        digits.shuffle(r);
    }
    let (r, c) = (i / n, i % n);
    let b = layout.box_of(r, c);
    for d in digits {
        let bit = 1u16 << d;
        cells[i] = d;
        masks.toggle(r, c, b, bit);
        search(layout, cells, masks, limit, count, found, rng);
        masks.toggle(r, c, b, bit);
        cells[i] = 0;
        if *count >= limit {
            return;
        }
    }
}

/// Checks that a filled board satisfies every row, column and box constraint.
pub fn is_valid_solution(layout: &Layout, cells: &[u8]) -> bool {
    cells.len() == layout.side * layout.side
        && cells.iter().all(|&v| v >= 1 && v as usize <= layout.side)
        && Masks::from_cells(layout, cells).is_some()
}

fn random_full_grid<R: Rng>(layout: &Layout, rng: &mut R) -> Vec<u8> {
    let mut cells = vec![0u8; layout.side * layout.side];
    let mut masks = Masks::from_cells(layout, &cells).unwrap();
    let mut found = Vec::new();
    let mut count = 0;
    search(layout, &mut cells, &mut masks, 1, &mut count, &mut found, &mut Some(rng));
    found.pop().expect("empty board always has a completion")
}

#[derive(Clone, Debug)]
pub struct GeneratedSudoku {
    pub instance: PuzzleInstance,
    pub requested_holes: usize,
    pub holes: usize,
}

impl GeneratedSudoku {
    /// True when uniqueness forced fewer holes than requested.
    pub fn reduced(&self) -> bool {
        self.holes < self.requested_holes
    }
}

/// Samples a full board, then blanks cells in random order while the puzzle
/// keeps a unique solution, until `holes` cells are blank or no further cell
/// can be removed.
pub fn gen_mini_sudoku(side: usize, holes: usize, seed: u64, id: usize) -> Result<GeneratedSudoku> {
    let layout = Layout::for_side(side)?;
    let mut rng = rng_for(seed, id);
    let solution = random_full_grid(&layout, &mut rng);
    let mut puzzle = solution.clone();
    let mut order: Vec<usize> = (0..puzzle.len()).collect();
    order.shuffle(&mut rng);
    let mut removed = 0;
    for i in order {
        if removed == holes {
            break;
        }
        let keep = puzzle[i];
        puzzle[i] = 0;
        if count_solutions(&layout, &puzzle, 2) == 1 {
            removed += 1;
        } else {
            puzzle[i] = keep;
        }
    }
    Ok(GeneratedSudoku {
        instance: PuzzleInstance {
            family: TaskFamily::Sudoku,
            id,
            input: Grid::new(side, side, puzzle)?,
            target: Grid::new(side, side, solution)?,
        },
        requested_holes: holes,
        holes: removed,
    })
}

/// The oracle for a sudoku instance: exactly one completion, equal to the
/// target, and consistent with the givens.
pub fn check_instance(inst: &PuzzleInstance) -> Result<()> {
    let fail = |reason: &str| TaskError::Oracle {
        id: inst.id,
        reason: reason.into(),
    };
    if inst.input.rows() != inst.input.cols() {
        return Err(fail("board not square"));
    }
    let layout = Layout::for_side(inst.input.rows())?;
    let mut found = Vec::new();
    let n = solve(&layout, inst.input.cells(), 2, &mut found);
    if n != 1 {
        return Err(fail(&format!("{n} solutions")));
    }
    if found[0] != inst.target.cells() {
        return Err(fail("solution differs from target"));
    }
    Ok(())
}
