//! Synthetic grid-transformation families. Each family has an exact rule
//! function that maps an input grid to its target; the rule doubles as the
//! evaluation oracle.

use rand::Rng;

use crate::error::{Result, TaskError};
use crate::grid::{Grid, NUM_COLORS};
use crate::instance::{PuzzleInstance, TaskFamily};
use crate::rng_for;

/// Color written by the fill and outline families.
pub const MARK_COLOR: u8 = 9;

/// Background stays fixed; every other color moves one step along 1→2→…→9→1.
pub const DEFAULT_RECOLOR: [u8; NUM_COLORS] = [0, 2, 3, 4, 5, 6, 7, 8, 9, 1];

pub fn recolor(grid: &Grid, map: &[u8; NUM_COLORS]) -> Grid {
    grid.map_colors(map)
}

/// Left-right reflection.
pub fn mirror(grid: &Grid) -> Grid {
    let mut out = grid.clone();
    for r in 0..grid.rows() {
        for c in 0..grid.cols() {
            out.set(r, c, grid.get(r, grid.cols() - 1 - c));
        }
    }
    out
}

/// Nonzero cells fall to the bottom of their column, keeping their order.
pub fn gravity(grid: &Grid) -> Grid {
    let mut out = Grid::filled(grid.rows(), grid.cols(), 0).unwrap();
    for c in 0..grid.cols() {
        let stack: Vec<u8> = (0..grid.rows()).map(|r| grid.get(r, c)).filter(|&v| v != 0).collect();
        let top = grid.rows() - stack.len();
        for (i, v) in stack.into_iter().enumerate() {
            out.set(top + i, c, v);
        }
    }
    out
}

/// 4-connected components of nonzero cells, each a list of flat indices.
pub fn components(grid: &Grid) -> Vec<Vec<usize>> {
    let (rows, cols) = (grid.rows(), grid.cols());
    let mut seen = vec![false; rows * cols];
    let mut out = Vec::new();
    for start in 0..rows * cols {
        if seen[start] || grid.cells()[start] == 0 {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (r, c) = (i / cols, i % cols);
            let mut push = |j: usize| {
                if !seen[j] && grid.cells()[j] != 0 {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                push(i - cols);
            }
            if r + 1 < rows {
                push(i + cols);
            }
            if c > 0 {
                push(i - 1);
            }
            if c + 1 < cols {
                push(i + 1);
            }
        }
        out.push(comp);
    }
    out
}

/// Repaints the strictly largest 4-connected nonzero shape with
/// [`MARK_COLOR`]. Returns `None` when the largest size is tied or there is
/// no shape.
pub fn largest_shape_fill(grid: &Grid) -> Option<Grid> {
    let mut comps = components(grid);
    comps.sort_by_key(|c| std::cmp::Reverse(c.len()));
    let first = comps.first()?;
    if comps.get(1).is_some_and(|c| c.len() == first.len()) {
        return None;
    }
    let mut out = grid.clone();
    for &i in first {
        out.set(i / grid.cols(), i % grid.cols(), MARK_COLOR);
    }
    Some(out)
}

/// Background cells touching a nonzero cell (8-neighbourhood) become
/// [`MARK_COLOR`].
pub fn border_draw(grid: &Grid) -> Grid {
    let (rows, cols) = (grid.rows() as isize, grid.cols() as isize);
    let mut out = grid.clone();
    for r in 0..rows {
        for c in 0..cols {
            if grid.get(r as usize, c as usize) != 0 {
                continue;
            }
            let touches = (-1..=1).any(|dr| {
                (-1..=1).any(|dc| {
                    let (nr, nc) = (r + dr, c + dc);
                    (0..rows).contains(&nr)
                        && (0..cols).contains(&nc)
                        && grid.get(nr as usize, nc as usize) != 0
                })
            });
            if touches {
                out.set(r as usize, c as usize, MARK_COLOR);
            }
        }
    }
    out
}

/// Applies the family rule. `None` only for a tied largest-shape input.
pub fn apply_rule(family: TaskFamily, grid: &Grid) -> Result<Option<Grid>> {
    Ok(match family {
        TaskFamily::RecolorMap => Some(recolor(grid, &DEFAULT_RECOLOR)),
        TaskFamily::Mirror => Some(mirror(grid)),
        TaskFamily::Gravity => Some(gravity(grid)),
        TaskFamily::LargestShapeFill => largest_shape_fill(grid),
        TaskFamily::BorderDraw => Some(border_draw(grid)),
        TaskFamily::Sudoku => {
            return Err(TaskError::Unsupported("sudoku has no grid rule".into()))
        }
    })
}

fn random_grid<R: Rng>(rng: &mut R, side: usize, density: f64, colors: std::ops::RangeInclusive<u8>) -> Grid {
    let cells = (0..side * side)
        .map(|_| {
            if rng.random_bool(density) {
                rng.random_range(colors.clone())
            } else {
                0
            }
        })
        .collect();
    Grid::new(side, side, cells).unwrap()
}

/// Samples a `size`×`size` input for `family` and computes its target.
pub fn gen_grid_task(family: TaskFamily, size: usize, seed: u64, id: usize) -> Result<PuzzleInstance> {
    if !(2..=10).contains(&size) {
        return Err(TaskError::Unsupported(format!("grid size {size}")));
    }
    let mut rng = rng_for(seed, id);
    let (density, colors) = match family {
        TaskFamily::RecolorMap => (0.6, 1..=9),
        TaskFamily::Mirror => (0.5, 1..=9),
        TaskFamily::Gravity => (0.35, 1..=9),
        TaskFamily::LargestShapeFill => (0.45, 1..=8),
        TaskFamily::BorderDraw => (0.15, 1..=8),
        TaskFamily::Sudoku => {
            return Err(TaskError::Unsupported("use gen_mini_sudoku".into()))
        }
    };
    for _ in 0..1000 {
        let input = random_grid(&mut rng, size, density, colors.clone());
        if let Some(target) = apply_rule(family, &input)? {
            return Ok(PuzzleInstance {
                family,
                id,
                input,
                target,
            });
        }
    }
    Err(TaskError::Unsupported(format!(
        "no untied {} input found at size {size}",
        family.name()
    )))
}

/// Recomputes the target with the family oracle.
pub fn check_instance(inst: &PuzzleInstance) -> Result<()> {
    let ok = match inst.family {
        TaskFamily::Sudoku => return crate::sudoku::check_instance(inst),
        f => apply_rule(f, &inst.input)?.as_ref() == Some(&inst.target),
    };
    if ok {
        Ok(())
    } else {
        Err(TaskError::Oracle {
            id: inst.id,
            reason: "target differs from rule output".into(),
        })
    }
}
