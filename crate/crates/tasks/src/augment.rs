//! Invertible grid augmentations: dihedral symmetries, color permutations
//! and zero-padded translation.
//!
//! Application order is colors, then the dihedral element, then the shift;
//! [`Augmentation::invert`] undoes them in reverse.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::error::{Result, TaskError};
use crate::grid::{Grid, NUM_COLORS};
use crate::instance::{PuzzleInstance, TaskFamily};

/// Element of the dihedral group of the square: `rot` quarter turns
/// clockwise applied after an optional left-right flip. Encoded as
/// `rot + 4 * flip`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral(u8);

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);
    pub const ROT90: Dihedral = Dihedral(1);
    pub const ROT180: Dihedral = Dihedral(2);
    pub const ROT270: Dihedral = Dihedral(3);
    pub const FLIP_H: Dihedral = Dihedral(4);
    pub const FLIP_V: Dihedral = Dihedral(6);

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(Dihedral)
    }

    pub fn new(code: u8) -> Option<Self> {
        (code < 8).then_some(Dihedral(code))
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn inverse(self) -> Dihedral {
        if self.0 >= 4 {
            self
        } else {
            Dihedral((4 - self.0) % 4)
        }
    }

    pub fn apply(self, grid: &Grid) -> Grid {
        let mut g = if self.0 >= 4 {
            flip_h(grid)
        } else {
            grid.clone()
        };
        for _ in 0..self.0 % 4 {
            g = rot90(&g);
        }
        g
    }
}

fn flip_h(g: &Grid) -> Grid {
    let cells = (0..g.rows())
        .flat_map(|r| (0..g.cols()).rev().map(move |c| g.get(r, c)))
        .collect();
    Grid::new(g.rows(), g.cols(), cells).unwrap()
}

fn rot90(g: &Grid) -> Grid {
    // output (r, c) reads input (rows-1-c, r)
    let (rows, cols) = (g.cols(), g.rows());
    let cells = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| g.get(g.rows() - 1 - c, r)))
        .collect();
    Grid::new(rows, cols, cells).unwrap()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Augmentation {
    pub dihedral: Dihedral,
    /// `colors[c]` is the new color of cells with color `c`.
    pub colors: [u8; NUM_COLORS],
    /// Zero rows prepended on top and zero columns on the left.
    pub shift: (usize, usize),
}

impl Default for Augmentation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Augmentation {
    pub fn identity() -> Self {
        Self {
            dihedral: Dihedral::IDENTITY,
            colors: std::array::from_fn(|i| i as u8),
            shift: (0, 0),
        }
    }

    pub fn new(dihedral: Dihedral, colors: [u8; NUM_COLORS], shift: (usize, usize)) -> Result<Self> {
        let mut seen = [false; NUM_COLORS];
        for &c in &colors {
            if c as usize >= NUM_COLORS || std::mem::replace(&mut seen[c as usize], true) {
                return Err(TaskError::Unsupported("color map is not a permutation".into()));
            }
        }
        Ok(Self {
            dihedral,
            colors,
            shift,
        })
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn apply(&self, grid: &Grid) -> Grid {
        let g = self.dihedral.apply(&grid.map_colors(&self.colors));
        if self.shift == (0, 0) {
            return g;
        }
        let (dr, dc) = self.shift;
        let mut out = Grid::filled(g.rows() + dr, g.cols() + dc, 0).unwrap();
        for r in 0..g.rows() {
            for c in 0..g.cols() {
                out.set(r + dr, c + dc, g.get(r, c));
            }
        }
        out
    }

    pub fn invert(&self, grid: &Grid) -> Result<Grid> {
        let (dr, dc) = self.shift;
        if grid.rows() <= dr || grid.cols() <= dc {
            return Err(TaskError::Grid(format!(
                "{}x{} grid cannot undo shift {:?}",
                grid.rows(),
                grid.cols(),
                self.shift
            )));
        }
        let cropped = if self.shift == (0, 0) {
            grid.clone()
        } else {
            let cells = (dr..grid.rows())
                .flat_map(|r| (dc..grid.cols()).map(move |c| grid.get(r, c)))
                .collect();
            Grid::new(grid.rows() - dr, grid.cols() - dc, cells)?
        };
        let mut back = [0u8; NUM_COLORS];
        for (from, &to) in self.colors.iter().enumerate() {
            back[to as usize] = from as u8;
        }
        Ok(self.dihedral.inverse().apply(&cropped).map_colors(&back))
    }

    pub fn apply_instance(&self, inst: &PuzzleInstance) -> PuzzleInstance {
        PuzzleInstance {
            family: inst.family,
            id: inst.id,
            input: self.apply(&inst.input),
            target: self.apply(&inst.target),
        }
    }

    /// Random augmentation drawn from the symmetries `family` is known to
    /// commute with (see [`valid_dihedral`], [`permutable_colors`]).
    pub fn random<R: Rng>(family: TaskFamily, side: usize, max_shift: usize, rng: &mut R) -> Self {
        let dihedral = *valid_dihedral(family, side).choose(rng).unwrap();
        let mut colors: [u8; NUM_COLORS] = std::array::from_fn(|i| i as u8);
        let domain = permutable_colors(family, side);
        let mut shuffled = domain.clone();
        shuffled.shuffle(rng);
        for (&from, &to) in domain.iter().zip(&shuffled) {
            colors[from as usize] = to;
        }
        let shift = if max_shift > 0 && translation_commutes(family) {
            (rng.random_range(0..=max_shift), rng.random_range(0..=max_shift))
        } else {
            (0, 0)
        };
        Self {
            dihedral,
            colors,
            shift,
        }
    }
}

/// Dihedral elements that commute with the family rule on square grids.
pub fn valid_dihedral(family: TaskFamily, side: usize) -> Vec<Dihedral> {
    use Dihedral as D;
    match family {
        TaskFamily::Sudoku if side == 4 => Dihedral::all().collect(),
        // 2×3 boxes only survive symmetries that keep rows as rows
        TaskFamily::Sudoku | TaskFamily::Mirror => vec![D::IDENTITY, D::ROT180, D::FLIP_H, D::FLIP_V],
        TaskFamily::Gravity => vec![D::IDENTITY, D::FLIP_H],
        TaskFamily::RecolorMap | TaskFamily::LargestShapeFill | TaskFamily::BorderDraw => {
            Dihedral::all().collect()
        }
    }
}

/// Colors that may be permuted among themselves without changing the rule.
pub fn permutable_colors(family: TaskFamily, side: usize) -> Vec<u8> {
    match family {
        TaskFamily::Sudoku => (1..=side as u8).collect(),
        TaskFamily::Mirror | TaskFamily::Gravity => (1..=9).collect(),
        TaskFamily::LargestShapeFill | TaskFamily::BorderDraw => (1..=8).collect(),
        TaskFamily::RecolorMap => Vec::new(),
    }
}

/// Whether zero-padding on the top/left commutes with the rule.
pub fn translation_commutes(family: TaskFamily) -> bool {
    matches!(
        family,
        TaskFamily::RecolorMap | TaskFamily::Gravity | TaskFamily::LargestShapeFill
    )
}
