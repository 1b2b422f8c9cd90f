//! Floquet decomposition aids: the sampling grid produced by the quadratic
//! substitution around the critical center, the Bloch transform of
//! compactly supported data, and synthesis of the physical field from cell
//! solutions.
//!
//! When `2k` is an integer the two Floquet cutoffs coincide at a single
//! center `c` (0 or 1/2) where the cell solution loses smoothness in the
//! Floquet parameter. Substituting `alpha = c +- t^2` restores analyticity
//! of the integrand, and Gauss-Legendre sampling in `t` then converges
//! geometrically. The substitution also pushes all samples at least
//! `1/(72 N^4)` away from every integer, so no sample ever hits a cutoff.

use num_complex::Complex64;
use std::f64::consts::{PI, TAU};
use thiserror::Error;

use crate::kernels::Wavenumber;
use crate::quad::{legendre_rule, QuadError};

#[derive(Debug, Error, PartialEq)]
pub enum BlochError {
    #[error("wave number k = {0} is not a half integer; the substituted grid only covers 2k in N")]
    NonExceptionalWavenumber(f64),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("expected one cell field per grid sample ({samples}), got {fields}")]
    FieldCountMismatch { samples: usize, fields: usize },
}

/// One Floquet sample: the parameter value, its combined quadrature
/// weight, and which side of the center it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloquetSample {
    pub alpha: f64,
    pub weight: f64,
    pub side: i8,
}

/// The `2N` Floquet samples for one exceptional wave number.
#[derive(Debug, Clone, PartialEq)]
pub struct FloquetGrid {
    center: f64,
    points_per_side: usize,
    samples: Vec<FloquetSample>,
}

impl FloquetGrid {
    pub fn center(&self) -> f64 {
        self.center
    }

    /// Gauss order per substituted half interval; the grid holds twice
    /// this many samples.
    pub fn points_per_side(&self) -> usize {
        self.points_per_side
    }

    pub fn samples(&self) -> &[FloquetSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Smallest distance from any sample to any integer.
    pub fn min_integer_distance(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| {
                let d = s.alpha - s.alpha.round();
                d.abs()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Build the Floquet grid for an exceptional wave number.
///
/// With `d_j, s_j` the order-`N` Gauss-Legendre data, the samples are
/// `alpha = c +- ((d_j + 1) / (2 sqrt 2))^2` with combined weights
/// `s_j (d_j + 1) / 4`, covering the unit Floquet interval centered at
/// `c` with total measure 1.
pub fn floquet_grid(wavenumber: &Wavenumber, n: usize) -> Result<FloquetGrid, BlochError> {
    if !wavenumber.is_exceptional() {
        return Err(BlochError::NonExceptionalWavenumber(wavenumber.k()));
    }
    let rule = legendre_rule(n)?;
    let center = wavenumber.critical_center();
    let scale = 1.0 / (2.0 * std::f64::consts::SQRT_2);
    let mut samples = Vec::with_capacity(2 * n);
    for &side in &[1i8, -1i8] {
        for j in 0..n {
            let d = rule.nodes()[j];
            let t = (d + 1.0) * scale;
            samples.push(FloquetSample {
                alpha: center + f64::from(side) * t * t,
                weight: rule.weights()[j] * (d + 1.0) / 4.0,
                side,
            });
        }
    }
    Ok(FloquetGrid {
        center,
        points_per_side: n,
        samples,
    })
}

/// Complex samples of a compactly supported function on a run of
/// consecutive periodicity cells.
///
/// Cell `c` covers `x1 in [-pi + 2 pi c, pi + 2 pi c]`; every cell carries
/// the same `(nx + 1) x (ny + 1)` sample lattice. The function is zero
/// outside the stored cell range.
#[derive(Debug, Clone)]
pub struct CompactField {
    cell_lo: i64,
    cell_hi: i64,
    nx: usize,
    ny: usize,
    x2_lo: f64,
    x2_hi: f64,
    values: Vec<Vec<Complex64>>,
}

impl CompactField {
    /// Sample `f` on the cells `cell_lo ..= cell_hi`.
    pub fn sample(
        f: impl Fn(f64, f64) -> Complex64,
        cell_lo: i64,
        cell_hi: i64,
        nx: usize,
        ny: usize,
        x2_lo: f64,
        x2_hi: f64,
    ) -> Self {
        assert!(cell_hi >= cell_lo, "empty cell range");
        assert!(nx >= 1 && ny >= 1, "need at least one sample interval");
        let mut values = Vec::with_capacity((cell_hi - cell_lo + 1) as usize);
        for cell in cell_lo..=cell_hi {
            let mut block = Vec::with_capacity((nx + 1) * (ny + 1));
            for iy in 0..=ny {
                let x2 = x2_lo + (x2_hi - x2_lo) * iy as f64 / ny as f64;
                for ix in 0..=nx {
                    let x1 = -PI + TAU * cell as f64 + TAU * ix as f64 / nx as f64;
                    block.push(f(x1, x2));
                }
            }
            values.push(block);
        }
        Self {
            cell_lo,
            cell_hi,
            nx,
            ny,
            x2_lo,
            x2_hi,
            values,
        }
    }

    pub fn cell_range(&self) -> (i64, i64) {
        (self.cell_lo, self.cell_hi)
    }

    /// Base-cell abscissa of sample column `ix`.
    pub fn x1_local(&self, ix: usize) -> f64 {
        -PI + TAU * ix as f64 / self.nx as f64
    }

    pub fn x2(&self, iy: usize) -> f64 {
        self.x2_lo + (self.x2_hi - self.x2_lo) * iy as f64 / self.ny as f64
    }

    pub fn value(&self, cell: i64, ix: usize, iy: usize) -> Complex64 {
        if cell < self.cell_lo || cell > self.cell_hi {
            return Complex64::new(0.0, 0.0);
        }
        self.values[(cell - self.cell_lo) as usize][ix + iy * (self.nx + 1)]
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }
}

/// The Bloch transform of a [`CompactField`] at one Floquet parameter,
/// tabulated on the base-cell sample lattice (both `x1` endpoints kept).
#[derive(Debug, Clone)]
pub struct BlochField {
    alpha: f64,
    nx: usize,
    ny: usize,
    x2_lo: f64,
    x2_hi: f64,
    values: Vec<Complex64>,
}

impl BlochField {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn value(&self, ix: usize, iy: usize) -> Complex64 {
        self.values[ix + iy * (self.nx + 1)]
    }

    pub fn x1(&self, ix: usize) -> f64 {
        -PI + TAU * ix as f64 / self.nx as f64
    }

    pub fn x2(&self, iy: usize) -> f64 {
        self.x2_lo + (self.x2_hi - self.x2_lo) * iy as f64 / self.ny as f64
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }
}

/// Bloch transform of compactly supported data:
/// `sum_j phi(x1 + 2 pi j, x2) exp(-i alpha (x1 + 2 pi j))` over the
/// support range. The result is 2 pi periodic in `x1`.
pub fn bloch_transform(phi: &CompactField, alpha: f64) -> BlochField {
    let (lo, hi) = phi.cell_range();
    let nx = phi.nx();
    let ny = phi.ny();
    let mut values = vec![Complex64::new(0.0, 0.0); (nx + 1) * (ny + 1)];
    for cell in lo..=hi {
        for iy in 0..=ny {
            for ix in 0..=nx {
                let x1_global = phi.x1_local(ix) + TAU * cell as f64;
                let phase = Complex64::from_polar(1.0, -alpha * x1_global);
                values[ix + iy * (nx + 1)] += phi.value(cell, ix, iy) * phase;
            }
        }
    }
    BlochField {
        alpha,
        nx,
        ny,
        x2_lo: phi.x2_lo,
        x2_hi: phi.x2_hi,
        values,
    }
}

/// A 2 pi periodic complex field on the base cell, evaluable at arbitrary
/// points. Cell solutions and synthetic integrands both implement this.
pub trait PeriodicCellField {
    fn eval(&self, x1: f64, x2: f64) -> Complex64;
}

impl<F: Fn(f64, f64) -> Complex64> PeriodicCellField for F {
    fn eval(&self, x1: f64, x2: f64) -> Complex64 {
        self(x1, x2)
    }
}

/// Synthesize the physical field at `(x1, x2)` from one cell field per
/// grid sample:
/// `sum_j weight_j exp(i alpha_j x1) w_j(x1 folded into the base cell, x2)`.
///
/// `x1` may lie in any translated cell; the phase uses the unfolded
/// coordinate. Summation runs in ascending sample order so results do not
/// depend on scheduling.
pub fn synthesize<F: PeriodicCellField>(
    grid: &FloquetGrid,
    fields: &[F],
    x1: f64,
    x2: f64,
) -> Result<Complex64, BlochError> {
    if fields.len() != grid.len() {
        return Err(BlochError::FieldCountMismatch {
            samples: grid.len(),
            fields: fields.len(),
        });
    }
    let shift = ((x1 + PI) / TAU).floor();
    let x1_reduced = x1 - TAU * shift;
    let mut acc = Complex64::new(0.0, 0.0);
    for (sample, field) in grid.samples().iter().zip(fields) {
        let phase = Complex64::from_polar(1.0, sample.alpha * x1);
        acc += sample.weight * phase * field.eval(x1_reduced, x2);
    }
    Ok(acc)
}
