//! The PML-strength convergence experiment: sweep the layer strength,
//! compare trace lines against a strong-absorption reference, and fit the
//! super-algebraic convergence law.
//!
//! All per-sample cell solves are independent and may run on a worker
//! pool; aggregation is single threaded and index ordered, so output is
//! identical for any worker count.

use num_complex::Complex64;
use rayon::prelude::*;
use std::io::{self, Write};
use thiserror::Error;

use crate::bloch::{floquet_grid, synthesize, BlochError, FloquetGrid};
use crate::config::{ConfigError, Denominator, StudyConfig};
use crate::fem::{solve_cell, BoundaryCondition, CellField, CellOperator, CellSolution, FemError};
use crate::mesh::{build_cell_mesh, MeshError, PeriodicCellMesh, SourceTerm};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Bloch(#[from] BlochError),
    #[error("cell solve failed at rho = {rho}, alpha = {alpha}: {source}")]
    CellSolve {
        rho: f64,
        alpha: f64,
        #[source]
        source: FemError,
    },
    #[error("relative error {error} at rho = {rho} lies outside (0, 1); log(-log error) undefined")]
    ErrorOutOfRange { rho: f64, error: f64 },
    #[error("regression needs at least two records")]
    TooFewRecords,
}

/// One measured point of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRecord {
    pub rho: f64,
    pub k: f64,
    /// Relative trace error against the reference solve.
    pub error: f64,
}

/// Least-squares fit of `log(-log error)` against `log rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `y = log(-log error)` on `x = log rho`.
/// Every error must lie strictly inside `(0, 1)`.
pub fn regression(points: &[(f64, f64)]) -> Result<RegressionFit, StudyError> {
    if points.len() < 2 {
        return Err(StudyError::TooFewRecords);
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(rho, error) in points {
        if !(error > 0.0 && error < 1.0) {
            return Err(StudyError::ErrorOutOfRange { rho, error });
        }
        xs.push(rho.ln());
        ys.push((-error.ln()).ln());
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let p = intercept + slope * x;
            (y - p) * (y - p)
        })
        .sum();
    let r_squared = if syy <= f64::MIN_POSITIVE {
        1.0
    } else {
        1.0 - ss_res / syy
    };
    Ok(RegressionFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Everything `study` produces: the error table, its fit, and the
/// quadrature-stability delta of the reference.
#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub k: f64,
    pub n_quadrature: usize,
    pub mesh_h: f64,
    pub truncation_j: usize,
    pub rho_reference: f64,
    pub records: Vec<ErrorRecord>,
    pub fit: RegressionFit,
    /// Relative change of the reference trace when the grid order doubles.
    pub n_refinement_delta: f64,
}

/// Solve all cell problems of one grid; independent solves run in
/// parallel, results keep grid order.
fn solve_samples(
    op: &CellOperator<'_>,
    grid: &FloquetGrid,
    k: f64,
    bc: BoundaryCondition,
    j_max: usize,
    source: &SourceTerm,
    rho: f64,
) -> Result<Vec<CellSolution>, StudyError> {
    grid.samples()
        .par_iter()
        .map(|s| {
            op.assemble(s.alpha, k, bc, j_max, source)
                .and_then(solve_cell)
                .map_err(|e| StudyError::CellSolve {
                    rho,
                    alpha: s.alpha,
                    source: e,
                })
        })
        .collect()
}

/// Synthesize the physical trace at `height` on the given abscissas.
fn synthesized_trace(
    mesh: &PeriodicCellMesh,
    grid: &FloquetGrid,
    solutions: &[CellSolution],
    points: &[f64],
    height: f64,
) -> Vec<Complex64> {
    let fields: Vec<CellField<'_>> = solutions
        .iter()
        .map(|solution| CellField { mesh, solution })
        .collect();
    points
        .iter()
        .map(|&x1| synthesize(grid, &fields, x1, height).expect("one field per sample"))
        .collect()
}

/// Trapezoid L2 norm on a uniform grid.
fn trapezoid_norm(values: &[Complex64], spacing: f64) -> f64 {
    let n = values.len();
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        acc += w * v.norm_sqr();
    }
    (acc * spacing).sqrt()
}

struct Pipeline<'c> {
    config: &'c StudyConfig,
    mesh: PeriodicCellMesh,
    source: SourceTerm,
    points: Vec<f64>,
    j_max: usize,
}

impl<'c> Pipeline<'c> {
    fn new(config: &'c StudyConfig) -> Result<Self, StudyError> {
        config.validate()?;
        let surface = config.surface_profile()?;
        let mesh = build_cell_mesh(&surface, config.strip_height, config.mesh_h)?;
        Ok(Self {
            config,
            mesh,
            source: config.source_term(),
            points: config.eval_points(),
            j_max: config.truncation(),
        })
    }

    fn grid(&self, n: usize) -> Result<FloquetGrid, StudyError> {
        Ok(floquet_grid(&self.config.wavenumber()?, n)?)
    }

    fn trace(
        &self,
        op: &CellOperator<'_>,
        grid: &FloquetGrid,
        bc: BoundaryCondition,
        rho: f64,
    ) -> Result<Vec<Complex64>, StudyError> {
        let solutions = solve_samples(op, grid, self.config.k, bc, self.j_max, &self.source, rho)?;
        Ok(synthesized_trace(
            &self.mesh,
            grid,
            &solutions,
            &self.points,
            self.config.evaluation.height,
        ))
    }

    fn pml_trace(
        &self,
        op: &CellOperator<'_>,
        grid: &FloquetGrid,
        rho: f64,
    ) -> Result<Vec<Complex64>, StudyError> {
        let sigma = self.config.pml_spec(rho)?.sigma();
        self.trace(op, grid, BoundaryCondition::Pml { sigma }, rho)
    }

    fn spacing(&self) -> f64 {
        let [lo, hi] = self.config.evaluation.interval;
        (hi - lo) / (self.points.len() - 1) as f64
    }
}

/// Run the full sweep: one PML solve per rho (plus the reference), the
/// error table, its regression fit, and a grid-doubling delta on the
/// reference trace.
pub fn run_study(config: &StudyConfig) -> Result<StudyOutput, StudyError> {
    let pipeline = Pipeline::new(config)?;
    let op = CellOperator::new(&pipeline.mesh);
    let grid = pipeline.grid(config.n_quadrature)?;
    let spacing = pipeline.spacing();

    let rho_ref = config.pml.rho_reference;
    let reference = pipeline.pml_trace(&op, &grid, rho_ref)?;
    let reference_norm = trapezoid_norm(&reference, spacing);

    let mut records = Vec::with_capacity(config.pml.rho.len());
    for &rho in &config.pml.rho {
        let trace = pipeline.pml_trace(&op, &grid, rho)?;
        let diff: Vec<Complex64> = trace
            .iter()
            .zip(&reference)
            .map(|(a, b)| a - b)
            .collect();
        let denominator = match config.evaluation.denominator {
            Denominator::Tested => trapezoid_norm(&trace, spacing),
            Denominator::Reference => reference_norm,
        };
        records.push(ErrorRecord {
            rho,
            k: config.k,
            error: trapezoid_norm(&diff, spacing) / denominator,
        });
    }

    let fit = regression(
        &records
            .iter()
            .map(|r| (r.rho, r.error))
            .collect::<Vec<_>>(),
    )?;

    // quadrature stability report: rerun the reference at twice the order
    let doubled_grid = pipeline.grid(2 * config.n_quadrature)?;
    let doubled = pipeline.pml_trace(&op, &doubled_grid, rho_ref)?;
    let delta: Vec<Complex64> = doubled
        .iter()
        .zip(&reference)
        .map(|(a, b)| a - b)
        .collect();
    let n_refinement_delta = trapezoid_norm(&delta, spacing) / reference_norm;

    Ok(StudyOutput {
        k: config.k,
        n_quadrature: config.n_quadrature,
        mesh_h: config.mesh_h,
        truncation_j: pipeline.j_max,
        rho_reference: rho_ref,
        records,
        fit,
        n_refinement_delta,
    })
}

/// Trace of a single PML solve at the given strength, on the configured
/// evaluation line. Used by the `solve` command.
pub fn pml_trace(config: &StudyConfig, rho: f64) -> Result<Vec<Complex64>, StudyError> {
    pml_trace_at_order(config, rho, config.n_quadrature)
}

/// Same, with an explicit grid order.
pub fn pml_trace_at_order(
    config: &StudyConfig,
    rho: f64,
    n: usize,
) -> Result<Vec<Complex64>, StudyError> {
    let pipeline = Pipeline::new(config)?;
    let op = CellOperator::new(&pipeline.mesh);
    let grid = pipeline.grid(n)?;
    pipeline.pml_trace(&op, &grid, rho)
}

/// Trace of the exact transparent-boundary pipeline, a PML-free reference.
pub fn dtn_reference_trace(config: &StudyConfig) -> Result<Vec<Complex64>, StudyError> {
    dtn_reference_trace_at_order(config, config.n_quadrature)
}

/// Same, with an explicit grid order.
pub fn dtn_reference_trace_at_order(
    config: &StudyConfig,
    n: usize,
) -> Result<Vec<Complex64>, StudyError> {
    let pipeline = Pipeline::new(config)?;
    let op = CellOperator::new(&pipeline.mesh);
    let grid = pipeline.grid(n)?;
    pipeline.trace(&op, &grid, BoundaryCondition::ExactDtn, f64::NAN)
}

/// Relative trapezoid-L2 distance between two traces on the configured
/// evaluation grid, normalized by the second.
pub fn relative_trace_distance(config: &StudyConfig, a: &[Complex64], b: &[Complex64]) -> f64 {
    let [lo, hi] = config.evaluation.interval;
    let spacing = (hi - lo) / (a.len() - 1) as f64;
    let diff: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    trapezoid_norm(&diff, spacing) / trapezoid_norm(b, spacing)
}

/// Write the error table as CSV with the fit appended as `#` comments.
pub fn write_csv(output: &StudyOutput, w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "rho,k,error,n_quadrature,mesh_h,truncation_J")?;
    for r in &output.records {
        writeln!(
            w,
            "{},{},{:.12e},{},{},{}",
            r.rho, r.k, r.error, output.n_quadrature, output.mesh_h, output.truncation_j
        )?;
    }
    writeln!(w, "# rho_reference = {}", output.rho_reference)?;
    writeln!(w, "# slope = {:.12e}", output.fit.slope)?;
    writeln!(w, "# intercept = {:.12e}", output.fit.intercept)?;
    writeln!(w, "# r_squared = {:.12e}", output.fit.r_squared)?;
    writeln!(
        w,
        "# n_refinement_delta = {:.12e}",
        output.n_refinement_delta
    )?;
    Ok(())
}

/// Dump one trace as CSV.
pub fn write_trace_csv(
    points: &[f64],
    trace: &[Complex64],
    w: &mut impl Write,
) -> io::Result<()> {
    writeln!(w, "x1,re,im")?;
    for (x, v) in points.iter().zip(trace) {
        writeln!(w, "{},{:.12e},{:.12e}", x, v.re, v.im)?;
    }
    Ok(())
}
