//! Finite element solution of the quasi-periodic cell problems.
//!
//! Two formulations are assembled over the mapped cell mesh with linear
//! triangles:
//!
//! * the strip problem on `[surface, H]` closed by a truncated boundary
//!   Fourier form on the top line, with either the exact transparent
//!   coefficients `beta_j` or their PML-modified values `h(alpha, sigma, j)`;
//! * the stretched-coordinate problem on `[surface, H + lambda]` with the
//!   absorbing profile `s(x2)` woven into the coefficients and a Dirichlet
//!   wall on top. The weak form is multiplied through by `s`, which is
//!   legitimate because `s` depends on `x2` only and never vanishes.
//!
//! Left and right periodic vertices are identified as single unknowns,
//! surface rows are eliminated, and the resulting complex sparse systems
//! go through a direct LU factorization with a hard residual contract.

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use num_complex::Complex64;
use std::f64::consts::{PI, TAU};
use thiserror::Error;

use crate::bloch::PeriodicCellField;
use crate::kernels::{dtn_coeff, pml_coeff, KernelError, PmlSpec};
use crate::mesh::{MeshError, PeriodicCellMesh, SourceTerm};

/// Relative residual contract for the direct solve.
pub const RESIDUAL_LIMIT: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("Fourier truncation J = {j} too small for k = {k}; need J >= ceil(k) + 1")]
    TruncationTooSmall { j: usize, k: f64 },
    #[error(
        "source support x1 in [{x1_lo:.4}, {x1_hi:.4}], x2 in [{x2_lo:.4}, {x2_hi:.4}] \
         must lie strictly between the surface and the line x2 = {strip:.4}"
    )]
    SourceOutsideCell {
        x1_lo: f64,
        x1_hi: f64,
        x2_lo: f64,
        x2_hi: f64,
        strip: f64,
    },
    #[error("mesh top {mesh_top} does not match the absorbing layer top {layer_top}")]
    LayerMeshMismatch { mesh_top: f64, layer_top: f64 },
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
    #[error("solve residual {residual:.3e} exceeds the contract {limit:.1e}")]
    ResidualTooLarge { residual: f64, limit: f64 },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Top boundary closure of the strip formulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryCondition {
    /// Exact transparent coefficients `beta_j`.
    ExactDtn,
    /// PML-modified coefficients `h(alpha, sigma, j)`.
    Pml { sigma: Complex64 },
}

/// Maps lattice vertices to unknown indices: surface row eliminated,
/// column `n1` identified with column 0, optionally a Dirichlet top row.
#[derive(Debug, Clone, Copy)]
struct DofMap {
    n1: usize,
    n2: usize,
    dirichlet_top: bool,
}

impl DofMap {
    fn vertex_dof(&self, i: usize, j: usize) -> Option<usize> {
        if j == 0 || (self.dirichlet_top && j == self.n2) {
            return None;
        }
        let col = if i == self.n1 { 0 } else { i };
        Some((j - 1) * self.n1 + col)
    }

    fn len(&self) -> usize {
        let rows = if self.dirichlet_top { self.n2 - 1 } else { self.n2 };
        rows * self.n1
    }
}

/// Fourier coefficient of the periodic piecewise-linear hat centered at
/// grid position `x_i`, divided by `exp(-i j x_i)`:
/// `(dx / 2 pi) * sinc^2(j dx / 2)`. Exact for the uniform top edge, so
/// trace integrals carry no quadrature aliasing.
fn hat_fourier_factor(j: i64, dx: f64) -> f64 {
    let y = 0.5 * j as f64 * dx;
    let sinc = if y == 0.0 { 1.0 } else { y.sin() / y };
    dx / TAU * sinc * sinc
}

/// Exact Fourier coefficients of the piecewise-linear trace given by
/// `top_values` on the uniform top edge, for modes `-j_max ..= j_max`.
///
/// `top_values` holds one value per distinct column (the wrapped column
/// is implied by periodicity).
pub fn trace_fourier(
    mesh: &PeriodicCellMesh,
    top_values: &[Complex64],
    j_max: usize,
) -> Vec<Complex64> {
    let n1 = mesh.n_columns();
    assert_eq!(top_values.len(), n1, "one trace value per distinct column");
    let dx = mesh.column_spacing();
    let mut coeffs = Vec::with_capacity(2 * j_max + 1);
    for j in -(j_max as i64)..=(j_max as i64) {
        let fac = hat_fourier_factor(j, dx);
        let mut sum = Complex64::new(0.0, 0.0);
        for (i, v) in top_values.iter().enumerate() {
            let x = -PI + i as f64 * dx;
            sum += v * Complex64::from_polar(1.0, -(j as f64) * x);
        }
        coeffs.push(fac * sum);
    }
    coeffs
}

struct TriangleGeometry {
    area: f64,
    /// gradient of each shape function, constant over the triangle
    grads: [[f64; 2]; 3],
    /// edge midpoints (the degree-2 quadrature points)
    midpoints: [[f64; 2]; 3],
}

fn triangle_geometry(mesh: &PeriodicCellMesh, tri: &[usize; 3]) -> TriangleGeometry {
    let p0 = mesh.vertex(tri[0]);
    let p1 = mesh.vertex(tri[1]);
    let p2 = mesh.vertex(tri[2]);
    let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    let area = 0.5 * det;
    let grads = [
        [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
        [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
        [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
    ];
    let midpoints = [
        [0.5 * (p1[0] + p2[0]), 0.5 * (p1[1] + p2[1])],
        [0.5 * (p0[0] + p2[0]), 0.5 * (p0[1] + p2[1])],
        [0.5 * (p0[0] + p1[0]), 0.5 * (p0[1] + p1[1])],
    ];
    TriangleGeometry {
        area,
        grads,
        midpoints,
    }
}

/// value of shape function `l` at edge midpoint `q`
#[inline]
fn phi_at_midpoint(l: usize, q: usize) -> f64 {
    if l == q {
        0.0
    } else {
        0.5
    }
}

/// Reusable assembly data for one mesh: the alpha-independent stiffness,
/// drift and mass entries on a shared sparsity pattern. Amortizes the
/// element loop when many Floquet samples are solved on the same mesh.
pub struct CellOperator<'m> {
    mesh: &'m PeriodicCellMesh,
    dof: DofMap,
    pattern: Vec<(usize, usize)>,
    stiffness: Vec<f64>,
    drift: Vec<f64>,
    mass: Vec<f64>,
    top_dofs: Vec<usize>,
}

impl<'m> CellOperator<'m> {
    pub fn new(mesh: &'m PeriodicCellMesh) -> Self {
        let dof = DofMap {
            n1: mesh.n_columns(),
            n2: mesh.n_layers(),
            dirichlet_top: false,
        };
        let mut pattern = Vec::new();
        let mut stiffness = Vec::new();
        let mut drift = Vec::new();
        let mut mass = Vec::new();
        let n1 = mesh.n_columns();
        for tri in mesh.triangles() {
            let geo = triangle_geometry(mesh, tri);
            let dofs: Vec<Option<usize>> = tri
                .iter()
                .map(|&v| {
                    let i = v % (n1 + 1);
                    let j = v / (n1 + 1);
                    dof.vertex_dof(i, j)
                })
                .collect();
            for p in 0..3 {
                let Some(row) = dofs[p] else { continue };
                for l in 0..3 {
                    let Some(col) = dofs[l] else { continue };
                    let k_val = geo.area
                        * (geo.grads[l][0] * geo.grads[p][0] + geo.grads[l][1] * geo.grads[p][1]);
                    let d_val = geo.area / 3.0 * geo.grads[l][0];
                    let m_val = if p == l { geo.area / 6.0 } else { geo.area / 12.0 };
                    pattern.push((row, col));
                    stiffness.push(k_val);
                    drift.push(d_val);
                    mass.push(m_val);
                }
            }
        }
        let top_dofs = (0..n1)
            .map(|i| dof.vertex_dof(i, mesh.n_layers()).expect("top row is free"))
            .collect();
        Self {
            mesh,
            dof,
            pattern,
            stiffness,
            drift,
            mass,
            top_dofs,
        }
    }

    pub fn mesh(&self) -> &PeriodicCellMesh {
        self.mesh
    }

    pub fn n_dofs(&self) -> usize {
        self.dof.len()
    }

    #[cfg(test)]
    pub(crate) fn domain_parts(&self) -> (&[(usize, usize)], &[f64], &[f64], &[f64]) {
        (&self.pattern, &self.stiffness, &self.drift, &self.mass)
    }

    /// Assemble the strip system at one Floquet parameter.
    pub fn assemble(
        &self,
        alpha: f64,
        k: f64,
        bc: BoundaryCondition,
        j_max: usize,
        source: &SourceTerm,
    ) -> Result<CellSystem<'m>, FemError> {
        if (j_max as f64) < k.ceil() + 1.0 {
            return Err(FemError::TruncationTooSmall { j: j_max, k });
        }
        validate_source(self.mesh, self.mesh.top(), source)?;

        let n1 = self.mesh.n_columns();
        let mut triplets: Vec<Triplet<usize, usize, c64>> =
            Vec::with_capacity(self.pattern.len() + n1 * n1);

        // domain form: stiffness - 2 i alpha drift - (k^2 - alpha^2) mass
        let zeroth = k * k - alpha * alpha;
        for (idx, &(row, col)) in self.pattern.iter().enumerate() {
            let val = Complex64::new(
                self.stiffness[idx] - zeroth * self.mass[idx],
                -2.0 * alpha * self.drift[idx],
            );
            triplets.push(Triplet::new(row, col, val));
        }

        // boundary Fourier block: -2 pi i sum_j c_j psi_hat(j) conj(phi_hat(j)),
        // circulant over the uniform top columns
        let dx = self.mesh.column_spacing();
        let mut row_kernel = vec![Complex64::new(0.0, 0.0); n1];
        for j in -(j_max as i64)..=(j_max as i64) {
            let c_j = match bc {
                BoundaryCondition::ExactDtn => dtn_coeff(k, alpha, j),
                BoundaryCondition::Pml { sigma } => pml_coeff(k, alpha, j, sigma)?,
            };
            let fac = hat_fourier_factor(j, dx);
            let scale = Complex64::new(0.0, -TAU) * c_j * fac * fac;
            for (r, slot) in row_kernel.iter_mut().enumerate() {
                *slot += scale * Complex64::from_polar(1.0, j as f64 * r as f64 * dx);
            }
        }
        for p in 0..n1 {
            for q in 0..n1 {
                let r = (p + n1 - q) % n1;
                triplets.push(Triplet::new(self.top_dofs[p], self.top_dofs[q], row_kernel[r]));
            }
        }

        let rhs = assemble_rhs(self.mesh, &self.dof, alpha, source, None);

        Ok(CellSystem {
            mesh: self.mesh,
            alpha,
            j_max,
            dof: self.dof,
            trace_height: self.mesh.top(),
            triplets,
            rhs: rhs?,
        })
    }
}

fn validate_source(
    mesh: &PeriodicCellMesh,
    strip: f64,
    source: &SourceTerm,
) -> Result<(), FemError> {
    let ((x1_lo, x1_hi), (x2_lo, x2_hi)) = source.support().bounds();
    let reject = |_: ()| FemError::SourceOutsideCell {
        x1_lo,
        x1_hi,
        x2_lo,
        x2_hi,
        strip,
    };
    if x1_lo < -PI - 1e-9 || x1_hi > PI + 1e-9 || x2_hi >= strip {
        return Err(reject(()));
    }
    let n1 = mesh.n_columns();
    let dx = mesh.column_spacing();
    for i in 0..=n1 {
        let x = -PI + i as f64 * dx;
        if x + dx >= x1_lo && x - dx <= x1_hi && x2_lo <= mesh.surface_height(i) {
            return Err(reject(()));
        }
    }
    Ok(())
}

/// Right side `-int exp(-i alpha x1) f phi` by the midpoint rule, with an
/// optional pointwise complex weight (the stretched form multiplies the
/// source by `s(x2)`).
fn assemble_rhs(
    mesh: &PeriodicCellMesh,
    dof: &DofMap,
    alpha: f64,
    source: &SourceTerm,
    weight: Option<&dyn Fn(f64) -> Result<Complex64, KernelError>>,
) -> Result<Vec<Complex64>, FemError> {
    let n1 = mesh.n_columns();
    let mut rhs = vec![Complex64::new(0.0, 0.0); dof.len()];
    for tri in mesh.triangles() {
        let geo = triangle_geometry(mesh, tri);
        let dofs: Vec<Option<usize>> = tri
            .iter()
            .map(|&v| dof.vertex_dof(v % (n1 + 1), v / (n1 + 1)))
            .collect();
        for q in 0..3 {
            let [x1, x2] = geo.midpoints[q];
            let f = source.eval(x1, x2);
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            let w = match weight {
                Some(s) => s(x2)?,
                None => Complex64::new(1.0, 0.0),
            };
            let val = -geo.area / 3.0 * Complex64::from_polar(1.0, -alpha * x1) * f * w;
            for p in 0..3 {
                if let Some(row) = dofs[p] {
                    rhs[row] += val * phi_at_midpoint(p, q);
                }
            }
        }
    }
    Ok(rhs)
}

/// An assembled linear system for one cell problem.
pub struct CellSystem<'m> {
    mesh: &'m PeriodicCellMesh,
    alpha: f64,
    j_max: usize,
    dof: DofMap,
    trace_height: f64,
    triplets: Vec<Triplet<usize, usize, c64>>,
    rhs: Vec<Complex64>,
}

impl<'m> CellSystem<'m> {
    pub fn n_dofs(&self) -> usize {
        self.dof.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rhs(&self) -> &[Complex64] {
        &self.rhs
    }

    #[cfg(test)]
    pub(crate) fn triplets(&self) -> &[Triplet<usize, usize, c64>] {
        &self.triplets
    }
}

/// Assemble the strip problem at one Floquet parameter. One-shot wrapper
/// around [`CellOperator`]; prefer keeping the operator when sweeping many
/// parameters on the same mesh.
pub fn assemble_cell<'m>(
    mesh: &'m PeriodicCellMesh,
    alpha: f64,
    k: f64,
    bc: BoundaryCondition,
    j_max: usize,
    source: &SourceTerm,
) -> Result<CellSystem<'m>, FemError> {
    CellOperator::new(mesh).assemble(alpha, k, bc, j_max, source)
}

/// Complex nodal solution of one cell problem with its trace Fourier data.
#[derive(Debug, Clone)]
pub struct CellSolution {
    alpha: f64,
    j_max: usize,
    nodal: Vec<Complex64>,
    trace: Vec<Complex64>,
    residual: f64,
}

impl CellSolution {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Per-vertex values on the full lattice; Dirichlet vertices carry
    /// exactly zero and the wrapped column repeats column 0.
    pub fn nodal(&self) -> &[Complex64] {
        &self.nodal
    }

    /// Trace coefficients for modes `-j_max ..= j_max`.
    pub fn trace(&self) -> &[Complex64] {
        &self.trace
    }

    pub fn trace_coefficient(&self, j: i64) -> Complex64 {
        self.trace[(j + self.j_max as i64) as usize]
    }

    pub fn j_max(&self) -> usize {
        self.j_max
    }

    /// Relative residual achieved by the direct solve.
    pub fn residual(&self) -> f64 {
        self.residual
    }
}

/// View of a cell solution as a periodic field over the base cell.
pub struct CellField<'a> {
    pub mesh: &'a PeriodicCellMesh,
    pub solution: &'a CellSolution,
}

impl PeriodicCellField for CellField<'_> {
    fn eval(&self, x1: f64, x2: f64) -> Complex64 {
        let folded = x1 - TAU * ((x1 + PI) / TAU).floor();
        self.mesh
            .interpolate(self.solution.nodal(), folded, x2)
            .expect("evaluation point inside the meshed cell")
    }
}

/// Factor and solve an assembled system, enforcing the residual contract,
/// and expand the unknowns back onto the vertex lattice.
pub fn solve_cell(system: CellSystem<'_>) -> Result<CellSolution, FemError> {
    let n = system.n_dofs();
    let a = SparseColMat::<usize, c64>::try_new_from_triplets(n, n, &system.triplets)
        .map_err(|e| FemError::Factorization(format!("matrix creation: {e:?}")))?;
    let symbolic = SymbolicLu::try_new(a.symbolic())
        .map_err(|e| FemError::Factorization(format!("symbolic analysis: {e:?}")))?;
    let lu = Lu::try_new_with_symbolic(symbolic, a.as_ref())
        .map_err(|e| FemError::Factorization(format!("numeric factorization: {e:?}")))?;

    let mut x = Mat::<c64>::zeros(n, 1);
    for (i, v) in system.rhs.iter().enumerate() {
        x[(i, 0)] = *v;
    }
    lu.solve_in_place(x.as_mut());

    // relative residual against the triplet representation
    let rhs_norm: f64 = system.rhs.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let mut residual = 0.0;
    if rhs_norm > 0.0 {
        let mut r: Vec<Complex64> = system.rhs.clone();
        for t in &system.triplets {
            r[t.row] -= t.val * x[(t.col, 0)];
        }
        residual = r.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt() / rhs_norm;
        if !residual.is_finite() || residual > RESIDUAL_LIMIT {
            return Err(FemError::ResidualTooLarge {
                residual,
                limit: RESIDUAL_LIMIT,
            });
        }
    }

    let mesh = system.mesh;
    let n1 = mesh.n_columns();
    let n2 = mesh.n_layers();
    let mut nodal = vec![Complex64::new(0.0, 0.0); mesh.n_vertices()];
    for j in 0..=n2 {
        for i in 0..=n1 {
            if let Some(d) = system.dof.vertex_dof(i, j) {
                nodal[mesh.vertex_index(i, j)] = x[(d, 0)];
            }
        }
    }

    // trace on the line carrying the boundary data; the strip formulation
    // reads the top row directly, the stretched one interpolates at the
    // layer base
    let top_values: Vec<Complex64> = if system.trace_height == mesh.top() {
        (0..n1)
            .map(|i| nodal[mesh.vertex_index(i, n2)])
            .collect()
    } else {
        let dx = mesh.column_spacing();
        (0..n1)
            .map(|i| {
                mesh.interpolate(&nodal, -PI + i as f64 * dx, system.trace_height)
                    .unwrap_or(Complex64::new(0.0, 0.0))
            })
            .collect()
    };
    let trace = trace_fourier(mesh, &top_values, system.j_max);

    Ok(CellSolution {
        alpha: system.alpha,
        j_max: system.j_max,
        nodal,
        trace,
        residual,
    })
}

/// Assemble the stretched-coordinate system on the extended cell. The top
/// of `mesh` must coincide with the layer top `H + lambda`; both surface
/// and top rows are Dirichlet.
pub(crate) fn assemble_stretched<'m>(
    mesh: &'m PeriodicCellMesh,
    alpha: f64,
    k: f64,
    pml: &PmlSpec,
    j_max: usize,
    source: &SourceTerm,
) -> Result<CellSystem<'m>, FemError> {
    if (mesh.top() - pml.top_height()).abs() > 1e-9 {
        return Err(FemError::LayerMeshMismatch {
            mesh_top: mesh.top(),
            layer_top: pml.top_height(),
        });
    }
    if (j_max as f64) < k.ceil() + 1.0 {
        return Err(FemError::TruncationTooSmall { j: j_max, k });
    }
    validate_source(mesh, pml.base_height(), source)?;

    let dof = DofMap {
        n1: mesh.n_columns(),
        n2: mesh.n_layers(),
        dirichlet_top: true,
    };
    let n1 = mesh.n_columns();
    let zeroth = k * k - alpha * alpha;
    let mut triplets: Vec<Triplet<usize, usize, c64>> =
        Vec::with_capacity(9 * mesh.n_triangles());
    for tri in mesh.triangles() {
        let geo = triangle_geometry(mesh, tri);
        let dofs: Vec<Option<usize>> = tri
            .iter()
            .map(|&v| dof.vertex_dof(v % (n1 + 1), v / (n1 + 1)))
            .collect();
        for q in 0..3 {
            let x2 = geo.midpoints[q][1];
            let s = pml.stretch(x2)?;
            let s_inv = s.inv();
            let w = geo.area / 3.0;
            for p in 0..3 {
                let Some(row) = dofs[p] else { continue };
                let phi_p = phi_at_midpoint(p, q);
                for l in 0..3 {
                    let Some(col) = dofs[l] else { continue };
                    let phi_l = phi_at_midpoint(l, q);
                    let grad = s * (geo.grads[l][0] * geo.grads[p][0])
                        + s_inv * (geo.grads[l][1] * geo.grads[p][1]);
                    let first_order =
                        Complex64::new(0.0, -2.0 * alpha) * s * geo.grads[l][0] * phi_p;
                    let zero_order = -zeroth * s * phi_l * phi_p;
                    triplets.push(Triplet::new(row, col, w * (grad + first_order + zero_order)));
                }
            }
        }
    }

    let stretch = |x2: f64| pml.stretch(x2);
    let rhs = assemble_rhs(mesh, &dof, alpha, source, Some(&stretch))?;

    Ok(CellSystem {
        mesh,
        alpha,
        j_max,
        dof,
        trace_height: pml.base_height(),
        triplets,
        rhs,
    })
}

/// Solve the stretched-coordinate problem on the extended cell mesh.
///
/// Realizes the same absorbing layer as the PML-modified boundary
/// condition; the two solutions agree on the strip up to discretization
/// error, which the tests pin.
pub fn solve_stretched(
    mesh: &PeriodicCellMesh,
    alpha: f64,
    k: f64,
    pml: &PmlSpec,
    j_max: usize,
    source: &SourceTerm,
) -> Result<CellSolution, FemError> {
    solve_cell(assemble_stretched(mesh, alpha, k, pml, j_max, source)?)
}

/// L2 norms over the meshed cell of `values - reference` and `reference`,
/// by the degree-2 midpoint rule. The reference is any pointwise field,
/// typically an oracle or a solution on a different mesh.
pub fn l2_error(
    mesh: &PeriodicCellMesh,
    values: &[Complex64],
    reference: impl Fn(f64, f64) -> Complex64,
) -> (f64, f64) {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for tri in mesh.triangles() {
        let geo = triangle_geometry(mesh, tri);
        let v = [values[tri[0]], values[tri[1]], values[tri[2]]];
        for q in 0..3 {
            let interp: Complex64 = (0..3).map(|l| v[l] * phi_at_midpoint(l, q)).sum();
            let r = reference(geo.midpoints[q][0], geo.midpoints[q][1]);
            diff += geo.area / 3.0 * (interp - r).norm_sqr();
            norm += geo.area / 3.0 * r.norm_sqr();
        }
    }
    (diff.sqrt(), norm.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_cell_mesh, build_extended_cell_mesh, Support, SurfaceProfile};
    use approx::assert_abs_diff_eq;

    fn flat_mesh(h: f64) -> PeriodicCellMesh {
        let surface = SurfaceProfile::flat(0.0, 1.0).unwrap();
        build_cell_mesh(&surface, 1.0, h).unwrap()
    }

    fn bump(x2: f64) -> f64 {
        let u = (x2 - 0.5) / 0.2;
        if u.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - u * u).powi(3)
        }
    }

    fn bump_source() -> SourceTerm {
        SourceTerm::new(
            Support::Rect {
                x1: (-PI, PI),
                x2: (0.3, 0.7),
            },
            |_, x2| Complex64::new(bump(x2), 0.0),
        )
    }

    fn zero_source() -> SourceTerm {
        SourceTerm::new(
            Support::Disk {
                center: (0.0, 0.5),
                radius: 0.1,
            },
            |_, _| Complex64::new(0.0, 0.0),
        )
    }

    #[test]
    fn trace_fourier_constant_is_delta() {
        let mesh = flat_mesh(0.1);
        let n1 = mesh.n_columns();
        let ones = vec![Complex64::new(1.0, 0.0); n1];
        let coeffs = trace_fourier(&mesh, &ones, 4);
        for (idx, c) in coeffs.iter().enumerate() {
            let j = idx as i64 - 4;
            if j == 0 {
                assert_abs_diff_eq!(c.re, 1.0, epsilon = 1e-13);
                assert_abs_diff_eq!(c.im, 0.0, epsilon = 1e-13);
            } else {
                assert!(c.norm() < 1e-13, "mode {j} = {c}");
            }
        }
    }

    #[test]
    fn trace_fourier_matches_dense_quadrature_of_interpolant() {
        // nodal samples of exp(i x1); the exact coefficient of the
        // piecewise-linear interpolant comes from dense integration
        let mesh = flat_mesh(0.1);
        let n1 = mesh.n_columns();
        let dx = mesh.column_spacing();
        let values: Vec<Complex64> = (0..n1)
            .map(|i| Complex64::from_polar(1.0, -PI + i as f64 * dx))
            .collect();
        let coeffs = trace_fourier(&mesh, &values, 3);

        let interp = |x: f64| {
            let pos = ((x + PI) / dx).floor();
            let i = (pos as usize).min(n1 - 1);
            let u = (x - (-PI + i as f64 * dx)) / dx;
            let a = values[i];
            let b = values[(i + 1) % n1];
            a * (1.0 - u) + b * u
        };
        for j in -3i64..=3 {
            // composite Simpson with many panels per element
            let m = 20_000;
            let mut acc = Complex64::new(0.0, 0.0);
            let step = TAU / m as f64;
            for q in 0..m {
                let xa = -PI + q as f64 * step;
                let xm = xa + 0.5 * step;
                let xb = xa + step;
                let g = |x: f64| interp(x) * Complex64::from_polar(1.0, -(j as f64) * x);
                acc += step / 6.0 * (g(xa) + 4.0 * g(xm) + g(xb));
            }
            let dense = acc / TAU;
            let got = coeffs[(j + 3) as usize];
            assert_abs_diff_eq!(got.re, dense.re, epsilon = 1e-9);
            assert_abs_diff_eq!(got.im, dense.im, epsilon = 1e-9);
        }
        // mode 1 dominated: 1 + O(h^2), every other mode tiny
        let c1 = coeffs[4];
        assert!((c1 - Complex64::new(1.0, 0.0)).norm() < 0.01 * 0.01 + 0.02);
        for j in [-3i64, -2, -1, 0, 2, 3] {
            assert!(coeffs[(j + 3) as usize].norm() < 1e-12);
        }
    }

    #[test]
    fn trace_fourier_is_linear() {
        let mesh = flat_mesh(0.2);
        let n1 = mesh.n_columns();
        let a: Vec<Complex64> = (0..n1)
            .map(|i| Complex64::new(i as f64, -(i as f64) * 0.3))
            .collect();
        let b: Vec<Complex64> = (0..n1)
            .map(|i| Complex64::new((i as f64).cos(), 1.7))
            .collect();
        let sum: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let ca = trace_fourier(&mesh, &a, 5);
        let cb = trace_fourier(&mesh, &b, 5);
        let cs = trace_fourier(&mesh, &sum, 5);
        for i in 0..ca.len() {
            let lin = ca[i] + cb[i];
            assert_abs_diff_eq!(cs[i].re, lin.re, epsilon = 1e-12);
            assert_abs_diff_eq!(cs[i].im, lin.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_source_gives_zero_rhs_and_zero_solution() {
        let mesh = flat_mesh(0.2);
        let system = assemble_cell(&mesh, 0.25, 1.0, BoundaryCondition::ExactDtn, 3, &zero_source())
            .unwrap();
        assert!(system.rhs().iter().all(|v| *v == Complex64::new(0.0, 0.0)));
        let solution = solve_cell(system).unwrap();
        assert!(solution.nodal().iter().all(|v| *v == Complex64::new(0.0, 0.0)));
        assert!(solution.trace().iter().all(|v| *v == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn truncation_must_cover_propagating_modes() {
        let mesh = flat_mesh(0.2);
        assert!(matches!(
            assemble_cell(&mesh, 0.0, 2.5, BoundaryCondition::ExactDtn, 3, &zero_source()),
            Err(FemError::TruncationTooSmall { .. })
        ));
    }

    #[test]
    fn source_outside_cell_is_rejected() {
        let mesh = flat_mesh(0.2);
        let outside = SourceTerm::modulated_disk((0.0, 0.9), 0.3, 1.0, 0.0, PI);
        assert!(matches!(
            assemble_cell(&mesh, 0.0, 1.0, BoundaryCondition::ExactDtn, 5, &outside),
            Err(FemError::SourceOutsideCell { .. })
        ));
        let below = SourceTerm::modulated_disk((0.0, 0.05), 0.2, 1.0, 0.0, PI);
        assert!(matches!(
            assemble_cell(&mesh, 0.0, 1.0, BoundaryCondition::ExactDtn, 5, &below),
            Err(FemError::SourceOutsideCell { .. })
        ));
        let seam = SourceTerm::modulated_disk((3.1, 0.5), 0.2, 1.0, 0.0, PI);
        assert!(matches!(
            assemble_cell(&mesh, 0.0, 1.0, BoundaryCondition::ExactDtn, 5, &seam),
            Err(FemError::SourceOutsideCell { .. })
        ));
    }

    #[test]
    fn domain_part_is_hermitian_and_drift_skew() {
        let mesh = flat_mesh(0.25);
        let op = CellOperator::new(&mesh);
        let n = op.n_dofs();
        let (pattern, stiffness, drift, mass) = op.domain_parts();
        let mut k_dense = vec![0.0; n * n];
        let mut d_dense = vec![0.0; n * n];
        let mut m_dense = vec![0.0; n * n];
        for (idx, &(r, c)) in pattern.iter().enumerate() {
            k_dense[r * n + c] += stiffness[idx];
            d_dense[r * n + c] += drift[idx];
            m_dense[r * n + c] += mass[idx];
        }
        for r in 0..n {
            for c in 0..n {
                assert_abs_diff_eq!(k_dense[r * n + c], k_dense[c * n + r], epsilon = 1e-12);
                assert_abs_diff_eq!(m_dense[r * n + c], m_dense[c * n + r], epsilon = 1e-12);
                // drift block is real antisymmetric, hence skew-Hermitian
                assert_abs_diff_eq!(d_dense[r * n + c], -d_dense[c * n + r], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn solution_is_linear_in_the_source() {
        let mesh = flat_mesh(0.2);
        let src1 = SourceTerm::modulated_disk((0.0, 0.5), 0.3, 1.0, 1.0, PI);
        let src2 = SourceTerm::modulated_disk((0.0, 0.5), 0.3, 2.0, 1.0, PI);
        let op = CellOperator::new(&mesh);
        let w1 = solve_cell(
            op.assemble(0.25, 1.0, BoundaryCondition::ExactDtn, 5, &src1).unwrap(),
        )
        .unwrap();
        let w2 = solve_cell(
            op.assemble(0.25, 1.0, BoundaryCondition::ExactDtn, 5, &src2).unwrap(),
        )
        .unwrap();
        let norm = mesh.l2_norm(w2.nodal());
        assert!(norm > 0.0);
        let doubled: Vec<Complex64> = w1.nodal().iter().map(|v| 2.0 * v).collect();
        let (diff, _) = l2_error(&mesh, &doubled, |x1, x2| {
            mesh.interpolate(w2.nodal(), x1, x2).unwrap()
        });
        assert!(diff / norm < 1e-12, "relative deviation {}", diff / norm);
    }

    #[test]
    fn dirichlet_vertices_are_exactly_zero() {
        let mesh = flat_mesh(0.2);
        let solution = solve_cell(
            assemble_cell(&mesh, 0.1, 1.0, BoundaryCondition::ExactDtn, 5, &bump_source())
                .unwrap(),
        )
        .unwrap();
        let n1 = mesh.n_columns();
        for i in 0..=n1 {
            assert_eq!(
                solution.nodal()[mesh.vertex_index(i, 0)],
                Complex64::new(0.0, 0.0)
            );
        }
        // wrapped column repeats column 0
        for j in 0..=mesh.n_layers() {
            assert_eq!(
                solution.nodal()[mesh.vertex_index(n1, j)],
                solution.nodal()[mesh.vertex_index(0, j)]
            );
        }
    }

    #[test]
    fn radiated_energy_sign() {
        let mesh = flat_mesh(0.1);
        let solution = solve_cell(
            assemble_cell(&mesh, 0.25, 1.0, BoundaryCondition::ExactDtn, 8, &bump_source())
                .unwrap(),
        )
        .unwrap();
        let mut flux = Complex64::new(0.0, 0.0);
        for j in -8i64..=8 {
            let beta = dtn_coeff(1.0, 0.25, j);
            let w = solution.trace_coefficient(j);
            flux += Complex64::i() * beta * w.norm_sqr();
        }
        assert!(flux.im >= -1e-10, "flux = {flux}");
        assert!(flux.im > 0.0, "source should radiate");
    }

    #[test]
    fn fourier_modes_decouple_at_alpha_zero() {
        // flat surface, single-mode source, alpha = 0: the discrete system
        // is translation invariant, so energy stays in the driven mode
        let mesh = flat_mesh(0.1);
        let ell = 2usize;
        let source = SourceTerm::new(
            Support::Rect {
                x1: (-PI, PI),
                x2: (0.3, 0.7),
            },
            move |x1, x2| Complex64::from_polar(bump(x2), ell as f64 * x1),
        );
        let solution = solve_cell(
            assemble_cell(&mesh, 0.0, 1.0, BoundaryCondition::ExactDtn, 6, &source).unwrap(),
        )
        .unwrap();
        let n1 = mesh.n_columns();
        let mut driven = 0.0;
        let mut leaked = 0.0;
        for j in 1..=mesh.n_layers() {
            let row: Vec<Complex64> = (0..n1)
                .map(|i| solution.nodal()[mesh.vertex_index(i, j)])
                .collect();
            for m in 0..n1 {
                let mut coeff = Complex64::new(0.0, 0.0);
                for (i, v) in row.iter().enumerate() {
                    coeff +=
                        v * Complex64::from_polar(1.0, -TAU * (m * i) as f64 / n1 as f64);
                }
                let e = coeff.norm_sqr();
                if m == ell {
                    driven += e;
                } else {
                    leaked += e;
                }
            }
        }
        assert!(driven > 0.0);
        assert!(leaked / driven < 1e-8, "leakage ratio {}", leaked / driven);
    }

    /// Complex tridiagonal solve, for the two-point boundary value oracle.
    fn thomas(
        lower: &[Complex64],
        diag: &[Complex64],
        upper: &[Complex64],
        rhs: &[Complex64],
    ) -> Vec<Complex64> {
        let n = diag.len();
        let mut c = vec![Complex64::new(0.0, 0.0); n];
        let mut d = vec![Complex64::new(0.0, 0.0); n];
        c[0] = upper[0] / diag[0];
        d[0] = rhs[0] / diag[0];
        for i in 1..n {
            let m = diag[i] - lower[i - 1] * c[i - 1];
            if i < n - 1 {
                c[i] = upper[i] / m;
            }
            d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / m;
        }
        let mut x = d;
        for i in (0..n - 1).rev() {
            let next = x[i + 1];
            x[i] -= c[i] * next;
        }
        x
    }

    /// Independent oracle for the flat-surface cell problem: expand the
    /// phase-twisted source in Fourier modes, solve each mode's two-point
    /// problem `W'' + (k^2 - (alpha+l)^2) W = c_l g`, `W(0) = 0`,
    /// `W'(H) = i beta_l W(H)` by finite differences, and sum.
    fn flat_oracle(
        k: f64,
        alpha: f64,
        height: f64,
        g: impl Fn(f64) -> f64,
        mode_cut: i64,
        grid: usize,
    ) -> impl Fn(f64, f64) -> Complex64 {
        let m = grid;
        let dz = height / m as f64;
        let mut profiles: Vec<(i64, Vec<Complex64>)> = Vec::new();
        for l in -mode_cut..=mode_cut {
            let a = alpha + l as f64;
            // mode weight of exp(-i alpha x1) on the cell
            let y = PI * a;
            let c_l = if y.abs() < 1e-14 { 1.0 } else { y.sin() / y };
            let gamma = Complex64::new(k * k - a * a, 0.0);
            let beta = crate::kernels::branch_sqrt(k, a);
            // unknowns W_1..W_M (W_0 = 0)
            let n = m;
            let mut lower = vec![Complex64::new(1.0 / (dz * dz), 0.0); n - 1];
            let mut diag = vec![gamma - 2.0 / (dz * dz); n];
            let upper = vec![Complex64::new(1.0 / (dz * dz), 0.0); n - 1];
            let rhs: Vec<Complex64> = (1..=m)
                .map(|i| Complex64::new(c_l * g(i as f64 * dz), 0.0))
                .collect();
            // Robin row via ghost elimination:
            // (2 W_{M-1} - 2 W_M + 2 dz i beta W_M)/dz^2 + gamma W_M = rhs
            lower[n - 2] = Complex64::new(2.0 / (dz * dz), 0.0);
            diag[n - 1] =
                gamma - 2.0 / (dz * dz) + Complex64::new(0.0, 2.0 / dz) * beta;
            let w = thomas(&lower, &diag, &upper, &rhs);
            profiles.push((l, w));
        }
        move |x1: f64, x2: f64| {
            let pos = (x2 / dz).clamp(0.0, m as f64);
            let i = (pos.floor() as usize).min(m - 1);
            let u = pos - i as f64;
            let mut acc = Complex64::new(0.0, 0.0);
            for (l, w) in &profiles {
                let below = if i == 0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    w[i - 1]
                };
                let val = below * (1.0 - u) + w[i] * u;
                acc += val * Complex64::from_polar(1.0, *l as f64 * x1);
            }
            acc
        }
    }

    #[test]
    fn flat_cell_matches_mode_expansion_oracle() {
        let k = 1.0;
        let alpha = 0.25;
        let mesh = flat_mesh(0.05);
        let solution = solve_cell(
            assemble_cell(&mesh, alpha, k, BoundaryCondition::ExactDtn, 11, &bump_source())
                .unwrap(),
        )
        .unwrap();
        let oracle = flat_oracle(k, alpha, 1.0, bump, 120, 4000);
        let (diff, norm) = l2_error(&mesh, solution.nodal(), &oracle);
        let rel = diff / norm;
        assert!(rel <= 0.01, "relative L2 error {rel}");
    }

    #[test]
    fn stretched_with_zero_strength_matches_plain_dirichlet_wall() {
        // rho = 0 makes s identically 1; the stretched assembly must then
        // coincide with the plain domain form plus a Dirichlet top
        let surface = SurfaceProfile::flat(0.0, 1.0).unwrap();
        let mesh = build_cell_mesh(&surface, 1.5, 0.2).unwrap();
        let pml = PmlSpec::new(0.5, 0.0, 1, Complex64::new(0.7, 0.7), 1.0).unwrap();
        let src = SourceTerm::modulated_disk((0.0, 0.5), 0.3, 1.0, 1.0, PI);
        let alpha = 0.2;
        let k = 1.0;
        let stretched = assemble_stretched(&mesh, alpha, k, &pml, 5, &src).unwrap();

        // plain reference built from the alpha-independent parts
        let op = CellOperator::new(&mesh);
        let dof = DofMap {
            n1: mesh.n_columns(),
            n2: mesh.n_layers(),
            dirichlet_top: true,
        };
        let n = dof.len();
        let mut dense = vec![Complex64::new(0.0, 0.0); n * n];
        let (pattern, stiffness, drift, mass) = op.domain_parts();
        // re-map operator dofs (free top) onto the Dirichlet-top layout
        let remap = |d: usize| {
            if d < n {
                Some(d)
            } else {
                None
            }
        };
        let zeroth = k * k - alpha * alpha;
        for (idx, &(r, c)) in pattern.iter().enumerate() {
            if let (Some(r), Some(c)) = (remap(r), remap(c)) {
                dense[r * n + c] += Complex64::new(
                    stiffness[idx] - zeroth * mass[idx],
                    -2.0 * alpha * drift[idx],
                );
            }
        }
        let mut stretched_dense = vec![Complex64::new(0.0, 0.0); n * n];
        for t in stretched.triplets() {
            stretched_dense[t.row * n + t.col] += t.val;
        }
        let mut worst = 0.0f64;
        for idx in 0..n * n {
            worst = worst.max((dense[idx] - stretched_dense[idx]).norm());
        }
        assert!(worst < 1e-11, "matrix mismatch {worst}");

        // and the solve itself goes through
        let w = solve_cell(stretched).unwrap();
        assert!(mesh.l2_norm(w.nodal()) > 0.0);
    }

    #[test]
    fn stretched_zero_source_gives_zero() {
        let surface = SurfaceProfile::flat(0.0, 1.0).unwrap();
        let mesh = build_cell_mesh(&surface, 1.5, 0.2).unwrap();
        let pml = PmlSpec::new(0.5, 2.0, 1, Complex64::new(0.7, 0.7), 1.0).unwrap();
        let w = solve_stretched(&mesh, 0.3, 1.0, &pml, 5, &zero_source()).unwrap();
        assert!(w.nodal().iter().all(|v| *v == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn stretched_mesh_top_must_match_layer() {
        let surface = SurfaceProfile::flat(0.0, 1.0).unwrap();
        let mesh = build_cell_mesh(&surface, 1.4, 0.2).unwrap();
        let pml = PmlSpec::new(0.5, 2.0, 1, Complex64::new(0.7, 0.7), 1.0).unwrap();
        assert!(matches!(
            solve_stretched(&mesh, 0.3, 1.0, &pml, 5, &zero_source()),
            Err(FemError::LayerMeshMismatch { .. })
        ));
    }

    #[test]
    fn stretched_and_boundary_formulations_agree_on_strip() {
        // both realize the same absorbing layer; compare on the strip
        let chi = Complex64::from_polar(1.0, PI / 4.0);
        let surface = SurfaceProfile::flat(0.0, 1.0).unwrap();
        let strip_mesh = build_cell_mesh(&surface, 1.0, 0.05).unwrap();
        let extended_mesh = build_extended_cell_mesh(&surface, 1.0, 1.75, 0.05).unwrap();
        let pml = PmlSpec::new(0.75, 4.0, 1, chi, 1.0).unwrap();
        let src = bump_source();
        let alpha = 0.125;
        let k = 1.0;
        let boundary = solve_cell(
            assemble_cell(
                &strip_mesh,
                alpha,
                k,
                BoundaryCondition::Pml { sigma: pml.sigma() },
                11,
                &src,
            )
            .unwrap(),
        )
        .unwrap();
        let stretched = solve_stretched(&extended_mesh, alpha, k, &pml, 11, &src).unwrap();
        let field = CellField {
            mesh: &extended_mesh,
            solution: &stretched,
        };
        let (diff, norm) = l2_error(&strip_mesh, boundary.nodal(), |x1, x2| field.eval(x1, x2));
        let rel = diff / norm;
        assert!(rel <= 1e-2, "strip disagreement {rel}");
    }

    #[test]
    fn pml_solutions_approach_dtn_as_strength_grows() {
        let chi = Complex64::from_polar(1.0, PI / 4.0);
        let mesh = flat_mesh(0.1);
        let src = bump_source();
        let alpha = 0.125;
        let k = 1.0;
        let op = CellOperator::new(&mesh);
        let reference = solve_cell(
            op.assemble(alpha, k, BoundaryCondition::ExactDtn, 11, &src).unwrap(),
        )
        .unwrap();
        let mut previous = f64::INFINITY;
        for rho in [2.0, 4.0, 8.0, 16.0] {
            let pml = PmlSpec::new(1.5, rho, 1, chi, 1.0).unwrap();
            let w = solve_cell(
                op.assemble(
                    alpha,
                    k,
                    BoundaryCondition::Pml { sigma: pml.sigma() },
                    11,
                    &src,
                )
                .unwrap(),
            )
            .unwrap();
            let (diff, _) = l2_error(&mesh, w.nodal(), |x1, x2| {
                mesh.interpolate(reference.nodal(), x1, x2).unwrap()
            });
            assert!(
                diff <= 1.2 * previous,
                "gap should shrink with strength: {diff} after {previous}"
            );
            previous = diff;
        }
        assert!(previous < 1e-3, "final gap {previous}");
    }

    #[test]
    fn truncation_is_stable_under_mode_count_growth() {
        // source far below the top line: the added evanescent modes are
        // negligible, so growing J barely moves the solution
        let surface = SurfaceProfile::flat(0.0, 2.5).unwrap();
        let mesh = build_cell_mesh(&surface, 2.5, 0.1).unwrap();
        let src = SourceTerm::modulated_disk((0.0, 0.7), 0.3, 1.0, 1.0, PI);
        let alpha = 0.125;
        let k = 1.0;
        let op = CellOperator::new(&mesh);
        let base = solve_cell(
            op.assemble(alpha, k, BoundaryCondition::ExactDtn, 15, &src).unwrap(),
        )
        .unwrap();
        let more = solve_cell(
            op.assemble(alpha, k, BoundaryCondition::ExactDtn, 20, &src).unwrap(),
        )
        .unwrap();
        let norm = mesh.l2_norm(base.nodal());
        let (diff, _) = l2_error(&mesh, more.nodal(), |x1, x2| {
            mesh.interpolate(base.nodal(), x1, x2).unwrap()
        });
        assert!(diff / norm <= 1e-8, "relative change {}", diff / norm);
    }
}
