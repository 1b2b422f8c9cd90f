//! Periodicity-cell meshing for the strip between the scattering surface
//! and a horizontal truncation line.
//!
//! The mesh is a layered mapping of a structured grid: column `i` sits at
//! `x1 = -pi + i * 2pi/n1` and its vertices interpolate linearly between
//! the surface height and the top line. The right boundary column
//! duplicates the left one shifted by exactly 2 pi, so periodic
//! identification is exact, and the top row is uniformly spaced, which
//! lets trace Fourier coefficients be integrated in closed form.

use num_complex::Complex64;
use std::f64::consts::{PI, TAU};
use std::io::{self, Write};
use std::sync::Arc;
use thiserror::Error;

/// Hard rejection floor for triangle quality, in degrees. Gently sloped
/// surfaces stay above 20 deg; strongly sheared layers (surface slope
/// approaching 1 near the surface maximum) flatten the worst triangles
/// toward 15 deg, which the piecewise-linear elements still tolerate
/// since the maximum angle stays far from 180 deg.
pub const MIN_ANGLE_DEG: f64 = 10.0;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("surface is not 2 pi periodic: zeta(-pi) = {left}, zeta(pi) = {right}")]
    NonPeriodicSurface { left: f64, right: f64 },
    #[error("boundary line at {line} must lie strictly above the surface maximum {zeta_max}")]
    LineBelowSurface { line: f64, zeta_max: f64 },
    #[error("mesh size must be positive and finite, got {0}")]
    InvalidMeshSize(f64),
    #[error("cell resolves into {columns} column(s) x {layers} layer(s); need at least 2 of each")]
    TooCoarse { columns: usize, layers: usize },
    #[error("triangle quality too poor: minimum angle {min_angle_deg:.2} deg is below {limit:.0} deg")]
    PoorQuality { min_angle_deg: f64, limit: f64 },
    #[error("point ({x1}, {x2}) lies outside the meshed cell")]
    OutsideDomain { x1: f64, x2: f64 },
}

/// Height function of the periodic surface plus the strip line above it.
#[derive(Clone)]
pub struct SurfaceProfile {
    zeta: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    zeta_min: f64,
    zeta_max: f64,
    strip_height: f64,
}

impl std::fmt::Debug for SurfaceProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SurfaceProfile")
            .field("zeta_min", &self.zeta_min)
            .field("zeta_max", &self.zeta_max)
            .field("strip_height", &self.strip_height)
            .finish()
    }
}

impl SurfaceProfile {
    /// Wrap a 2 pi periodic height function. The extrema are estimated by
    /// dense sampling; the strip line must clear the sampled maximum.
    pub fn new(
        zeta: impl Fn(f64) -> f64 + Send + Sync + 'static,
        strip_height: f64,
    ) -> Result<Self, MeshError> {
        let left = zeta(-PI);
        let right = zeta(PI);
        if (left - right).abs() > 1e-12 {
            return Err(MeshError::NonPeriodicSurface { left, right });
        }
        let samples = 4096;
        let mut zeta_min = f64::INFINITY;
        let mut zeta_max = f64::NEG_INFINITY;
        for i in 0..=samples {
            let v = zeta(-PI + TAU * i as f64 / samples as f64);
            zeta_min = zeta_min.min(v);
            zeta_max = zeta_max.max(v);
        }
        if strip_height <= zeta_max {
            return Err(MeshError::LineBelowSurface {
                line: strip_height,
                zeta_max,
            });
        }
        Ok(Self {
            zeta: Arc::new(zeta),
            zeta_min,
            zeta_max,
            strip_height,
        })
    }

    /// Trigonometric surface `mean + sum_m sin_amps[m-1] sin(m x) + cos_amps[m-1] cos(m x)`.
    pub fn trig(
        mean: f64,
        sin_amps: &[f64],
        cos_amps: &[f64],
        strip_height: f64,
    ) -> Result<Self, MeshError> {
        let sin_amps = sin_amps.to_vec();
        let cos_amps = cos_amps.to_vec();
        Self::new(
            move |x1: f64| {
                let mut v = mean;
                for (m, a) in sin_amps.iter().enumerate() {
                    v += a * ((m + 1) as f64 * x1).sin();
                }
                for (m, a) in cos_amps.iter().enumerate() {
                    v += a * ((m + 1) as f64 * x1).cos();
                }
                v
            },
            strip_height,
        )
    }

    pub fn flat(height: f64, strip_height: f64) -> Result<Self, MeshError> {
        Self::new(move |_| height, strip_height)
    }

    pub fn zeta(&self, x1: f64) -> f64 {
        (self.zeta)(x1)
    }

    pub fn zeta_min(&self) -> f64 {
        self.zeta_min
    }

    pub fn zeta_max(&self) -> f64 {
        self.zeta_max
    }

    /// Height of the line carrying the transparent boundary condition.
    pub fn strip_height(&self) -> f64 {
        self.strip_height
    }
}

/// Support region of a source term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Disk { center: (f64, f64), radius: f64 },
    Rect { x1: (f64, f64), x2: (f64, f64) },
}

impl Support {
    pub fn contains(&self, x1: f64, x2: f64) -> bool {
        match *self {
            Support::Disk { center, radius } => {
                let dx = x1 - center.0;
                let dy = x2 - center.1;
                dx * dx + dy * dy < radius * radius
            }
            Support::Rect { x1: rx1, x2: rx2 } => {
                x1 >= rx1.0 && x1 <= rx1.1 && x2 >= rx2.0 && x2 <= rx2.1
            }
        }
    }

    /// Axis-aligned bounding intervals `((x1_lo, x1_hi), (x2_lo, x2_hi))`.
    pub fn bounds(&self) -> ((f64, f64), (f64, f64)) {
        match *self {
            Support::Disk { center, radius } => (
                (center.0 - radius, center.0 + radius),
                (center.1 - radius, center.1 + radius),
            ),
            Support::Rect { x1, x2 } => (x1, x2),
        }
    }
}

/// Compactly supported volume source; evaluates to zero outside its
/// declared support.
#[derive(Clone)]
pub struct SourceTerm {
    support: Support,
    evaluator: Arc<dyn Fn(f64, f64) -> Complex64 + Send + Sync>,
}

impl std::fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SourceTerm").field("support", &self.support).finish()
    }
}

impl SourceTerm {
    pub fn new(
        support: Support,
        evaluator: impl Fn(f64, f64) -> Complex64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            support,
            evaluator: Arc::new(evaluator),
        }
    }

    /// `amplitude cos(freq_x1 x1) sin(freq_x2 x2)` restricted to a disk.
    pub fn modulated_disk(
        center: (f64, f64),
        radius: f64,
        amplitude: f64,
        freq_x1: f64,
        freq_x2: f64,
    ) -> Self {
        Self::new(Support::Disk { center, radius }, move |x1, x2| {
            Complex64::new(amplitude * (freq_x1 * x1).cos() * (freq_x2 * x2).sin(), 0.0)
        })
    }

    /// Same modulation restricted to an axis-aligned box.
    pub fn modulated_rect(
        x1: (f64, f64),
        x2: (f64, f64),
        amplitude: f64,
        freq_x1: f64,
        freq_x2: f64,
    ) -> Self {
        Self::new(Support::Rect { x1, x2 }, move |a, b| {
            Complex64::new(amplitude * (freq_x1 * a).cos() * (freq_x2 * b).sin(), 0.0)
        })
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn eval(&self, x1: f64, x2: f64) -> Complex64 {
        if self.support.contains(x1, x2) {
            (self.evaluator)(x1, x2)
        } else {
            Complex64::new(0.0, 0.0)
        }
    }
}

/// Height profile of one lattice row: `surface_weight * zeta(x1) + offset`.
/// The surface row is `(1, 0)`, a straight row is `(0, height)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RowBlend {
    surface_weight: f64,
    offset: f64,
}

impl RowBlend {
    fn height(&self, zeta: f64) -> f64 {
        self.surface_weight * zeta + self.offset
    }
}

/// Triangulated periodicity cell.
///
/// Vertices are stored on the full `(n1 + 1) x (n2 + 1)` lattice including
/// the duplicated right column; solvers identify column `n1` with column 0.
/// Triangles are counterclockwise. Each quad is split along whichever
/// diagonal gives the better minimum angle, which keeps sheared layers
/// above steep surface sections usable.
#[derive(Debug, Clone)]
pub struct PeriodicCellMesh {
    n1: usize,
    n2: usize,
    h: f64,
    top: f64,
    rows: Vec<RowBlend>,
    vertices: Vec<[f64; 2]>,
    surface_heights: Vec<f64>,
    triangles: Vec<[usize; 3]>,
    min_angle_deg: f64,
}

/// Build the mapped triangulation of the cell between `surface` and `top`.
///
/// `n1 = ceil(2 pi / h)` columns, `n2 = ceil((top - zeta_min) / h)` layers;
/// every quad of the `[-pi, pi] x [0, 1]` reference grid is mapped by
/// `(x1, (1 - s) zeta(x1) + s top)` and split into two triangles.
pub fn build_cell_mesh(
    surface: &SurfaceProfile,
    top: f64,
    h: f64,
) -> Result<PeriodicCellMesh, MeshError> {
    if top <= surface.zeta_max() {
        return Err(MeshError::LineBelowSurface {
            line: top,
            zeta_max: surface.zeta_max(),
        });
    }
    let n2 = ((top - surface.zeta_min()) / h.max(f64::MIN_POSITIVE)).ceil() as usize;
    let rows = (0..=n2)
        .map(|j| {
            let s = j as f64 / n2.max(1) as f64;
            RowBlend {
                surface_weight: 1.0 - s,
                offset: s * top,
            }
        })
        .collect();
    build_from_rows(surface, top, h, rows)
}

/// Build the extended cell for the stretched formulation: a mapped block
/// between the surface and the layer base, then straight uniform rows
/// through the absorbing layer up to `top`. The layer base falls exactly
/// on a mesh row, so the stretching profile's derivative kink never cuts
/// through an element.
pub fn build_extended_cell_mesh(
    surface: &SurfaceProfile,
    layer_base: f64,
    top: f64,
    h: f64,
) -> Result<PeriodicCellMesh, MeshError> {
    if layer_base <= surface.zeta_max() {
        return Err(MeshError::LineBelowSurface {
            line: layer_base,
            zeta_max: surface.zeta_max(),
        });
    }
    if top <= layer_base {
        return Err(MeshError::LineBelowSurface {
            line: top,
            zeta_max: layer_base,
        });
    }
    let safe_h = h.max(f64::MIN_POSITIVE);
    let lower = ((layer_base - surface.zeta_min()) / safe_h).ceil() as usize;
    let upper = ((top - layer_base) / safe_h).ceil() as usize;
    let mut rows = Vec::with_capacity(lower + upper + 1);
    for j in 0..=lower {
        let s = j as f64 / lower.max(1) as f64;
        rows.push(RowBlend {
            surface_weight: 1.0 - s,
            offset: s * layer_base,
        });
    }
    for j in 1..=upper {
        let s = j as f64 / upper.max(1) as f64;
        rows.push(RowBlend {
            surface_weight: 0.0,
            offset: layer_base + s * (top - layer_base),
        });
    }
    build_from_rows(surface, top, h, rows)
}

fn build_from_rows(
    surface: &SurfaceProfile,
    top: f64,
    h: f64,
    rows: Vec<RowBlend>,
) -> Result<PeriodicCellMesh, MeshError> {
    if !h.is_finite() || h <= 0.0 {
        return Err(MeshError::InvalidMeshSize(h));
    }
    let n1 = (TAU / h).ceil() as usize;
    let n2 = rows.len() - 1;
    if n1 < 2 || n2 < 2 {
        return Err(MeshError::TooCoarse {
            columns: n1,
            layers: n2,
        });
    }

    let dx = TAU / n1 as f64;
    let mut surface_heights = Vec::with_capacity(n1 + 1);
    for i in 0..n1 {
        surface_heights.push(surface.zeta(-PI + i as f64 * dx));
    }
    surface_heights.push(surface_heights[0]);

    let mut vertices = Vec::with_capacity((n1 + 1) * (n2 + 1));
    for row in &rows {
        for i in 0..=n1 {
            let x1 = if i == n1 { PI } else { -PI + i as f64 * dx };
            vertices.push([x1, row.height(surface_heights[i])]);
        }
    }

    let vid = |i: usize, j: usize| j * (n1 + 1) + i;
    let mut triangles = Vec::with_capacity(2 * n1 * n2);
    let mut min_angle = f64::INFINITY;
    for j in 0..n2 {
        for i in 0..n1 {
            let a = vid(i, j);
            let b = vid(i + 1, j);
            let c = vid(i + 1, j + 1);
            let d = vid(i, j + 1);
            let split_main = [[a, b, c], [a, c, d]];
            let split_cross = [[a, b, d], [b, c, d]];
            let angle_of = |split: &[[usize; 3]; 2]| {
                split
                    .iter()
                    .map(|t| triangle_min_angle(&vertices, t))
                    .fold(f64::INFINITY, f64::min)
            };
            let main_angle = angle_of(&split_main);
            let cross_angle = angle_of(&split_cross);
            let (chosen, angle) = if main_angle >= cross_angle {
                (split_main, main_angle)
            } else {
                (split_cross, cross_angle)
            };
            min_angle = min_angle.min(angle);
            triangles.extend_from_slice(&chosen);
        }
    }

    let min_angle_deg = min_angle.to_degrees();
    if min_angle_deg < MIN_ANGLE_DEG {
        return Err(MeshError::PoorQuality {
            min_angle_deg,
            limit: MIN_ANGLE_DEG,
        });
    }

    Ok(PeriodicCellMesh {
        n1,
        n2,
        h,
        top,
        rows,
        vertices,
        surface_heights,
        triangles,
        min_angle_deg,
    })
}

fn triangle_min_angle(vertices: &[[f64; 2]], tri: &[usize; 3]) -> f64 {
    let mut min = f64::INFINITY;
    for v in 0..3 {
        let p = vertices[tri[v]];
        let q = vertices[tri[(v + 1) % 3]];
        let r = vertices[tri[(v + 2) % 3]];
        let u = [q[0] - p[0], q[1] - p[1]];
        let w = [r[0] - p[0], r[1] - p[1]];
        let dot = u[0] * w[0] + u[1] * w[1];
        let nu = (u[0] * u[0] + u[1] * u[1]).sqrt();
        let nw = (w[0] * w[0] + w[1] * w[1]).sqrt();
        min = min.min((dot / (nu * nw)).clamp(-1.0, 1.0).acos());
    }
    min
}

impl PeriodicCellMesh {
    /// Number of quad columns; also the number of distinct vertex columns.
    pub fn n_columns(&self) -> usize {
        self.n1
    }

    /// Number of quad layers between the surface and the top line.
    pub fn n_layers(&self) -> usize {
        self.n2
    }

    pub fn mesh_size(&self) -> f64 {
        self.h
    }

    pub fn top(&self) -> f64 {
        self.top
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex(&self, idx: usize) -> [f64; 2] {
        self.vertices[idx]
    }

    pub fn vertex_index(&self, i: usize, j: usize) -> usize {
        j * (self.n1 + 1) + i
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Smallest interior angle over all triangles, degrees.
    pub fn min_angle_deg(&self) -> f64 {
        self.min_angle_deg
    }

    /// Sampled surface height at column `i`.
    pub fn surface_height(&self, i: usize) -> f64 {
        self.surface_heights[i]
    }

    pub(crate) fn column_spacing(&self) -> f64 {
        TAU / self.n1 as f64
    }

    /// Locate the triangle containing `(x1, x2)` and its barycentric
    /// coordinates there. `x1` must already be folded into `[-pi, pi]`.
    pub fn locate(&self, x1: f64, x2: f64) -> Result<(usize, [f64; 3]), MeshError> {
        if x1 < -PI - 1e-9 || x1 > PI + 1e-9 {
            return Err(MeshError::OutsideDomain { x1, x2 });
        }
        let dx = self.column_spacing();
        let i = (((x1 + PI) / dx).floor() as isize).clamp(0, self.n1 as isize - 1) as usize;
        let u = ((x1 - (-PI + i as f64 * dx)) / dx).clamp(0.0, 1.0);
        let zeta = (1.0 - u) * self.surface_heights[i] + u * self.surface_heights[i + 1];
        // row heights along this vertical are monotone; bisect for the layer
        let height = |j: usize| self.rows[j].height(zeta);
        let span = height(self.n2) - height(0);
        if x2 < height(0) - 1e-9 * span.abs() || x2 > height(self.n2) + 1e-9 * span.abs() {
            return Err(MeshError::OutsideDomain { x1, x2 });
        }
        let mut lo = 0usize;
        let mut hi = self.n2;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x2 >= height(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let j = lo;
        let quad = j * self.n1 + i;
        for t in [2 * quad, 2 * quad + 1] {
            if let Some(bary) = self.barycentric(t, x1, x2, 1e-9) {
                return Ok((t, bary));
            }
        }
        // rounding can push a point marginally across the diagonal; accept
        // the better of the two with a relaxed margin
        let mut best = (2 * quad, f64::NEG_INFINITY, [0.0; 3]);
        for t in [2 * quad, 2 * quad + 1] {
            if let Some(bary) = self.barycentric(t, x1, x2, f64::INFINITY) {
                let worst = bary[0].min(bary[1]).min(bary[2]);
                if worst > best.1 {
                    best = (t, worst, bary);
                }
            }
        }
        if best.1 > -1e-6 {
            Ok((best.0, best.2))
        } else {
            Err(MeshError::OutsideDomain { x1, x2 })
        }
    }

    fn barycentric(&self, t: usize, x1: f64, x2: f64, slack: f64) -> Option<[f64; 3]> {
        let [i0, i1, i2] = self.triangles[t];
        let p0 = self.vertices[i0];
        let p1 = self.vertices[i1];
        let p2 = self.vertices[i2];
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let l1 = ((x1 - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (x2 - p0[1])) / det;
        let l2 = ((p1[0] - p0[0]) * (x2 - p0[1]) - (x1 - p0[0]) * (p1[1] - p0[1])) / det;
        let l0 = 1.0 - l1 - l2;
        if l0 >= -slack && l1 >= -slack && l2 >= -slack {
            Some([l0, l1, l2])
        } else {
            None
        }
    }

    /// Evaluate the piecewise-linear interpolant of per-vertex `values`.
    pub fn interpolate(&self, values: &[Complex64], x1: f64, x2: f64) -> Result<Complex64, MeshError> {
        let (t, bary) = self.locate(x1, x2)?;
        let [i0, i1, i2] = self.triangles[t];
        Ok(values[i0] * bary[0] + values[i1] * bary[1] + values[i2] * bary[2])
    }

    /// L2 norm of the interpolant of per-vertex `values` over the cell,
    /// by the degree-2 midpoint rule.
    pub fn l2_norm(&self, values: &[Complex64]) -> f64 {
        let mut acc = 0.0;
        for tri in &self.triangles {
            let [i0, i1, i2] = *tri;
            let (p0, p1, p2) = (self.vertices[i0], self.vertices[i1], self.vertices[i2]);
            let area = 0.5
                * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])).abs();
            let v0 = values[i0];
            let v1 = values[i1];
            let v2 = values[i2];
            // midpoint values of a linear function
            let m0 = 0.5 * (v1 + v2);
            let m1 = 0.5 * (v0 + v2);
            let m2 = 0.5 * (v0 + v1);
            acc += area / 3.0 * (m0.norm_sqr() + m1.norm_sqr() + m2.norm_sqr());
        }
        acc.sqrt()
    }

    /// Plain-text dump: one `v <index> <x1> <x2>` line per vertex, then one
    /// `t <index> <v0> <v1> <v2>` line per triangle.
    pub fn write_listing(&self, w: &mut impl Write) -> io::Result<()> {
        for (idx, v) in self.vertices.iter().enumerate() {
            writeln!(w, "v {idx} {} {}", v[0], v[1])?;
        }
        for (idx, t) in self.triangles.iter().enumerate() {
            writeln!(w, "t {idx} {} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}
