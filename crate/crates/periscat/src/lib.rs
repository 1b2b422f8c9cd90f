//! Solver library for time-harmonic scattering above a 2 pi periodic
//! Dirichlet surface, specialized to half-integer wave numbers where the
//! Floquet cutoffs overlap.
//!
//! The physical half-plane problem is decomposed into a family of
//! quasi-periodic cell problems indexed by the Floquet parameter. Each
//! cell problem is solved by a linear finite element method on a mapped
//! structured mesh with either the exact transparent boundary condition
//! or its PML-modified variant; the physical field is then synthesized by
//! Gauss quadrature in a substituted Floquet variable that removes the
//! cutoff singularity. The [`study`] module drives the PML-strength
//! convergence experiment and its regression summary.

pub mod bloch;
pub mod config;
pub mod fem;
pub mod kernels;
pub mod mesh;
pub mod quad;
pub mod study;

pub use bloch::{
    bloch_transform, floquet_grid, synthesize, BlochError, BlochField, CompactField,
    FloquetGrid, FloquetSample, PeriodicCellField,
};
pub use config::{ConfigError, StudyConfig};
pub use fem::{
    assemble_cell, l2_error, solve_cell, solve_stretched, trace_fourier, BoundaryCondition,
    CellField, CellOperator, CellSolution, CellSystem, FemError,
};
pub use kernels::{
    branch_sqrt, dtn_coeff, pml_coeff, pml_gap_bound, KernelError, ModeCoefficient, PmlSpec,
    Wavenumber,
};
pub use mesh::{
    build_cell_mesh, build_extended_cell_mesh, MeshError, PeriodicCellMesh, SourceTerm,
    Support, SurfaceProfile,
};
pub use quad::{legendre_rule, GaussRule, QuadError};
pub use study::{
    dtn_reference_trace, pml_trace, regression, run_study, write_csv, ErrorRecord,
    RegressionFit, StudyError, StudyOutput,
};
