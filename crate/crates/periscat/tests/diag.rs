use num_complex::Complex64;
use periscat::fem::{assemble_cell, l2_error, solve_cell, solve_stretched, BoundaryCondition, CellField};
use periscat::mesh::{build_cell_mesh, build_extended_cell_mesh};
use periscat::{floquet_grid, PeriodicCellField, PmlSpec, SourceTerm, SurfaceProfile, Wavenumber};
use std::f64::consts::{PI, TAU};

#[test]
#[ignore]
fn formulation_gap_profile() {
    let k = 1.0;
    let chi = Complex64::from_polar(1.0, PI / 4.0);
    let surface = SurfaceProfile::trig(1.5, &[1.0 / 3.0], &[0.0, -0.25], 2.5).unwrap();
    let source = SourceTerm::modulated_disk((-0.4, 1.8), 0.4, 1.0, TAU, TAU);
    let grid = floquet_grid(&Wavenumber::new(k).unwrap(), 16).unwrap();
    for &h in &[0.05, 0.025] {
        let strip_mesh = build_cell_mesh(&surface, 2.5, h).unwrap();
        let extended_mesh = build_extended_cell_mesh(&surface, 2.5, 4.0, h).unwrap();
        for &rho in &[2.0f64] {
            let pml = PmlSpec::new(1.5, rho, 1, chi, 2.5).unwrap();
            for idx in [0usize, 1, 2, 4, 8, 15] {
                let alpha = grid.samples()[idx].alpha;
                let boundary = solve_cell(
                    assemble_cell(
                        &strip_mesh,
                        alpha,
                        k,
                        BoundaryCondition::Pml { sigma: pml.sigma() },
                        11,
                        &source,
                    )
                    .unwrap(),
                )
                .unwrap();
                let stretched =
                    solve_stretched(&extended_mesh, alpha, k, &pml, 11, &source).unwrap();
                let field = CellField {
                    mesh: &extended_mesh,
                    solution: &stretched,
                };
                let (diff, norm) =
                    l2_error(&strip_mesh, boundary.nodal(), |x1, x2| field.eval(x1, x2));
                println!(
                    "h = {h}, rho = {rho}, idx = {idx}, alpha = {alpha:.6e}: rel = {:.4e}",
                    diff / norm
                );
            }
        }
    }
}
