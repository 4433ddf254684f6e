//! Builds the reduced basis on a graded level and reports its sparsity, the
//! reduced matrices and how the largest eigenvalue compares with the coarse
//! and fine spaces.

use lodwave::assembly::{assemble_mass, assemble_stiffness, DofMap};
use lodwave::leapfrog::{lshape_hierarchy, max_eigenvalue};
use lodwave::reduced_space::{
    build_reduced_basis, nnz_report, reduced_matrices, CorrectorContext, Localization,
};

fn main() -> lodwave::Result<()> {
    let level = std::env::args()
        .nth(1)
        .map_or(2, |s| s.parse().expect("level is an integer"));
    let h = lshape_hierarchy(level)?;
    let loc = Localization::from_mesh_size(h.coarse.stats().h_max);
    let ctx = CorrectorContext::new(&h)?;
    println!(
        "level {level}: {} coarse dofs, {} fine dofs, {} kernel functions, m = {loc}",
        ctx.coarse_dofs.n_dofs(),
        ctx.fine_dofs.n_dofs(),
        ctx.kernel.len()
    );
    let basis = build_reduced_basis(&ctx, loc)?;
    let fine_dofs = DofMap::new(&h.fine);
    let a = fine_dofs.restrict_matrix(&assemble_stiffness(&h.fine)?);
    let m = fine_dofs.restrict_matrix(&assemble_mass(&h.fine)?);
    let (a_red, m_red) = reduced_matrices(&basis, &a, &m);

    let coarse_dofs = DofMap::new(&h.coarse);
    let a_c = coarse_dofs.restrict_matrix(&assemble_stiffness(&h.coarse)?);
    let m_c = coarse_dofs.restrict_matrix(&assemble_mass(&h.coarse)?);
    let report = nnz_report(&basis, &a_red, &m_red, m_c.nnz());
    println!(
        "nnz: basis {}, reduced stiffness {}, reduced mass {} ({:.2}x coarse)",
        report.nnz_r, report.nnz_a, report.nnz_m, report.fill_ratio
    );
    let widest = basis.column_support.iter().map(Vec::len).max().unwrap_or(0);
    println!("widest basis function touches {widest} fine dofs");
    println!(
        "largest eigenvalue: coarse {:.3e}, reduced {:.3e}, fine {:.3e}",
        max_eigenvalue(&a_c, &m_c)?,
        max_eigenvalue(&a_red, &m_red)?,
        max_eigenvalue(&a, &m)?
    );
    Ok(())
}
