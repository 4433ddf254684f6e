//! Correctors and the reduced space `V_H = (1 - C) S¹₀(T_H)`.
//!
//! Correctors live in the kernel `W_h` of the quasi-interpolation. They are
//! computed by Galerkin projection onto the kernel basis `{w_y}`, so every
//! linear system here is SPD. Localized element correctors restrict that
//! basis to the functions supported inside an element patch.

use crate::assembly::{assemble_stiffness, local_stiffness, DofMap};
use crate::error::{Error, Result};
use crate::interp::{kernel_basis, prolongation_matrix, KernelBasis};
use crate::linsolve::{inverse_diagonal, pcg_diag_from, pcg_operator};
use crate::mesh::{Adjacency, MeshHierarchy};
use crate::sparse::SparseMatrix;

/// Relative drop tolerance for basis columns and triple products.
pub const REDUCED_DROP_TOL: f64 = 1e-14;

/// Patch size used for the correctors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Localization {
    /// Correctors solved on the whole domain.
    Global,
    /// Element correctors solved on `m`-layer element patches.
    Patch(usize),
}

impl Localization {
    /// `m = ⌈-½ log₂ H⌉`, clamped to `[1, 3]`.
    pub fn from_mesh_size(h_coarse: f64) -> Self {
        let m = (-0.5 * h_coarse.log2()).ceil();
        Localization::Patch(m.clamp(1.0, 3.0) as usize)
    }
}

impl std::fmt::Display for Localization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Localization::Global => write!(f, "inf"),
            Localization::Patch(m) => write!(f, "{m}"),
        }
    }
}

/// Solver settings for corrector problems.
#[derive(Debug, Clone, Copy)]
pub struct CorrectorOptions {
    /// Relative residual for the CG solves.
    pub tol: f64,
    /// Iteration cap as a multiple of the system size.
    pub maxit_factor: usize,
}

impl Default for CorrectorOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            maxit_factor: 10,
        }
    }
}

/// Precomputed operators shared by all corrector problems on one hierarchy.
#[derive(Debug, Clone)]
pub struct CorrectorContext<'h> {
    pub hierarchy: &'h MeshHierarchy,
    pub fine_dofs: DofMap,
    pub coarse_dofs: DofMap,
    /// Fine stiffness on interior dofs.
    pub a: SparseMatrix,
    pub kernel: KernelBasis,
    /// Kernel Galerkin matrix `Bᵀ A B`.
    pub g: SparseMatrix,
    /// Transpose of the kernel rows: fine dof → (kernel index, value).
    b: SparseMatrix,
    /// Prolongation from coarse vertices to fine interior dofs.
    p: SparseMatrix,
    /// Fine stiffness rows of interior dofs against all fine vertices.
    a_rows: SparseMatrix,
    /// Prolongation from coarse vertices to all fine vertices.
    p_full: SparseMatrix,
    coarse_adj: Adjacency,
    /// Kernel functions whose support meets each coarse triangle.
    kernel_by_triangle: Vec<Vec<usize>>,
    pub options: CorrectorOptions,
}

impl<'h> CorrectorContext<'h> {
    pub fn new(hierarchy: &'h MeshHierarchy) -> Result<Self> {
        Self::with_options(hierarchy, CorrectorOptions::default())
    }

    pub fn with_options(hierarchy: &'h MeshHierarchy, options: CorrectorOptions) -> Result<Self> {
        let fine_dofs = DofMap::new(&hierarchy.fine);
        let coarse_dofs = DofMap::new(&hierarchy.coarse);
        let a_full = assemble_stiffness(&hierarchy.fine)?;
        let a = fine_dofs.restrict_matrix(&a_full);
        let all_fine: Vec<usize> = (0..hierarchy.fine.n_vertices()).collect();
        let a_rows = a_full.submatrix(fine_dofs.interior(), &all_fine);
        let kernel = kernel_basis(hierarchy);
        let b = kernel.bt.transpose();
        let mut g = kernel
            .bt
            .matmul(&a.matmul(&b))
            .drop_small(REDUCED_DROP_TOL)
            .symmetrized();
        g.mark_symmetric(1e-12);
        let all_coarse: Vec<usize> = (0..hierarchy.coarse.n_vertices()).collect();
        let p_full = prolongation_matrix(hierarchy);
        let p = p_full.submatrix(fine_dofs.interior(), &all_coarse);
        let mut kernel_by_triangle = vec![Vec::new(); hierarchy.coarse.n_triangles()];
        for (i, support) in kernel.coarse_support.iter().enumerate() {
            for &t in support {
                kernel_by_triangle[t].push(i);
            }
        }
        Ok(Self {
            hierarchy,
            fine_dofs,
            coarse_dofs,
            a,
            kernel,
            g,
            b,
            p,
            a_rows,
            p_full,
            coarse_adj: Adjacency::new(&hierarchy.coarse),
            kernel_by_triangle,
            options,
        })
    }

    /// Prolongation of coarse vertex values to fine interior dofs.
    pub fn prolongate_interior(&self, coarse_coeffs: &[f64]) -> Vec<f64> {
        self.p.matvec(coarse_coeffs)
    }

    fn solve_kernel_system(&self, g: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = rhs.len();
        let mut c = vec![0.0; n];
        pcg_diag_from(
            g,
            &inverse_diagonal(g),
            rhs,
            &mut c,
            self.options.tol,
            self.options.maxit_factor * n.max(1),
        )
        .check("corrector CG")?;
        Ok(c)
    }

    /// `C v_H` on fine interior dofs, for coarse vertex values `v_H`
    /// (boundary values included).
    pub fn global_corrector(&self, coarse_coeffs: &[f64]) -> Result<Vec<f64>> {
        if self.kernel.is_empty() {
            return Ok(vec![0.0; self.fine_dofs.n_dofs()]);
        }
        let av = self.a_rows.matvec(&self.p_full.matvec(coarse_coeffs));
        let rhs = self.kernel.bt.matvec(&av);
        let c = self.solve_kernel_system(&self.g, &rhs)?;
        Ok(self.b.matvec(&c))
    }

    /// Kernel functions whose whole support lies in the given coarse patch.
    pub fn kernel_in_patch(&self, patch: &[usize]) -> Vec<usize> {
        let mut inside = vec![false; self.hierarchy.coarse.n_triangles()];
        for &t in patch {
            inside[t] = true;
        }
        let mut s: Vec<usize> = patch
            .iter()
            .flat_map(|&t| self.kernel_by_triangle[t].iter().copied())
            .filter(|&i| self.kernel.coarse_support[i].iter().all(|&t| inside[t]))
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// `A^{(t)} P λ_z` on fine interior dofs: stiffness contributions of the
    /// fine triangles inside coarse triangle `t` only.
    fn element_load(&self, t: usize, z: usize) -> Vec<(usize, f64)> {
        let h = self.hierarchy;
        let mut out: Vec<(usize, f64)> = Vec::new();
        for &f in &h.children[t] {
            let ftri = h.fine.triangles()[f];
            let vals: [f64; 3] = std::array::from_fn(|k| {
                let (ct, b) = h.fine_vertex_coords_in_coarse[ftri[k]];
                h.coarse.triangles()[ct]
                    .iter()
                    .position(|&v| v == z)
                    .map_or(0.0, |j| b[j])
            });
            if vals.iter().all(|&x| x == 0.0) {
                continue;
            }
            let k =
                local_stiffness(&h.fine.triangle_points(f)).expect("fine mesh is non-degenerate");
            for i in 0..3 {
                if let Some(d) = self.fine_dofs.dof(ftri[i]) {
                    let s: f64 = (0..3).map(|j| k[i][j] * vals[j]).sum();
                    out.push((d, s));
                }
            }
        }
        out
    }

    /// Element corrector `C_{t,m} λ_z` as sparse `(fine dof, value)` pairs.
    pub fn element_corrector(&self, t: usize, z: usize, m: usize) -> Result<Vec<(usize, f64)>> {
        let patch = self.coarse_adj.patch(t, m);
        self.element_corrector_on(t, z, &self.kernel_in_patch(&patch))
    }

    /// Element corrector with the kernel functions `s` as trial/test space.
    fn element_corrector_on(&self, t: usize, z: usize, s: &[usize]) -> Result<Vec<(usize, f64)>> {
        if !self.hierarchy.coarse.triangles()[t].contains(&z) {
            return Err(Error::InvalidArgument(format!(
                "vertex {z} is not a vertex of coarse triangle {t}"
            )));
        }
        if s.is_empty() {
            return Ok(Vec::new());
        }
        let mut local = vec![usize::MAX; self.kernel.len()];
        for (k, &i) in s.iter().enumerate() {
            local[i] = k;
        }
        let mut rhs = vec![0.0; s.len()];
        for (d, y) in self.element_load(t, z) {
            let (rows, vals) = self.b.row(d);
            for (&i, &bv) in rows.iter().zip(vals) {
                if local[i] != usize::MAX {
                    rhs[local[i]] += bv * y;
                }
            }
        }
        if rhs.iter().all(|&x| x == 0.0) {
            return Ok(Vec::new());
        }
        let c = if s.len() == self.kernel.len() {
            self.solve_kernel_system(&self.g, &rhs)?
        } else {
            self.solve_kernel_system(&self.g.submatrix(s, s), &rhs)?
        };
        let mut acc: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for (k, &i) in s.iter().enumerate() {
            let (cols, vals) = self.kernel.bt.row(i);
            for (&d, &v) in cols.iter().zip(vals) {
                *acc.entry(d).or_insert(0.0) += c[k] * v;
            }
        }
        Ok(acc.into_iter().collect())
    }

    /// `C_m λ_z = Σ_{t ∋ z} C_{t,m} λ_z` (or the global corrector) on fine dofs.
    pub fn localized_corrector(&self, z: usize, loc: Localization) -> Result<Vec<f64>> {
        let n = self.fine_dofs.n_dofs();
        match loc {
            Localization::Global => {
                let mut e = vec![0.0; self.hierarchy.coarse.n_vertices()];
                e[z] = 1.0;
                self.global_corrector(&e)
            }
            Localization::Patch(m) => {
                let mut out = vec![0.0; n];
                for &t in self.coarse_adj.triangles_at_vertex(z) {
                    for (d, v) in self.element_corrector(t, z, m)? {
                        out[d] += v;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Smallest `m` for which every element patch covers the coarse mesh.
    pub fn covering_m(&self) -> usize {
        let nt = self.hierarchy.coarse.n_triangles();
        let mut m = 0;
        while (0..nt).any(|t| self.coarse_adj.patch(t, m).len() < nt) {
            m += 1;
        }
        m
    }

    /// `‖∇(C λ_z - C_m λ_z)‖` against the global corrector.
    pub fn localization_error(&self, z: usize, m: usize, global: &[f64]) -> Result<f64> {
        let local = self.localized_corrector(z, Localization::Patch(m))?;
        let d: Vec<f64> = global.iter().zip(&local).map(|(a, b)| a - b).collect();
        Ok(self.a.quad_form(&d).max(0.0).sqrt())
    }
}

/// Basis of the reduced space in fine interior coefficients.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    /// `fine dofs × coarse dofs`; column `j` is `λ_z - C_m λ_z` for the
    /// `j`-th interior coarse vertex `z`.
    pub r: SparseMatrix,
    pub localization: Localization,
    /// Fine dofs in the support of each column, ascending.
    pub column_support: Vec<Vec<usize>>,
    /// `-C_m λ_b` for every coarse boundary vertex `b` (`fine dofs × coarse
    /// boundary vertices`): the correction of the boundary hats used to
    /// lift Dirichlet data.
    pub boundary_correction: SparseMatrix,
}

/// Builds `R` with one column `λ_z - C_m λ_z` per interior coarse vertex.
pub fn build_reduced_basis(ctx: &CorrectorContext<'_>, loc: Localization) -> Result<ReducedBasis> {
    let coarse = &ctx.hierarchy.coarse;
    let nf = ctx.fine_dofs.n_dofs();
    let nc = ctx.coarse_dofs.n_dofs();
    let mut columns = Vec::with_capacity(nc);
    let mut e = vec![0.0; coarse.n_vertices()];
    for &z in ctx.coarse_dofs.interior() {
        e[z] = 1.0;
        let mut col = ctx.prolongate_interior(&e);
        e[z] = 0.0;
        let corr = ctx.localized_corrector(z, loc)?;
        for (c, k) in col.iter_mut().zip(&corr) {
            *c -= k;
        }
        columns.push(col);
    }
    let max = columns
        .iter()
        .flatten()
        .fold(0.0f64, |a, &b| a.max(b.abs()));
    let cut = REDUCED_DROP_TOL * max;
    let mut trip = Vec::new();
    let mut column_support = Vec::with_capacity(nc);
    for (j, col) in columns.iter().enumerate() {
        let mut sup = Vec::new();
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > cut {
                trip.push((i, j, v));
                sup.push(i);
            }
        }
        column_support.push(sup);
    }
    let boundary = ctx.coarse_dofs.boundary();
    let mut btrip = Vec::new();
    for (j, &b) in boundary.iter().enumerate() {
        for (i, v) in ctx.localized_corrector(b, loc)?.into_iter().enumerate() {
            if v.abs() > cut {
                btrip.push((i, j, -v));
            }
        }
    }
    Ok(ReducedBasis {
        r: SparseMatrix::from_triplets(nf, nc, &trip),
        localization: loc,
        column_support,
        boundary_correction: SparseMatrix::from_triplets(nf, boundary.len(), &btrip),
    })
}

/// `(RᵀAR, RᵀMR)`, compressed and symmetrized.
pub fn reduced_matrices(
    basis: &ReducedBasis,
    a: &SparseMatrix,
    m: &SparseMatrix,
) -> (SparseMatrix, SparseMatrix) {
    let rt = basis.r.transpose();
    let project = |x: &SparseMatrix| {
        let mut p = rt
            .matmul(&x.matmul(&basis.r))
            .drop_small(REDUCED_DROP_TOL)
            .symmetrized();
        p.mark_symmetric(1e-12);
        p
    };
    (project(a), project(m))
}

/// Stored nonzero counts of the reduced operators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnzReport {
    pub nnz_r: usize,
    pub nnz_a: usize,
    pub nnz_m: usize,
    /// `nnz_m` relative to the coarse finite element mass matrix.
    pub fill_ratio: f64,
}

pub fn nnz_report(
    basis: &ReducedBasis,
    a_red: &SparseMatrix,
    m_red: &SparseMatrix,
    coarse_mass_nnz: usize,
) -> NnzReport {
    let nnz_m = m_red.drop_small(REDUCED_DROP_TOL).nnz();
    NnzReport {
        nnz_r: basis.r.drop_small(REDUCED_DROP_TOL).nnz(),
        nnz_a: a_red.drop_small(REDUCED_DROP_TOL).nnz(),
        nnz_m,
        fill_ratio: nnz_m as f64 / coarse_mass_nnz.max(1) as f64,
    }
}

/// Galerkin solution of `-Δu = f` in the span of `R`'s columns, given the
/// fine load on interior dofs; returned in fine interior coefficients.
pub fn reduced_galerkin_solve(
    basis: &ReducedBasis,
    a: &SparseMatrix,
    fine_load: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    let rt = basis.r.transpose();
    let a_red = rt.matmul(&a.matmul(&basis.r)).symmetrized();
    let rhs = rt.matvec(fine_load);
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let inv = inverse_diagonal(&a_red);
    pcg_operator(
        n,
        |v, out| a_red.matvec_into(v, out),
        |r, z| {
            z.iter_mut()
                .zip(r)
                .zip(&inv)
                .for_each(|((zi, ri), di)| *zi = ri * di)
        },
        &rhs,
        &mut c,
        tol,
        20 * n + 100,
    )
    .check("reduced Galerkin CG")?;
    Ok(basis.r.matvec(&c))
}
