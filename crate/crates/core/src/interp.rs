//! Transfers between a coarse mesh and its refinement: prolongation, the
//! projective quasi-interpolation `I_H = J₁ ∘ Π₁`, and the kernel basis of `I_H`.

use crate::assembly::DofMap;
use crate::mesh::{Adjacency, MeshHierarchy, Triangulation};
use crate::quadrature::TriangleRule;
use crate::sparse::SparseMatrix;

/// Discontinuous piecewise affine function on the coarse mesh: the values at
/// the three vertices of every coarse triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementwiseAffine {
    pub values: Vec<[f64; 3]>,
}

/// Fine vertex values of a coarse P1 function (exact, by barycentric evaluation).
pub fn prolongate(h: &MeshHierarchy, coarse_coeffs: &[f64]) -> Vec<f64> {
    h.fine_vertex_coords_in_coarse
        .iter()
        .map(|&(t, b)| {
            let tri = h.coarse.triangles()[t];
            (0..3).map(|k| b[k] * coarse_coeffs[tri[k]]).sum()
        })
        .collect()
}

/// Prolongation as a matrix (`fine vertices × coarse vertices`).
pub fn prolongation_matrix(h: &MeshHierarchy) -> SparseMatrix {
    let mut trip = Vec::with_capacity(3 * h.fine.n_vertices());
    for (v, &(t, b)) in h.fine_vertex_coords_in_coarse.iter().enumerate() {
        let tri = h.coarse.triangles()[t];
        for k in 0..3 {
            if b[k] != 0.0 {
                trip.push((v, tri[k], b[k]));
            }
        }
    }
    SparseMatrix::from_triplets(h.fine.n_vertices(), h.coarse.n_vertices(), &trip)
}

/// Inverse of the P1 mass matrix of a triangle with area `area`:
/// `(3/|T|)(4I - J)`.
fn local_mass_inverse(area: f64) -> [[f64; 3]; 3] {
    let s = 3.0 / area;
    let mut m = [[-s; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 3.0 * s;
    }
    m
}

/// Weights `∫_f λ_k^f λ_i^T` for each fine triangle `f` inside coarse `T`,
/// with `k` the fine local vertex and `i` the coarse one.
fn child_moments(h: &MeshHierarchy, t: usize, rule: &TriangleRule) -> Vec<(usize, [[f64; 3]; 3])> {
    h.children[t]
        .iter()
        .map(|&f| {
            let ftri = h.fine.triangles()[f];
            let bary: [[f64; 3]; 3] =
                std::array::from_fn(|k| h.coarse.barycentric(t, h.fine.vertices()[ftri[k]]));
            let area = h.fine.area(f);
            let mut w = [[0.0; 3]; 3];
            for (l, &q) in rule.points.iter().zip(&rule.weights) {
                let lam_t: [f64; 3] =
                    std::array::from_fn(|i| (0..3).map(|k| l[k] * bary[k][i]).sum());
                for k in 0..3 {
                    for i in 0..3 {
                        w[k][i] += q * area * l[k] * lam_t[i];
                    }
                }
            }
            (f, w)
        })
        .collect()
}

/// Elementwise `L²` projection of a fine P1 function onto discontinuous
/// coarse P1. Right-hand sides are integrated exactly over the fine
/// sub-triangles of each coarse triangle.
pub fn project_p1_dc(h: &MeshHierarchy, fine_coeffs: &[f64]) -> ElementwiseAffine {
    let rule = TriangleRule::of_order(2).expect("order 2 exists");
    let values = (0..h.coarse.n_triangles())
        .map(|t| {
            let mut rhs = [0.0; 3];
            for (f, w) in child_moments(h, t, &rule) {
                let ftri = h.fine.triangles()[f];
                for k in 0..3 {
                    for i in 0..3 {
                        rhs[i] += w[k][i] * fine_coeffs[ftri[k]];
                    }
                }
            }
            let inv = local_mass_inverse(h.coarse.area(t));
            std::array::from_fn(|i| (0..3).map(|j| inv[i][j] * rhs[j]).sum())
        })
        .collect();
    ElementwiseAffine { values }
}

/// Averages the traces of `w` at every interior coarse vertex; boundary
/// vertices get 0.
pub fn nodal_average(coarse: &Triangulation, w: &ElementwiseAffine) -> Vec<f64> {
    let mut sum = vec![0.0; coarse.n_vertices()];
    let mut count = vec![0usize; coarse.n_vertices()];
    for (t, tri) in coarse.triangles().iter().enumerate() {
        for k in 0..3 {
            sum[tri[k]] += w.values[t][k];
            count[tri[k]] += 1;
        }
    }
    (0..coarse.n_vertices())
        .map(|z| {
            if coarse.is_boundary(z) || count[z] == 0 {
                0.0
            } else {
                sum[z] / count[z] as f64
            }
        })
        .collect()
}

/// `I_H v = J₁(Π₁ v)` for fine vertex values `v`.
pub fn quasi_interpolate(h: &MeshHierarchy, fine_coeffs: &[f64]) -> Vec<f64> {
    nodal_average(&h.coarse, &project_p1_dc(h, fine_coeffs))
}

/// `I_H` as a matrix (`coarse vertices × fine vertices`); boundary rows empty.
pub fn quasi_interpolation_matrix(h: &MeshHierarchy) -> SparseMatrix {
    let rule = TriangleRule::of_order(2).expect("order 2 exists");
    let mut count = vec![0usize; h.coarse.n_vertices()];
    for tri in h.coarse.triangles() {
        for &z in tri {
            count[z] += 1;
        }
    }
    let mut trip = Vec::new();
    for (t, ctri) in h.coarse.triangles().iter().enumerate() {
        let inv = local_mass_inverse(h.coarse.area(t));
        for (f, w) in child_moments(h, t, &rule) {
            let ftri = h.fine.triangles()[f];
            for i in 0..3 {
                let z = ctri[i];
                if h.coarse.is_boundary(z) {
                    continue;
                }
                for k in 0..3 {
                    let c: f64 = (0..3).map(|j| inv[i][j] * w[k][j]).sum();
                    trip.push((z, ftri[k], c / count[z] as f64));
                }
            }
        }
    }
    SparseMatrix::from_triplets(h.coarse.n_vertices(), h.fine.n_vertices(), &trip).drop_small(1e-14)
}

/// Basis `w_y = e_y - P I_H e_y` of the kernel of `I_H` on the fine
/// interior space, one function per new interior fine vertex `y`.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    /// Generating fine vertex of each basis function.
    pub generators: Vec<usize>,
    /// Basis functions as rows over fine interior dofs (`n_kernel × n_fine_dofs`).
    pub bt: SparseMatrix,
    /// Coarse triangles on which each basis function may be nonzero, sorted.
    pub coarse_support: Vec<Vec<usize>>,
}

impl KernelBasis {
    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    /// Basis function `i` as a dense vector over fine interior dofs.
    pub fn vector(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.bt.n_cols()];
        let (cols, vals) = self.bt.row(i);
        for (&j, &x) in cols.iter().zip(vals) {
            v[j] = x;
        }
        v
    }
}

/// Builds the kernel basis of `I_H` restricted to `S¹₀(T_h)`.
pub fn kernel_basis(h: &MeshHierarchy) -> KernelBasis {
    let fine_dofs = DofMap::new(&h.fine);
    let generators = h.new_interior_fine_vertices();
    let nk = generators.len();
    let all_coarse: Vec<usize> = (0..h.coarse.n_vertices()).collect();
    // row y of I_Hᵀ holds the coarse coefficients of I_H e_y
    let k = quasi_interpolation_matrix(h)
        .transpose()
        .submatrix(&generators, &all_coarse);
    let pk = k.matmul(&prolongation_matrix(h).transpose());
    let e: Vec<_> = generators
        .iter()
        .enumerate()
        .map(|(r, &y)| (r, y, 1.0))
        .collect();
    let e = SparseMatrix::from_triplets(nk, h.fine.n_vertices(), &e);
    let bt = e
        .add(1.0, &pk, -1.0)
        .submatrix(&(0..nk).collect::<Vec<_>>(), fine_dofs.interior())
        .drop_small(1e-14);

    let fine_adj = Adjacency::new(&h.fine);
    let coarse_adj = Adjacency::new(&h.coarse);
    let coarse_support = generators
        .iter()
        .enumerate()
        .map(|(r, &y)| {
            let mut s = h.coarse_triangles_containing(y, &fine_adj);
            for &z in k.row(r).0 {
                s.extend_from_slice(coarse_adj.triangles_at_vertex(z));
            }
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect();
    KernelBasis {
        generators,
        bt,
        coarse_support,
    }
}
