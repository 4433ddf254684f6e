//! P1 finite element operators on triangulations.
//!
//! Matrices are assembled over all vertices; Dirichlet conditions are handled
//! afterwards by restricting to interior degrees of freedom through [`DofMap`].

use crate::error::{Error, Result};
use crate::mesh::{Point, Triangulation};
use crate::quadrature::TriangleRule;
use crate::sparse::SparseMatrix;

/// Relative drop tolerance applied after assembly.
pub const ASSEMBLY_DROP_TOL: f64 = 1e-14;

/// Interior (free) vertices of a mesh and the inverse numbering.
#[derive(Debug, Clone)]
pub struct DofMap {
    n_vertices: usize,
    interior: Vec<usize>,
    dof_of: Vec<Option<usize>>,
}

impl DofMap {
    pub fn new(mesh: &Triangulation) -> Self {
        let interior = mesh.interior_vertices();
        let mut dof_of = vec![None; mesh.n_vertices()];
        for (d, &v) in interior.iter().enumerate() {
            dof_of[v] = Some(d);
        }
        Self {
            n_vertices: mesh.n_vertices(),
            interior,
            dof_of,
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.interior.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    /// Boundary vertices in ascending order.
    pub fn boundary(&self) -> Vec<usize> {
        (0..self.n_vertices)
            .filter(|&v| self.dof_of[v].is_none())
            .collect()
    }

    pub fn dof(&self, vertex: usize) -> Option<usize> {
        self.dof_of[vertex]
    }

    pub fn restrict_vector(&self, full: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&v| full[v]).collect()
    }

    /// Vertex vector with the given interior values and zero boundary values.
    pub fn extend(&self, dofs: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_vertices];
        for (&v, &x) in self.interior.iter().zip(dofs) {
            full[v] = x;
        }
        full
    }

    pub fn restrict_matrix(&self, a: &SparseMatrix) -> SparseMatrix {
        a.submatrix(&self.interior, &self.interior)
    }

    /// Interior rows against boundary columns.
    pub fn coupling_matrix(&self, a: &SparseMatrix) -> SparseMatrix {
        a.submatrix(&self.interior, &self.boundary())
    }

    /// Embedding of interior dofs into vertex vectors (`n_vertices × n_dofs`).
    pub fn embedding(&self) -> SparseMatrix {
        let trip: Vec<_> = self
            .interior
            .iter()
            .enumerate()
            .map(|(d, &v)| (v, d, 1.0))
            .collect();
        SparseMatrix::from_triplets(self.n_vertices, self.n_dofs(), &trip)
    }
}

/// Gradients of the three barycentric coordinates and the area.
pub fn p1_gradients(p: &[Point; 3]) -> Result<([[f64; 2]; 3], f64)> {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let area = 0.5 * det;
    if area < 1e-14 {
        return Err(Error::DegenerateTriangle {
            triangle: usize::MAX,
            area,
        });
    }
    let mut g = [[0.0; 2]; 3];
    for k in 0..3 {
        let (a, b) = (p[(k + 1) % 3], p[(k + 2) % 3]);
        g[k] = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
    }
    Ok((g, area))
}

pub fn local_stiffness(p: &[Point; 3]) -> Result<[[f64; 3]; 3]> {
    let (g, area) = p1_gradients(p)?;
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
        }
    }
    Ok(k)
}

pub fn local_mass(p: &[Point; 3]) -> Result<[[f64; 3]; 3]> {
    let (_, area) = p1_gradients(p)?;
    let mut m = [[area / 12.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = area / 6.0;
    }
    Ok(m)
}

fn assemble_with(
    mesh: &Triangulation,
    local: fn(&[Point; 3]) -> Result<[[f64; 3]; 3]>,
) -> Result<SparseMatrix> {
    let n = mesh.n_vertices();
    let mut trip = Vec::with_capacity(9 * mesh.n_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let k = local(&mesh.triangle_points(t)).map_err(|e| match e {
            Error::DegenerateTriangle { area, .. } => {
                Error::DegenerateTriangle { triangle: t, area }
            }
            other => other,
        })?;
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri[i], tri[j], k[i][j]));
            }
        }
    }
    let mut a = SparseMatrix::from_triplets(n, n, &trip).drop_small(ASSEMBLY_DROP_TOL);
    a.mark_symmetric(1e-14);
    Ok(a)
}

/// Full (all-vertex) P1 stiffness matrix `(∇λ_j, ∇λ_i)`.
pub fn assemble_stiffness(mesh: &Triangulation) -> Result<SparseMatrix> {
    assemble_with(mesh, local_stiffness)
}

/// Full (all-vertex) consistent P1 mass matrix `(λ_j, λ_i)`.
pub fn assemble_mass(mesh: &Triangulation) -> Result<SparseMatrix> {
    assemble_with(mesh, local_mass)
}

/// Row-sum lumping.
pub fn lump_mass(m: &SparseMatrix) -> Vec<f64> {
    m.row_sums()
}

/// Load vector `b_i ≈ ∫ f λ_i` over all vertices.
pub fn assemble_load(
    mesh: &Triangulation,
    f: impl Fn(Point) -> f64,
    quad_order: usize,
) -> Result<Vec<f64>> {
    let rule = TriangleRule::of_order(quad_order)?;
    let mut b = vec![0.0; mesh.n_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let p = mesh.triangle_points(t);
        let area = mesh.area(t);
        for (x, l, w) in rule.map(&p) {
            let fx = f(x) * w * area;
            for k in 0..3 {
                b[tri[k]] += fx * l[k];
            }
        }
    }
    Ok(b)
}

/// `‖∇(u - u_h)‖_{L²}` for vertex coefficients `coeffs` of `u_h`.
pub fn h1_seminorm_error(
    mesh: &Triangulation,
    coeffs: &[f64],
    grad_u: impl Fn(Point) -> [f64; 2],
    quad_order: usize,
) -> Result<f64> {
    Ok(H1ErrorEvaluator::new(mesh, quad_order)?.error(coeffs, grad_u))
}

/// Precomputed geometry for repeated H¹-seminorm error evaluations on a mesh.
#[derive(Debug, Clone)]
pub struct H1ErrorEvaluator {
    triangles: Vec<[usize; 3]>,
    gradients: Vec<[[f64; 2]; 3]>,
    points: Vec<Point>,
    weights: Vec<f64>,
    per_triangle: usize,
}

impl H1ErrorEvaluator {
    pub fn new(mesh: &Triangulation, quad_order: usize) -> Result<Self> {
        let rule = TriangleRule::of_order(quad_order)?;
        let mut gradients = Vec::with_capacity(mesh.n_triangles());
        let mut points = Vec::with_capacity(rule.len() * mesh.n_triangles());
        let mut weights = Vec::with_capacity(rule.len() * mesh.n_triangles());
        for t in 0..mesh.n_triangles() {
            let p = mesh.triangle_points(t);
            let (g, area) = p1_gradients(&p)?;
            gradients.push(g);
            for (x, _, w) in rule.map(&p) {
                points.push(x);
                weights.push(w * area);
            }
        }
        Ok(Self {
            triangles: mesh.triangles().to_vec(),
            gradients,
            points,
            weights,
            per_triangle: rule.len(),
        })
    }

    pub fn quadrature_points(&self) -> &[Point] {
        &self.points
    }

    pub fn error(&self, coeffs: &[f64], grad_u: impl Fn(Point) -> [f64; 2]) -> f64 {
        self.error_with_gradients(coeffs, |q| grad_u(self.points[q]))
    }

    /// Like [`error`](Self::error) with the exact gradient given per
    /// quadrature point index.
    pub fn error_with_gradients(&self, coeffs: &[f64], grad_at: impl Fn(usize) -> [f64; 2]) -> f64 {
        let mut sum = 0.0;
        for (t, tri) in self.triangles.iter().enumerate() {
            let g = &self.gradients[t];
            let mut gh = [0.0; 2];
            for k in 0..3 {
                gh[0] += coeffs[tri[k]] * g[k][0];
                gh[1] += coeffs[tri[k]] * g[k][1];
            }
            for q in t * self.per_triangle..(t + 1) * self.per_triangle {
                let gu = grad_at(q);
                sum += self.weights[q] * ((gu[0] - gh[0]).powi(2) + (gu[1] - gh[1]).powi(2));
            }
        }
        sum.sqrt()
    }
}

/// `‖v_h‖²_{L²}` by quadrature, independent of the assembled mass matrix.
pub fn l2_norm_squared_by_quadrature(mesh: &Triangulation, coeffs: &[f64]) -> f64 {
    let rule = TriangleRule::of_order(2).expect("order 2 exists");
    let mut s = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let p = mesh.triangle_points(t);
        let area = mesh.area(t);
        for (_, l, w) in rule.map(&p) {
            let v: f64 = (0..3).map(|k| l[k] * coeffs[tri[k]]).sum();
            s += w * area * v * v;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_lshape_mesh, uniform_refine};

    fn unit_right() -> [Point; 3] {
        [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
    }

    fn square_pair() -> Triangulation {
        Triangulation::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn reference_element_matrices() {
        let k = local_stiffness(&unit_right()).unwrap();
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
        let m = local_mass(&unit_right()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 2.0 / 24.0 } else { 1.0 / 24.0 };
                assert!((m[i][j] - e).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn stiffness_annihilates_constants_and_is_sum_of_local_maps() {
        let mesh = square_pair();
        let a = assemble_stiffness(&mesh).unwrap();
        assert!(a.is_flagged_symmetric());
        assert!(a.matvec(&[1.0; 4]).iter().all(|x| x.abs() < 1e-14));
        // direct summation of the two local matrices
        let mut dense = [[0.0; 4]; 4];
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let k = local_stiffness(&mesh.triangle_points(t)).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    dense[tri[i]][tri[j]] += k[i][j];
                }
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                assert!((a.get(i, j) - dense[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mass_integrates_one_to_the_area() {
        let mesh = uniform_refine(&make_lshape_mesh()).mesh;
        let m = assemble_mass(&mesh).unwrap();
        let ones = vec![1.0; mesh.n_vertices()];
        assert!((m.quad_form(&ones) - 3.0).abs() < 1e-12);
        let d = lump_mass(&m);
        assert!(d.iter().all(|&x| x > 0.0));
        assert!((d.iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn lumped_single_triangle() {
        let mesh = Triangulation::new(unit_right().to_vec(), vec![[0, 1, 2]]).unwrap();
        let d = lump_mass(&assemble_mass(&mesh).unwrap());
        assert!(d.iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-16));
    }

    #[test]
    fn loads_reproduce_mass_products() {
        let mesh = uniform_refine(&make_lshape_mesh()).mesh;
        let m = assemble_mass(&mesh).unwrap();
        let b1 = assemble_load(&mesh, |_| 1.0, 1).unwrap();
        for (x, y) in b1.iter().zip(lump_mass(&m)) {
            assert!((x - y).abs() < 1e-15);
        }
        let f = |p: Point| 2.0 * p[0] - 3.0 * p[1] + 0.5;
        let nodal: Vec<f64> = mesh.vertices().iter().map(|&p| f(p)).collect();
        let b2 = assemble_load(&mesh, f, 2).unwrap();
        for (x, y) in b2.iter().zip(m.matvec(&nodal)) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn load_of_x_squared_on_square_pair() {
        // ∫ x² λ_i over the unit square split along (0,0)-(1,1), by hand:
        // vertex (0,0): 1/15, (1,0): 1/10, (1,1): 3/20, (0,1): 1/60
        let mesh = square_pair();
        let b = assemble_load(&mesh, |p| p[0] * p[0], 3).unwrap();
        let expect = [1.0 / 15.0, 1.0 / 10.0, 3.0 / 20.0, 1.0 / 60.0];
        for (x, y) in b.iter().zip(expect) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
        assert!((b.iter().sum::<f64>() - 1.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn h1_error_of_affine_interpolant_vanishes() {
        let mesh = uniform_refine(&make_lshape_mesh()).mesh;
        let coeffs: Vec<f64> = mesh.vertices().iter().map(|p| 3.0 * p[0] - p[1]).collect();
        let e = h1_seminorm_error(&mesh, &coeffs, |_| [3.0, -1.0], 5).unwrap();
        assert!(e < 1e-12);
        let zero = vec![0.0; mesh.n_vertices()];
        let e0 = h1_seminorm_error(&mesh, &zero, |_| [3.0, -1.0], 5).unwrap();
        assert!((e0 * e0 - 10.0 * 3.0).abs() < 1e-11);
    }

    #[test]
    fn mass_matches_quadrature_norm() {
        let mesh = uniform_refine(&make_lshape_mesh()).mesh;
        let m = assemble_mass(&mesh).unwrap();
        let v: Vec<f64> = (0..mesh.n_vertices())
            .map(|i| ((i * 37 % 11) as f64).sin())
            .collect();
        let a = m.quad_form(&v);
        let b = l2_norm_squared_by_quadrature(&mesh, &v);
        assert!((a - b).abs() < 1e-12 * a.max(1.0));
    }

    #[test]
    fn dof_map_restriction() {
        let mesh = uniform_refine(&make_lshape_mesh()).mesh;
        let dofs = DofMap::new(&mesh);
        assert_eq!(dofs.n_dofs(), mesh.stats().n_interior_vertices);
        let full: Vec<f64> = (0..mesh.n_vertices()).map(|i| i as f64).collect();
        let r = dofs.restrict_vector(&full);
        let back = dofs.extend(&r);
        for v in 0..mesh.n_vertices() {
            assert_eq!(back[v], if mesh.is_boundary(v) { 0.0 } else { v as f64 });
        }
    }
}
