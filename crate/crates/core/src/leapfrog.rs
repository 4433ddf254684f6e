//! Leapfrog time stepping for `ü - Δu = f` in four discrete spaces, with
//! CFL-based step sizes, discrete energies and inhomogeneous Dirichlet data.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::assembly::{assemble_load, assemble_mass, assemble_stiffness, DofMap, H1ErrorEvaluator};
use crate::error::{Error, Result};
use crate::interp::prolongation_matrix;
use crate::linsolve::{inverse_diagonal, pcg_diag_from, power_iteration, PowerOptions};
use crate::mesh::{
    compose_ancestry, grade_toward_corner, make_lshape_mesh, refine_toward_point, uniform_refine,
    MeshHierarchy, Point, Triangulation,
};
use crate::reduced_space::{build_reduced_basis, CorrectorContext, Localization, ReducedBasis};
use crate::sparse::{dot, SparseMatrix};

/// Uniform refinements of the 12-triangle L-shape before level 1.
pub const BASE_REFINEMENTS: usize = 5;

/// Grading exponent for the `r^{2/3}` corner singularity.
pub const LSHAPE_ALPHA: f64 = 2.0 / 3.0;

/// Quadrature order for the forcing.
pub const LOAD_QUAD_ORDER: usize = 2;

/// Default quadrature order for H¹ error norms.
pub const ERROR_QUAD_ORDER: usize = 5;

/// Discrete space the scheme runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Space {
    Coarse,
    Fine,
    Reduced,
    ReducedLumped,
}

impl Space {
    pub const ALL: [Space; 4] = [
        Space::Coarse,
        Space::Fine,
        Space::Reduced,
        Space::ReducedLumped,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Space::Coarse => "coarse",
            Space::Fine => "fine",
            Space::Reduced => "reduced",
            Space::ReducedLumped => "reduced_lumped",
        }
    }

    pub fn is_reduced(self) -> bool {
        matches!(self, Space::Reduced | Space::ReducedLumped)
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "coarse" => Ok(Space::Coarse),
            "fine" => Ok(Space::Fine),
            "reduced" => Ok(Space::Reduced),
            "reduced_lumped" => Ok(Space::ReducedLumped),
            other => Err(Error::Parse(format!("unknown space `{other}`"))),
        }
    }
}

pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type SpaceFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

/// A scalar space-time field.
#[derive(Clone)]
pub enum SpaceTimeField {
    Zero,
    /// `time(t) · space(x)`
    Separable {
        time: TimeFn,
        space: SpaceFn,
    },
    General(Arc<dyn Fn(f64, Point) -> f64 + Send + Sync>),
}

impl SpaceTimeField {
    pub fn eval(&self, t: f64, x: Point) -> f64 {
        match self {
            SpaceTimeField::Zero => 0.0,
            SpaceTimeField::Separable { time, space } => time(t) * space(x),
            SpaceTimeField::General(f) => f(t, x),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, SpaceTimeField::Zero)
    }
}

impl fmt::Debug for SpaceTimeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceTimeField::Zero => f.write_str("Zero"),
            SpaceTimeField::Separable { .. } => f.write_str("Separable"),
            SpaceTimeField::General(_) => f.write_str("General"),
        }
    }
}

/// Analytic solution used for error measurement.
#[derive(Clone)]
pub struct ExactSolution {
    pub u: SpaceTimeField,
    pub grad: Arc<dyn Fn(f64, Point) -> [f64; 2] + Send + Sync>,
    /// Set when `grad(t, x) = time(t) · space(x)`; errors then reuse
    /// gradients cached at the quadrature points.
    pub separable_grad: Option<(TimeFn, GradFn)>,
}

impl fmt::Debug for ExactSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExactSolution")
            .field("u", &self.u)
            .finish_non_exhaustive()
    }
}

/// `ü - Δu = f` on the fine mesh's domain with `u = g` on the boundary.
#[derive(Clone)]
pub struct WaveProblem {
    pub hierarchy: MeshHierarchy,
    pub f: SpaceTimeField,
    pub g: SpaceTimeField,
    pub u0: SpaceFn,
    pub v0: SpaceFn,
    pub t_end: f64,
    pub exact: Option<ExactSolution>,
}

impl fmt::Debug for WaveProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WaveProblem")
            .field("fine_triangles", &self.hierarchy.fine.n_triangles())
            .field("f", &self.f)
            .field("g", &self.g)
            .field("t_end", &self.t_end)
            .field("exact", &self.exact)
            .finish_non_exhaustive()
    }
}

impl WaveProblem {
    /// Checks `T > 0` and `g(0) = u0` at the boundary vertices.
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "final time must be positive, got {}",
                self.t_end
            )));
        }
        for mesh in [&self.hierarchy.coarse, &self.hierarchy.fine] {
            for (v, &x) in mesh.vertices().iter().enumerate() {
                if mesh.is_boundary(v) {
                    let d = (self.g.eval(0.0, x) - (self.u0)(x)).abs();
                    if d > 1e-10 {
                        return Err(Error::InvalidArgument(format!(
                            "boundary data and initial displacement differ by {d:e} at vertex {v}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `φ(x) = r^{2/3} sin(2θ/3)` with `θ ∈ [0, 2π)`, vanishing on both edges of
/// the re-entrant corner of the L-shape.
pub fn corner_singularity(x: Point) -> f64 {
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        return 0.0;
    }
    r.powf(2.0 / 3.0) * (2.0 * polar_angle(x) / 3.0).sin()
}

/// Gradient of [`corner_singularity`] (singular at the origin).
pub fn corner_singularity_gradient(x: Point) -> [f64; 2] {
    let r = x[0].hypot(x[1]);
    let theta = polar_angle(x);
    // ∂_r φ = (2/3) r^{-1/3} sin(2θ/3), (1/r) ∂_θ φ = (2/3) r^{-1/3} cos(2θ/3)
    let c = 2.0 / 3.0 * r.powf(-1.0 / 3.0);
    let (dr, dth) = (c * (2.0 * theta / 3.0).sin(), c * (2.0 * theta / 3.0).cos());
    let (s, co) = theta.sin_cos();
    [dr * co - dth * s, dr * s + dth * co]
}

fn polar_angle(x: Point) -> f64 {
    let t = x[1].atan2(x[0]);
    if t < 0.0 {
        t + 2.0 * PI
    } else {
        t
    }
}

/// Coarse mesh of level `level ≥ 1`: the base L-shape refined
/// `BASE_REFINEMENTS + level` times.
pub fn lshape_coarse_mesh(level: usize) -> Triangulation {
    let mut mesh = make_lshape_mesh();
    for _ in 0..BASE_REFINEMENTS + level {
        mesh = uniform_refine(&mesh).mesh;
    }
    mesh
}

/// Uniform coarse mesh and its corner-graded refinement for `level`.
pub fn lshape_hierarchy(level: usize) -> Result<MeshHierarchy> {
    if level == 0 {
        return Err(Error::InvalidArgument("levels start at 1".into()));
    }
    let coarse = lshape_coarse_mesh(level);
    let h = coarse.stats().h_max;
    let graded = grade_toward_corner(&coarse, [0.0, 0.0], h, LSHAPE_ALPHA)?;
    MeshHierarchy::from_refinement(coarse, graded)
}

/// Uniform refinements of the coarse mesh of the spectrum pair.
pub const SPECTRUM_COARSE_REFINEMENTS: usize = 5;

/// Corner bisection rounds of the fine mesh of the spectrum pair.
pub const SPECTRUM_CORNER_ROUNDS: usize = 6;

/// Mesh pair for spectra: the L-shape refined `coarse_refinements` times,
/// and inside it one more uniform refinement followed by `corner_rounds`
/// bisections of the triangles at the re-entrant corner.
pub fn lshape_spectrum_hierarchy(
    coarse_refinements: usize,
    corner_rounds: usize,
) -> Result<MeshHierarchy> {
    let mut coarse = make_lshape_mesh();
    for _ in 0..coarse_refinements {
        coarse = uniform_refine(&coarse).mesh;
    }
    let uniform = uniform_refine(&coarse);
    let corner = refine_toward_point(&uniform.mesh, [0.0, 0.0], corner_rounds);
    let ancestor = compose_ancestry(&uniform.ancestor, &corner.ancestor);
    MeshHierarchy::new(coarse, corner.mesh, ancestor)
}

/// `u = sin(πt) φ` on the level-`level` L-shape hierarchy, up to `T = 0.5`.
pub fn lshape_problem(level: usize) -> Result<WaveProblem> {
    let hierarchy = lshape_hierarchy(level)?;
    let sin_t: TimeFn = Arc::new(|t: f64| (PI * t).sin());
    let phi: SpaceFn = Arc::new(corner_singularity);
    Ok(WaveProblem {
        hierarchy,
        // φ is harmonic, so f = ü = -π² sin(πt) φ
        f: SpaceTimeField::Separable {
            time: Arc::new(|t: f64| -PI * PI * (PI * t).sin()),
            space: phi.clone(),
        },
        g: SpaceTimeField::Separable {
            time: sin_t.clone(),
            space: phi.clone(),
        },
        u0: Arc::new(|_| 0.0),
        v0: Arc::new(|x| PI * corner_singularity(x)),
        t_end: 0.5,
        exact: Some(ExactSolution {
            u: SpaceTimeField::Separable {
                time: sin_t.clone(),
                space: phi,
            },
            grad: Arc::new(|t, x| {
                let g = corner_singularity_gradient(x);
                let s = (PI * t).sin();
                [s * g[0], s * g[1]]
            }),
            separable_grad: Some((sin_t, Arc::new(corner_singularity_gradient))),
        }),
    })
}

/// Free oscillation on `hierarchy` of the L-shape: `f = 0`, `g = 0`,
/// `u0 = sin(πx) sin(πy)`, `v0 = 0`, no exact solution.
pub fn free_oscillation_problem(hierarchy: MeshHierarchy, t_end: f64) -> WaveProblem {
    WaveProblem {
        hierarchy,
        f: SpaceTimeField::Zero,
        g: SpaceTimeField::Zero,
        u0: Arc::new(|x| (PI * x[0]).sin() * (PI * x[1]).sin()),
        v0: Arc::new(|_| 0.0),
        t_end,
        exact: None,
    }
}

/// Largest relative deviation of the energies from the first one.
pub fn relative_energy_drift(energies: &[f64]) -> f64 {
    let Some(&e0) = energies.first() else {
        return 0.0;
    };
    let scale = e0.abs().max(f64::MIN_POSITIVE);
    energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / scale
}

/// Largest per-step mismatch `|E^{n+1/2} - E^{n-1/2} - ΔEₙ|`, relative to
/// the largest energy of the run.
pub fn energy_identity_defect(run: &LeapfrogRun) -> f64 {
    let scale = run
        .energies
        .iter()
        .map(|e| e.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    run.energies
        .windows(2)
        .zip(&run.energy_increments)
        .map(|(e, inc)| (e[1] - e[0] - inc).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Mass operator of a space: consistent matrix or lumped diagonal.
#[derive(Debug, Clone)]
pub enum MassOperator {
    Consistent(SparseMatrix),
    Lumped(Vec<f64>),
}

impl MassOperator {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            MassOperator::Consistent(m) => m.matvec(x),
            MassOperator::Lumped(d) => x.iter().zip(d).map(|(a, b)| a * b).collect(),
        }
    }

    pub fn norm_squared(&self, x: &[f64]) -> f64 {
        match self {
            MassOperator::Consistent(m) => m.quad_form(x),
            MassOperator::Lumped(d) => x.iter().zip(d).map(|(a, b)| a * a * b).sum(),
        }
    }

    /// Sparse matrix form (diagonal for lumped mass).
    pub fn to_matrix(&self) -> SparseMatrix {
        match self {
            MassOperator::Consistent(m) => m.clone(),
            MassOperator::Lumped(d) => SparseMatrix::from_diagonal(d),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            MassOperator::Consistent(m) => m.nnz(),
            MassOperator::Lumped(d) => d.len(),
        }
    }
}

/// Solves with a [`MassOperator`], warm-starting consistent solves.
#[derive(Debug, Clone)]
pub struct MassSolver {
    op: MassOperator,
    inv_diag: Vec<f64>,
    pub tol: f64,
    pub iterations: usize,
    pub solves: usize,
}

impl MassSolver {
    pub fn new(op: MassOperator, tol: f64) -> Self {
        let inv_diag = match &op {
            MassOperator::Consistent(m) => inverse_diagonal(m),
            MassOperator::Lumped(d) => d.iter().map(|x| 1.0 / x).collect(),
        };
        Self {
            op,
            inv_diag,
            tol,
            iterations: 0,
            solves: 0,
        }
    }

    pub fn operator(&self) -> &MassOperator {
        &self.op
    }

    /// Overwrites `x` (used as initial guess) with `M⁻¹ b`.
    pub fn solve_into(&mut self, b: &[f64], x: &mut [f64]) -> Result<()> {
        self.solves += 1;
        match &self.op {
            MassOperator::Lumped(_) => {
                for ((xi, bi), di) in x.iter_mut().zip(b).zip(&self.inv_diag) {
                    *xi = bi * di;
                }
            }
            MassOperator::Consistent(m) => {
                let rep = pcg_diag_from(m, &self.inv_diag, b, x, self.tol, 10 * b.len() + 100);
                self.iterations += rep.iterations;
                rep.check("mass solve")?;
            }
        }
        Ok(())
    }
}

/// Matrices of one discrete space together with its embedding into fine
/// vertex values and the boundary lift.
#[derive(Debug, Clone)]
pub struct SpaceOperators {
    pub space: Space,
    pub a: SparseMatrix,
    pub mass: MassOperator,
    /// Coefficients → fine vertex values (`fine vertices × n`).
    pub phi: SparseMatrix,
    /// Boundary node values → fine vertex values of the lift.
    pub lift: SparseMatrix,
    /// Points where boundary data is sampled for the lift.
    pub lift_nodes: Vec<Point>,
    /// `Φᵀ M Λ` and `Φᵀ A Λ` on the fine mesh.
    pub mass_lift: SparseMatrix,
    pub stiffness_lift: SparseMatrix,
    /// Points whose exact values give nodal coefficients.
    pub sample_nodes: Vec<Point>,
}

impl SpaceOperators {
    pub fn n_dofs(&self) -> usize {
        self.a.n_rows()
    }

    /// Builds the operators. `reduced` supplies the basis for reduced spaces.
    pub fn build(
        h: &MeshHierarchy,
        fine_a: &SparseMatrix,
        fine_m: &SparseMatrix,
        space: Space,
        reduced: Option<&ReducedBasis>,
    ) -> Result<Self> {
        let fine_dofs = DofMap::new(&h.fine);
        let coarse_dofs = DofMap::new(&h.coarse);
        let p = prolongation_matrix(h);
        let (phi, lift, lift_nodes, sample_nodes) = match space {
            Space::Fine => {
                let b = fine_dofs.boundary();
                let lift = SparseMatrix::from_triplets(
                    h.fine.n_vertices(),
                    b.len(),
                    &b.iter()
                        .enumerate()
                        .map(|(k, &v)| (v, k, 1.0))
                        .collect::<Vec<_>>(),
                );
                let nodes = b.iter().map(|&v| h.fine.vertices()[v]).collect();
                let samples = fine_dofs
                    .interior()
                    .iter()
                    .map(|&v| h.fine.vertices()[v])
                    .collect();
                (fine_dofs.embedding(), lift, nodes, samples)
            }
            _ => {
                let all_fine: Vec<usize> = (0..h.fine.n_vertices()).collect();
                let cb = coarse_dofs.boundary();
                let mut lift = p.submatrix(&all_fine, &cb);
                let nodes = cb.iter().map(|&v| h.coarse.vertices()[v]).collect();
                let samples = coarse_dofs
                    .interior()
                    .iter()
                    .map(|&v| h.coarse.vertices()[v])
                    .collect();
                let phi = if space.is_reduced() {
                    let basis = reduced.ok_or_else(|| {
                        Error::InvalidArgument(format!("space {space} needs a reduced basis"))
                    })?;
                    // boundary hats are corrected like the interior ones
                    lift = lift.add(
                        1.0,
                        &fine_dofs.embedding().matmul(&basis.boundary_correction),
                        1.0,
                    );
                    fine_dofs.embedding().matmul(&basis.r)
                } else {
                    p.submatrix(&all_fine, coarse_dofs.interior())
                };
                (phi, lift, nodes, samples)
            }
        };
        let phi_t = phi.transpose();
        let galerkin = |x: &SparseMatrix| {
            let mut g = phi_t
                .matmul(&x.matmul(&phi))
                .drop_small(1e-14)
                .symmetrized();
            g.mark_symmetric(1e-12);
            g
        };
        let a = galerkin(fine_a);
        let m = galerkin(fine_m);
        let mass = if space == Space::ReducedLumped {
            MassOperator::Lumped(m.row_sums())
        } else {
            MassOperator::Consistent(m)
        };
        let mass_lift = phi_t.matmul(&fine_m.matmul(&lift));
        let stiffness_lift = phi_t.matmul(&fine_a.matmul(&lift));
        Ok(Self {
            space,
            a,
            mass,
            phi,
            lift,
            lift_nodes,
            mass_lift,
            stiffness_lift,
            sample_nodes,
        })
    }

    /// Fine vertex values of coefficients `u` plus the lift of `g_b`.
    pub fn reconstruct(&self, u: &[f64], g_b: &[f64]) -> Vec<f64> {
        let mut v = self.phi.matvec(u);
        self.lift.matvec_add(1.0, g_b, &mut v);
        v
    }

    fn boundary_values(&self, g: &SpaceTimeField, t: f64) -> Vec<f64> {
        self.lift_nodes.iter().map(|&x| g.eval(t, x)).collect()
    }
}

/// `dt = safety · √2 / √λ_max(A, M)`.
pub fn cfl_timestep(a: &SparseMatrix, m: &SparseMatrix, safety: f64) -> Result<f64> {
    cfl_timestep_seeded(a, m, safety, PowerOptions::default().seed)
}

/// [`cfl_timestep`] with an explicit seed for the power iteration start.
pub fn cfl_timestep_seeded(
    a: &SparseMatrix,
    m: &SparseMatrix,
    safety: f64,
    seed: u64,
) -> Result<f64> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "CFL safety factor must lie in (0, 1], got {safety}"
        )));
    }
    Ok(safety * 2f64.sqrt() / max_eigenvalue_seeded(a, m, seed)?.sqrt())
}

/// Largest eigenvalue of the pencil with the tolerance used for step sizes.
pub fn max_eigenvalue(a: &SparseMatrix, m: &SparseMatrix) -> Result<f64> {
    max_eigenvalue_seeded(a, m, PowerOptions::default().seed)
}

pub fn max_eigenvalue_seeded(a: &SparseMatrix, m: &SparseMatrix, seed: u64) -> Result<f64> {
    Ok(power_iteration(
        a,
        m,
        PowerOptions {
            tol: 1e-9,
            seed,
            ..Default::default()
        },
    )?
    .lambda)
}

/// One leapfrog step: `u⁺ = 2u - u⁻ + dt² M⁻¹(F - A u)`. `accel` is the
/// warm start for the mass solve and receives `M⁻¹(F - A u)`.
pub fn leapfrog_step(
    a: &SparseMatrix,
    mass: &mut MassSolver,
    u_prev: &[f64],
    u_curr: &[f64],
    load: &[f64],
    dt: f64,
    accel: &mut [f64],
) -> Result<Vec<f64>> {
    let mut rhs = load.to_vec();
    a.matvec_add(-1.0, u_curr, &mut rhs);
    mass.solve_into(&rhs, accel)?;
    Ok(u_curr
        .iter()
        .zip(u_prev)
        .zip(accel.iter())
        .map(|((c, p), acc)| 2.0 * c - p + dt * dt * acc)
        .collect())
}

/// `E^{n+1/2} = ½(‖(u⁺ - u)/dt‖²_M + uᵀ A u⁺)`.
pub fn discrete_energy(
    a: &SparseMatrix,
    m: &MassOperator,
    u_n: &[f64],
    u_np1: &[f64],
    dt: f64,
) -> f64 {
    let v: Vec<f64> = u_np1.iter().zip(u_n).map(|(a, b)| (a - b) / dt).collect();
    0.5 * (m.norm_squared(&v) + a.bilinear(u_n, u_np1))
}

/// How the time step is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtPolicy {
    /// CFL step of the coarse finite element space for coarse and reduced
    /// runs, of the fine space for fine runs, scaled by `safety`.
    Cfl {
        safety: f64,
    },
    Explicit(f64),
}

/// Settings of a run beyond the step size.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub mass_tol: f64,
    /// Record the full state history.
    pub keep_history: bool,
    /// Record per-step errors against the exact solution.
    pub track_errors: bool,
    /// Steps after which a run is refused.
    pub step_budget: usize,
    /// Quadrature order of the H¹ error.
    pub error_quad_order: usize,
    /// Seed of the power iteration behind CFL steps.
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            mass_tol: 1e-10,
            keep_history: false,
            track_errors: true,
            step_budget: 1_000_000,
            error_quad_order: ERROR_QUAD_ORDER,
            seed: PowerOptions::default().seed,
        }
    }
}

/// Result of [`run_wave`].
#[derive(Debug, Clone)]
pub struct LeapfrogRun {
    pub space: Space,
    pub dt: f64,
    pub n_steps: usize,
    pub n_dofs: usize,
    pub nnz_mass: usize,
    /// `E^{n+1/2}` for `n = 0..N`.
    pub energies: Vec<f64>,
    /// `½ dt Fⁿ·(vⁿ⁺¹ᐟ² + vⁿ⁻¹ᐟ²)` for `n = 1..N`: the energy change the
    /// scheme must produce in step `n`.
    pub energy_increments: Vec<f64>,
    /// `‖∇(u(t_k) - u_h^k)‖` for `k = 1..=N`.
    pub step_errors: Vec<f64>,
    /// `Σ_{k=1}^{N} dt ‖∇(u(t_k) - u_h^k)‖`.
    pub accumulated_error: f64,
    pub mass_iterations: usize,
    pub final_state: Vec<f64>,
    /// Coefficient vectors `U⁰..U^N` when requested.
    pub history: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// `N = ⌈T / dt⌉`.
pub fn step_count(t_end: f64, dt: f64) -> usize {
    let q = t_end / dt;
    let n = q.round();
    if (q - n).abs() <= 1e-12 * q {
        n as usize
    } else {
        q.ceil() as usize
    }
}

fn nodal(nodes: &[Point], f: impl Fn(Point) -> f64) -> Vec<f64> {
    nodes.iter().map(|&x| f(x)).collect()
}

/// Effective load `Φᵀb(tₙ) - Φᵀ M Λ (gⁿ⁺¹ - 2gⁿ + gⁿ⁻¹)/dt² - Φᵀ A Λ gⁿ`.
struct LoadBuilder<'a> {
    ops: &'a SpaceOperators,
    problem: &'a WaveProblem,
    /// `Φᵀ b_space` when the forcing is separable.
    separable: Option<Vec<f64>>,
    phi_t: SparseMatrix,
    dt: f64,
}

impl<'a> LoadBuilder<'a> {
    fn new(ops: &'a SpaceOperators, problem: &'a WaveProblem, dt: f64) -> Result<Self> {
        let phi_t = ops.phi.transpose();
        let separable = match &problem.f {
            SpaceTimeField::Separable { space, .. } => {
                let b = assemble_load(&problem.hierarchy.fine, |x| space(x), LOAD_QUAD_ORDER)?;
                Some(phi_t.matvec(&b))
            }
            _ => None,
        };
        Ok(Self {
            ops,
            problem,
            separable,
            phi_t,
            dt,
        })
    }

    fn load(&self, n: usize) -> Result<Vec<f64>> {
        let t = n as f64 * self.dt;
        let mut f = match (&self.problem.f, &self.separable) {
            (SpaceTimeField::Zero, _) => vec![0.0; self.ops.n_dofs()],
            (SpaceTimeField::Separable { time, .. }, Some(b)) => {
                let s = time(t);
                b.iter().map(|x| s * x).collect()
            }
            (field, _) => {
                let b = assemble_load(
                    &self.problem.hierarchy.fine,
                    |x| field.eval(t, x),
                    LOAD_QUAD_ORDER,
                )?;
                self.phi_t.matvec(&b)
            }
        };
        if !self.problem.g.is_zero() {
            let g = |k: f64| self.ops.boundary_values(&self.problem.g, t + k * self.dt);
            let (gm, g0, gp) = (g(-1.0), g(0.0), g(1.0));
            let dd: Vec<f64> = (0..g0.len())
                .map(|i| (gp[i] - 2.0 * g0[i] + gm[i]) / (self.dt * self.dt))
                .collect();
            self.ops.mass_lift.matvec_add(-1.0, &dd, &mut f);
            self.ops.stiffness_lift.matvec_add(-1.0, &g0, &mut f);
        }
        Ok(f)
    }
}

/// Starting coefficients `(U⁰, U¹)`. `U¹` samples the exact solution at
/// `dt` when one is known, otherwise it is the second-order Taylor step.
pub fn make_initial_states(
    problem: &WaveProblem,
    ops: &SpaceOperators,
    dt: f64,
    mass: &mut MassSolver,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let u0 = nodal(&ops.sample_nodes, |x| (problem.u0)(x));
    let u1 = match &problem.exact {
        Some(ex) => nodal(&ops.sample_nodes, |x| ex.u.eval(dt, x)),
        None => taylor_start(problem, ops, dt, mass, &u0)?,
    };
    Ok((u0, u1))
}

/// `U¹ = U⁰ + dt V⁰ + ½ dt² M⁻¹(F⁰ - A U⁰)`.
pub fn taylor_start(
    problem: &WaveProblem,
    ops: &SpaceOperators,
    dt: f64,
    mass: &mut MassSolver,
    u0: &[f64],
) -> Result<Vec<f64>> {
    let v0 = nodal(&ops.sample_nodes, |x| (problem.v0)(x));
    let mut rhs = LoadBuilder::new(ops, problem, dt)?.load(0)?;
    ops.a.matvec_add(-1.0, u0, &mut rhs);
    let mut acc = vec![0.0; rhs.len()];
    mass.solve_into(&rhs, &mut acc)?;
    Ok((0..u0.len())
        .map(|i| u0[i] + dt * v0[i] + 0.5 * dt * dt * acc[i])
        .collect())
}

/// Error evaluation against the exact solution on the fine mesh.
struct ErrorTracker<'a> {
    eval: H1ErrorEvaluator,
    exact: &'a ExactSolution,
    cached: Option<Vec<[f64; 2]>>,
}

impl<'a> ErrorTracker<'a> {
    fn new(fine: &Triangulation, exact: &'a ExactSolution, order: usize) -> Result<Self> {
        let eval = H1ErrorEvaluator::new(fine, order)?;
        let cached = exact
            .separable_grad
            .as_ref()
            .map(|(_, g)| eval.quadrature_points().iter().map(|&x| g(x)).collect());
        Ok(Self {
            eval,
            exact,
            cached,
        })
    }

    fn error(&self, t: f64, fine_values: &[f64]) -> f64 {
        match (&self.cached, &self.exact.separable_grad) {
            (Some(g), Some((time, _))) => {
                let s = time(t);
                self.eval
                    .error_with_gradients(fine_values, |q| [s * g[q][0], s * g[q][1]])
            }
            _ => self.eval.error(fine_values, |x| (self.exact.grad)(t, x)),
        }
    }
}

/// Coarse-FEM CFL step, from the coarse mesh matrices.
pub fn coarse_cfl_timestep(h: &MeshHierarchy, safety: f64, seed: u64) -> Result<f64> {
    let dofs = DofMap::new(&h.coarse);
    let a = dofs.restrict_matrix(&assemble_stiffness(&h.coarse)?);
    let m = dofs.restrict_matrix(&assemble_mass(&h.coarse)?);
    cfl_timestep_seeded(&a, &m, safety, seed)
}

/// Integrates `problem` in the space described by `ops`.
pub fn run_wave(
    problem: &WaveProblem,
    ops: &SpaceOperators,
    policy: DtPolicy,
    options: RunOptions,
) -> Result<LeapfrogRun> {
    problem.validate()?;
    let mut warnings = Vec::new();
    let dt = match policy {
        DtPolicy::Explicit(dt) => {
            if !(dt > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "time step must be positive, got {dt}"
                )));
            }
            dt
        }
        DtPolicy::Cfl { safety } => match ops.space {
            Space::Fine | Space::Coarse => {
                cfl_timestep_seeded(&ops.a, &ops.mass.to_matrix(), safety, options.seed)?
            }
            Space::Reduced | Space::ReducedLumped => {
                let dt = coarse_cfl_timestep(&problem.hierarchy, safety, options.seed)?;
                let own = 2f64.sqrt()
                    / max_eigenvalue_seeded(&ops.a, &ops.mass.to_matrix(), options.seed)?.sqrt();
                if own < dt {
                    warnings.push(format!(
                        "coarse CFL step {dt:.6e} exceeds the {} space limit {own:.6e}; using {:.6e}",
                        ops.space,
                        0.99 * own
                    ));
                    0.99 * own
                } else {
                    dt
                }
            }
        },
    };
    let n_steps = step_count(problem.t_end, dt);
    if n_steps > options.step_budget {
        return Err(Error::InvalidArgument(format!(
            "{n_steps} steps exceed the budget of {}",
            options.step_budget
        )));
    }
    let mut mass = MassSolver::new(ops.mass.clone(), options.mass_tol);
    let (u0, u1) = make_initial_states(problem, ops, dt, &mut mass)?;
    let loads = LoadBuilder::new(ops, problem, dt)?;
    let tracker = match (&problem.exact, options.track_errors) {
        (Some(ex), true) => Some(ErrorTracker::new(
            &problem.hierarchy.fine,
            ex,
            options.error_quad_order,
        )?),
        _ => None,
    };
    let mut step_errors = Vec::with_capacity(if tracker.is_some() { n_steps } else { 0 });
    let mut record_error = |k: usize, u: &[f64]| {
        if let Some(tr) = &tracker {
            let t = k as f64 * dt;
            let g_b = ops.boundary_values(&problem.g, t);
            step_errors.push(tr.error(t, &ops.reconstruct(u, &g_b)));
        }
    };

    let initial_norm = mass
        .operator()
        .norm_squared(&u0)
        .sqrt()
        .max(mass.operator().norm_squared(&u1).sqrt());
    let limit = 1e8 * (1.0 + initial_norm);
    let mut energies = Vec::with_capacity(n_steps);
    let mut energy_increments = Vec::with_capacity(n_steps.saturating_sub(1));
    let mut history = Vec::new();
    if options.keep_history {
        history.push(u0.clone());
        history.push(u1.clone());
    }
    energies.push(discrete_energy(&ops.a, mass.operator(), &u0, &u1, dt));
    record_error(1, &u1);
    let mut prev = u0;
    let mut curr = u1;
    let mut accel = vec![0.0; curr.len()];
    for n in 1..n_steps {
        let f = loads.load(n)?;
        let next = leapfrog_step(&ops.a, &mut mass, &prev, &curr, &f, dt, &mut accel)?;
        let norm = mass.operator().norm_squared(&next).sqrt();
        if !(norm <= limit) {
            return Err(Error::Instability {
                step: n + 1,
                norm,
                limit,
            });
        }
        let vsum: Vec<f64> = (0..next.len()).map(|i| (next[i] - prev[i]) / dt).collect();
        energy_increments.push(0.5 * dt * dot(&f, &vsum));
        energies.push(discrete_energy(&ops.a, mass.operator(), &curr, &next, dt));
        record_error(n + 1, &next);
        if options.keep_history {
            history.push(next.clone());
        }
        prev = curr;
        curr = next;
    }
    let accumulated_error = dt * step_errors.iter().sum::<f64>();
    Ok(LeapfrogRun {
        space: ops.space,
        dt,
        n_steps,
        n_dofs: ops.n_dofs(),
        nnz_mass: ops.mass.nnz(),
        energies,
        energy_increments,
        step_errors,
        accumulated_error,
        mass_iterations: mass.iterations,
        final_state: curr,
        history,
        warnings,
    })
}

/// Fine matrices, reduced basis and per-space operators of one hierarchy.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub fine_a: SparseMatrix,
    pub fine_m: SparseMatrix,
    pub reduced: Option<ReducedBasis>,
    pub localization: Localization,
}

impl Discretization {
    /// Assembles the fine matrices and, if `with_reduced`, the reduced basis.
    pub fn new(h: &MeshHierarchy, localization: Localization, with_reduced: bool) -> Result<Self> {
        let fine_a = assemble_stiffness(&h.fine)?;
        let fine_m = assemble_mass(&h.fine)?;
        let reduced = if with_reduced {
            let ctx = CorrectorContext::new(h)?;
            Some(build_reduced_basis(&ctx, localization)?)
        } else {
            None
        };
        Ok(Self {
            fine_a,
            fine_m,
            reduced,
            localization,
        })
    }

    pub fn operators(&self, h: &MeshHierarchy, space: Space) -> Result<SpaceOperators> {
        SpaceOperators::build(h, &self.fine_a, &self.fine_m, space, self.reduced.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> SparseMatrix {
        SparseMatrix::from_triplets(1, 1, &[(0, 0, x)])
    }

    fn oscillator(omega: f64, dt: f64, steps: usize) -> (Vec<f64>, Vec<f64>) {
        let a = scalar(omega * omega);
        let mut mass = MassSolver::new(MassOperator::Consistent(scalar(1.0)), 1e-14);
        // Taylor start with u0 = 1, v0 = 0
        let mut u = vec![vec![1.0], vec![1.0 - 0.5 * dt * dt * omega * omega]];
        let mut accel = vec![0.0];
        for n in 1..steps {
            let next =
                leapfrog_step(&a, &mut mass, &u[n - 1], &u[n], &[0.0], dt, &mut accel).unwrap();
            u.push(next);
        }
        let energies = u
            .windows(2)
            .map(|w| discrete_energy(&a, mass.operator(), &w[0], &w[1], dt))
            .collect();
        (u.into_iter().map(|x| x[0]).collect(), energies)
    }

    #[test]
    fn scalar_oscillator_matches_recurrence_solution() {
        let (omega, dt) = (1.0, 0.1);
        let (u, energies) = oscillator(omega, dt, 2000);
        // u_n = cos(nθ) with cos θ = 1 - dt²ω²/2
        let theta = (1.0 - 0.5 * dt * dt * omega * omega).acos();
        for (n, un) in u.iter().enumerate() {
            assert!((un - (n as f64 * theta).cos()).abs() < 1e-10, "step {n}");
        }
        assert!(relative_energy_drift(&energies) < 1e-12);
    }

    #[test]
    fn scalar_oscillator_blows_up_beyond_stability_limit() {
        let omega = 1.0;
        let (u, _) = oscillator(omega, 1.05 * 2.0 / omega, 500);
        assert!(u.iter().any(|x| x.abs() > 1e6));
    }

    #[test]
    fn zero_state_stays_zero() {
        let a = scalar(3.0);
        let mut mass = MassSolver::new(MassOperator::Lumped(vec![2.0]), 1e-10);
        let mut accel = vec![0.0];
        let next = leapfrog_step(&a, &mut mass, &[0.0], &[0.0], &[0.0], 0.1, &mut accel).unwrap();
        assert_eq!(next, vec![0.0]);
        assert_eq!(
            discrete_energy(&a, mass.operator(), &[0.0], &[0.0], 0.1),
            0.0
        );
    }

    #[test]
    fn scalar_cfl_step() {
        let omega = 3.0;
        let dt = cfl_timestep(&scalar(omega * omega), &scalar(1.0), 0.5).unwrap();
        assert!((dt - 0.5 * 2f64.sqrt() / omega).abs() < 1e-9);
        assert!(cfl_timestep(&scalar(1.0), &scalar(1.0), 1.5).is_err());
    }

    #[test]
    fn step_count_is_ceiling() {
        assert_eq!(step_count(0.5, 0.1), 5);
        assert_eq!(step_count(0.5, 0.12), 5);
        assert_eq!(step_count(0.5, 0.3), 2);
    }

    #[test]
    fn singularity_vanishes_on_reentrant_edges() {
        let mesh = lshape_coarse_mesh(1);
        let mut checked = 0;
        for (v, &x) in mesh.vertices().iter().enumerate() {
            let on_edge = (x[1] == 0.0 && x[0] >= 0.0) || (x[0] == 0.0 && x[1] <= 0.0);
            if mesh.is_boundary(v) && on_edge {
                assert!(corner_singularity(x).abs() < 1e-14, "vertex {v} at {x:?}");
                checked += 1;
            }
        }
        assert!(checked > 10);
        assert!(corner_singularity([-0.5, 0.5]) > 0.1);
    }

    fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
        (1..=n)
            .map(|i| {
                let mut x = (PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
                let mut dp = 0.0;
                for _ in 0..100 {
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 2..=n {
                        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let dx = p1 / dp;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                (x, 2.0 / ((1.0 - x * x) * dp * dp))
            })
            .collect()
    }

    #[test]
    fn singularity_is_harmonic() {
        // ∫∇φ·∇ψ over a disk for a bump ψ = (ρ² - s²)⁴, polar quadrature
        let (c, rho) = ([-0.5, 0.5], 0.3);
        let gl = gauss_legendre(40);
        let n_theta = 128;
        let (mut form, mut norm_phi, mut norm_psi) = (0.0, 0.0, 0.0);
        for &(xi, w) in &gl {
            let r = 0.5 * rho * (xi + 1.0);
            for k in 0..n_theta {
                let th = 2.0 * PI * k as f64 / n_theta as f64;
                let d = [r * th.cos(), r * th.sin()];
                let x = [c[0] + d[0], c[1] + d[1]];
                let q = 0.5 * rho * w * (2.0 * PI / n_theta as f64) * r;
                let gp = corner_singularity_gradient(x);
                let f = -8.0 * (rho * rho - r * r).powi(3);
                let gs = [f * d[0], f * d[1]];
                form += q * (gp[0] * gs[0] + gp[1] * gs[1]);
                norm_phi += q * (gp[0] * gp[0] + gp[1] * gp[1]);
                norm_psi += q * (gs[0] * gs[0] + gs[1] * gs[1]);
            }
        }
        assert!(form.abs() / (norm_phi * norm_psi).sqrt() < 1e-8, "{form:e}");
    }

    #[test]
    fn singularity_gradient_matches_differences() {
        let e = 1e-6;
        for x in [[-0.3, 0.7], [0.4, 0.2], [-0.6, -0.2], [-0.1, -0.8]] {
            let g = corner_singularity_gradient(x);
            let dx = (corner_singularity([x[0] + e, x[1]]) - corner_singularity([x[0] - e, x[1]]))
                / (2.0 * e);
            let dy = (corner_singularity([x[0], x[1] + e]) - corner_singularity([x[0], x[1] - e]))
                / (2.0 * e);
            assert!(
                (g[0] - dx).abs() < 1e-7 && (g[1] - dy).abs() < 1e-7,
                "{x:?}"
            );
        }
    }

    #[test]
    fn lshape_forcing_vanishes_initially() {
        let p = lshape_problem(1).unwrap();
        for &x in p.hierarchy.fine.vertices() {
            assert_eq!(p.f.eval(0.0, x), 0.0);
            assert_eq!((p.u0)(x), 0.0);
        }
        p.validate().unwrap();
    }

    fn coarse_ops(p: &WaveProblem) -> SpaceOperators {
        let d = Discretization::new(&p.hierarchy, Localization::Patch(1), false).unwrap();
        d.operators(&p.hierarchy, Space::Coarse).unwrap()
    }

    #[test]
    fn initial_states_of_lshape_problem() {
        let p = lshape_problem(1).unwrap();
        let ops = coarse_ops(&p);
        let mut mass = MassSolver::new(ops.mass.clone(), 1e-12);
        let dt = 1e-2;
        let (u0, u1) = make_initial_states(&p, &ops, dt, &mut mass).unwrap();
        assert!(u0.iter().all(|&x| x == 0.0));
        assert!(u1.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn taylor_start_agrees_with_exact_start_to_third_order() {
        let p = lshape_problem(1).unwrap();
        let ops = coarse_ops(&p);
        let mut mass = MassSolver::new(ops.mass.clone(), 1e-13);
        let gap = |dt: f64, mass: &mut MassSolver| {
            let (u0, exact) = make_initial_states(&p, &ops, dt, mass).unwrap();
            let taylor = taylor_start(&p, &ops, dt, mass, &u0).unwrap();
            exact
                .iter()
                .zip(&taylor)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let (g1, g2) = (gap(2e-2, &mut mass), gap(1e-2, &mut mass));
        assert!(g1 > 0.0);
        assert!((g1 / g2 - 8.0).abs() < 0.1, "ratio {}", g1 / g2);
    }

    #[test]
    fn zero_problem_gives_zero_run() {
        let hierarchy = lshape_hierarchy(1).unwrap();
        let problem = WaveProblem {
            hierarchy,
            f: SpaceTimeField::Zero,
            g: SpaceTimeField::Zero,
            u0: Arc::new(|_| 0.0),
            v0: Arc::new(|_| 0.0),
            t_end: 0.1,
            exact: Some(ExactSolution {
                u: SpaceTimeField::Zero,
                grad: Arc::new(|_, _| [0.0, 0.0]),
                separable_grad: None,
            }),
        };
        let ops = coarse_ops(&problem);
        let run = run_wave(
            &problem,
            &ops,
            DtPolicy::Explicit(0.01),
            RunOptions::default(),
        )
        .unwrap();
        assert_eq!(run.n_steps, 10);
        assert!(run.final_state.iter().all(|&x| x == 0.0));
        assert_eq!(run.accumulated_error, 0.0);
        assert!(run.energies.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn free_oscillation_conserves_energy_in_every_space() {
        let hierarchy = lshape_hierarchy(1).unwrap();
        let d = Discretization::new(&hierarchy, Localization::Patch(2), true).unwrap();
        for space in Space::ALL {
            let ops = d.operators(&hierarchy, space).unwrap();
            let dt = 0.9 * 2f64.sqrt()
                / max_eigenvalue(&ops.a, &ops.mass.to_matrix())
                    .unwrap()
                    .sqrt();
            let problem = free_oscillation_problem(hierarchy.clone(), 1000.5 * dt);
            let run = run_wave(
                &problem,
                &ops,
                DtPolicy::Explicit(dt),
                RunOptions::default(),
            )
            .unwrap();
            assert!(run.n_steps >= 1000);
            let drift = relative_energy_drift(&run.energies);
            assert!(drift < 1e-10, "{space}: drift {drift:e}");
            assert!(run.energies[0] > 0.0);
        }
    }

    #[test]
    fn forced_runs_satisfy_energy_identity() {
        let p = lshape_problem(1).unwrap();
        let d = Discretization::new(&p.hierarchy, Localization::Patch(2), true).unwrap();
        for space in [Space::Coarse, Space::Reduced, Space::ReducedLumped] {
            let ops = d.operators(&p.hierarchy, space).unwrap();
            let run = run_wave(
                &p,
                &ops,
                DtPolicy::Cfl { safety: 1.0 },
                RunOptions::default(),
            )
            .unwrap();
            let defect = energy_identity_defect(&run);
            assert!(defect < 1e-10, "{space}: {defect:e}");
        }
    }

    #[test]
    fn lumped_mass_is_diagonal_in_reduced_runs() {
        let p = lshape_problem(1).unwrap();
        let d = Discretization::new(&p.hierarchy, Localization::Patch(2), true).unwrap();
        let ops = d.operators(&p.hierarchy, Space::ReducedLumped).unwrap();
        assert_eq!(ops.mass.nnz(), ops.n_dofs());
        assert!(
            d.operators(&p.hierarchy, Space::Reduced)
                .unwrap()
                .mass
                .nnz()
                > ops.n_dofs()
        );
    }

    #[test]
    fn reduced_run_needs_basis() {
        let h = lshape_hierarchy(1).unwrap();
        let d = Discretization::new(&h, Localization::Patch(1), false).unwrap();
        assert!(d.operators(&h, Space::Reduced).is_err());
    }

    #[test]
    fn space_names_round_trip() {
        for s in Space::ALL {
            assert_eq!(s.as_str().parse::<Space>().unwrap(), s);
        }
        assert!("medium".parse::<Space>().is_err());
    }
}
