//! Krylov solvers and eigenvalue routines for stiffness/mass pencils.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::{axpy, dot, norm2, SparseMatrix};

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub converged: bool,
}

impl SolveReport {
    /// Turns a non-converged report into an error.
    pub fn check(self, solver: &'static str) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NoConvergence {
                solver,
                iterations: self.iterations,
                residual: self.final_relative_residual,
            })
        }
    }
}

/// Preconditioned conjugate gradients for an SPD operator given as a closure.
/// `precond(r, z)` writes `z = P⁻¹ r`. Starts from `x` as supplied.
pub fn pcg_operator(
    n: usize,
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    maxit: usize,
) -> SolveReport {
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return SolveReport {
            iterations: 0,
            final_relative_residual: 0.0,
            converged: true,
        };
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut rel = norm2(&r) / bnorm;
    if rel <= tol {
        return SolveReport {
            iterations: 0,
            final_relative_residual: rel,
            converged: true,
        };
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=maxit {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return SolveReport {
                iterations: it,
                final_relative_residual: rel,
                converged: false,
            };
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        rel = norm2(&r) / bnorm;
        if rel <= tol {
            return SolveReport {
                iterations: it,
                final_relative_residual: rel,
                converged: true,
            };
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    SolveReport {
        iterations: maxit,
        final_relative_residual: rel,
        converged: false,
    }
}

/// Unpreconditioned CG from a zero initial guess.
pub fn cg(a: &SparseMatrix, b: &[f64], tol: f64, maxit: usize) -> (Vec<f64>, SolveReport) {
    let mut x = vec![0.0; b.len()];
    let rep = pcg_operator(
        b.len(),
        |v, out| a.matvec_into(v, out),
        |r, z| z.copy_from_slice(r),
        b,
        &mut x,
        tol,
        maxit,
    );
    (x, rep)
}

/// CG preconditioned by `diag(M)⁻¹`, from a zero initial guess.
pub fn pcg_diag(m: &SparseMatrix, b: &[f64], tol: f64, maxit: usize) -> (Vec<f64>, SolveReport) {
    let mut x = vec![0.0; b.len()];
    let rep = pcg_diag_from(m, &inverse_diagonal(m), b, &mut x, tol, maxit);
    (x, rep)
}

/// Jacobi-preconditioned CG with a precomputed inverse diagonal and a warm start.
pub fn pcg_diag_from(
    m: &SparseMatrix,
    inv_diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    maxit: usize,
) -> SolveReport {
    pcg_operator(
        b.len(),
        |v, out| m.matvec_into(v, out),
        |r, z| {
            for ((zi, ri), di) in z.iter_mut().zip(r).zip(inv_diag) {
                *zi = ri * di;
            }
        },
        b,
        x,
        tol,
        maxit,
    )
}

pub fn inverse_diagonal(m: &SparseMatrix) -> Vec<f64> {
    m.diagonal()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect()
}

/// Settings for [`power_iteration`].
#[derive(Debug, Clone, Copy)]
pub struct PowerOptions {
    /// Relative change of successive Rayleigh quotients at which to stop.
    pub tol: f64,
    pub max_iterations: usize,
    /// Seed for the perturbation added to the all-ones start vector.
    pub seed: u64,
    /// Relative size of that perturbation.
    pub perturbation: f64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iterations: 200_000,
            seed: 0x5eed,
            perturbation: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PowerReport {
    pub lambda: f64,
    pub iterations: usize,
    /// Rayleigh quotient after each iteration.
    pub history: Vec<f64>,
}

/// Largest eigenvalue of `A x = λ M x` by power iteration on `M⁻¹A`.
pub fn max_generalized_eig(a: &SparseMatrix, m: &SparseMatrix, tol: f64) -> Result<f64> {
    Ok(power_iteration(
        a,
        m,
        PowerOptions {
            tol,
            ..Default::default()
        },
    )?
    .lambda)
}

/// Power iteration on `M⁻¹A` with inner Jacobi-PCG mass solves at `tol/100`.
///
/// The start vector is all-ones plus a small seeded perturbation: symmetric
/// meshes make the plain all-ones vector orthogonal to whole eigenspaces.
pub fn power_iteration(
    a: &SparseMatrix,
    m: &SparseMatrix,
    opts: PowerOptions,
) -> Result<PowerReport> {
    let n = a.n_rows();
    if n == 0 || m.n_rows() != n {
        return Err(Error::InvalidArgument(format!(
            "pencil dimensions {}x{} and {}x{}",
            a.n_rows(),
            a.n_cols(),
            m.n_rows(),
            m.n_cols()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<f64> = (0..n)
        .map(|_| 1.0 + opts.perturbation * rng.gen_range(-1.0..1.0))
        .collect();
    let inv_diag = inverse_diagonal(m);
    let inner_tol = (opts.tol / 100.0).max(1e-14);
    let maxit_inner = 10 * n + 100;
    let mut mx = m.matvec(&x);
    let scale = dot(&x, &mx).sqrt();
    x.iter_mut().for_each(|v| *v /= scale);
    let mut ax = a.matvec(&x);
    let mut lambda = dot(&x, &ax);
    let mut history = vec![lambda];
    let mut y = vec![0.0; n];
    for it in 1..=opts.max_iterations {
        // y = M⁻¹ A x, warm-started from λ x
        y.iter_mut().zip(&x).for_each(|(yi, xi)| *yi = lambda * xi);
        pcg_diag_from(m, &inv_diag, &ax, &mut y, inner_tol, maxit_inner)
            .check("power iteration mass solve")?;
        m.matvec_into(&y, &mut mx);
        let norm = dot(&y, &mx).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::NoConvergence {
                solver: "power iteration",
                iterations: it,
                residual: f64::NAN,
            });
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / norm;
        }
        a.matvec_into(&x, &mut ax);
        let next = dot(&x, &ax);
        history.push(next);
        let change = (next - lambda).abs() / next.abs().max(f64::MIN_POSITIVE);
        lambda = next;
        if change < opts.tol {
            return Ok(PowerReport {
                lambda,
                iterations: it,
                history,
            });
        }
    }
    let k = history.len();
    Err(Error::NoConvergence {
        solver: "power iteration",
        iterations: opts.max_iterations,
        residual: (history[k - 1] - history[k - 2]).abs() / history[k - 1].abs(),
    })
}

/// Largest dimension accepted by [`full_spectrum`].
pub const DENSE_CAP: usize = 2500;

/// All eigenvalues of `A x = λ M x` in ascending order, via `M = LLᵀ` and a
/// cyclic Jacobi sweep on `L⁻¹AL⁻ᵀ`.
pub fn full_spectrum(a: &SparseMatrix, m: &SparseMatrix) -> Result<Vec<f64>> {
    let n = a.n_rows();
    if n > DENSE_CAP {
        return Err(Error::DenseCapExceeded {
            dim: n,
            cap: DENSE_CAP,
        });
    }
    if m.n_rows() != n || a.n_cols() != n || m.n_cols() != n {
        return Err(Error::InvalidArgument(
            "pencil matrices must be square and equally sized".into(),
        ));
    }
    let l = cholesky(&to_dense_flat(m), n)?;
    let mut c = to_dense_flat(a);
    // C ← L⁻¹ C (forward substitution on columns), then C ← C L⁻ᵀ
    for j in 0..n {
        for i in 0..n {
            let mut s = c[i * n + j];
            for k in 0..i {
                s -= l[i * n + k] * c[k * n + j];
            }
            c[i * n + j] = s / l[i * n + i];
        }
    }
    for i in 0..n {
        for j in 0..n {
            let mut s = c[i * n + j];
            for k in 0..j {
                s -= c[i * n + k] * l[j * n + k];
            }
            c[i * n + j] = s / l[j * n + j];
        }
    }
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (c[i * n + j] + c[j * n + i]);
            c[i * n + j] = s;
            c[j * n + i] = s;
        }
    }
    let mut ev = jacobi_eigenvalues(c, n)?;
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

fn to_dense_flat(a: &SparseMatrix) -> Vec<f64> {
    let n = a.n_cols();
    let mut d = vec![0.0; a.n_rows() * n];
    for i in 0..a.n_rows() {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            d[i * n + j] = v;
        }
    }
    d
}

/// Lower Cholesky factor of a dense row-major SPD matrix.
fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "mass matrix not positive definite (pivot {j})"
            )));
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Ok(l)
}

/// Eigenvalues of a dense symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues(mut a: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    const MAX_SWEEPS: usize = 100;
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off.sqrt() <= 1e-15 * frob {
            return Ok((0..n).map(|i| a[i * n + i]).collect());
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    Err(Error::NoConvergence {
        solver: "Jacobi eigensolver",
        iterations: MAX_SWEEPS,
        residual: f64::NAN,
    })
}
