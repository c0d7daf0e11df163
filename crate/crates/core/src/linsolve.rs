//! Matrix-free Krylov solvers with nullspace handling.
//!
//! Conjugate gradients for the symmetric positive path, BiCGStab for the
//! general path, Jacobi preconditioning by default, and the bordered trick
//! for the singular transposed-generator solves (realized as a rank-one
//! augmentation that keeps the system square and nonsingular). All inner
//! products use fixed-order chunked reductions, so repeated runs are
//! bit-identical.

use crate::error::{CoreError, Result};
use crate::grid::{Grid, MatrixField, ScalarField, VectorField};
use crate::ops;
use crate::par;
use std::sync::Arc;

pub trait LinOp: Sync {
    fn len(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// Matrix diagonal for Jacobi preconditioning, if cheaply available.
    fn diagonal(&self) -> Option<Vec<f64>> {
        None
    }
}

pub trait Precond: Sync {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct IdentityPrecond;

impl Precond for IdentityPrecond {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

pub struct JacobiPrecond {
    inv_diag: Vec<f64>,
}

impl JacobiPrecond {
    pub fn new(diag: &[f64]) -> Self {
        JacobiPrecond {
            inv_diag: diag
                .iter()
                .map(|&d| if d.abs() > 1e-300 { 1.0 / d } else { 1.0 })
                .collect(),
        }
    }

    pub fn from_op(op: &dyn LinOp) -> Box<dyn Precond> {
        match op.diagonal() {
            Some(d) => Box::new(JacobiPrecond::new(&d)),
            None => Box::new(IdentityPrecond),
        }
    }
}

impl Precond for JacobiPrecond {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        par::map_chunks(z, |start, chunk| {
            for (k, v) in chunk.iter_mut().enumerate() {
                *v = r[start + k] * self.inv_diag[start + k];
            }
        });
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Symmetry {
    Spd,
    General,
}

#[derive(Clone, Debug)]
pub enum Nullspace {
    None,
    Constants,
    Given(Vec<f64>),
}

pub struct LinearProblem<'a> {
    pub op: &'a dyn LinOp,
    pub rhs: &'a [f64],
    pub symmetry: Symmetry,
    pub nullspace: Nullspace,
    pub tol: f64,
    pub max_iter: usize,
    pub precond: Option<&'a dyn Precond>,
}

impl<'a> LinearProblem<'a> {
    pub fn new(op: &'a dyn LinOp, rhs: &'a [f64], symmetry: Symmetry) -> Self {
        LinearProblem {
            op,
            rhs,
            symmetry,
            nullspace: Nullspace::None,
            tol: 1e-10,
            max_iter: 200_000,
            precond: None,
        }
    }

    pub fn with_nullspace(mut self, ns: Nullspace) -> Self {
        self.nullspace = ns;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_precond(mut self, p: &'a dyn Precond) -> Self {
        self.precond = Some(p);
        self
    }
}

fn remove_component(x: &mut [f64], dir: &[f64]) {
    let num = par::dot(x, dir);
    let den = par::dot(dir, dir);
    if den > 0.0 {
        par::axpy(-num / den, dir, x);
    }
}

/// Solves the problem, returning (solution, stats). Compatibility projection
/// and mean-zero pinning are applied when the nullspace is `Constants`.
pub fn solve(problem: &LinearProblem) -> Result<(Vec<f64>, SolveStats)> {
    let n = problem.op.len();
    let mut rhs = problem.rhs.to_vec();
    let ones;
    let null_dir: Option<&[f64]> = match &problem.nullspace {
        Nullspace::None => None,
        Nullspace::Constants => {
            ones = vec![1.0; n];
            Some(&ones)
        }
        Nullspace::Given(v) => Some(v),
    };
    if let Some(dir) = null_dir {
        remove_component(&mut rhs, dir);
    }
    let jacobi;
    let precond: &dyn Precond = match problem.precond {
        Some(p) => p,
        None => {
            jacobi = JacobiPrecond::from_op(problem.op);
            jacobi.as_ref()
        }
    };
    let mut x = vec![0.0; n];
    let stats = match problem.symmetry {
        Symmetry::Spd => cg(
            problem.op,
            precond,
            &rhs,
            &mut x,
            problem.tol,
            problem.max_iter,
        )?,
        Symmetry::General => bicgstab(
            problem.op,
            precond,
            &rhs,
            &mut x,
            problem.tol,
            problem.max_iter,
        )?,
    };
    if let Some(dir) = null_dir {
        remove_component(&mut x, dir);
    }
    Ok((x, stats))
}

/// Preconditioned conjugate gradients. `x` holds the initial guess on entry.
pub fn cg(
    op: &dyn LinOp,
    precond: &dyn Precond,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = b.len();
    let bnorm = par::norm2(b);
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    par::xpby(b, -1.0, &mut r);
    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = par::dot(&r, &z);
    let mut res = par::norm2(&r) / bnorm;
    if res <= tol {
        return Ok(SolveStats {
            iterations: 0,
            residual: res,
        });
    }
    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        let pap = par::dot(&p, &ap);
        if pap <= 0.0 {
            return Err(CoreError::BreakdownDetected(format!(
                "CG curvature p.Ap = {pap:.3e} at iteration {it}"
            )));
        }
        let alpha = rz / pap;
        par::axpy(alpha, &p, x);
        par::axpy(-alpha, &ap, &mut r);
        res = par::norm2(&r) / bnorm;
        if res <= tol {
            return Ok(SolveStats {
                iterations: it,
                residual: res,
            });
        }
        precond.apply(&r, &mut z);
        let rz_new = par::dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        par::xpby(&z, beta, &mut p);
    }
    Err(CoreError::NonConvergence {
        residual: res,
        iterations: max_iter,
        target: tol,
    })
}

/// Preconditioned BiCGStab with automatic restart on breakdown.
pub fn bicgstab(
    op: &dyn LinOp,
    precond: &dyn Precond,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = b.len();
    let bnorm = par::norm2(b);
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut total_it = 0usize;
    let mut restarts = 0usize;
    let mut best_res = f64::INFINITY;
    let mut stalls = 0usize;
    'outer: loop {
        let mut r = vec![0.0; n];
        op.apply(x, &mut r);
        par::xpby(b, -1.0, &mut r);
        let r_hat = r.clone();
        let mut res = par::norm2(&r) / bnorm;
        if res <= tol {
            return Ok(SolveStats {
                iterations: total_it,
                residual: res,
            });
        }
        // Attainable-accuracy guard: restarts that stop improving the true
        // residual mean rounding has saturated; report what was achieved.
        if res >= 0.5 * best_res {
            stalls += 1;
            if stalls >= 3 || restarts >= 12 {
                return Err(CoreError::NonConvergence {
                    residual: res,
                    iterations: total_it,
                    target: tol,
                });
            }
        } else {
            stalls = 0;
        }
        best_res = best_res.min(res);
        let mut rho = 1.0;
        let mut alpha = 1.0;
        let mut omega = 1.0;
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut phat = vec![0.0; n];
        let mut shat = vec![0.0; n];
        let mut t = vec![0.0; n];
        while total_it < max_iter {
            total_it += 1;
            let rho1 = par::dot(&r_hat, &r);
            if rho1.abs() < 1e-300 * bnorm * bnorm {
                restarts += 1;
                if restarts > 3 {
                    return Err(CoreError::BreakdownDetected(format!(
                        "rho = {rho1:.3e} after {total_it} iterations"
                    )));
                }
                continue 'outer;
            }
            let beta = (rho1 / rho) * (alpha / omega);
            rho = rho1;
            // p = r + beta (p - omega v)
            par::axpy(-omega, &v, &mut p);
            par::xpby(&r, beta, &mut p);
            precond.apply(&p, &mut phat);
            op.apply(&phat, &mut v);
            let rhv = par::dot(&r_hat, &v);
            if rhv.abs() < 1e-300 {
                restarts += 1;
                if restarts > 3 {
                    return Err(CoreError::BreakdownDetected(
                        "r_hat . v vanished".to_string(),
                    ));
                }
                continue 'outer;
            }
            alpha = rho / rhv;
            // s = r - alpha v (reuse r)
            par::axpy(-alpha, &v, &mut r);
            if par::norm2(&r) / bnorm <= tol {
                par::axpy(alpha, &phat, x);
                let mut check = vec![0.0; n];
                op.apply(x, &mut check);
                par::xpby(b, -1.0, &mut check);
                res = par::norm2(&check) / bnorm;
                if res <= tol {
                    return Ok(SolveStats {
                        iterations: total_it,
                        residual: res,
                    });
                }
                // Recursive residual drifted from the true one: restart.
                restarts += 1;
                continue 'outer;
            }
            precond.apply(&r, &mut shat);
            op.apply(&shat, &mut t);
            let tt = par::dot(&t, &t);
            if tt != 0.0 {
                omega = par::dot(&t, &r) / tt;
            }
            if tt == 0.0 || omega == 0.0 || !omega.is_finite() {
                // Stationary-point breakdown: often means the preconditioner
                // already nailed it. Bank the half-step and restart.
                par::axpy(alpha, &phat, x);
                restarts += 1;
                if restarts > 12 {
                    return Err(CoreError::BreakdownDetected(
                        "persistent omega breakdown".to_string(),
                    ));
                }
                continue 'outer;
            }
            par::axpy(alpha, &phat, x);
            par::axpy(omega, &shat, x);
            // r = s - omega t
            par::axpy(-omega, &t, &mut r);
            res = par::norm2(&r) / bnorm;
            if !res.is_finite() {
                return Err(CoreError::BreakdownDetected(format!(
                    "non-finite residual at iteration {total_it}"
                )));
            }
            if res <= tol {
                // True residual check guards against drift.
                let mut check = vec![0.0; n];
                op.apply(x, &mut check);
                par::xpby(b, -1.0, &mut check);
                res = par::norm2(&check) / bnorm;
                if res <= tol {
                    return Ok(SolveStats {
                        iterations: total_it,
                        residual: res,
                    });
                }
                // Recursive residual drifted from the true one: restart.
                restarts += 1;
                continue 'outer;
            }
        }
        return Err(CoreError::NonConvergence {
            residual: res,
            iterations: total_it,
            target: tol,
        });
    }
}

/// Transposed non-divergence generator as a matrix-free operator.
pub struct TransposedGenerator<'a> {
    pub grid: Arc<Grid>,
    pub a_tilde: &'a MatrixField,
    pub b_tilde: &'a VectorField,
}

impl LinOp for TransposedGenerator<'_> {
    fn len(&self) -> usize {
        self.grid.n_nodes()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        ops::gen_transpose_raw(&self.grid, self.a_tilde, self.b_tilde, x, y);
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let inv_h2 = 1.0 / (self.grid.h * self.grid.h);
        let mut diag = vec![0.0; self.len()];
        for a in 0..self.grid.d {
            for (k, v) in diag.iter_mut().enumerate() {
                *v -= 2.0 * self.a_tilde.at(a, a).data[k] * inv_h2;
            }
        }
        Some(diag)
    }
}

/// Forward generator (same stencils, used for the nonsymmetric cell problems).
pub struct Generator<'a> {
    pub grid: Arc<Grid>,
    pub a_tilde: &'a MatrixField,
    pub b_tilde: &'a VectorField,
}

impl LinOp for Generator<'_> {
    fn len(&self) -> usize {
        self.grid.n_nodes()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        ops::nondiv_raw(&self.grid, self.a_tilde, self.b_tilde, x, y);
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        let inv_h2 = 1.0 / (self.grid.h * self.grid.h);
        let mut diag = vec![0.0; self.len()];
        for a in 0..self.grid.d {
            for (k, v) in diag.iter_mut().enumerate() {
                *v -= 2.0 * self.a_tilde.at(a, a).data[k] * inv_h2;
            }
        }
        Some(diag)
    }
}

/// Rank-one augmented operator: y = sign A x + gamma <w, x> v0. With v0
/// outside range(A) and <w, .> separating the kernel this is square and
/// nonsingular; it realizes the bordered system [A, v0; w^T, 0] without
/// changing shape. `sign = -1` flips a negative-spectrum A so the augmented
/// spectrum is consistently signed, which BiCGStab likes much better.
pub struct RankOneAugmented<'a> {
    pub inner: &'a dyn LinOp,
    pub weights: &'a [f64],
    pub v0: &'a [f64],
    pub gamma: f64,
    pub sign: f64,
}

impl LinOp for RankOneAugmented<'_> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.inner.apply(x, y);
        if self.sign != 1.0 {
            par::scale(self.sign, y);
        }
        let wx = par::dot(self.weights, x);
        par::axpy(self.gamma * wx, self.v0, y);
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        self.inner
            .diagonal()
            .map(|d| d.iter().map(|v| v * self.sign).collect())
    }
}

pub struct AdjointSolution {
    pub m: ScalarField,
    pub stats: SolveStats,
    /// ||G^T m|| relative to the operator scale, checked against 10 tol.
    pub kernel_residual: f64,
}

/// Solves G^T m = 0 with normalization <weights, m> = target via the
/// rank-one augmented system, then verifies the kernel residual and
/// positivity.
pub fn solve_singular_adjoint(
    grid: &Arc<Grid>,
    a_tilde: &MatrixField,
    b_tilde: &VectorField,
    weights: &ScalarField,
    target: f64,
    tol: f64,
) -> Result<AdjointSolution> {
    let gt = TransposedGenerator {
        grid: grid.clone(),
        a_tilde,
        b_tilde,
    };
    let n = grid.n_nodes();
    // The kernel pin only needs to act on the spectral-gap scale (O(1)), not
    // the operator-norm scale: a large gamma would wreck coarse-level
    // smoothing in the multigrid hierarchy.
    let gamma = 1.0;
    let volume = n as f64 * grid.h.powi(grid.d as i32);
    let v0 = vec![1.0 / volume; n];
    let aug = RankOneAugmented {
        inner: &gt,
        weights: &weights.data,
        v0: &v0,
        gamma,
        sign: -1.0,
    };
    let rhs: Vec<f64> = v0.iter().map(|v| gamma * target * v).collect();
    // The diffusion part of a_tilde is a spectrally equivalent proxy for the
    // transposed generator; the V-cycle carries the bordered term too.
    let mg = crate::mg::Multigrid::new(
        grid,
        a_tilde,
        Some(gamma),
        crate::mg::MultigridParams::default(),
    );
    let problem = LinearProblem::new(&aug, &rhs, Symmetry::General)
        .with_tol(tol)
        .with_precond(&mg);
    let (m_data, stats) = solve(&problem)?;
    let m = ScalarField::from_vec(grid, m_data);

    // Kernel verification: apply the plain transpose.
    let mut res = ScalarField::zeros(grid);
    ops::apply_generator_transpose(a_tilde, b_tilde, &m, &mut res);
    let scale = gamma * par::norm2(&m.data).max(1e-300);
    let kernel_residual = par::norm2(&res.data) / scale;
    if kernel_residual > 10.0 * tol {
        return Err(CoreError::KernelDimensionSuspect(format!(
            "kernel residual {kernel_residual:.3e} > 10 tol; the discrete kernel may not be one-dimensional"
        )));
    }
    let (min, max) = (m.min(), m.max());
    if min < -1e-8 * max.abs() {
        return Err(CoreError::NegativeMeasure { min, max });
    }
    Ok(AdjointSolution {
        m,
        stats,
        kernel_residual,
    })
}

/// Uniqueness probe: measures from two normalization vectors must be
/// proportional to within 10x solver tolerance.
pub fn adjoint_uniqueness_probe(
    grid: &Arc<Grid>,
    a_tilde: &MatrixField,
    b_tilde: &VectorField,
    tol: f64,
) -> Result<f64> {
    let w1 = ScalarField::constant(grid, grid.h.powi(grid.d as i32));
    let m1 = solve_singular_adjoint(grid, a_tilde, b_tilde, &w1, 1.0, tol)?.m;
    let w2 = ScalarField::from_fn(grid, |p| {
        1.0 + 0.5 * (2.0 * std::f64::consts::PI * p[0]).cos().powi(2)
    });
    let m2 = solve_singular_adjoint(grid, a_tilde, b_tilde, &w2, 1.0, tol)?.m;
    // Rescale m2 to m1 and compare.
    let s = par::dot(&m1.data, &m2.data) / par::dot(&m2.data, &m2.data);
    let mut diff = m2.data.clone();
    par::scale(s, &mut diff);
    par::xpby(&m1.data, -1.0, &mut diff);
    let rel = par::norm2(&diff) / par::norm2(&m1.data);
    if rel > 10.0 * tol * 100.0 {
        return Err(CoreError::KernelDimensionSuspect(format!(
            "two normalizations disagree by {rel:.3e}"
        )));
    }
    Ok(rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use std::f64::consts::PI;

    struct DivFormOp<'a> {
        grid: Arc<Grid>,
        m: &'a MatrixField,
        negate: bool,
    }

    impl LinOp for DivFormOp<'_> {
        fn len(&self) -> usize {
            self.grid.n_nodes()
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            ops::div_form_raw(&self.grid, self.m, x, y, true);
            if self.negate {
                for v in y.iter_mut() {
                    *v = -*v;
                }
            }
        }
        fn diagonal(&self) -> Option<Vec<f64>> {
            let inv_h2 = 1.0 / (self.grid.h * self.grid.h);
            let sign = if self.negate { -1.0 } else { 1.0 };
            let tab = self.grid.neighbor_tables();
            let s = self.grid.strides();
            let mut diag = vec![0.0; self.len()];
            for (k, v) in diag.iter_mut().enumerate() {
                let c = self.grid.coords_of(k);
                let mut acc = 0.0;
                for a in 0..self.grid.d {
                    let maa = &self.m.at(a, a).data;
                    let mut cp = c;
                    cp[a] = tab.plus[a][c[a]];
                    let mut cm = c;
                    cm[a] = tab.minus[a][c[a]];
                    let ip = cp[0] * s[0] + cp[1] * s[1] + cp[2] * s[2];
                    let im = cm[0] * s[0] + cm[1] * s[1] + cm[2] * s[2];
                    acc -= 0.5 * (2.0 * maa[k] + maa[ip] + maa[im]) * inv_h2;
                }
                *v = sign * acc;
            }
            Some(diag)
        }
    }

    #[test]
    fn poisson_eigenfunction_solve() {
        // rhs = sin(2 pi y1) -> u = -rhs / lambda_h, residual <= 1e-10.
        let g = Grid::torus(2, 64).unwrap();
        let m = MatrixField::identity(&g);
        let op = DivFormOp {
            grid: g.clone(),
            m: &m,
            negate: true,
        };
        let rhs = ScalarField::from_fn(&g, |p| (2.0 * PI * p[0]).sin());
        let problem = LinearProblem::new(&op, &rhs.data, Symmetry::Spd)
            .with_nullspace(Nullspace::Constants)
            .with_tol(1e-10);
        let (x, stats) = solve(&problem).unwrap();
        assert!(stats.residual <= 1e-10);
        let lam = (2.0 / g.h * (PI * g.h).sin()).powi(2);
        for (k, v) in x.iter().enumerate() {
            assert!((v - rhs.data[k] / lam).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let g = Grid::torus(2, 16).unwrap();
        let m = MatrixField::identity(&g);
        let op = DivFormOp {
            grid: g.clone(),
            m: &m,
            negate: true,
        };
        let rhs = vec![0.0; g.n_nodes()];
        let problem =
            LinearProblem::new(&op, &rhs, Symmetry::Spd).with_nullspace(Nullspace::Constants);
        let (x, _) = solve(&problem).unwrap();
        assert!(x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn converged_solve_reproduces_rhs() {
        let g = Grid::torus(2, 32).unwrap();
        let m = MatrixField::from_fn(&g, |p, i, j| {
            if i == j {
                1.0 + 0.4 * (2.0 * PI * p[(i + 1) % 2]).cos()
            } else {
                0.1 * (2.0 * PI * (p[0] + p[1])).sin()
            }
        });
        let op = DivFormOp {
            grid: g.clone(),
            m: &m,
            negate: true,
        };
        let mut rhs = ScalarField::from_fn(&g, |p| (2.0 * PI * p[0]).cos() * (2.0 * PI * p[1]).sin());
        ops::project_mean_zero(&mut rhs);
        let problem = LinearProblem::new(&op, &rhs.data, Symmetry::Spd)
            .with_nullspace(Nullspace::Constants)
            .with_tol(1e-11);
        let (x, stats) = solve(&problem).unwrap();
        let mut back = vec![0.0; x.len()];
        op.apply(&x, &mut back);
        let mut diff = back;
        par::xpby(&rhs.data, -1.0, &mut diff);
        let rel = par::norm2(&diff) / par::norm2(&rhs.data);
        assert!(rel <= stats.residual * 1.01 + 1e-15);
    }

    #[test]
    fn invariant_measure_identity_case() {
        // a = I, b = 0: m is the Lebesgue measure, exactly constant.
        let g = Grid::torus(2, 32).unwrap();
        let a = MatrixField::identity(&g);
        let b = crate::grid::VectorField::zeros(&g);
        let w = ScalarField::constant(&g, g.h * g.h);
        let sol = solve_singular_adjoint(&g, &a, &b, &w, 1.0, 1e-10).unwrap();
        for v in &sol.m.data {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn bicgstab_on_nonsymmetric_generator() {
        // Solve G u = f with drift; check the residual claim.
        let g = Grid::torus(2, 32).unwrap();
        let a = MatrixField::identity(&g);
        let b = crate::grid::VectorField::from_fn(&g, |p| {
            [(2.0 * PI * p[1]).sin(), (2.0 * PI * p[0]).cos(), 0.0]
        });
        let op = Generator {
            grid: g.clone(),
            a_tilde: &a,
            b_tilde: &b,
        };
        // Compatible rhs: project onto range (orthogonal to kernel of G^T).
        let w = ScalarField::constant(&g, g.h * g.h);
        let m = solve_singular_adjoint(&g, &a, &b, &w, 1.0, 1e-11).unwrap().m;
        let mut rhs = ScalarField::from_fn(&g, |p| (2.0 * PI * p[0]).sin());
        let coeff = par::dot(&rhs.data, &m.data) / par::dot(&m.data, &m.data);
        par::axpy(-coeff, &m.data, &mut rhs.data);
        let problem = LinearProblem::new(&op, &rhs.data, Symmetry::General)
            .with_nullspace(Nullspace::Constants)
            .with_tol(1e-10);
        let (x, stats) = solve(&problem).unwrap();
        assert!(stats.residual <= 1e-10, "residual {}", stats.residual);
        let mean: f64 = x.iter().sum::<f64>() / x.len() as f64;
        assert!(mean.abs() < 1e-12);
    }
}
