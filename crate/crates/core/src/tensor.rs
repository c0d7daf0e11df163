//! Constant effective tensors, the interface transmission vector, and the
//! piecewise-linear basis adapted to the interface.

use crate::error::{CoreError, Result};
use crate::grid::MAX_DIM;
use serde::{Deserialize, Serialize};

/// Small dense d x d matrix (d <= 3).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallMat {
    pub d: usize,
    pub a: [[f64; MAX_DIM]; MAX_DIM],
}

impl SmallMat {
    pub fn zeros(d: usize) -> Self {
        SmallMat {
            d,
            a: [[0.0; MAX_DIM]; MAX_DIM],
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.a[i][i] = 1.0;
        }
        m
    }

    pub fn from_rows(d: usize, rows: &[Vec<f64>]) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                m.a[i][j] = rows[i][j];
            }
        }
        m
    }

    pub fn scale(&self, c: f64) -> SmallMat {
        let mut out = *self;
        for i in 0..self.d {
            for j in 0..self.d {
                out.a[i][j] *= c;
            }
        }
        out
    }

    pub fn transpose(&self) -> SmallMat {
        let mut out = Self::zeros(self.d);
        for i in 0..self.d {
            for j in 0..self.d {
                out.a[i][j] = self.a[j][i];
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64; MAX_DIM]) -> [f64; MAX_DIM] {
        let mut y = [0.0; MAX_DIM];
        for i in 0..self.d {
            for j in 0..self.d {
                y[i] += self.a[i][j] * x[j];
            }
        }
        y
    }

    pub fn quad(&self, x: &[f64; MAX_DIM]) -> f64 {
        let y = self.matvec(x);
        (0..self.d).map(|i| x[i] * y[i]).sum()
    }

    pub fn frobenius(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.d {
            for j in 0..self.d {
                s += self.a[i][j] * self.a[i][j];
            }
        }
        s.sqrt()
    }

    pub fn sub(&self, other: &SmallMat) -> SmallMat {
        let mut out = *self;
        for i in 0..self.d {
            for j in 0..self.d {
                out.a[i][j] -= other.a[i][j];
            }
        }
        out
    }

    pub fn rel_diff(&self, other: &SmallMat) -> f64 {
        self.sub(other).frobenius() / other.frobenius().max(1e-300)
    }

    pub fn asymmetry(&self) -> f64 {
        self.sub(&self.transpose()).frobenius() / self.frobenius().max(1e-300)
    }

    /// Minimum of xi . A xi over `trials` seeded random unit vectors.
    pub fn min_quad_random(&self, trials: usize, seed: u64) -> f64 {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::INFINITY;
        for _ in 0..trials {
            let mut xi = [0.0; MAX_DIM];
            let mut norm = 0.0;
            for x in xi.iter_mut().take(self.d) {
                *x = rng.random::<f64>() - 0.5;
                norm += *x * *x;
            }
            let norm = norm.sqrt().max(1e-12);
            for x in xi.iter_mut().take(self.d) {
                *x /= norm;
            }
            worst = worst.min(self.quad(&xi));
        }
        worst
    }
}

/// Whether the transmission vector is computed from the q-weighted
/// matrices that appear in the piecewise effective operator (default) or
/// from the unweighted one-sided tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ThetaWeighting {
    #[default]
    Weighted,
    Unweighted,
}

/// theta_j = ((A_-)_{1j} - (A_+)_{1j}) / (A_+)_{11} for the given pair.
pub fn transmission_vector(a_plus: &SmallMat, a_minus: &SmallMat) -> Result<[f64; MAX_DIM]> {
    let a11 = a_plus.a[0][0];
    if a11 <= 0.0 {
        return Err(CoreError::Family(format!(
            "(A_+)_11 = {a11:.3e} <= 0: ellipticity violated upstream"
        )));
    }
    let mut theta = [0.0; MAX_DIM];
    for (j, t) in theta.iter_mut().enumerate().take(a_plus.d) {
        *t = (a_minus.a[0][j] - a_plus.a[0][j]) / a11;
    }
    Ok(theta)
}

/// The interface-adapted piecewise-linear functions P_j and their gradients.
#[derive(Clone, Debug)]
pub struct PiecewiseLinearBasis {
    pub d: usize,
    pub theta: [f64; MAX_DIM],
}

impl PiecewiseLinearBasis {
    pub fn new(d: usize, theta: [f64; MAX_DIM]) -> Result<Self> {
        if 1.0 + theta[0] <= 0.0 {
            return Err(CoreError::Family(format!(
                "1 + theta_1 = {:.3e} <= 0",
                1.0 + theta[0]
            )));
        }
        Ok(PiecewiseLinearBasis { d, theta })
    }

    /// P_j(x) = x_j (x1 < 0), x_j + theta_j x1 (x1 > 0); continuous at 0.
    pub fn eval(&self, j: usize, x: &[f64; MAX_DIM]) -> f64 {
        if x[0] > 0.0 {
            x[j] + self.theta[j] * x[0]
        } else {
            x[j]
        }
    }

    /// grad P as a matrix (rows = j, columns = partials) on one side.
    pub fn grad_p(&self, plus_side: bool) -> SmallMat {
        let mut g = SmallMat::identity(self.d);
        if plus_side {
            for j in 0..self.d {
                g.a[j][0] += self.theta[j];
            }
        }
        g
    }

    /// Jacobian of the map P (columns j): nabla P = I + e1 (x) theta on the
    /// plus side (entry (k, j) = d_k P_j).
    pub fn jacobian(&self, plus_side: bool) -> SmallMat {
        self.grad_p(plus_side).transpose()
    }

    /// (nabla P)^{-1} = I - e1 (x) theta / (1 + theta_1) on the plus side.
    pub fn jacobian_inv(&self, plus_side: bool) -> SmallMat {
        let mut g = SmallMat::identity(self.d);
        if plus_side {
            for j in 0..self.d {
                g.a[0][j] -= self.theta[j] / (1.0 + self.theta[0]);
            }
        }
        g
    }

    /// Normal-flux jump of A(x) grad P_j across the interface:
    /// |(A_+ . gradP_j^+ - A_- . gradP_j^-) . e1|; zero for the matrices the
    /// transmission vector was computed from.
    pub fn flux_jump(&self, j: usize, a_plus: &SmallMat, a_minus: &SmallMat) -> f64 {
        let mut gp = [0.0; MAX_DIM];
        gp[j] = 1.0;
        let mut gp_plus = gp;
        gp_plus[0] += self.theta[j];
        let fp = a_plus.matvec(&gp_plus);
        let fm = a_minus.matvec(&gp);
        (fp[0] - fm[0]).abs()
    }
}

/// The full effective data of an interface problem.
#[derive(Clone, Debug, Serialize)]
pub struct EffectiveTensors {
    pub d: usize,
    pub a_hat_plus: SmallMat,
    pub a_hat_minus: SmallMat,
    pub q_plus: f64,
    pub q_minus: f64,
    pub theta: [f64; MAX_DIM],
    pub theta_weighting: ThetaWeighting,
    /// Relative gap between the non-divergence and divergence routes.
    pub route_gap_plus: f64,
    pub route_gap_minus: f64,
}

impl EffectiveTensors {
    /// The piecewise map x -> A(x) = q A_hat on each side.
    pub fn a_of_side(&self, plus: bool) -> SmallMat {
        if plus {
            self.a_hat_plus.scale(self.q_plus)
        } else {
            self.a_hat_minus.scale(self.q_minus)
        }
    }

    pub fn basis(&self) -> Result<PiecewiseLinearBasis> {
        PiecewiseLinearBasis::new(self.d, self.theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_examples() {
        // A_+ = A_- -> theta = 0.
        let i2 = SmallMat::identity(2);
        let t = transmission_vector(&i2, &i2).unwrap();
        assert_eq!(t[0], 0.0);
        assert_eq!(t[1], 0.0);
        // A_- = 2I, A_+ = I -> theta = (1, 0).
        let t = transmission_vector(&i2, &i2.scale(2.0)).unwrap();
        assert!((t[0] - 1.0).abs() < 1e-15 && t[1].abs() < 1e-15);
        // A_+ = I, (A_-)_{12} = 0.3 -> theta_2 = 0.3.
        let mut am = SmallMat::identity(2);
        am.a[0][1] = 0.3;
        let t = transmission_vector(&i2, &am).unwrap();
        assert!(t[0].abs() < 1e-15 && (t[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn flux_continuity_of_basis() {
        let mut ap = SmallMat::identity(2);
        ap.a[0][1] = 0.2;
        ap.a[1][0] = 0.2;
        ap = ap.scale(1.3);
        let mut am = SmallMat::identity(2);
        am.a[0][1] = -0.1;
        am.a[1][0] = -0.1;
        am = am.scale(0.8);
        let theta = transmission_vector(&ap, &am).unwrap();
        let basis = PiecewiseLinearBasis::new(2, theta).unwrap();
        for j in 0..2 {
            assert!(
                basis.flux_jump(j, &ap, &am) < 1e-13,
                "flux jump for P_{j}"
            );
        }
        // Continuity of P itself across the interface.
        for j in 0..2 {
            let xp = [1e-14, 0.37, 0.0];
            let xm = [-1e-14, 0.37, 0.0];
            assert!((basis.eval(j, &xp) - basis.eval(j, &xm)).abs() < 1e-12);
        }
        // Jacobian inverse really inverts.
        let jac = basis.jacobian(true);
        let inv = basis.jacobian_inv(true);
        let mut prod = SmallMat::zeros(2);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    prod.a[i][j] += inv.a[i][k] * jac.a[k][j];
                }
            }
        }
        assert!(prod.rel_diff(&SmallMat::identity(2)) < 1e-14);
    }

    #[test]
    fn theta_zero_iff_first_rows_match() {
        let mut ap = SmallMat::identity(3);
        ap.a[0][2] = 0.4;
        let mut am = ap;
        let t = transmission_vector(&ap, &am).unwrap();
        assert!(t.iter().all(|v| v.abs() < 1e-15));
        am.a[0][2] = 0.5;
        let t = transmission_vector(&ap, &am).unwrap();
        assert!(t[2].abs() > 0.09);
        ap.a[2][2] = 9.0; // rows other than the first do not matter
        let t = transmission_vector(&ap, &am).unwrap();
        assert!((t[2] - 0.1).abs() < 1e-15);
    }
}
