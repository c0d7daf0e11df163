//! Periodic cubic interpolation of cell-problem outputs.
//!
//! Four-point Lagrange interpolation per axis (tensor product), exact on
//! cubics, O(h^4) on smooth fields. Sources can sit on node, edge or
//! plaquette lattices (half-step offsets). Cylinder fields are wrapped into
//! piecewise evaluators that use the solved interior and the q-weighted
//! periodic plateau fields outside a switch radius.

use crate::grid::{AxialBc, Grid, ScalarField, MAX_DIM};
use crate::mac::{EdgeField, PlaqField};

/// Cubic interpolant of a field on a fully periodic uniform lattice.
#[derive(Clone, Debug)]
pub struct PeriodicInterp {
    d: usize,
    dims: [usize; MAX_DIM],
    h: f64,
    /// Physical period per axis.
    period: [f64; MAX_DIM],
    /// Coordinate of lattice site 0 per axis (includes half-step offsets).
    base: [f64; MAX_DIM],
    data: Vec<f64>,
}

impl PeriodicInterp {
    fn new(
        grid: &Grid,
        dims: [usize; MAX_DIM],
        offsets: [f64; MAX_DIM],
        data: Vec<f64>,
    ) -> Self {
        assert_eq!(grid.axial_bc, AxialBc::Periodic, "interpolation sources are periodic");
        let mut period = [1.0; MAX_DIM];
        period[0] = grid.dims[0] as f64 * grid.h;
        for a in 1..grid.d {
            period[a] = grid.dims[a] as f64 * grid.h;
        }
        let mut base = [0.0; MAX_DIM];
        base[0] = grid.origin + offsets[0];
        for a in 1..grid.d {
            base[a] = offsets[a];
        }
        PeriodicInterp {
            d: grid.d,
            dims,
            h: grid.h,
            period,
            base,
            data,
        }
    }

    pub fn from_scalar(f: &ScalarField) -> Self {
        Self::new(&f.grid, f.grid.dims, [0.0; MAX_DIM], f.data.clone())
    }

    pub fn from_edge(f: &EdgeField) -> Self {
        let mut off = [0.0; MAX_DIM];
        off[f.axis] = 0.5 * f.grid.h;
        Self::new(&f.grid, f.dims, off, f.data.clone())
    }

    pub fn from_plaq(f: &PlaqField) -> Self {
        let mut off = [0.0; MAX_DIM];
        off[f.axes.0] = 0.5 * f.grid.h;
        off[f.axes.1] = 0.5 * f.grid.h;
        Self::new(&f.grid, f.dims, off, f.data.clone())
    }

    #[inline]
    fn axis_setup(&self, a: usize, x: f64) -> (usize, f64) {
        // Reduce to [0, period) relative to the base site, then split into
        // lattice index and fraction.
        let n = self.dims[a];
        let rel = (x - self.base[a]) / self.h;
        let rel = rel - (rel / n as f64).floor() * n as f64;
        let i = rel.floor() as usize % n;
        (i, rel - rel.floor())
    }

    /// Lagrange cubic weights at fraction t in [0,1) between nodes 1 and 2
    /// of the 4-point stencil (i-1, i, i+1, i+2).
    #[inline]
    fn weights(t: f64) -> [f64; 4] {
        let t2 = t * t;
        let t3 = t2 * t;
        [
            -(t3 - 3.0 * t2 + 2.0 * t) / 6.0,
            (t3 - 2.0 * t2 - t + 2.0) * 0.5,
            -(t3 - t2 - 2.0 * t) * 0.5,
            (t3 - t) / 6.0,
        ]
    }

    pub fn eval(&self, p: &[f64; MAX_DIM]) -> f64 {
        let d = self.d;
        let mut idx0 = [0usize; MAX_DIM];
        let mut w = [[0.0; 4]; MAX_DIM];
        for a in 0..d {
            let (i, t) = self.axis_setup(a, p[a]);
            idx0[a] = i;
            w[a] = Self::weights(t);
        }
        let strides = {
            let mut s = [1usize; MAX_DIM];
            if d == 3 {
                s[1] = self.dims[2];
                s[0] = self.dims[1] * self.dims[2];
            } else {
                s[0] = self.dims[1];
            }
            s
        };
        let wrap = |a: usize, i: isize| -> usize {
            let n = self.dims[a] as isize;
            (((i % n) + n) % n) as usize
        };
        let mut acc = 0.0;
        for (ka, &wa) in w[0].iter().enumerate() {
            let ia = wrap(0, idx0[0] as isize + ka as isize - 1);
            for (kb, &wb) in w[1].iter().enumerate() {
                let ib = wrap(1, idx0[1] as isize + kb as isize - 1);
                if d == 2 {
                    acc += wa * wb * self.data[ia * strides[0] + ib * strides[1]];
                } else {
                    for (kc, &wc) in w[2].iter().enumerate() {
                        let ic = wrap(2, idx0[2] as isize + kc as isize - 1);
                        acc += wa
                            * wb
                            * wc
                            * self.data[ia * strides[0] + ib * strides[1] + ic];
                    }
                }
            }
        }
        acc
    }
}

/// Piecewise cylinder evaluator: solved interior for |y1| <= switch_radius,
/// q-weighted 1-periodic plateau fields outside.
#[derive(Clone, Debug)]
pub struct CylinderEvaluator {
    pub interior: PeriodicInterp,
    pub plus: PeriodicInterp,
    pub minus: PeriodicInterp,
    pub weight_plus: f64,
    pub weight_minus: f64,
    pub switch_radius: f64,
}

impl CylinderEvaluator {
    pub fn eval(&self, p: &[f64; MAX_DIM]) -> f64 {
        if p[0] > self.switch_radius {
            self.weight_plus * self.plus.eval(p)
        } else if p[0] < -self.switch_radius {
            self.weight_minus * self.minus.eval(p)
        } else {
            self.interior.eval(p)
        }
    }
}
