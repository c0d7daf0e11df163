//! Geometric multigrid V-cycle preconditioner on the structured grids.
//!
//! Levels rediscretize the node-centered divergence-form operator with
//! full-weighted coefficient restriction; an optional rank-one augmentation
//! rides along on every level (the bordered kernel trick stays consistent
//! across the hierarchy). The cycle uses damped-Jacobi smoothing and a fixed
//! number of coarsest-level sweeps, so the preconditioner is a fixed linear
//! operator and Krylov outer iterations stay deterministic.

use crate::grid::{AxialBc, Grid, MatrixField, ScalarField, MAX_DIM};
use crate::linsolve::{LinOp, Precond};
use crate::ops;
use crate::par;
use std::sync::Arc;

/// One grid level: -div(M grad .) (sign fixed to -1 so diagonals are
/// positive) plus an optional rank-one term gamma v0 w^T.
pub struct LevelOp {
    pub grid: Arc<Grid>,
    pub m: MatrixField,
    pub rank_one: Option<RankOne>,
}

pub struct RankOne {
    pub weights: Vec<f64>,
    pub v0: Vec<f64>,
    pub gamma: f64,
}

impl LevelOp {
    pub fn diag(&self) -> Vec<f64> {
        let g = &self.grid;
        let inv_h2 = 1.0 / (g.h * g.h);
        let tab = g.neighbor_tables();
        let s = g.strides();
        let dirichlet = g.axial_bc == AxialBc::Dirichlet;
        let n_last = g.dims[0] - 1;
        let mut diag = vec![0.0; g.n_nodes()];
        for (k, v) in diag.iter_mut().enumerate() {
            let c = g.coords_of(k);
            if dirichlet && (c[0] == 0 || c[0] == n_last) {
                *v = 1.0;
                continue;
            }
            let mut acc = 0.0;
            for a in 0..g.d {
                let maa = &self.m.at(a, a).data;
                let mut cp = c;
                cp[a] = tab.plus[a][c[a]];
                let mut cm = c;
                cm[a] = tab.minus[a][c[a]];
                let ip = cp[0] * s[0] + cp[1] * s[1] + cp[2] * s[2];
                let im = cm[0] * s[0] + cm[1] * s[1] + cm[2] * s[2];
                acc += 0.5 * (2.0 * maa[k] + maa[ip] + maa[im]) * inv_h2;
            }
            *v = acc;
        }
        diag
    }
}

impl LinOp for LevelOp {
    fn len(&self) -> usize {
        self.grid.n_nodes()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        ops::div_form_raw(&self.grid, &self.m, x, y, true);
        // Negate interior rows; Dirichlet identity rows stay +x.
        let dirichlet = self.grid.axial_bc == AxialBc::Dirichlet;
        let s0 = self.grid.strides()[0];
        let n_last = self.grid.dims[0] - 1;
        par::map_chunks(y, |start, chunk| {
            for (k, v) in chunk.iter_mut().enumerate() {
                let i0 = (start + k) / s0;
                if !(dirichlet && (i0 == 0 || i0 == n_last)) {
                    *v = -*v;
                }
            }
        });
        if let Some(r1) = &self.rank_one {
            let wx = par::dot(&r1.weights, x);
            par::axpy(r1.gamma * wx, &r1.v0, y);
        }
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(self.diag())
    }
}

/// Coarsen a grid by factor 2, or None when too coarse.
pub fn coarsen_grid(g: &Grid) -> Option<Arc<Grid>> {
    let mut dims = g.dims;
    match g.axial_bc {
        AxialBc::Periodic => {
            if dims[0] % 2 != 0 || dims[0] / 2 < 8 {
                return None;
            }
            dims[0] /= 2;
        }
        AxialBc::Dirichlet => {
            let intervals = dims[0] - 1;
            if intervals % 2 != 0 || intervals / 2 < 4 {
                return None;
            }
            dims[0] = intervals / 2 + 1;
        }
    }
    for a in 1..g.d {
        if dims[a] % 2 != 0 || dims[a] / 2 < 4 {
            return None;
        }
        dims[a] /= 2;
    }
    Some(Arc::new(Grid {
        d: g.d,
        dims,
        h: 2.0 * g.h,
        axial_bc: g.axial_bc,
        origin: g.origin,
    }))
}

fn axis_weights() -> [f64; 3] {
    [0.25, 0.5, 0.25]
}

/// Full-weighting restriction of a node field (values or residuals).
pub fn restrict_full(fine_g: &Grid, coarse_g: &Grid, fine: &[f64], coarse: &mut [f64]) {
    let d = fine_g.d;
    let fs = fine_g.strides();
    let fdims = fine_g.dims;
    let tabs = fine_g.neighbor_tables();
    let dirichlet = fine_g.axial_bc == AxialBc::Dirichlet;
    let clast = coarse_g.dims[0] - 1;
    let cg = coarse_g.clone();
    let w = axis_weights();
    par::map_chunks(coarse, |start, chunk| {
        for (k, v) in chunk.iter_mut().enumerate() {
            let cc = cg.coords_of(start + k);
            if dirichlet && (cc[0] == 0 || cc[0] == clast) {
                *v = 0.0;
                continue;
            }
            let f0 = [2 * cc[0], 2 * cc[1], 2 * cc[2]];
            let mut acc = 0.0;
            for da in -1i32..=1 {
                let ia = offset_index(&tabs, fdims[0], f0[0], 0, da);
                let wa = w[(da + 1) as usize];
                for db in -1i32..=1 {
                    let ib = offset_index(&tabs, fdims[1], f0[1], 1, db);
                    let wb = w[(db + 1) as usize];
                    if d == 2 {
                        acc += wa * wb * fine[ia * fs[0] + ib * fs[1]];
                    } else {
                        for dc in -1i32..=1 {
                            let ic = offset_index(&tabs, fdims[2], f0[2], 2, dc);
                            let wc = w[(dc + 1) as usize];
                            acc += wa * wb * wc * fine[ia * fs[0] + ib * fs[1] + ic];
                        }
                    }
                }
            }
            *v = acc;
        }
    });
}

fn offset_index(
    tabs: &crate::grid::NeighborTables,
    _n: usize,
    base: usize,
    axis: usize,
    off: i32,
) -> usize {
    match off {
        -1 => tabs.minus[axis][base],
        1 => tabs.plus[axis][base],
        _ => base,
    }
}

/// Linear prolongation, added into the fine field.
pub fn prolong_add(coarse_g: &Grid, fine_g: &Grid, coarse: &[f64], fine: &mut [f64]) {
    let d = fine_g.d;
    let cs = coarse_g.strides();
    let cdims = coarse_g.dims;
    let dirichlet = fine_g.axial_bc == AxialBc::Dirichlet;
    let flast = fine_g.dims[0] - 1;
    let fg = fine_g.clone();
    par::map_chunks(fine, |start, chunk| {
        for (k, v) in chunk.iter_mut().enumerate() {
            let fc = fg.coords_of(start + k);
            if dirichlet && (fc[0] == 0 || fc[0] == flast) {
                continue;
            }
            let mut acc = 0.0;
            // Per axis: even index -> coincident; odd -> average neighbors.
            let mut bases = [[0usize; 2]; MAX_DIM];
            let mut wts = [[0.0f64; 2]; MAX_DIM];
            let mut counts = [1usize; MAX_DIM];
            for a in 0..d {
                let i = fc[a];
                if i % 2 == 0 {
                    bases[a][0] = i / 2;
                    wts[a][0] = 1.0;
                } else {
                    bases[a][0] = i / 2;
                    bases[a][1] = (i / 2 + 1) % cdims[a];
                    // Dirichlet axial never wraps: odd fine i < flast implies
                    // i/2 + 1 <= clast, so the modulo is inert there.
                    wts[a][0] = 0.5;
                    wts[a][1] = 0.5;
                    counts[a] = 2;
                }
            }
            for ka in 0..counts[0] {
                for kb in 0..counts[1] {
                    if d == 2 {
                        acc += wts[0][ka]
                            * wts[1][kb]
                            * coarse[bases[0][ka] * cs[0] + bases[1][kb] * cs[1]];
                    } else {
                        for kc in 0..counts[2] {
                            acc += wts[0][ka]
                                * wts[1][kb]
                                * wts[2][kc]
                                * coarse[bases[0][ka] * cs[0]
                                    + bases[1][kb] * cs[1]
                                    + bases[2][kc]];
                        }
                    }
                }
            }
            *v += acc;
        }
    });
}

/// Coefficient restriction: full weighting of each matrix entry.
pub fn restrict_matrix(fine_g: &Grid, coarse_g: &Arc<Grid>, m: &MatrixField) -> MatrixField {
    let mut out = MatrixField::zeros(coarse_g);
    for i in 0..m.d {
        for j in 0..m.d {
            let mut data = vec![0.0; coarse_g.n_nodes()];
            restrict_coeff(fine_g, coarse_g, &m.at(i, j).data, &mut data);
            out.comps[i * m.d + j] = ScalarField::from_vec(coarse_g, data);
        }
    }
    out
}

/// Like restrict_full but keeps meaningful values on Dirichlet end planes
/// (coefficients are data, not residuals).
fn restrict_coeff(fine_g: &Grid, coarse_g: &Grid, fine: &[f64], coarse: &mut [f64]) {
    let d = fine_g.d;
    let fs = fine_g.strides();
    let fdims = fine_g.dims;
    let tabs = fine_g.neighbor_tables();
    let cg = coarse_g.clone();
    let w = axis_weights();
    par::map_chunks(coarse, |start, chunk| {
        for (k, v) in chunk.iter_mut().enumerate() {
            let cc = cg.coords_of(start + k);
            let f0 = [2 * cc[0], 2 * cc[1], 2 * cc[2]];
            let mut acc = 0.0;
            let mut tot = 0.0;
            for da in -1i32..=1 {
                // At Dirichlet ends shrink the stencil instead of wrapping.
                if fine_g.axial_bc == AxialBc::Dirichlet
                    && ((f0[0] == 0 && da < 0) || (f0[0] == fdims[0] - 1 && da > 0))
                {
                    continue;
                }
                let ia = offset_index(&tabs, fdims[0], f0[0], 0, da);
                let wa = w[(da + 1) as usize];
                for db in -1i32..=1 {
                    let ib = offset_index(&tabs, fdims[1], f0[1], 1, db);
                    let wb = w[(db + 1) as usize];
                    if d == 2 {
                        acc += wa * wb * fine[ia * fs[0] + ib * fs[1]];
                        tot += wa * wb;
                    } else {
                        for dc in -1i32..=1 {
                            let ic = offset_index(&tabs, fdims[2], f0[2], 2, dc);
                            let wc = w[(dc + 1) as usize];
                            acc += wa * wb * wc * fine[ia * fs[0] + ib * fs[1] + ic];
                            tot += wa * wb * wc;
                        }
                    }
                }
            }
            *v = acc / tot;
        }
    });
}

pub struct MultigridParams {
    pub nu_pre: usize,
    pub nu_post: usize,
    pub omega: f64,
    pub coarse_sweeps: usize,
    /// Stop coarsening once h exceeds this (keeps oscillations resolved).
    pub max_h: f64,
}

impl Default for MultigridParams {
    fn default() -> Self {
        MultigridParams {
            nu_pre: 2,
            nu_post: 2,
            omega: 0.8,
            coarse_sweeps: 120,
            max_h: f64::INFINITY,
        }
    }
}

struct Level {
    op: LevelOp,
    diag_inv: Vec<f64>,
}

/// V-cycle preconditioner.
pub struct Multigrid {
    levels: Vec<Level>,
    params: MultigridParams,
}

impl Multigrid {
    /// Builds the hierarchy from the finest operator by coefficient
    /// restriction. `rank_one_gamma` adds the level-consistent bordered term.
    pub fn new(
        grid: &Arc<Grid>,
        m: &MatrixField,
        rank_one_gamma: Option<f64>,
        params: MultigridParams,
    ) -> Self {
        let mut levels = Vec::new();
        let mut g = grid.clone();
        let mut mat = m.clone();
        loop {
            let rank_one = rank_one_gamma.map(|gamma| {
                let n = g.n_nodes();
                let volume = n as f64 * g.h.powi(g.d as i32);
                // v0 is the constant function 1/volume: identical across
                // levels, so the bordered term rediscretizes consistently.
                RankOne {
                    weights: vec![g.h.powi(g.d as i32); n],
                    v0: vec![1.0 / volume; n],
                    gamma,
                }
            });
            let op = LevelOp {
                grid: g.clone(),
                m: mat.clone(),
                rank_one,
            };
            let diag_inv = op.diag().iter().map(|v| 1.0 / v).collect();
            levels.push(Level { op, diag_inv });
            match coarsen_grid(&g) {
                Some(cg) if 2.0 * g.h <= params.max_h => {
                    mat = restrict_matrix(&g, &cg, &mat);
                    g = cg;
                }
                _ => break,
            }
        }
        Multigrid { levels, params }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    fn smooth(&self, l: usize, b: &[f64], x: &mut [f64], sweeps: usize, r: &mut [f64]) {
        let level = &self.levels[l];
        for _ in 0..sweeps {
            level.op.apply(x, r);
            let omega = self.params.omega;
            let dinv = &level.diag_inv;
            par::map_chunks(x, |start, chunk| {
                for (k, v) in chunk.iter_mut().enumerate() {
                    let i = start + k;
                    *v += omega * dinv[i] * (b[i] - r[i]);
                }
            });
        }
    }

    fn vcycle(&self, l: usize, b: &[f64], x: &mut [f64]) {
        let level = &self.levels[l];
        let n = level.op.len();
        let mut r = vec![0.0; n];
        if l + 1 == self.levels.len() {
            self.smooth(l, b, x, self.params.coarse_sweeps, &mut r);
            return;
        }
        self.smooth(l, b, x, self.params.nu_pre, &mut r);
        level.op.apply(x, &mut r);
        par::xpby(b, -1.0, &mut r); // r = b - Ax
        let coarse = &self.levels[l + 1];
        let mut rc = vec![0.0; coarse.op.len()];
        restrict_full(&level.op.grid, &coarse.op.grid, &r, &mut rc);
        let mut ec = vec![0.0; coarse.op.len()];
        self.vcycle(l + 1, &rc, &mut ec);
        prolong_add(&coarse.op.grid, &level.op.grid, &ec, x);
        self.smooth(l, b, x, self.params.nu_post, &mut r);
    }
}

impl Precond for Multigrid {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.fill(0.0);
        self.vcycle(0, r, z);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsolve::{cg, LinOp};
    use std::f64::consts::PI;

    #[test]
    fn mg_accelerates_poisson() {
        let g = Grid::torus(2, 128).unwrap();
        let m = MatrixField::identity(&g);
        let op = LevelOp {
            grid: g.clone(),
            m: m.clone(),
            rank_one: None,
        };
        let rhs = ScalarField::from_fn(&g, |p| {
            (2.0 * PI * p[0]).sin() * (4.0 * PI * p[1]).cos()
        });
        let mg = Multigrid::new(&g, &m, None, MultigridParams::default());
        assert!(mg.depth() >= 4);
        let mut x = vec![0.0; op.len()];
        let stats = cg(&op, &mg, &rhs.data, &mut x, 1e-10, 200).unwrap();
        assert!(
            stats.iterations < 30,
            "MG-CG should converge fast, took {}",
            stats.iterations
        );
    }

    #[test]
    fn transfers_preserve_constants() {
        let g = Grid::torus(2, 32).unwrap();
        let cg_grid = coarsen_grid(&g).unwrap();
        let fine = vec![1.0; g.n_nodes()];
        let mut coarse = vec![0.0; cg_grid.n_nodes()];
        restrict_full(&g, &cg_grid, &fine, &mut coarse);
        assert!(coarse.iter().all(|v| (v - 1.0).abs() < 1e-14));
        let mut fine2 = vec![0.0; g.n_nodes()];
        prolong_add(&cg_grid, &g, &coarse, &mut fine2);
        assert!(fine2.iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn dirichlet_hierarchy_coarsens() {
        let g = Grid::interface_box(2, 64, 1).unwrap();
        assert_eq!(g.dims[0], 129);
        let c = coarsen_grid(&g).unwrap();
        assert_eq!(c.dims[0], 65);
        assert_eq!(c.dims[1], 32);
    }
}
