//! Staggered (face/edge) second-order calculus.
//!
//! Scalars live on nodes, fluxes on edge lattices (node + h/2 along one
//! axis), antisymmetric flux-corrector components on plaquette lattices
//! (offset along two axes). The point of the staggering is exactness:
//! `div . grad` is the compact Laplacian, forward and backward differences
//! commute, and summation by parts holds with no boundary junk on periodic
//! grids, so the flux-corrector divergence identities hold at solver
//! precision instead of truncation accuracy.

use crate::grid::{AxialBc, Grid, MatrixField, ScalarField, MAX_DIM};
use crate::par;
use std::sync::Arc;

/// Lattice dims of edge-`axis` sites. Periodic axes keep the node count
/// (edges wrap); the Dirichlet axial direction has one fewer.
pub fn edge_dims(grid: &Grid, axis: usize) -> [usize; MAX_DIM] {
    let mut d = grid.dims;
    if axis == 0 && grid.axial_bc == AxialBc::Dirichlet {
        d[0] -= 1;
    }
    d
}

/// Lattice dims of plaquette-(a,b) sites.
pub fn plaq_dims(grid: &Grid, a: usize, b: usize) -> [usize; MAX_DIM] {
    let mut d = grid.dims;
    if (a == 0 || b == 0) && grid.axial_bc == AxialBc::Dirichlet {
        d[0] -= 1;
    }
    d
}

fn len_of(dims: &[usize; MAX_DIM], d: usize) -> usize {
    dims[..d].iter().product()
}

fn strides_of(dims: &[usize; MAX_DIM], d: usize) -> [usize; MAX_DIM] {
    let mut s = [1; MAX_DIM];
    if d == 3 {
        s[1] = dims[2];
        s[0] = dims[1] * dims[2];
    } else {
        s[0] = dims[1];
    }
    s
}

/// Field on the edge-`axis` lattice.
#[derive(Clone, Debug)]
pub struct EdgeField {
    pub grid: Arc<Grid>,
    pub axis: usize,
    pub dims: [usize; MAX_DIM],
    pub data: Vec<f64>,
}

impl EdgeField {
    pub fn zeros(grid: &Arc<Grid>, axis: usize) -> Self {
        let dims = edge_dims(grid, axis);
        EdgeField {
            grid: grid.clone(),
            axis,
            dims,
            data: vec![0.0; len_of(&dims, grid.d)],
        }
    }

    /// Physical position of an edge site.
    pub fn position(&self, c: [usize; MAX_DIM]) -> [f64; MAX_DIM] {
        let mut p = [0.0; MAX_DIM];
        p[0] = self.grid.origin + c[0] as f64 * self.grid.h;
        for a in 1..self.grid.d {
            p[a] = c[a] as f64 * self.grid.h;
        }
        p[self.axis] += 0.5 * self.grid.h;
        p
    }

    pub fn from_fn<F: Fn(&[f64; MAX_DIM]) -> f64 + Sync>(
        grid: &Arc<Grid>,
        axis: usize,
        f: F,
    ) -> Self {
        let mut e = Self::zeros(grid, axis);
        let dims = e.dims;
        let d = grid.d;
        let this = e.clone();
        par::map_chunks(&mut e.data, |start, chunk| {
            for (k, v) in chunk.iter_mut().enumerate() {
                let c = coords_in(&dims, d, start + k);
                *v = f(&this.position(c));
            }
        });
        e
    }

    pub fn mean(&self) -> f64 {
        par::det_sum(self.data.len(), |i| self.data[i]) / self.data.len() as f64
    }
}

/// Field on the plaquette-(a,b) lattice, a < b.
#[derive(Clone, Debug)]
pub struct PlaqField {
    pub grid: Arc<Grid>,
    pub axes: (usize, usize),
    pub dims: [usize; MAX_DIM],
    pub data: Vec<f64>,
}

impl PlaqField {
    pub fn zeros(grid: &Arc<Grid>, a: usize, b: usize) -> Self {
        assert!(a < b);
        let dims = plaq_dims(grid, a, b);
        PlaqField {
            grid: grid.clone(),
            axes: (a, b),
            dims,
            data: vec![0.0; len_of(&dims, grid.d)],
        }
    }

    pub fn position(&self, c: [usize; MAX_DIM]) -> [f64; MAX_DIM] {
        let mut p = [0.0; MAX_DIM];
        p[0] = self.grid.origin + c[0] as f64 * self.grid.h;
        for a in 1..self.grid.d {
            p[a] = c[a] as f64 * self.grid.h;
        }
        p[self.axes.0] += 0.5 * self.grid.h;
        p[self.axes.1] += 0.5 * self.grid.h;
        p
    }
}

pub fn coords_in(dims: &[usize; MAX_DIM], d: usize, mut idx: usize) -> [usize; MAX_DIM] {
    let mut c = [0; MAX_DIM];
    if d == 3 {
        c[2] = idx % dims[2];
        idx /= dims[2];
    }
    c[1] = idx % dims[1];
    c[0] = idx / dims[1];
    c
}

/// Forward difference along `axis`: node field -> edge-`axis` field.
pub fn grad_axis(u: &ScalarField, axis: usize) -> EdgeField {
    let g = &u.grid;
    let mut out = EdgeField::zeros(g, axis);
    let nd = g.dims;
    let ns = g.strides();

    let ed = out.dims;
    let d = g.d;
    let inv_h = 1.0 / g.h;
    let ud = &u.data;
    let periodic = axis > 0 || g.axial_bc == AxialBc::Periodic;
    par::map_chunks(&mut out.data, |start, chunk| {
        for (k, v) in chunk.iter_mut().enumerate() {
            let c = coords_in(&ed, d, start + k);
            let here = c[0] * ns[0] + c[1] * ns[1] + c[2] * ns[2];
            let mut cp = c;
            cp[axis] = if periodic {
                (c[axis] + 1) % nd[axis]
            } else {
                c[axis] + 1
            };
            let plus = cp[0] * ns[0] + cp[1] * ns[1] + cp[2] * ns[2];
            *v = (ud[plus] - ud[here]) * inv_h;
        }
    });
    out
}

/// Backward-difference divergence: edge fields -> node field.
/// On Dirichlet grids the end planes receive zero.
pub fn divergence(fluxes: &[EdgeField], out: &mut ScalarField) {
    let g = out.grid.clone();
    let d = g.d;

    let nd = g.dims;
    let inv_h = 1.0 / g.h;
    let dirichlet = g.axial_bc == AxialBc::Dirichlet;
    out.data.fill(0.0);
    for f in fluxes {
        let axis = f.axis;
        let ed = f.dims;
        let es = strides_of(&ed, d);
        let fd = &f.data;
        let periodic = axis > 0 || !dirichlet;
        par::map_chunks(&mut out.data, |start, chunk| {
            for (k, v) in chunk.iter_mut().enumerate() {
                let c = coords_in(&nd, d, start + k);
                if dirichlet && (c[0] == 0 || c[0] == nd[0] - 1) {
                    continue;
                }
                // Edge at node (flux out, + side) has the same lattice coords;
                // edge at node - e_axis is the - side.
                let here_e = c[0] * es[0] + c[1] * es[1] + c[2] * es[2];
                let mut cm = c;
                cm[axis] = if periodic {
                    (c[axis] + ed[axis] - 1) % ed[axis]
                } else {
                    c[axis] - 1 // interior nodes only; c[axis] >= 1 here
                };
                let minus_e = cm[0] * es[0] + cm[1] * es[1] + cm[2] * es[2];
                *v += (fd[here_e] - fd[minus_e]) * inv_h;
            }
        });
    }
}

/// Average a node field onto the edge-`axis` lattice.
pub fn avg_to_edge(u: &ScalarField, axis: usize) -> EdgeField {
    let g = &u.grid;
    let mut out = EdgeField::zeros(g, axis);
    let nd = g.dims;
    let ns = g.strides();

    let ed = out.dims;
    let d = g.d;
    let ud = &u.data;
    let periodic = axis > 0 || g.axial_bc == AxialBc::Periodic;
    par::map_chunks(&mut out.data, |start, chunk| {
        for (k, v) in chunk.iter_mut().enumerate() {
            let c = coords_in(&ed, d, start + k);
            let here = c[0] * ns[0] + c[1] * ns[1] + c[2] * ns[2];
            let mut cp = c;
            cp[axis] = if periodic {
                (c[axis] + 1) % nd[axis]
            } else {
                c[axis] + 1
            };
            let plus = cp[0] * ns[0] + cp[1] * ns[1] + cp[2] * ns[2];
            *v = 0.5 * (ud[plus] + ud[here]);
        }
    });
    out
}

/// Average an edge-`from` field along axis `along` onto the plaquette
/// (min, max) lattice. `along` must differ from `from.axis`.
pub fn avg_edge_to_plaq(f: &EdgeField, along: usize) -> PlaqField {
    let g = &f.grid;
    let (a, b) = if f.axis < along {
        (f.axis, along)
    } else {
        (along, f.axis)
    };
    let mut out = PlaqField::zeros(g, a, b);
    let ed = f.dims;
    let es = strides_of(&ed, g.d);
    let pd = out.dims;
    let d = g.d;
    let fd = &f.data;
    let periodic = along > 0 || g.axial_bc == AxialBc::Periodic;
    par::map_chunks(&mut out.data, |start, chunk| {
        for (k, v) in chunk.iter_mut().enumerate() {
            let c = coords_in(&pd, d, start + k);
            let here = c[0] * es[0] + c[1] * es[1] + c[2] * es[2];
            let mut cp = c;
            cp[along] = if periodic {
                (c[along] + 1) % ed[along]
            } else {
                c[along] + 1
            };
            let plus = cp[0] * es[0] + cp[1] * es[1] + cp[2] * es[2];
            *v = 0.5 * (fd[plus] + fd[here]);
        }
    });
    out
}

/// Forward difference of an edge-`f.axis` field along a different axis
/// `along`, landing on the plaquette (min, max) lattice.
pub fn diff_edge_to_plaq(f: &EdgeField, along: usize) -> PlaqField {
    let g = &f.grid;
    let (a, b) = if f.axis < along {
        (f.axis, along)
    } else {
        (along, f.axis)
    };
    let mut out = PlaqField::zeros(g, a, b);
    let ed = f.dims;
    let es = strides_of(&ed, g.d);
    let pd = out.dims;
    let d = g.d;
    let inv_h = 1.0 / g.h;
    let fd = &f.data;
    let periodic = along > 0 || g.axial_bc == AxialBc::Periodic;
    par::map_chunks(&mut out.data, |start, chunk| {
        for (k, v) in chunk.iter_mut().enumerate() {
            let c = coords_in(&pd, d, start + k);
            let here = c[0] * es[0] + c[1] * es[1] + c[2] * es[2];
            let mut cp = c;
            cp[along] = if periodic {
                (c[along] + 1) % ed[along]
            } else {
                c[along] + 1
            };
            let plus = cp[0] * es[0] + cp[1] * es[1] + cp[2] * es[2];
            *v = (fd[plus] - fd[here]) * inv_h;
        }
    });
    out
}

/// Backward difference of a plaquette field along one of its offset axes,
/// landing on the edge lattice of the other offset axis.
pub fn diff_plaq_to_edge(p: &PlaqField, along: usize) -> EdgeField {
    let g = &p.grid;
    let other = if p.axes.0 == along { p.axes.1 } else { p.axes.0 };
    assert!(along == p.axes.0 || along == p.axes.1);
    let mut out = EdgeField::zeros(g, other);
    let pd = p.dims;
    let ps = strides_of(&pd, g.d);
    let ed = out.dims;
    let d = g.d;
    let inv_h = 1.0 / g.h;
    let fd = &p.data;
    let dirichlet_axis = along == 0 && g.axial_bc == AxialBc::Dirichlet;
    par::map_chunks(&mut out.data, |start, chunk| {
        for (k, v) in chunk.iter_mut().enumerate() {
            let c = coords_in(&ed, d, start + k);
            if dirichlet_axis && (c[0] == 0 || c[0] == ed[0] - 1) {
                // One-sided plaquette neighborhood at the end planes: the
                // backward difference would read outside; treat the missing
                // plaquette value as zero (callers only use interior windows
                // on Dirichlet grids).
                let here = c[0].min(pd[0] - 1) * ps[0] + c[1] * ps[1] + c[2] * ps[2];
                let mut cm = c;
                cm[along] = c[along].saturating_sub(1);
                let minus = cm[0].min(pd[0] - 1) * ps[0] + cm[1] * ps[1] + cm[2] * ps[2];
                let fh = if c[0] < pd[0] { fd[here] } else { 0.0 };
                let fm = if c[0] == 0 { 0.0 } else { fd[minus] };
                *v = (fh - fm) * inv_h;
                continue;
            }
            let here = c[0] * ps[0] + c[1] * ps[1] + c[2] * ps[2];
            let mut cm = c;
            cm[along] = if along > 0 || g.axial_bc == AxialBc::Periodic {
                (c[along] + pd[along] - 1) % pd[along]
            } else {
                c[along] - 1
            };
            let minus = cm[0] * ps[0] + cm[1] * ps[1] + cm[2] * ps[2];
            *v = (fd[here] - fd[minus]) * inv_h;
        }
    });
    out
}

/// Matrix coefficient for the staggered divergence-form apply: a symmetric
/// node-sampled part plus an optional antisymmetric plaquette-native part
/// (flux correctors live there).
pub struct MacMatrix {
    pub sym: MatrixField,
    /// antisym[(a,b)] with a < b holds the (a,b) component; the (b,a)
    /// component is its negative.
    pub antisym: Vec<PlaqField>,
}

impl MacMatrix {
    pub fn symmetric(sym: MatrixField) -> Self {
        MacMatrix {
            sym,
            antisym: Vec::new(),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.sym.grid()
    }

    pub fn anti(&self, a: usize, b: usize) -> Option<(&PlaqField, f64)> {
        for p in &self.antisym {
            if p.axes == (a.min(b), a.max(b)) {
                let sign = if a < b { 1.0 } else { -1.0 };
                return Some((p, sign));
            }
        }
        None
    }
}

/// Off-diagonal symmetric coefficients averaged to the plaquette lattice.
fn sym_to_plaq(m: &MatrixField, a: usize, b: usize) -> PlaqField {
    let g = m.grid();
    let mut out = PlaqField::zeros(g, a.min(b), a.max(b));
    let nd = g.dims;
    let ns = g.strides();

    let pd = out.dims;
    let d = g.d;
    // Symmetrize: (m_ab + m_ba)/2 at nodes, then 4-point average.
    let f1 = &m.at(a, b).data;
    let f2 = &m.at(b, a).data;
    let (lo, hi) = (a.min(b), a.max(b));
    let per_lo = lo > 0 || g.axial_bc == AxialBc::Periodic;
    par::map_chunks(&mut out.data, |start, chunk| {
        for (k, v) in chunk.iter_mut().enumerate() {
            let c = coords_in(&pd, d, start + k);
            let mut sum = 0.0;
            for da in 0..2usize {
                for db in 0..2usize {
                    let mut cc = c;
                    cc[lo] = if per_lo {
                        (c[lo] + da) % nd[lo]
                    } else {
                        c[lo] + da
                    };
                    cc[hi] = (c[hi] + db) % nd[hi];
                    let idx = cc[0] * ns[0] + cc[1] * ns[1] + cc[2] * ns[2];
                    sum += 0.5 * (f1[idx] + f2[idx]);
                }
            }
            *v = 0.25 * sum;
        }
    });
    out
}

/// Flux of `u + linear part e_col` through edge-`i` faces:
/// F_i = avg_i(S_ii) (G_i u + d_{i,col}) + sum_{k != i} P_ik (avg_i(G_k u) + d_{k,col})
/// with P averaged back from the plaquette to edge-i. Passing `col = d`
/// drops the linear part.
pub fn mac_flux(m: &MacMatrix, u: &ScalarField, col: usize) -> Vec<EdgeField> {
    let g = m.grid().clone();
    let d = g.d;
    let grads: Vec<EdgeField> = (0..d).map(|a| grad_axis(u, a)).collect();
    let mut fluxes = Vec::with_capacity(d);
    for i in 0..d {
        let mut fi = EdgeField::zeros(&g, i);
        // Diagonal: face-averaged coefficient times the staggered gradient.
        let sii = avg_to_edge(m.sym.at(i, i), i);
        for (k, v) in fi.data.iter_mut().enumerate() {
            let gk = grads[i].data[k] + if col == i { 1.0 } else { 0.0 };
            *v = sii.data[k] * gk;
        }
        // Off-diagonal: coefficient at the plaquette, gradient averaged to the
        // plaquette, product averaged back to edge-i.
        for k in 0..d {
            if k == i {
                continue;
            }
            let mut coeff = sym_to_plaq(&m.sym, i, k);
            if let Some((p, sign)) = m.anti(i, k) {
                for (idx, v) in coeff.data.iter_mut().enumerate() {
                    *v += sign * p.data[idx];
                }
            }
            let gk_at_plaq = avg_edge_to_plaq(&grads[k], i);
            let mut prod = coeff;
            for (idx, v) in prod.data.iter_mut().enumerate() {
                *v *= gk_at_plaq.data[idx] + if col == k { 1.0 } else { 0.0 };
            }
            // Average plaquette (i,k) back to edge-i along k.
            let back = avg_plaq_to_edge(&prod, k);
            for (idx, v) in fi.data.iter_mut().enumerate() {
                *v += back.data[idx];
            }
        }
        fluxes.push(fi);
    }
    fluxes
}

/// Average a plaquette field along one offset axis back to the edge lattice
/// of the other offset axis.
pub fn avg_plaq_to_edge(p: &PlaqField, along: usize) -> EdgeField {
    let g = &p.grid;
    let other = if p.axes.0 == along { p.axes.1 } else { p.axes.0 };
    let mut out = EdgeField::zeros(g, other);
    let pd = p.dims;
    let ps = strides_of(&pd, g.d);
    let ed = out.dims;
    let d = g.d;
    let fd = &p.data;
    let dirichlet_axis = along == 0 && g.axial_bc == AxialBc::Dirichlet;
    par::map_chunks(&mut out.data, |start, chunk| {
        for (k, v) in chunk.iter_mut().enumerate() {
            let c = coords_in(&ed, d, start + k);
            if dirichlet_axis && (c[0] == 0 || c[0] == ed[0] - 1) {
                // Missing outer plaquette treated as zero.
                let here = c[0].min(pd[0] - 1) * ps[0] + c[1] * ps[1] + c[2] * ps[2];
                let mut cm = c;
                cm[along] = c[along].saturating_sub(1);
                let minus = cm[0].min(pd[0] - 1) * ps[0] + cm[1] * ps[1] + cm[2] * ps[2];
                let fh = if c[0] < pd[0] { fd[here] } else { 0.0 };
                let fm = if c[0] == 0 { 0.0 } else { fd[minus] };
                *v = 0.5 * (fh + fm);
                continue;
            }
            let here = c[0] * ps[0] + c[1] * ps[1] + c[2] * ps[2];
            let mut cm = c;
            cm[along] = if along > 0 || g.axial_bc == AxialBc::Periodic {
                (c[along] + pd[along] - 1) % pd[along]
            } else {
                c[along] - 1
            };
            let minus = cm[0] * ps[0] + cm[1] * ps[1] + cm[2] * ps[2];
            *v = 0.5 * (fd[here] + fd[minus]);
        }
    });
    out
}

/// div(M grad u) with the staggered calculus (plus the fixed column of M when
/// `col < d`, used to form cell-problem right-hand sides).
pub fn mac_apply(m: &MacMatrix, u: &ScalarField, col: usize, out: &mut ScalarField) {
    let fluxes = mac_flux(m, u, col);
    divergence(&fluxes, out);
}

/// Mean of each flux component over its edge lattice: the discrete bracket
/// <A (grad chi + e_col)> that defines effective tensors. Returns one value
/// per row index i.
pub fn flux_means(fluxes: &[EdgeField]) -> Vec<f64> {
    fluxes.iter().map(|f| f.mean()).collect()
}

/// Windowed flux means over axial coordinates [lo, hi) (physical units).
pub fn flux_means_window(fluxes: &[EdgeField], lo: f64, hi: f64) -> Vec<f64> {
    fluxes
        .iter()
        .map(|f| {
            let g = &f.grid;
            let d = g.d;
            let es = strides_of(&f.dims, d);
            let offset = if f.axis == 0 { 0.5 * g.h } else { 0.0 };
            let i_lo = ((lo - g.origin - offset) / g.h).ceil().max(0.0) as usize;
            let i_hi = (((hi - g.origin - offset) / g.h).floor() as usize).min(f.dims[0] - 1);
            let count = (i_hi + 1 - i_lo) * es[0];
            let sum = par::det_sum(count, |k| {
                let i0 = i_lo + k / es[0];
                f.data[i0 * es[0] + k % es[0]]
            });
            sum / count as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, VectorField};
    use crate::ops;
    use std::f64::consts::PI;

    #[test]
    fn div_grad_is_compact_laplacian() {
        let g = Grid::torus(2, 32).unwrap();
        let u = ScalarField::from_fn(&g, |p| {
            (2.0 * PI * p[0]).sin() * (4.0 * PI * p[1]).cos() + 0.3 * (2.0 * PI * p[1]).sin()
        });
        let fluxes: Vec<EdgeField> = (0..2).map(|a| grad_axis(&u, a)).collect();
        let mut lap = ScalarField::zeros(&g);
        divergence(&fluxes, &mut lap);
        // Compare with the compact 5-point Laplacian from the node ops.
        let m = crate::grid::MatrixField::identity(&g);
        let mut ref_lap = ScalarField::zeros(&g);
        ops::apply_divergence_form(&m, &u, &mut ref_lap);
        for i in 0..lap.data.len() {
            assert!((lap.data[i] - ref_lap.data[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn summation_by_parts_exact() {
        let g = Grid::torus(2, 24).unwrap();
        let u = ScalarField::from_fn(&g, |p| (2.0 * PI * (p[0] + 2.0 * p[1])).sin());
        let v = ScalarField::from_fn(&g, |p| (4.0 * PI * p[0]).cos() + p[1].cos());
        for axis in 0..2 {
            let gu = grad_axis(&u, axis);
            let mut div_gu = ScalarField::zeros(&g);
            divergence(std::slice::from_ref(&gu), &mut div_gu);
            let gv = grad_axis(&v, axis);
            let lhs = par::dot(&div_gu.data, &v.data);
            let rhs = -par::dot(&gu.data, &gv.data);
            assert!(
                (lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()),
                "{lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn mac_apply_self_adjoint_and_antisym_energy_free() {
        let g = Grid::torus(2, 24).unwrap();
        let sym = crate::grid::MatrixField::from_fn(&g, |p, i, j| {
            if i == j {
                1.5 + 0.4 * (2.0 * PI * p[1 - i]).cos()
            } else {
                0.15 * (2.0 * PI * (p[0] + p[1])).sin()
            }
        });
        let mut anti = PlaqField::zeros(&g, 0, 1);
        let proto = anti.clone();
        for (k, v) in anti.data.iter_mut().enumerate() {
            let c = coords_in(&proto.dims, 2, k);
            let p = proto.position(c);
            *v = 0.3 * (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).cos();
        }
        let m = MacMatrix {
            sym: sym.clone(),
            antisym: vec![anti],
        };
        let u = ScalarField::from_fn(&g, |p| (2.0 * PI * p[0]).sin() + (4.0 * PI * p[1]).sin());
        let v = ScalarField::from_fn(&g, |p| (2.0 * PI * (p[0] - p[1])).cos());
        let msym = MacMatrix::symmetric(sym);
        let mut lu = ScalarField::zeros(&g);
        let mut lv = ScalarField::zeros(&g);
        mac_apply(&msym, &u, 9, &mut lu);
        mac_apply(&msym, &v, 9, &mut lv);
        let lhs = par::dot(&lu.data, &v.data);
        let rhs = par::dot(&u.data, &lv.data);
        assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
        // Antisymmetric part contributes nothing to the energy.
        let mut lau = ScalarField::zeros(&g);
        mac_apply(&m, &u, 9, &mut lau);
        let e_full = par::dot(&lau.data, &u.data);
        let e_sym = par::dot(&lu.data, &u.data);
        assert!(
            (e_full - e_sym).abs() < 1e-9 * (1.0 + e_sym.abs()),
            "{e_full} vs {e_sym}"
        );
    }

    #[test]
    fn mac_apply_consistent_with_continuum() {
        // Order check against a smooth manufactured solution.
        let exact = |p: &[f64; 3]| {
            let tp = 2.0 * PI;
            // u = sin(2pi x) cos(2pi y), M = diag(1 + 0.5 sin(2pi y), 1)
            let u_xx = -tp * tp * (tp * p[0]).sin() * (tp * p[1]).cos();
            let m11 = 1.0 + 0.5 * (tp * p[1]).sin();
            let u_y = -tp * (tp * p[0]).sin() * (tp * p[1]).sin();
            let u_yy = -tp * tp * (tp * p[0]).sin() * (tp * p[1]).cos();
            m11 * u_xx + 0.0 * u_y + u_yy
        };
        let mut errs = Vec::new();
        for n in [32usize, 64] {
            let g = Grid::torus(2, n).unwrap();
            let u = ScalarField::from_fn(&g, |p| {
                (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).cos()
            });
            let m = MacMatrix::symmetric(crate::grid::MatrixField::from_fn(&g, |p, i, j| {
                if i == 0 && j == 0 {
                    1.0 + 0.5 * (2.0 * PI * p[1]).sin()
                } else if i == j {
                    1.0
                } else {
                    0.0
                }
            }));
            let mut out = ScalarField::zeros(&g);
            mac_apply(&m, &u, 9, &mut out);
            let mut worst = 0.0f64;
            for i in 0..out.data.len() {
                let p = g.position(g.coords_of(i));
                worst = worst.max((out.data[i] - exact(&p)).abs());
            }
            errs.push(worst);
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.2 && ratio < 4.8, "ratio {ratio}");
    }

    #[test]
    fn staggered_drift_divergence_matches_generator_transpose() {
        // -div(edge drift field built from a_ij m, b_i m) equals the exact
        // transpose of the node generator: the identity behind the kernel
        // inheritance of div b = 0.
        let g = Grid::torus(2, 32).unwrap();
        let a = crate::grid::MatrixField::from_fn(&g, |p, i, j| {
            if i == j {
                1.0 + 0.3 * (2.0 * PI * p[(i + 1) % 2]).sin()
            } else {
                0.1 * (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).sin()
            }
        });
        let b = VectorField::from_fn(&g, |p| {
            [
                0.4 * (2.0 * PI * p[1]).cos(),
                -0.6 * (2.0 * PI * p[0]).sin(),
                0.0,
            ]
        });
        let m_field = ScalarField::from_fn(&g, |p| {
            1.0 + 0.2 * (2.0 * PI * p[0]).cos() * (2.0 * PI * p[1]).sin()
        });
        let edges = crate::coeff::drift_edge_field(&a, &b, &m_field);
        let mut div_b = ScalarField::zeros(&g);
        divergence(&edges, &mut div_b);
        let mut gt = ScalarField::zeros(&g);
        ops::apply_generator_transpose(&a, &b, &m_field, &mut gt);
        for i in 0..div_b.data.len() {
            assert!(
                (div_b.data[i] + gt.data[i]).abs() < 1e-10,
                "site {i}: {} vs {}",
                div_b.data[i],
                gt.data[i]
            );
        }
    }
}
