//! Node-centered second-order finite-difference operators.
//!
//! The divergence-form apply uses conservative face fluxes for the diagonal
//! of the coefficient matrix (arithmetic average of the two adjacent nodes)
//! and centered differences for the mixed terms, which makes the discrete
//! operator exactly self-adjoint for symmetric coefficients. The
//! non-divergence generator uses the compact 3-point second difference, the
//! four-point cross stencil for mixed derivatives and centered first
//! differences for the drift; its exact transpose is provided alongside.
//!
//! On Dirichlet grids the end planes are identity rows, so Krylov iterations
//! started from zero never move them.

use crate::grid::{AxialBc, Grid, MatrixField, ScalarField, VectorField};
use crate::par;
use std::sync::Arc;

/// Integration window for [`integrate`].
#[derive(Clone, Copy, Debug)]
pub enum Window {
    All,
    /// Axial node-index range `[lo, hi)`; tangential axes in full.
    AxialNodes(usize, usize),
}

/// Node-index range of the axial unit cell `[t, t+1]` (physical units).
pub fn axial_unit_cell(grid: &Grid, t: f64) -> (usize, usize) {
    let n_cell = (1.0 / grid.h).round() as usize;
    let lo = ((t - grid.origin) / grid.h).round() as isize;
    let lo = lo.max(0) as usize;
    (lo, (lo + n_cell).min(grid.dims[0]))
}

/// Midpoint-rule integral (sum x h^d); Dirichlet grids use trapezoid weights
/// along the axial direction.
pub fn integrate(u: &ScalarField, window: Window) -> f64 {
    let g = &u.grid;
    let (lo, hi) = match window {
        Window::All => (0usize, g.dims[0]),
        Window::AxialNodes(a, b) => (a, b.min(g.dims[0])),
    };
    let s0 = g.strides()[0];
    let hd = g.h.powi(g.d as i32);
    let dirichlet = g.axial_bc == AxialBc::Dirichlet;
    let n_last = g.dims[0] - 1;
    let total = par::det_sum((hi - lo) * s0, |k| {
        let i0 = lo + k / s0;
        let idx = i0 * s0 + k % s0;
        let w = if dirichlet && (i0 == 0 || i0 == n_last) {
            0.5
        } else {
            1.0
        };
        w * u.data[idx]
    });
    total * hd
}

/// L2 inner product with the integration weights.
pub fn inner(u: &ScalarField, v: &ScalarField) -> f64 {
    let hd = u.grid.h.powi(u.grid.d as i32);
    par::dot(&u.data, &v.data) * hd
}

pub fn l2_norm(u: &ScalarField) -> f64 {
    inner(u, u).sqrt()
}

pub fn linf_norm(u: &ScalarField) -> f64 {
    par::max_abs(&u.data)
}

fn slab_parallel<F>(grid: &Grid, out: &mut [f64], f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let s0 = grid.strides()[0];
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_mut(s0).enumerate().for_each(|(i0, slab)| {
            f(i0, slab);
        });
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i0, slab) in out.chunks_mut(s0).enumerate() {
            f(i0, slab);
        }
    }
}

/// Serial twin of the divergence-form apply, for the bench suite.
pub fn apply_divergence_form_serial(m: &MatrixField, u: &ScalarField, out: &mut ScalarField) {
    div_form_raw(&u.grid, m, &u.data, &mut out.data, false);
}

/// div(M grad u) with the hybrid stencil described in the module docs.
pub fn apply_divergence_form(m: &MatrixField, u: &ScalarField, out: &mut ScalarField) {
    div_form_raw(&u.grid, m, &u.data, &mut out.data, true);
}

pub(crate) fn div_form_raw(
    g: &Arc<Grid>,
    m: &MatrixField,
    u: &[f64],
    out: &mut [f64],
    parallel: bool,
) {
    debug_assert!(g.same_as(m.grid()).is_ok());
    let d = g.d;
    let s = g.strides();
    let dims = g.dims;
    let tab = g.neighbor_tables();
    let h = g.h;
    let inv_h2 = 1.0 / (h * h);
    let inv_2h = 0.5 / h;
    let dirichlet = g.axial_bc == AxialBc::Dirichlet;
    let n_last = dims[0] - 1;
    let ud = u;

    let body = |i0: usize, slab: &mut [f64]| {
        if dirichlet && (i0 == 0 || i0 == n_last) {
            slab.copy_from_slice(&ud[i0 * s[0]..(i0 + 1) * s[0]]);
            return;
        }
        let i0p = tab.plus[0][i0];
        let i0m = tab.minus[0][i0];
        for i1 in 0..dims[1] {
            let i1p = tab.plus[1][i1];
            let i1m = tab.minus[1][i1];
            for i2 in 0..dims[2] {
                let (i2p, i2m) = if d == 3 {
                    (tab.plus[2][i2], tab.minus[2][i2])
                } else {
                    (0, 0)
                };
                let here = [i0, i1, i2];
                let plus = [i0p, i1p, i2p];
                let minus = [i0m, i1m, i2m];
                let idx = i0 * s[0] + i1 * s[1] + i2 * s[2];
                let off = i1 * s[1] + i2 * s[2];

                let mut acc = 0.0;
                // Diagonal terms: conservative face fluxes.
                for a in 0..d {
                    let maa = &m.at(a, a).data;
                    let mut cp = here;
                    cp[a] = plus[a];
                    let mut cm = here;
                    cm[a] = minus[a];
                    let ip = cp[0] * s[0] + cp[1] * s[1] + cp[2] * s[2];
                    let im = cm[0] * s[0] + cm[1] * s[1] + cm[2] * s[2];
                    let mu_p = 0.5 * (maa[idx] + maa[ip]);
                    let mu_m = 0.5 * (maa[idx] + maa[im]);
                    acc += (mu_p * (ud[ip] - ud[idx]) - mu_m * (ud[idx] - ud[im])) * inv_h2;
                }
                // Mixed terms: centered composition D_a( M_ab D_b u ).
                for a in 0..d {
                    for b in 0..d {
                        if a == b {
                            continue;
                        }
                        let mab = &m.at(a, b).data;
                        // Flux M_ab * D_b^c u evaluated at here +/- e_a.
                        let mut f = [0.0; 2];
                        for (sgn, fv) in f.iter_mut().enumerate() {
                            let mut c = here;
                            c[a] = if sgn == 0 { plus[a] } else { minus[a] };
                            let base = c[0] * s[0] + c[1] * s[1] + c[2] * s[2];
                            let mut cbp = c;
                            cbp[b] = tab.plus[b][c[b]];
                            let mut cbm = c;
                            cbm[b] = tab.minus[b][c[b]];
                            let ibp = cbp[0] * s[0] + cbp[1] * s[1] + cbp[2] * s[2];
                            let ibm = cbm[0] * s[0] + cbm[1] * s[1] + cbm[2] * s[2];
                            *fv = mab[base] * (ud[ibp] - ud[ibm]) * inv_2h;
                        }
                        acc += (f[0] - f[1]) * inv_2h;
                    }
                }
                slab[off] = acc;
            }
        }
    };

    if parallel {
        slab_parallel(g, out, body);
    } else {
        let s0 = s[0];
        for (i0, slab) in out.chunks_mut(s0).enumerate() {
            body(i0, slab);
        }
    }
}

/// Non-divergence generator a_ij D_ij u + b_i D_i u (compact diagonal,
/// four-point cross for mixed, centered drift).
pub fn apply_nondivergence(
    a: &MatrixField,
    b: &VectorField,
    u: &ScalarField,
    out: &mut ScalarField,
) {
    nondiv_raw(&u.grid, a, b, &u.data, &mut out.data);
}

pub(crate) fn nondiv_raw(
    g: &Arc<Grid>,
    a: &MatrixField,
    b: &VectorField,
    u: &[f64],
    out: &mut [f64],
) {
    debug_assert!(g.same_as(a.grid()).is_ok());
    let d = g.d;
    let s = g.strides();
    let dims = g.dims;
    let tab = g.neighbor_tables();
    let h = g.h;
    let inv_h2 = 1.0 / (h * h);
    let inv_2h = 0.5 / h;
    let inv_4h2 = 0.25 / (h * h);
    let dirichlet = g.axial_bc == AxialBc::Dirichlet;
    let n_last = dims[0] - 1;
    let ud = u;

    slab_parallel(g, out, |i0, slab| {
        if dirichlet && (i0 == 0 || i0 == n_last) {
            slab.copy_from_slice(&ud[i0 * s[0]..(i0 + 1) * s[0]]);
            return;
        }
        for i1 in 0..dims[1] {
            for i2 in 0..dims[2] {
                let here = [i0, i1, i2];
                let idx = i0 * s[0] + i1 * s[1] + i2 * s[2];
                let off = i1 * s[1] + i2 * s[2];
                let mut acc = 0.0;
                for ax in 0..d {
                    let mut cp = here;
                    cp[ax] = tab.plus[ax][here[ax]];
                    let mut cm = here;
                    cm[ax] = tab.minus[ax][here[ax]];
                    let ip = cp[0] * s[0] + cp[1] * s[1] + cp[2] * s[2];
                    let im = cm[0] * s[0] + cm[1] * s[1] + cm[2] * s[2];
                    acc += a.at(ax, ax).data[idx] * (ud[ip] - 2.0 * ud[idx] + ud[im]) * inv_h2;
                    acc += b.comps[ax].data[idx] * (ud[ip] - ud[im]) * inv_2h;
                    for bx in (ax + 1)..d {
                        // Four-point cross, applied once per unordered pair
                        // with the symmetrized coefficient a_ab + a_ba.
                        let coeff = a.at(ax, bx).data[idx] + a.at(bx, ax).data[idx];
                        let mut cpp = cp;
                        cpp[bx] = tab.plus[bx][here[bx]];
                        let mut cpm = cp;
                        cpm[bx] = tab.minus[bx][here[bx]];
                        let mut cmp = cm;
                        cmp[bx] = tab.plus[bx][here[bx]];
                        let mut cmm = cm;
                        cmm[bx] = tab.minus[bx][here[bx]];
                        let ipp = cpp[0] * s[0] + cpp[1] * s[1] + cpp[2] * s[2];
                        let ipm = cpm[0] * s[0] + cpm[1] * s[1] + cpm[2] * s[2];
                        let imp = cmp[0] * s[0] + cmp[1] * s[1] + cmp[2] * s[2];
                        let imm = cmm[0] * s[0] + cmm[1] * s[1] + cmm[2] * s[2];
                        acc += coeff * (ud[ipp] - ud[ipm] - ud[imp] + ud[imm]) * inv_4h2;
                    }
                }
                slab[off] = acc;
            }
        }
    });
}

/// Exact transpose of [`apply_nondivergence`]:
/// m -> D_ij(a_ij m) - D_i(b_i m) with the same stencils.
pub fn apply_generator_transpose(
    a: &MatrixField,
    b: &VectorField,
    m_in: &ScalarField,
    out: &mut ScalarField,
) {
    gen_transpose_raw(&m_in.grid, a, b, &m_in.data, &mut out.data);
}

pub(crate) fn gen_transpose_raw(
    g: &Arc<Grid>,
    a: &MatrixField,
    b: &VectorField,
    m_in: &[f64],
    out: &mut [f64],
) {
    let d = g.d;
    let s = g.strides();
    let dims = g.dims;
    let tab = g.neighbor_tables();
    let h = g.h;
    let inv_h2 = 1.0 / (h * h);
    let inv_2h = 0.5 / h;
    let inv_4h2 = 0.25 / (h * h);
    let dirichlet = g.axial_bc == AxialBc::Dirichlet;
    let n_last = dims[0] - 1;
    let md = m_in;

    // Product fields evaluated on the fly: (a_ij m)(J), (b_i m)(J).
    slab_parallel(g, out, |i0, slab| {
        if dirichlet && (i0 == 0 || i0 == n_last) {
            slab.copy_from_slice(&md[i0 * s[0]..(i0 + 1) * s[0]]);
            return;
        }
        for i1 in 0..dims[1] {
            for i2 in 0..dims[2] {
                let here = [i0, i1, i2];
                let idx = i0 * s[0] + i1 * s[1] + i2 * s[2];
                let off = i1 * s[1] + i2 * s[2];
                let mut acc = 0.0;
                for ax in 0..d {
                    let aaa = &a.at(ax, ax).data;
                    let bb = &b.comps[ax].data;
                    let mut cp = here;
                    cp[ax] = tab.plus[ax][here[ax]];
                    let mut cm = here;
                    cm[ax] = tab.minus[ax][here[ax]];
                    let ip = cp[0] * s[0] + cp[1] * s[1] + cp[2] * s[2];
                    let im = cm[0] * s[0] + cm[1] * s[1] + cm[2] * s[2];
                    acc += (aaa[ip] * md[ip] - 2.0 * aaa[idx] * md[idx] + aaa[im] * md[im])
                        * inv_h2;
                    acc -= (bb[ip] * md[ip] - bb[im] * md[im]) * inv_2h;
                    for bx in (ax + 1)..d {
                        let mut cpp = cp;
                        cpp[bx] = tab.plus[bx][here[bx]];
                        let mut cpm = cp;
                        cpm[bx] = tab.minus[bx][here[bx]];
                        let mut cmp = cm;
                        cmp[bx] = tab.plus[bx][here[bx]];
                        let mut cmm = cm;
                        cmm[bx] = tab.minus[bx][here[bx]];
                        let ipp = cpp[0] * s[0] + cpp[1] * s[1] + cpp[2] * s[2];
                        let ipm = cpm[0] * s[0] + cpm[1] * s[1] + cpm[2] * s[2];
                        let imp = cmp[0] * s[0] + cmp[1] * s[1] + cmp[2] * s[2];
                        let imm = cmm[0] * s[0] + cmm[1] * s[1] + cmm[2] * s[2];
                        let prod = |k: usize| {
                            (a.at(ax, bx).data[k] + a.at(bx, ax).data[k]) * md[k]
                        };
                        acc += (prod(ipp) - prod(ipm) - prod(imp) + prod(imm)) * inv_4h2;
                    }
                }
                slab[off] = acc;
            }
        }
    });
}

/// Centered drift application b . grad u (diagnostic for the conservative
/// drift representation; second-order consistent only).
pub fn apply_drift_centered(b: &VectorField, u: &ScalarField, out: &mut ScalarField) {
    let g = u.grid.clone();
    let d = g.d;
    let s = g.strides();
    let dims = g.dims;
    let tab = g.neighbor_tables();
    let inv_2h = 0.5 / g.h;
    let dirichlet = g.axial_bc == AxialBc::Dirichlet;
    let n_last = dims[0] - 1;
    let ud = &u.data;
    slab_parallel(&g, &mut out.data, |i0, slab| {
        if dirichlet && (i0 == 0 || i0 == n_last) {
            slab.fill(0.0);
            return;
        }
        for i1 in 0..dims[1] {
            for i2 in 0..dims[2] {
                let here = [i0, i1, i2];
                let idx = i0 * s[0] + i1 * s[1] + i2 * s[2];
                let off = i1 * s[1] + i2 * s[2];
                let mut acc = 0.0;
                for ax in 0..d {
                    let mut cp = here;
                    cp[ax] = tab.plus[ax][here[ax]];
                    let mut cm = here;
                    cm[ax] = tab.minus[ax][here[ax]];
                    let ip = cp[0] * s[0] + cp[1] * s[1] + cp[2] * s[2];
                    let im = cm[0] * s[0] + cm[1] * s[1] + cm[2] * s[2];
                    acc += b.comps[ax].data[idx] * (ud[ip] - ud[im]) * inv_2h;
                }
                slab[off] = acc;
            }
        }
    });
}

/// Centered gradient; one-sided second-order at Dirichlet end planes.
pub fn gradient(u: &ScalarField) -> VectorField {
    let g = u.grid.clone();
    let d = g.d;
    let s = g.strides();
    let dims = g.dims;
    let tab = g.neighbor_tables();
    let inv_2h = 0.5 / g.h;
    let dirichlet = g.axial_bc == AxialBc::Dirichlet;
    let n_last = dims[0] - 1;
    let mut grad = VectorField::zeros(&g);
    let ud = &u.data;
    for ax in 0..d {
        slab_parallel(&g, &mut grad.comps[ax].data, |i0, slab| {
            for i1 in 0..dims[1] {
                for i2 in 0..dims[2] {
                    let here = [i0, i1, i2];
                    let idx = i0 * s[0] + i1 * s[1] + i2 * s[2];
                    let off = i1 * s[1] + i2 * s[2];
                    if ax == 0 && dirichlet && (i0 == 0 || i0 == n_last) {
                        // One-sided 2nd order: (-3u0 + 4u1 - u2) / 2h.
                        let (sgn, a, bidx, c) = if i0 == 0 {
                            (1.0, idx, idx + s[0], idx + 2 * s[0])
                        } else {
                            (-1.0, idx, idx - s[0], idx - 2 * s[0])
                        };
                        slab[off] =
                            sgn * (-3.0 * ud[a] + 4.0 * ud[bidx] - ud[c]) * inv_2h;
                        continue;
                    }
                    let mut cp = here;
                    cp[ax] = tab.plus[ax][here[ax]];
                    let mut cm = here;
                    cm[ax] = tab.minus[ax][here[ax]];
                    let ip = cp[0] * s[0] + cp[1] * s[1] + cp[2] * s[2];
                    let im = cm[0] * s[0] + cm[1] * s[1] + cm[2] * s[2];
                    slab[off] = (ud[ip] - ud[im]) * inv_2h;
                }
            }
        });
    }
    grad
}

/// Removes the mean (periodic grids) so projected fields sum to zero exactly.
pub fn project_mean_zero(u: &mut ScalarField) {
    let mean = u.mean();
    par::map_chunks(&mut u.data, |_, chunk| {
        for v in chunk {
            *v -= mean;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use std::f64::consts::PI;

    fn sin1(g: &Arc<Grid>) -> ScalarField {
        ScalarField::from_fn(g, |p| (2.0 * PI * p[0]).sin())
    }

    #[test]
    fn divergence_form_eigenfunction() {
        let g = Grid::torus(2, 64).unwrap();
        let u = sin1(&g);
        let m = MatrixField::identity(&g);
        let mut out = ScalarField::zeros(&g);
        apply_divergence_form(&m, &u, &mut out);
        // Discrete eigenvalue of the compact stencil: -(2/h sin(pi h k))^2.
        let h = g.h;
        let lam = -(2.0 / h * (PI * h).sin()).powi(2);
        let mut worst = 0.0f64;
        for i in 0..u.data.len() {
            worst = worst.max((out.data[i] - lam * u.data[i]).abs());
        }
        assert!(worst < 1e-9, "worst {worst}");
        // And the continuum value to O(h^2).
        assert!((lam + 4.0 * PI * PI).abs() < 4.0 * PI * PI * 2e-3);
    }

    #[test]
    fn divergence_form_scaling() {
        let g = Grid::torus(2, 64).unwrap();
        let u = sin1(&g);
        let m = MatrixField::from_fn(&g, |_, i, j| if i == j { (2 - i) as f64 } else { 0.0 });
        let mut out = ScalarField::zeros(&g);
        apply_divergence_form(&m, &u, &mut out);
        let h = g.h;
        let lam = -2.0 * (2.0 / h * (PI * h).sin()).powi(2);
        for i in 0..u.data.len() {
            assert!((out.data[i] - lam * u.data[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn constants_in_kernel() {
        let g = Grid::torus(3, 16).unwrap();
        let u = ScalarField::constant(&g, 3.7);
        let m = MatrixField::from_fn(&g, |p, i, j| {
            if i == j {
                2.0 + (2.0 * PI * p[i.min(1)]).sin() * 0.3
            } else {
                0.2 * (2.0 * PI * p[0]).cos()
            }
        });
        let mut out = ScalarField::zeros(&g);
        apply_divergence_form(&m, &u, &mut out);
        assert!(linf_norm(&out) < 1e-12);
        let b = VectorField::from_fn(&g, |p| [(2.0 * PI * p[1]).cos(), 0.5, -0.25]);
        apply_nondivergence(&m, &b, &u, &mut out);
        assert!(linf_norm(&out) < 1e-12);
    }

    #[test]
    fn nondivergence_drift_example() {
        // a = I, b = e1, u = sin(2 pi y1): generator gives
        // -4 pi^2 sin + 2 pi cos + O(h^2).
        let g = Grid::torus(2, 128).unwrap();
        let u = sin1(&g);
        let a = MatrixField::identity(&g);
        let b = VectorField::from_fn(&g, |_| [1.0, 0.0, 0.0]);
        let mut out = ScalarField::zeros(&g);
        apply_nondivergence(&a, &b, &u, &mut out);
        let mut worst = 0.0f64;
        for i in 0..u.data.len() {
            let p = g.position(g.coords_of(i));
            let exact =
                -4.0 * PI * PI * (2.0 * PI * p[0]).sin() + 2.0 * PI * (2.0 * PI * p[0]).cos();
            worst = worst.max((out.data[i] - exact).abs());
        }
        assert!(worst < 4.0 * PI * PI * 1.5e-3, "worst {worst}");
    }

    #[test]
    fn adjointness_divergence_form() {
        // <L_M u, v> = <u, L_{M^T} v> to near machine precision.
        let g = Grid::torus(2, 32).unwrap();
        let m = MatrixField::from_fn(&g, |p, i, j| {
            let base = if i == j { 2.0 } else { 0.0 };
            base + 0.3 * ((2.0 * PI * (p[0] + 0.17 * (i + 2 * j) as f64)).sin()
                * (2.0 * PI * p[1]).cos())
        });
        let mt = {
            let mut t = m.clone();
            for i in 0..t.d {
                for j in 0..t.d {
                    t.comps[i * t.d + j] = m.comps[j * m.d + i].clone();
                }
            }
            t
        };
        let u = ScalarField::from_fn(&g, |p| (2.0 * PI * p[0]).sin() + (4.0 * PI * p[1]).cos());
        let v = ScalarField::from_fn(&g, |p| (2.0 * PI * (p[0] + p[1])).cos());
        let mut lu = ScalarField::zeros(&g);
        let mut ltv = ScalarField::zeros(&g);
        apply_divergence_form(&m, &u, &mut lu);
        apply_divergence_form(&mt, &v, &mut ltv);
        let lhs = inner(&lu, &v);
        let rhs = inner(&u, &ltv);
        let scale = l2_norm(&lu) * l2_norm(&v) + 1e-30;
        assert!((lhs - rhs).abs() / scale < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn generator_transpose_is_exact_adjoint() {
        let g = Grid::torus(2, 32).unwrap();
        let a = MatrixField::from_fn(&g, |p, i, j| {
            if i == j {
                1.5 + 0.4 * (2.0 * PI * p[1 - i.min(1)]).cos()
            } else {
                0.2 * (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).sin()
            }
        });
        let b = VectorField::from_fn(&g, |p| {
            [
                (2.0 * PI * p[1]).sin(),
                -0.7 * (2.0 * PI * p[0]).cos(),
                0.0,
            ]
        });
        let u = ScalarField::from_fn(&g, |p| (2.0 * PI * p[0]).cos() * (2.0 * PI * p[1]).sin());
        let v = ScalarField::from_fn(&g, |p| (4.0 * PI * p[0]).sin() + (2.0 * PI * p[1]).cos());
        let mut gu = ScalarField::zeros(&g);
        let mut gtv = ScalarField::zeros(&g);
        apply_nondivergence(&a, &b, &u, &mut gu);
        apply_generator_transpose(&a, &b, &v, &mut gtv);
        let lhs = inner(&gu, &v);
        let rhs = inner(&u, &gtv);
        let scale = l2_norm(&gu) * l2_norm(&v) + 1e-30;
        assert!((lhs - rhs).abs() / scale < 1e-13, "{lhs} vs {rhs}");
    }

    #[test]
    fn integrate_examples() {
        let g = Grid::torus(2, 64).unwrap();
        let one = ScalarField::constant(&g, 1.0);
        assert!((integrate(&one, Window::All) - 1.0).abs() < 1e-13);
        let s = sin1(&g);
        assert!(integrate(&s, Window::All).abs() < 1e-12);
        // Constant over a unit axial cell of a cylinder.
        let cg = Grid::double_torus(2, 2, 16).unwrap();
        let c = ScalarField::constant(&cg, 2.5);
        let (lo, hi) = axial_unit_cell(&cg, 1.0);
        assert!((integrate(&c, Window::AxialNodes(lo, hi)) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn truncation_error_second_order() {
        // Refining n -> 2n shrinks truncation error by 4x +/- 20%.
        let errs: Vec<f64> = [32usize, 64]
            .iter()
            .map(|&n| {
                let g = Grid::torus(2, n).unwrap();
                let u = ScalarField::from_fn(&g, |p| {
                    (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).cos()
                });
                let m = MatrixField::from_fn(&g, |p, i, j| {
                    if i == j {
                        1.0 + 0.3 * (2.0 * PI * p[(i + 1) % 2]).sin()
                    } else {
                        0.1 * (2.0 * PI * p[0]).cos()
                    }
                });
                let mut out = ScalarField::zeros(&g);
                apply_divergence_form(&m, &u, &mut out);
                // Exact continuum value via symbolic differentiation.
                let exact = |p: &[f64; 3]| {
                    let (x, y) = (p[0], p[1]);
                    let tp = 2.0 * PI;
                    let sx = (tp * x).sin();
                    let cx = (tp * x).cos();
                    let sy = (tp * y).sin();
                    let cy = (tp * y).cos();
                    // u = sx*cy
                    // M = [[1+0.3 sy, 0.1 cx], [0.1 cx, 1+0.3 sx]]
                    let uy = -tp * sx * sy;
                    let uxx = -tp * tp * sx * cy;
                    let uyy = -tp * tp * sx * cy;
                    let uxy = -tp * tp * cx * sy;
                    let m11 = 1.0 + 0.3 * sy;
                    let m22 = 1.0 + 0.3 * sx;
                    let m12 = 0.1 * cx;
                    let m12x = -0.1 * tp * sx;
                    // div(M grad u) = d_x(m11 ux + m12 uy) + d_y(m12 ux + m22 uy);
                    // m11, m22 depend only on the other variable, m12 only on x.
                    (m11 * uxx + m12x * uy + m12 * uxy) + (m12 * uxy + m22 * uyy)
                };
                let mut worst = 0.0f64;
                for i in 0..out.data.len() {
                    let p = g.position(g.coords_of(i));
                    worst = worst.max((out.data[i] - exact(&p)).abs());
                }
                worst
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.2 && ratio < 4.8, "ratio {ratio}");
    }
}
