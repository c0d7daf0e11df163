//! Cell problems: periodic correctors in divergence and non-divergence form,
//! one-sided correctors on the half-cylinder, and the effective tensors
//! assembled from them through both quadrature routes.

use crate::error::{CoreError, Result};
use crate::grid::{AxialBc, Grid, MatrixField, ScalarField, VectorField};
use crate::linsolve::{
    bicgstab, cg, Generator, LinOp, Precond, RankOneAugmented, SolveStats,
};
use crate::mac::{self, EdgeField, MacMatrix, PlaqField};
use crate::mg::{Multigrid, MultigridParams};
use crate::ops;
use crate::par;
use crate::tensor::SmallMat;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrectorKind {
    DivPeriodic,
    NondivPeriodic,
    OneSided,
}

#[derive(Clone)]
pub struct CorrectorSet {
    pub kind: CorrectorKind,
    pub chi: Vec<ScalarField>,
    pub stats: Vec<SolveStats>,
}

/// Matrix-free staggered divergence-form operator, negated so the symmetric
/// case is positive definite (modulo constants).
pub struct MacDivOp<'a> {
    pub m: &'a MacMatrix,
}

impl LinOp for MacDivOp<'_> {
    fn len(&self) -> usize {
        self.m.grid().n_nodes()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let grid = self.m.grid().clone();
        let u = ScalarField::from_vec(&grid, x.to_vec());
        let mut out = ScalarField::from_vec(&grid, std::mem::take(y));
        mac::mac_apply(self.m, &u, usize::MAX, &mut out);
        *y = out.data;
        let dirichlet = grid.axial_bc == AxialBc::Dirichlet;
        let s0 = grid.strides()[0];
        let n_last = grid.dims[0] - 1;
        par::map_chunks(y, |start, chunk| {
            for (k, v) in chunk.iter_mut().enumerate() {
                let i0 = (start + k) / s0;
                if dirichlet && (i0 == 0 || i0 == n_last) {
                    *v = x[start + k];
                } else {
                    *v = -*v;
                }
            }
        });
    }
}

fn mg_sym(grid: &Arc<Grid>, sym: &MatrixField) -> Multigrid {
    Multigrid::new(grid, sym, None, MultigridParams::default())
}

/// Solves the d divergence-form cell problems div(M(grad chi_k + e_k)) = 0,
/// mean-zero on periodic grids.
pub fn solve_periodic_corrector_div(m: &MacMatrix, tol: f64) -> Result<CorrectorSet> {
    let grid = m.grid().clone();
    let d = grid.d;
    let op = MacDivOp { m };
    let mg = mg_sym(&grid, &m.sym);
    let zero = ScalarField::zeros(&grid);
    let symmetric = m.antisym.is_empty() && m.sym.symmetry_defect() < 1e-12;
    let mut chi = Vec::with_capacity(d);
    let mut stats = Vec::with_capacity(d);
    for k in 0..d {
        // rhs = + div(M e_k) so that (-div(M grad)) chi = rhs.
        let fluxes = mac::mac_flux(m, &zero, k);
        let mut rhs = ScalarField::zeros(&grid);
        mac::divergence(&fluxes, &mut rhs);
        let mut x = vec![0.0; grid.n_nodes()];
        let st = if symmetric {
            cg(&op, &mg, &rhs.data, &mut x, tol, 100_000)?
        } else {
            bicgstab(&op, &mg, &rhs.data, &mut x, tol, 100_000)?
        };
        let mut f = ScalarField::from_vec(&grid, x);
        ops::project_mean_zero(&mut f);
        chi.push(f);
        stats.push(st);
    }
    Ok(CorrectorSet {
        kind: CorrectorKind::DivPeriodic,
        chi,
        stats,
    })
}

/// Solves the d non-divergence cell problems
/// a_ik D_ik chi_j + b_i D_i chi_j = -b_j, mean-zero, with the right-hand
/// side compatibility-projected against the discrete invariant measure.
pub fn solve_periodic_corrector_nondiv(
    a_tilde: &MatrixField,
    b_tilde: &VectorField,
    m_measure: &ScalarField,
    tol: f64,
) -> Result<CorrectorSet> {
    let grid = m_measure.grid.clone();
    let d = grid.d;
    let n = grid.n_nodes();
    let gen = Generator {
        grid: grid.clone(),
        a_tilde,
        b_tilde,
    };
    // Kernel pin: -G chi + gamma mean(chi) m_hat = -rhs.
    let mean_weights = vec![1.0 / n as f64; n];
    let mhat: Vec<f64> = {
        let scale = 1.0 / m_measure.mean();
        m_measure.data.iter().map(|v| v * scale).collect()
    };
    let aug = RankOneAugmented {
        inner: &gen,
        weights: &mean_weights,
        v0: &mhat,
        gamma: 1.0,
        sign: -1.0,
    };
    let mg = Multigrid::new(&grid, a_tilde, Some(1.0), MultigridParams::default());
    let mm = par::dot(&m_measure.data, &m_measure.data);
    let mut chi = Vec::with_capacity(d);
    let mut stats = Vec::with_capacity(d);
    for j in 0..d {
        let mut rhs: Vec<f64> = b_tilde.comps[j].data.clone(); // -(-b_j) = b_j for -G
        let proj = par::dot(&rhs, &m_measure.data) / mm;
        par::axpy(-proj, &m_measure.data, &mut rhs);
        let mut x = vec![0.0; n];
        let st = bicgstab(&aug, &mg, &rhs, &mut x, tol, 100_000)?;
        let mut f = ScalarField::from_vec(&grid, x);
        ops::project_mean_zero(&mut f);
        chi.push(f);
        stats.push(st);
    }
    Ok(CorrectorSet {
        kind: CorrectorKind::NondivPeriodic,
        chi,
        stats,
    })
}

/// Effective matrix through the non-divergence quadrature:
/// A_ij = int (a_ij + 2 a_ik d_k chi_j + a_kl d_k chi_i d_l chi_j) m dy.
pub fn effective_matrix_nondiv(
    a_tilde: &MatrixField,
    chi: &CorrectorSet,
    m_measure: &ScalarField,
) -> SmallMat {
    let grid = &m_measure.grid;
    let d = grid.d;
    let grads: Vec<VectorField> = chi.chi.iter().map(ops::gradient).collect();
    let mut out = SmallMat::zeros(d);
    let volume = grid.n_nodes() as f64 * grid.h.powi(grid.d as i32);
    for i in 0..d {
        for j in 0..d {
            let total = par::det_sum(grid.n_nodes(), |k| {
                let mut v = a_tilde.at(i, j).data[k];
                for kk in 0..d {
                    v += 2.0 * a_tilde.at(i, kk).data[k] * grads[j].comps[kk].data[k];
                    for ll in 0..d {
                        v += a_tilde.at(kk, ll).data[k]
                            * grads[i].comps[kk].data[k]
                            * grads[j].comps[ll].data[k];
                    }
                }
                v * m_measure.data[k]
            });
            out.a[i][j] = total / grid.n_nodes() as f64 * volume / volume; // mean
        }
    }
    out
}

/// Effective matrix through the divergence bracket: row i, column j is the
/// lattice mean of the flux of chi_j + y_j through edge-i faces.
pub fn effective_matrix_div(m: &MacMatrix, chi: &CorrectorSet) -> SmallMat {
    let d = m.grid().d;
    let mut out = SmallMat::zeros(d);
    for j in 0..d {
        let fluxes = mac::mac_flux(m, &chi.chi[j], j);
        let means = mac::flux_means(&fluxes);
        for i in 0..d {
            out.a[i][j] = means[i];
        }
    }
    out
}

/// Windowed effective matrix over |y1| in [lo, hi) per the cylinder bracket.
pub fn effective_matrix_div_window(
    m: &MacMatrix,
    chi: &[ScalarField],
    lo: f64,
    hi: f64,
) -> SmallMat {
    let d = m.grid().d;
    let mut out = SmallMat::zeros(d);
    for j in 0..d {
        let fluxes = mac::mac_flux(m, &chi[j], j);
        let means = mac::flux_means_window(&fluxes, lo, hi);
        for i in 0..d {
            out.a[i][j] = means[i];
        }
    }
    out
}

/// The flux-defect rows B_ij = A_hat_ij - flux_i(chi_j + y_j) as edge fields;
/// exactly mean-zero columns given the lattice-mean effective matrix, and
/// discretely divergence-free up to the corrector solve residual.
pub fn flux_defect(m: &MacMatrix, chi: &CorrectorSet, a_hat: &SmallMat) -> Vec<Vec<EdgeField>> {
    let d = m.grid().d;
    let mut rows = Vec::with_capacity(d);
    for j in 0..d {
        let fluxes = mac::mac_flux(m, &chi.chi[j], j);
        let mut per_i = Vec::with_capacity(d);
        for (i, f) in fluxes.into_iter().enumerate() {
            let mut b = f;
            for v in b.data.iter_mut() {
                *v = a_hat.a[i][j] - *v;
            }
            per_i.push(b);
        }
        rows.push(per_i);
    }
    rows
}

/// Tiles a periodic matrix field onto a cylinder grid.
pub fn tile_matrix(m: &MatrixField, grid: &Arc<Grid>) -> MatrixField {
    let mut out = MatrixField::zeros(grid);
    for i in 0..m.d {
        for j in 0..m.d {
            out.comps[i * m.d + j] =
                crate::measure::tile_periodic(m.at(i, j), grid);
        }
    }
    out
}

/// Tiles a periodic plaquette field onto a cylinder grid (matching spacing).
pub fn tile_plaq(p: &PlaqField, grid: &Arc<Grid>) -> PlaqField {
    let mut out = PlaqField::zeros(grid, p.axes.0, p.axes.1);
    let src_dims = p.dims;
    let d = grid.d;
    let shift = (-grid.origin / grid.h).round() as usize;
    let src_strides = {
        let mut s = [1usize; 3];
        if d == 3 {
            s[1] = src_dims[2];
            s[0] = src_dims[1] * src_dims[2];
        } else {
            s[0] = src_dims[1];
        }
        s
    };
    let out_dims = out.dims;
    for k in 0..out.data.len() {
        let c = mac::coords_in(&out_dims, d, k);
        let mut sc = [0usize; 3];
        sc[0] = (c[0] + shift) % src_dims[0];
        for a in 1..d {
            sc[a] = c[a] % src_dims[a];
        }
        out.data[k] = p.data[sc[0] * src_strides[0] + sc[1] * src_strides[1] + sc[2] * src_strides[2]];
    }
    out
}

/// Tiles periodic scalar correctors onto a cylinder grid.
pub fn tile_correctors(chi: &CorrectorSet, grid: &Arc<Grid>) -> Vec<ScalarField> {
    chi.chi
        .iter()
        .map(|f| crate::measure::tile_periodic(f, grid))
        .collect()
}

pub struct OneSidedCorrector {
    /// chi_> = tiled periodic corrector + decaying difference.
    pub chi: Vec<ScalarField>,
    /// The difference fields (Dirichlet at the truncation ends).
    pub diff: Vec<ScalarField>,
    pub stats: Vec<SolveStats>,
    /// Fitted exponential decay rate of the per-cell gradient energy.
    pub tail_rate: f64,
    /// End-cell tail energy relative to the total.
    pub tail_fraction: f64,
}

/// Solves the one-sided difference problem
/// div(A_> grad w_k) = -div((A_> - A_lim)(e_k + grad chi_lim_k))
/// on a truncated cylinder with homogeneous Dirichlet ends, where `a_lim` is
/// the periodic limit matrix (already tiled) and `chi_lim` its correctors
/// (already tiled).
pub fn solve_one_sided_corrector(
    a_gt: &MacMatrix,
    a_lim: &MacMatrix,
    chi_lim: &[ScalarField],
    tol: f64,
) -> Result<OneSidedCorrector> {
    let grid = a_gt.grid().clone();
    assert_eq!(grid.axial_bc, AxialBc::Dirichlet);
    let d = grid.d;
    let op = MacDivOp { m: a_gt };
    let mg = mg_sym(&grid, &a_gt.sym);
    let symmetric = a_gt.antisym.is_empty() && a_gt.sym.symmetry_defect() < 1e-12;
    let diff_m = mac_sub(a_gt, a_lim);
    let mut chi = Vec::with_capacity(d);
    let mut diff = Vec::with_capacity(d);
    let mut stats = Vec::with_capacity(d);
    let mut tail_rate = f64::INFINITY;
    let mut tail_fraction = 0.0f64;
    for k in 0..d {
        // rhs for (-div(A_> grad)) w = +div((A_> - A_lim)(grad chi_lim + e_k)).
        let fluxes = mac::mac_flux(&diff_m, &chi_lim[k], k);
        let mut rhs = ScalarField::zeros(&grid);
        mac::divergence(&fluxes, &mut rhs);
        let mut x = vec![0.0; grid.n_nodes()];
        let st = if symmetric {
            cg(&op, &mg, &rhs.data, &mut x, tol, 100_000)?
        } else {
            bicgstab(&op, &mg, &rhs.data, &mut x, tol, 100_000)?
        };
        let w = ScalarField::from_vec(&grid, x);
        // Per-cell gradient energy of the difference.
        let energies = cell_gradient_energy(&w);
        let total: f64 = energies.iter().sum();
        let ends = energies.first().copied().unwrap_or(0.0)
            + energies.last().copied().unwrap_or(0.0);
        if total > 0.0 {
            tail_fraction = tail_fraction.max(ends / total);
        }
        // Fit the decay from the center outward on the positive side.
        let half = energies.len() / 2;
        let samples: Vec<(f64, f64)> = energies[half..]
            .iter()
            .enumerate()
            .map(|(j, &e)| (j as f64, e))
            .collect();
        if let Some((rate, _)) = crate::fit::exp_decay_fit(&samples, total * 1e-14, 3) {
            // Energy decays at twice the field rate.
            tail_rate = tail_rate.min(0.5 * rate);
        }
        let mut c = chi_lim[k].clone();
        par::axpy(1.0, &w.data, &mut c.data);
        chi.push(c);
        diff.push(w);
        stats.push(st);
    }
    if tail_fraction > 1e-8 {
        return Err(CoreError::TailNotDecayed(format!(
            "end-cell tail energy fraction {tail_fraction:.3e} > 1e-8"
        )));
    }
    Ok(OneSidedCorrector {
        chi,
        diff,
        stats,
        tail_rate: if tail_rate.is_finite() { tail_rate } else { 0.0 },
        tail_fraction,
    })
}

/// Per-axial-unit-cell gradient energy of a field (staggered gradients).
pub fn cell_gradient_energy(w: &ScalarField) -> Vec<f64> {
    let grid = &w.grid;
    let d = grid.d;
    let grads: Vec<EdgeField> = (0..d).map(|a| mac::grad_axis(w, a)).collect();
    let n_cell = (1.0 / grid.h).round() as usize;
    let span = grid.axial_span().round() as usize;
    let mut energies = vec![0.0; span];
    let hd = grid.h.powi(d as i32);
    for (cell, e) in energies.iter_mut().enumerate() {
        let lo = cell * n_cell;
        for g in &grads {
            let s0 = {
                let mut s = [1usize; 3];
                if d == 3 {
                    s[1] = g.dims[2];
                    s[0] = g.dims[1] * g.dims[2];
                } else {
                    s[0] = g.dims[1];
                }
                s[0]
            };
            let hi = ((cell + 1) * n_cell).min(g.dims[0]);
            for i0 in lo..hi {
                for off in 0..s0 {
                    let v = g.data[i0 * s0 + off];
                    *e += v * v * hd;
                }
            }
        }
    }
    energies
}

/// Pointwise difference of two staggered matrices on matching lattices.
pub fn mac_sub(a: &MacMatrix, b: &MacMatrix) -> MacMatrix {
    let grid = a.grid();
    let d = grid.d;
    let mut sym = a.sym.clone();
    for i in 0..d {
        for j in 0..d {
            let src = &b.sym.at(i, j).data;
            for (k, v) in sym.at_mut(i, j).data.iter_mut().enumerate() {
                *v -= src[k];
            }
        }
    }
    let mut antisym: Vec<PlaqField> = a.antisym.clone();
    for p in &b.antisym {
        if let Some(mine) = antisym.iter_mut().find(|q| q.axes == p.axes) {
            for (k, v) in mine.data.iter_mut().enumerate() {
                *v -= p.data[k];
            }
        } else {
            let mut neg = p.clone();
            for v in neg.data.iter_mut() {
                *v = -*v;
            }
            antisym.push(neg);
        }
    }
    MacMatrix { sym, antisym }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{CoefficientSet, DriftSpec, ScalarEval, Side, TrigPoly, TrigTerm};
    use crate::measure::{solve_periodic_measure, DEFAULT_TOL};
    use std::f64::consts::PI;

    /// Simpson-rule quadrature oracle over [0,1].
    fn simpson<F: Fn(f64) -> f64>(f: F, n: usize) -> f64 {
        let n = n + n % 2;
        let h = 1.0 / n as f64;
        let mut s = f(0.0) + f(1.0);
        for k in 1..n {
            s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    fn laminate_profile(y: f64) -> f64 {
        1.0 / (1.0 + 0.5 * (2.0 * PI * y).sin())
    }

    #[test]
    fn identity_matrix_gives_zero_corrector() {
        let g = Grid::torus(2, 16).unwrap();
        let m = MacMatrix::symmetric(MatrixField::identity(&g));
        let set = solve_periodic_corrector_div(&m, 1e-11).unwrap();
        for chi in &set.chi {
            assert!(ops::linf_norm(chi) < 1e-10);
        }
        let a_hat = effective_matrix_div(&m, &set);
        assert!(a_hat.rel_diff(&SmallMat::identity(2)) < 1e-12);
    }

    #[test]
    fn laminate_corrector_matches_closed_form() {
        // a = diag(a(y1), 1) with a = 1/(1 + 0.5 sin): chi_1' = 1/a(y1) - 1
        // has the closed form antiderivative -cos(2 pi y1)/(4 pi) scaled.
        let g = Grid::torus(2, 128).unwrap();
        let mat = MatrixField::from_fn(&g, |p, i, j| {
            if i != j {
                0.0
            } else if i == 0 {
                laminate_profile(p[0])
            } else {
                1.0
            }
        });
        let m = MacMatrix::symmetric(mat);
        let set = solve_periodic_corrector_div(&m, 1e-11).unwrap();
        // Harmonic mean of a: 1 / int(1/a) = 1 / int(1 + 0.5 sin) = 1.
        // chi_1(y) = int (1/a - 1) = -0.5 cos(2 pi y)/(2 pi) + C, mean zero.
        let mut worst = 0.0f64;
        for k in 0..g.n_nodes() {
            let p = g.position(g.coords_of(k));
            let exact = -0.5 * (2.0 * PI * p[0]).cos() / (2.0 * PI);
            worst = worst.max((set.chi[0].data[k] - exact).abs());
        }
        assert!(worst < 1e-4, "max error {worst}");
        assert!(ops::linf_norm(&set.chi[1]) < 1e-9);
        // Effective tensor: diag(harmonic mean, arithmetic mean).
        let a_hat = effective_matrix_div(&m, &set);
        let harm = 1.0 / simpson(|y| 1.0 / laminate_profile(y), 4096);
        let arith = simpson(laminate_profile, 4096);
        assert!(
            (a_hat.a[0][0] - harm).abs() / harm < 1e-3,
            "A11 {} vs harmonic {harm}",
            a_hat.a[0][0]
        );
        assert!(
            (a_hat.a[1][1] - arith).abs() / arith < 1e-3,
            "A22 {} vs arithmetic {arith}",
            a_hat.a[1][1]
        );
        assert!(a_hat.a[0][1].abs() < 1e-10 && a_hat.a[1][0].abs() < 1e-10);
    }

    #[test]
    fn transpose_consistency_of_effective() {
        let g = Grid::torus(2, 48).unwrap();
        let base = MatrixField::from_fn(&g, |p, i, j| {
            if i == j {
                1.2 + 0.4 * (2.0 * PI * p[(i + 1) % 2]).cos()
            } else if i < j {
                0.2 * (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).sin()
            } else {
                0.1 * (2.0 * PI * p[1]).cos()
            }
        });
        let mt = {
            let mut t = base.clone();
            for i in 0..2 {
                for j in 0..2 {
                    t.comps[i * 2 + j] = base.comps[j * 2 + i].clone();
                }
            }
            t
        };
        let m = MacMatrix::symmetric(base);
        let mtm = MacMatrix::symmetric(mt);
        let s1 = solve_periodic_corrector_div(&m, 1e-11).unwrap();
        let s2 = solve_periodic_corrector_div(&mtm, 1e-11).unwrap();
        let a1 = effective_matrix_div(&m, &s1);
        let a2 = effective_matrix_div(&mtm, &s2);
        assert!(
            a1.rel_diff(&a2.transpose()) < 1e-9,
            "transpose consistency: {:?} vs {:?}",
            a1,
            a2
        );
    }

    #[test]
    fn nondiv_zero_drift_zero_corrector() {
        let g = Grid::torus(2, 24).unwrap();
        let a = MatrixField::identity(&g);
        let b = VectorField::zeros(&g);
        let m = ScalarField::constant(&g, 1.0);
        let set = solve_periodic_corrector_nondiv(&a, &b, &m, 1e-11).unwrap();
        for chi in &set.chi {
            assert!(ops::linf_norm(chi) < 1e-10);
        }
        let a_hat = effective_matrix_nondiv(&a, &set, &m);
        assert!(a_hat.rel_diff(&SmallMat::identity(2)) < 1e-12);
    }

    #[test]
    fn nondiv_perturbation_series() {
        // chi at drift amplitude s matches linear extrapolation from a tiny
        // amplitude to O(s^2).
        let g = Grid::torus(2, 32).unwrap();
        let a = MatrixField::identity(&g);
        let m1 = ScalarField::constant(&g, 1.0);
        let drift = |s: f64| {
            VectorField::from_fn(&g, |p| {
                [
                    s * (2.0 * PI * p[0]).cos(),
                    s * (2.0 * PI * (p[0] + p[1])).sin(),
                    0.0,
                ]
            })
        };
        let tiny = 1e-5;
        let small = 0.1;
        let set_tiny = solve_periodic_corrector_nondiv(&a, &drift(tiny), &m1, 1e-12).unwrap();
        let set_small = solve_periodic_corrector_nondiv(&a, &drift(small), &m1, 1e-12).unwrap();
        let scale = small / tiny;
        let mut worst = 0.0f64;
        for k in 0..g.n_nodes() {
            worst = worst
                .max((set_small.chi[0].data[k] - scale * set_tiny.chi[0].data[k]).abs());
        }
        let chi_norm = ops::linf_norm(&set_small.chi[0]);
        assert!(
            worst < 3.0 * small * small * chi_norm.max(0.1),
            "perturbation defect {worst} vs amplitude^2 {}",
            small * small
        );
    }

    #[test]
    fn cross_route_identity() {
        // q A_hat(nondiv route) equals the divergence-route tensor of
        // (a m + phi) -- here at q = 1, unit cell with a genuine drift.
        let g = Grid::torus(2, 64).unwrap();
        let psi = TrigPoly {
            c0: 0.0,
            terms: vec![TrigTerm {
                amp: 0.35,
                k: [1, 1, 0],
                phase: 0.9,
            }],
        };
        let cs = CoefficientSet {
            drift_plus: DriftSpec::DivFree {
                m_star: ScalarEval::Trig(TrigPoly {
                    c0: 1.0,
                    terms: vec![TrigTerm {
                        amp: 0.25,
                        k: [1, 0, 0],
                        phase: -PI / 2.0,
                    }],
                }),
                psi: vec![psi],
                stream_scale: 1.0,
            },
            ..CoefficientSet::identity(2)
        };
        let a_t = cs.sample_a(&g);
        let b_t = cs.sample_side_drift(Side::Plus, &g).unwrap();
        let pm = solve_periodic_measure(&cs, Side::Plus, &g, DEFAULT_TOL).unwrap();

        // Non-divergence route.
        let chi_nd = solve_periodic_corrector_nondiv(&a_t, &b_t, &pm.m, 1e-11).unwrap();
        let a_hat_nd = effective_matrix_nondiv(&a_t, &chi_nd, &pm.m);

        // Divergence route: M = a_tilde m + phi with phi the drift flux
        // corrector of the edge field.
        let edges = crate::coeff::drift_edge_field(&a_t, &b_t, &pm.m);
        let phi = crate::interface::periodic_drift_potentials(&edges, 1e-11)
            .unwrap()
            .phi;
        let mut sym = MatrixField::zeros(&g);
        for i in 0..2 {
            for j in 0..2 {
                let src = &a_t.at(i, j).data;
                for (k, v) in sym.at_mut(i, j).data.iter_mut().enumerate() {
                    *v = src[k] * pm.m.data[k];
                }
            }
        }
        let m_mac = MacMatrix { sym, antisym: phi };
        let chi_div = solve_periodic_corrector_div(&m_mac, 1e-11).unwrap();
        let a_hat_div = effective_matrix_div(&m_mac, &chi_div);
        let gap = a_hat_nd.rel_diff(&a_hat_div);
        assert!(gap < 1e-3, "route gap {gap}: {a_hat_nd:?} vs {a_hat_div:?}");
        // Ellipticity of the effective tensor.
        assert!(a_hat_div.min_quad_random(100, 7) >= cs.lambda * 0.5);
    }

    #[test]
    fn one_sided_corrector_reduces_to_periodic() {
        // A_> = A_+ everywhere: the difference vanishes.
        let cell = Grid::torus(2, 16).unwrap();
        let base = MatrixField::from_fn(&cell, |p, i, j| {
            if i == j {
                1.0 + 0.3 * (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).cos()
            } else {
                0.0
            }
        });
        let m_cell = MacMatrix::symmetric(base.clone());
        let chi_p = solve_periodic_corrector_div(&m_cell, 1e-11).unwrap();
        let cyl = Grid::truncated_cylinder(2, 4, 16).unwrap();
        let tiled = MacMatrix::symmetric(tile_matrix(&base, &cyl));
        let chi_tiled = tile_correctors(&chi_p, &cyl);
        let one =
            solve_one_sided_corrector(&tiled, &tiled, &chi_tiled, 1e-11).unwrap();
        for w in &one.diff {
            assert!(ops::linf_norm(w) < 1e-9);
        }
    }

    #[test]
    fn one_sided_decaying_perturbation_recovers_periodic_tensor() {
        // Lemma 2.2 numerics: windowed effective of A_+ + exp(-2|y1|) P(y)
        // approaches the periodic tensor.
        let n_cell = 16;
        let cell = Grid::torus(2, n_cell).unwrap();
        let base = MatrixField::from_fn(&cell, |p, i, j| {
            if i == j {
                1.0 + 0.4 * (2.0 * PI * p[(i + 1) % 2]).cos()
            } else {
                0.15 * (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).sin()
            }
        });
        let m_cell = MacMatrix::symmetric(base.clone());
        let chi_p = solve_periodic_corrector_div(&m_cell, 1e-11).unwrap();
        let a_hat_periodic = effective_matrix_div(&m_cell, &chi_p);

        let l = 6usize;
        let cyl = Grid::truncated_cylinder(2, l, n_cell).unwrap();
        let pert = MatrixField::from_fn(&cyl, |p, i, j| {
            let base_v = if i == j {
                1.0 + 0.4 * (2.0 * PI * p[(i + 1) % 2]).cos()
            } else {
                0.15 * (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).sin()
            };
            let bump = (-2.0 * p[0].abs()).exp()
                * 0.3
                * (2.0 * PI * p[1]).cos()
                * if i == j { 1.0 } else { 0.5 };
            base_v + bump
        });
        let a_gt = MacMatrix::symmetric(pert);
        let a_lim = MacMatrix::symmetric(tile_matrix(&base, &cyl));
        let chi_tiled = tile_correctors(&chi_p, &cyl);
        let one = solve_one_sided_corrector(&a_gt, &a_lim, &chi_tiled, 1e-11).unwrap();
        assert!(one.tail_rate > 0.5, "decay rate {}", one.tail_rate);
        let windowed =
            effective_matrix_div_window(&a_gt, &one.chi, -(l as f64) + 2.0, l as f64 - 2.0);
        let gap = windowed.rel_diff(&a_hat_periodic);
        assert!(gap < 1e-3, "windowed vs periodic gap {gap}");
    }
}
