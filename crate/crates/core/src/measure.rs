//! Invariant measures: the periodic cell measures, the cylinder measure on
//! the double-interface torus, plateau constants q+/q-, and tail-decay
//! diagnostics.

use crate::coeff::{centering_defect, CoefficientSet, Side};
use crate::error::{CoreError, Result};
use crate::fit::{exp_decay_fit, LineFit};
use crate::grid::{Grid, ScalarField};
use crate::linsolve::{solve_singular_adjoint, SolveStats};
use crate::ops::{self, Window};
use crate::par;
use serde::Serialize;
use std::sync::Arc;

pub const DEFAULT_TOL: f64 = 1e-10;
/// Anchor-cell tail deviation limit relative to q (plateau rejection).
pub const PLATEAU_LIMIT: f64 = 1e-4;

#[derive(Clone)]
pub struct PeriodicMeasure {
    pub side: Side,
    pub m: ScalarField,
    pub kernel_residual: f64,
    pub stats: SolveStats,
}

/// Solves (1.5)-style: transposed generator kernel on the unit torus,
/// normalized to unit mass, positive.
pub fn solve_periodic_measure(
    cs: &CoefficientSet,
    side: Side,
    grid: &Arc<Grid>,
    tol: f64,
) -> Result<PeriodicMeasure> {
    let a = cs.sample_a(grid);
    let b = cs.sample_side_drift(side, grid)?;
    let weights = ScalarField::constant(grid, grid.h.powi(grid.d as i32));
    let sol = solve_singular_adjoint(grid, &a, &b, &weights, 1.0, tol)?;
    if sol.m.min() <= 0.0 {
        return Err(CoreError::NegativeMeasure {
            min: sol.m.min(),
            max: sol.m.max(),
        });
    }
    Ok(PeriodicMeasure {
        side,
        m: sol.m,
        kernel_residual: sol.kernel_residual,
        stats: sol.stats,
    })
}

/// Centering report: quadrature of b against a measure, pass at 1e-8.
#[derive(Clone, Debug, Serialize)]
pub struct CenteringReport {
    pub defect: Vec<f64>,
    pub pass: bool,
}

pub fn centering_report(cs: &CoefficientSet, side: Side, m: &ScalarField) -> Result<CenteringReport> {
    let b = cs.sample_side_drift(side, &m.grid)?;
    let defect = centering_defect(&b, m);
    let pass = defect.iter().all(|d| d.abs() <= 1e-8);
    Ok(CenteringReport { defect, pass })
}

#[derive(Clone, Debug, Serialize)]
pub struct TailFit {
    pub rate: f64,
    pub r2: f64,
    pub points: usize,
    pub degenerate: bool,
}

impl TailFit {
    fn degenerate() -> Self {
        TailFit {
            rate: 0.0,
            r2: 0.0,
            points: 0,
            degenerate: true,
        }
    }

    fn from(fit: Option<(f64, LineFit)>) -> Self {
        match fit {
            Some((rate, f)) => TailFit {
                rate,
                r2: f.r2,
                points: f.n,
                degenerate: false,
            },
            None => TailFit::degenerate(),
        }
    }
}

#[derive(Clone)]
pub struct CylinderMeasure {
    pub m: ScalarField,
    pub q_plus: f64,
    pub q_minus: f64,
    /// Scale applied to reach the q+ + q- = 2 convention.
    pub renormalization: f64,
    pub kernel_residual: f64,
    pub stats: SolveStats,
    /// Signed cell-average deviations |int_{C_{+-,j}} (m - q m_+-)| per side.
    pub cell_dev_plus: Vec<f64>,
    pub cell_dev_minus: Vec<f64>,
    pub tail_plus: TailFit,
    pub tail_minus: TailFit,
    pub anchor_deviation: f64,
}

/// Tiles a unit-torus field onto a cylinder grid with the same spacing.
pub fn tile_periodic(f: &ScalarField, grid: &Arc<Grid>) -> ScalarField {
    let src = &f.grid;
    assert!((src.h - grid.h).abs() < 1e-15, "tiling needs equal spacing");
    let n = src.dims;
    let mut out = ScalarField::zeros(grid);
    let g = grid.clone();
    let sf = f.clone();
    par::map_chunks(&mut out.data, |start, chunk| {
        for (k, v) in chunk.iter_mut().enumerate() {
            let c = g.coords_of(start + k);
            // Axial wrap: origin is an integer multiple of the unit period.
            let shift = (-g.origin / g.h).round() as usize;
            let mut sc = [0usize; 3];
            sc[0] = (c[0] + shift) % n[0];
            for a in 1..g.d {
                sc[a] = c[a] % n[a];
            }
            *v = sf.data[src.index_of(sc)];
        }
    });
    out
}

/// Solves the cylinder measure (1.8) on the double-interface torus,
/// extracts plateau constants, fits tail decay rates, and renormalizes to
/// q+ + q- = 2.
pub fn solve_cylinder_measure(
    cs: &CoefficientSet,
    grid: &Arc<Grid>,
    m_plus: &PeriodicMeasure,
    m_minus: &PeriodicMeasure,
    tol: f64,
) -> Result<CylinderMeasure> {
    let half_length = (-grid.origin / 2.0).round() as usize;
    if half_length < 4 {
        return Err(CoreError::InvalidGrid(format!(
            "cylinder measures need L >= 4, got {half_length}"
        )));
    }
    let a = cs.sample_a(grid);
    let b = cs.sample_cylinder_drift(grid)?;
    let volume = grid.n_nodes() as f64 * grid.h.powi(grid.d as i32);
    let weights = ScalarField::constant(grid, grid.h.powi(grid.d as i32));
    // Global mean 1 <=> total mass = |D|.
    let sol = solve_singular_adjoint(grid, &a, &b, &weights, volume, tol)?;
    let mut m = sol.m;
    if m.min() <= 0.0 {
        return Err(CoreError::NegativeMeasure {
            min: m.min(),
            max: m.max(),
        });
    }

    let l = half_length as f64;
    let cell_mass = |t: f64, field: &ScalarField| -> f64 {
        let (lo, hi) = ops::axial_unit_cell(grid, t);
        ops::integrate(field, Window::AxialNodes(lo, hi))
    };
    // Plateau anchors at y1 = +-L: cells [L - 1/2, L + 1/2].
    let mut q_plus = cell_mass(l - 0.5, &m);
    let mut q_minus = cell_mass(-l - 0.5, &m);

    // Signed cell deviations per (3.2): d_j = |int_{C_{+,j}} (m - q m_+)|.
    let tiled_plus = tile_periodic(&m_plus.m, grid);
    let tiled_minus = tile_periodic(&m_minus.m, grid);
    let dev = |t: f64, q: f64, tiled: &ScalarField| -> f64 {
        let (lo, hi) = ops::axial_unit_cell(grid, t);
        let mass_m = ops::integrate(&m, Window::AxialNodes(lo, hi));
        let mass_p = ops::integrate(tiled, Window::AxialNodes(lo, hi));
        (mass_m - q * mass_p).abs()
    };
    let cells = 2 * half_length - 1;
    let cell_dev_plus: Vec<f64> = (0..cells).map(|j| dev(j as f64, q_plus, &tiled_plus)).collect();
    let cell_dev_minus: Vec<f64> = (0..cells)
        .map(|j| dev(-(j as f64) - 1.0, q_minus, &tiled_minus))
        .collect();

    // Anchor-cell deviation gate.
    let anchor_dev = dev(l - 0.5, q_plus, &tiled_plus).max(dev(-l - 0.5, q_minus, &tiled_minus));
    let q_scale = q_plus.abs().max(q_minus.abs());
    if anchor_dev > PLATEAU_LIMIT * q_scale {
        return Err(CoreError::PlateauNotReached {
            deviation: anchor_dev / q_scale,
            limit: PLATEAU_LIMIT,
        });
    }

    // Tail fits over j in [1, L-1]: between the interface cell and the anchor.
    let floor = 20.0 * tol * q_scale;
    let window = |devs: &[f64]| -> Vec<(f64, f64)> {
        devs.iter()
            .enumerate()
            .skip(1)
            .take(half_length.saturating_sub(2))
            .map(|(j, &v)| (j as f64, v))
            .collect()
    };
    let tail_plus = TailFit::from(exp_decay_fit(&window(&cell_dev_plus), floor, 4));
    let tail_minus = TailFit::from(exp_decay_fit(&window(&cell_dev_minus), floor, 4));

    // Renormalize to the q+ + q- = 2 convention.
    let scale = 2.0 / (q_plus + q_minus);
    par::scale(scale, &mut m.data);
    q_plus *= scale;
    q_minus *= scale;
    let cell_dev_plus = cell_dev_plus.iter().map(|v| v * scale).collect();
    let cell_dev_minus = cell_dev_minus.iter().map(|v| v * scale).collect();

    Ok(CylinderMeasure {
        m,
        q_plus,
        q_minus,
        renormalization: scale,
        kernel_residual: sol.kernel_residual,
        stats: sol.stats,
        cell_dev_plus,
        cell_dev_minus,
        tail_plus,
        tail_minus,
        anchor_deviation: anchor_dev / q_scale,
    })
}

/// Total-variation tail report: per-cell int |m - q m_periodic| and the
/// fitted exponential rate. Errors with FitUnstable when fewer than 4 cells
/// sit above the noise floor.
#[derive(Clone, Debug, Serialize)]
pub struct TailDecayReport {
    pub dev_plus: Vec<f64>,
    pub dev_minus: Vec<f64>,
    pub fit_plus: TailFit,
    pub fit_minus: TailFit,
}

pub fn tail_decay_report(
    cyl: &CylinderMeasure,
    m_plus: &PeriodicMeasure,
    m_minus: &PeriodicMeasure,
    noise_floor: f64,
) -> Result<TailDecayReport> {
    let grid = &cyl.m.grid;
    let half_length = (-grid.origin / 2.0).round() as usize;
    let tiled_plus = tile_periodic(&m_plus.m, grid);
    let tiled_minus = tile_periodic(&m_minus.m, grid);
    let tv_dev = |t: f64, q: f64, tiled: &ScalarField| -> f64 {
        let (lo, hi) = ops::axial_unit_cell(grid, t);
        let diff = ScalarField::from_vec(
            grid,
            cyl.m
                .data
                .iter()
                .zip(&tiled.data)
                .map(|(m, p)| (m - q * p).abs())
                .collect(),
        );
        ops::integrate(&diff, Window::AxialNodes(lo, hi))
    };
    let cells = 2 * half_length - 1;
    let dev_plus: Vec<f64> = (0..cells)
        .map(|j| tv_dev(j as f64, cyl.q_plus, &tiled_plus))
        .collect();
    let dev_minus: Vec<f64> = (0..cells)
        .map(|j| tv_dev(-(j as f64) - 1.0, cyl.q_minus, &tiled_minus))
        .collect();
    let window = |devs: &[f64]| -> Vec<(f64, f64)> {
        devs.iter()
            .enumerate()
            .take(half_length)
            .map(|(j, &v)| (j as f64, v))
            .collect()
    };
    let fit_plus = TailFit::from(exp_decay_fit(&window(&dev_plus), noise_floor, 4));
    let fit_minus = TailFit::from(exp_decay_fit(&window(&dev_minus), noise_floor, 4));
    if fit_plus.degenerate && fit_minus.degenerate {
        return Err(CoreError::FitUnstable(
            "fewer than 4 cells above the noise floor on both sides".into(),
        ));
    }
    Ok(TailDecayReport {
        dev_plus,
        dev_minus,
        fit_plus,
        fit_minus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{DriftSpec, InterfaceKind, ScalarEval, TrigPoly, TrigTerm};
    use std::f64::consts::PI;

    fn m_star(amp: f64) -> ScalarEval {
        ScalarEval::Trig(TrigPoly {
            c0: 1.0,
            terms: vec![TrigTerm {
                amp,
                k: [1, 0, 0],
                phase: -PI / 2.0,
            }],
        })
    }

    #[test]
    fn gradient_drift_recovers_designed_measure_second_order() {
        let cs = CoefficientSet {
            drift_plus: DriftSpec::GradientDrift { m_star: m_star(0.3) },
            ..CoefficientSet::identity(2)
        };
        let mut errs = Vec::new();
        for n in [64usize, 128] {
            let g = Grid::torus(2, n).unwrap();
            let pm = solve_periodic_measure(&cs, Side::Plus, &g, DEFAULT_TOL).unwrap();
            let target = ScalarField::from_fn(&g, |p| 1.0 + 0.3 * (2.0 * PI * p[0]).sin());
            let mut worst = 0.0f64;
            for k in 0..g.n_nodes() {
                worst = worst.max((pm.m.data[k] - target.data[k]).abs() / target.data[k]);
            }
            errs.push(worst);
        }
        assert!(errs[0] <= 1e-3, "n=64 err {}", errs[0]);
        assert!(errs[1] <= 2.5e-4, "n=128 err {}", errs[1]);
        let order = (errs[0] / errs[1]).log2();
        assert!((1.7..=2.3).contains(&order), "order {order}");
    }

    #[test]
    fn divfree_unit_measure_exact() {
        let psi = TrigPoly {
            c0: 0.0,
            terms: vec![TrigTerm {
                amp: 1.0,
                k: [1, 1, 0],
                phase: 0.0,
            }],
        };
        let cs = CoefficientSet {
            drift_plus: DriftSpec::DivFree {
                m_star: ScalarEval::Const(1.0),
                psi: vec![psi],
                stream_scale: 1.0,
            },
            ..CoefficientSet::identity(2)
        };
        let g = Grid::torus(2, 32).unwrap();
        let pm = solve_periodic_measure(&cs, Side::Plus, &g, 1e-10).unwrap();
        for v in &pm.m.data {
            assert!((v - 1.0).abs() < 1e-8, "m deviates: {v}");
        }
    }

    #[test]
    fn fictitious_interface_q_equal_and_tiled() {
        // Same drift on both sides: the blended problem is globally periodic.
        let cs = CoefficientSet {
            drift_plus: DriftSpec::GradientDrift { m_star: m_star(0.25) },
            drift_minus: DriftSpec::GradientDrift { m_star: m_star(0.25) },
            ..CoefficientSet::identity(2)
        };
        let cell = Grid::torus(2, 16).unwrap();
        let mp = solve_periodic_measure(&cs, Side::Plus, &cell, DEFAULT_TOL).unwrap();
        let mm = solve_periodic_measure(&cs, Side::Minus, &cell, DEFAULT_TOL).unwrap();
        let cyl = Grid::double_torus(2, 4, 16).unwrap();
        let cm = solve_cylinder_measure(&cs, &cyl, &mp, &mm, DEFAULT_TOL).unwrap();
        assert!((cm.q_plus - cm.q_minus).abs() < 1e-8);
        let tiled = tile_periodic(&mp.m, &cyl);
        for k in 0..cyl.n_nodes() {
            assert!(
                (cm.m.data[k] - cm.q_plus * tiled.data[k]).abs() < 1e-7,
                "cylinder measure should tile the periodic one"
            );
        }
        // Tail report flags degeneracy at the noise floor.
        match tail_decay_report(&cm, &mp, &mm, 1e-7) {
            Err(CoreError::FitUnstable(_)) => {}
            Ok(r) => assert!(r.fit_plus.degenerate || r.fit_plus.rate.abs() < 1.0),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn mirror_family_q_symmetric() {
        let inner = DriftSpec::DivFree {
            m_star: m_star(0.3),
            psi: vec![TrigPoly {
                c0: 0.0,
                terms: vec![TrigTerm {
                    amp: 0.5,
                    k: [1, 1, 0],
                    phase: 0.4,
                }],
            }],
            stream_scale: 1.0,
        };
        let cs = CoefficientSet {
            drift_plus: inner.clone(),
            drift_minus: DriftSpec::Reflected(Box::new(inner)),
            ..CoefficientSet::identity(2)
        };
        let cell = Grid::torus(2, 16).unwrap();
        let mp = solve_periodic_measure(&cs, Side::Plus, &cell, DEFAULT_TOL).unwrap();
        let mm = solve_periodic_measure(&cs, Side::Minus, &cell, DEFAULT_TOL).unwrap();
        let cyl = Grid::double_torus(2, 4, 16).unwrap();
        let cm = solve_cylinder_measure(&cs, &cyl, &mp, &mm, DEFAULT_TOL).unwrap();
        assert!(
            (cm.q_plus - cm.q_minus).abs() < 1e-8,
            "mirror symmetry forces q+ = q-: {} vs {}",
            cm.q_plus,
            cm.q_minus
        );
        assert!(cm.q_plus + cm.q_minus - 2.0 < 1e-12);
    }

    #[test]
    fn matched_measure_recovers_designed_ratio() {
        let cs = CoefficientSet {
            drift_plus: DriftSpec::GradientDrift { m_star: m_star(0.2) },
            drift_minus: DriftSpec::GradientDrift {
                m_star: ScalarEval::Trig(TrigPoly {
                    c0: 1.0,
                    terms: vec![TrigTerm {
                        amp: 0.2,
                        k: [0, 1, 0],
                        phase: 0.0,
                    }],
                }),
            },
            interface: InterfaceKind::MatchedMeasure {
                q_plus: 4.0 / 3.0,
                q_minus: 2.0 / 3.0,
            },
            ..CoefficientSet::identity(2)
        };
        let cell = Grid::torus(2, 32).unwrap();
        let mp = solve_periodic_measure(&cs, Side::Plus, &cell, DEFAULT_TOL).unwrap();
        let mm = solve_periodic_measure(&cs, Side::Minus, &cell, DEFAULT_TOL).unwrap();
        let cyl = Grid::double_torus(2, 4, 32).unwrap();
        let cm = solve_cylinder_measure(&cs, &cyl, &mp, &mm, DEFAULT_TOL).unwrap();
        let ratio = cm.q_plus / cm.q_minus;
        assert!(
            (ratio - 2.0).abs() < 2.0 * 2e-3,
            "designed ratio 2, got {ratio}"
        );
        // Designed measure matches the solve after renormalization.
        let designed = cs.designed_cylinder_measure(&cyl).unwrap().unwrap();
        let mut worst = 0.0f64;
        for k in 0..cyl.n_nodes() {
            worst = worst.max((cm.m.data[k] - designed.data[k]).abs());
        }
        assert!(worst < 5e-3, "designed-measure mismatch {worst}");
    }
}
