//! Coefficient families: smooth 1-periodic diffusion matrices, one-sided
//! drifts with designed invariant measures, the interface blend, and the
//! transformation to divergence form.
//!
//! Closed-form evaluators (trig polynomials and their reciprocals) are
//! sampled onto grids on demand, so refinement studies stay exact in the
//! continuum problem. Divergence-free drift parts are realized as discrete
//! curls of sampled stream potentials, which makes their discrete divergence
//! vanish identically on the target grid.

use crate::error::{CoreError, Result};
use crate::grid::{AxialBc, Grid, MatrixField, ScalarField, VectorField, MAX_DIM};
use crate::mac::EdgeField;
use crate::ops;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// One cosine mode: amp * cos(2 pi k . y + phase).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrigTerm {
    pub amp: f64,
    pub k: [i64; MAX_DIM],
    #[serde(default)]
    pub phase: f64,
}

/// Real trigonometric polynomial c0 + sum of cosine modes.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
pub struct TrigPoly {
    pub c0: f64,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

impl TrigPoly {
    pub fn constant(c: f64) -> Self {
        TrigPoly {
            c0: c,
            terms: Vec::new(),
        }
    }

    pub fn eval(&self, p: &[f64; MAX_DIM]) -> f64 {
        let mut v = self.c0;
        for t in &self.terms {
            let arg = 2.0 * PI * (t.k[0] as f64 * p[0] + t.k[1] as f64 * p[1] + t.k[2] as f64 * p[2])
                + t.phase;
            v += t.amp * arg.cos();
        }
        v
    }

    pub fn grad(&self, p: &[f64; MAX_DIM]) -> [f64; MAX_DIM] {
        let mut g = [0.0; MAX_DIM];
        for t in &self.terms {
            let arg = 2.0 * PI * (t.k[0] as f64 * p[0] + t.k[1] as f64 * p[1] + t.k[2] as f64 * p[2])
                + t.phase;
            let s = -t.amp * arg.sin() * 2.0 * PI;
            for a in 0..MAX_DIM {
                g[a] += s * t.k[a] as f64;
            }
        }
        g
    }

    pub fn is_zero(&self) -> bool {
        self.c0 == 0.0 && self.terms.is_empty()
    }
}

/// Scalar coefficient evaluator: trig polynomial or its reciprocal
/// (reciprocals give the classical laminate profiles in closed form).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub enum ScalarEval {
    Const(f64),
    Trig(TrigPoly),
    /// 1 / trig polynomial (must stay strictly positive).
    InvTrig(TrigPoly),
}

impl ScalarEval {
    pub fn eval(&self, p: &[f64; MAX_DIM]) -> f64 {
        match self {
            ScalarEval::Const(c) => *c,
            ScalarEval::Trig(t) => t.eval(p),
            ScalarEval::InvTrig(t) => 1.0 / t.eval(p),
        }
    }

    pub fn grad(&self, p: &[f64; MAX_DIM]) -> [f64; MAX_DIM] {
        match self {
            ScalarEval::Const(_) => [0.0; MAX_DIM],
            ScalarEval::Trig(t) => t.grad(p),
            ScalarEval::InvTrig(t) => {
                let v = t.eval(p);
                let g = t.grad(p);
                let mut out = [0.0; MAX_DIM];
                for a in 0..MAX_DIM {
                    out[a] = -g[a] / (v * v);
                }
                out
            }
        }
    }
}

impl Default for ScalarEval {
    fn default() -> Self {
        ScalarEval::Const(1.0)
    }
}

/// Symmetric 1-periodic matrix evaluator (shared across the interface).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrigMatrix {
    pub d: usize,
    /// Row-major entries; construction symmetrizes.
    pub entries: Vec<ScalarEval>,
}

impl TrigMatrix {
    pub fn identity(d: usize) -> Self {
        let mut entries = vec![ScalarEval::Const(0.0); d * d];
        for i in 0..d {
            entries[i * d + i] = ScalarEval::Const(1.0);
        }
        TrigMatrix { d, entries }
    }

    pub fn eval(&self, i: usize, j: usize, p: &[f64; MAX_DIM]) -> f64 {
        // Symmetrize at evaluation so stored asymmetry can never leak.
        0.5 * (self.entries[i * self.d + j].eval(p) + self.entries[j * self.d + i].eval(p))
    }

    pub fn grad(&self, i: usize, j: usize, p: &[f64; MAX_DIM]) -> [f64; MAX_DIM] {
        let g1 = self.entries[i * self.d + j].grad(p);
        let g2 = self.entries[j * self.d + i].grad(p);
        let mut g = [0.0; MAX_DIM];
        for a in 0..MAX_DIM {
            g[a] = 0.5 * (g1[a] + g2[a]);
        }
        g
    }

    pub fn sample(&self, grid: &Arc<Grid>) -> MatrixField {
        MatrixField::from_fn(grid, |p, i, j| self.eval(i, j, p))
    }
}

/// Quintic smoothstep ramp: 0 for y1 <= -w, 1 for y1 >= w, C^2 in between.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Ramp {
    pub width: f64,
}

impl Default for Ramp {
    fn default() -> Self {
        Ramp { width: 1.0 }
    }
}

fn smoothstep5(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
    }
}

fn smoothstep5_prime(u: f64) -> f64 {
    if !(0.0..=1.0).contains(&u) {
        0.0
    } else {
        30.0 * u * u * (1.0 - u) * (1.0 - u)
    }
}

impl Ramp {
    pub fn eval(&self, y1: f64) -> f64 {
        smoothstep5((y1 + self.width) / (2.0 * self.width))
    }

    pub fn deriv(&self, y1: f64) -> f64 {
        smoothstep5_prime((y1 + self.width) / (2.0 * self.width)) / (2.0 * self.width)
    }

    /// Wrapped ramp on the double-interface torus of axial period 4L:
    /// the rising blend at y1 = 0 and the compensating fall at y1 = +/-2L.
    pub fn eval_wrapped(&self, y1: f64, half_length: f64) -> f64 {
        let l2 = 2.0 * half_length;
        if y1 >= half_length {
            1.0 - self.eval(y1 - l2)
        } else if y1 <= -half_length {
            1.0 - self.eval(y1 + l2)
        } else {
            self.eval(y1)
        }
    }

    pub fn deriv_wrapped(&self, y1: f64, half_length: f64) -> f64 {
        let l2 = 2.0 * half_length;
        if y1 >= half_length {
            -self.deriv(y1 - l2)
        } else if y1 <= -half_length {
            -self.deriv(y1 + l2)
        } else {
            self.deriv(y1)
        }
    }
}

/// One-sided drift description. The divergence-free part is given through
/// stream potentials; in d = 2 `psi[0]` is the stream function, in d = 3 the
/// three entries form a vector potential.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub enum DriftSpec {
    Zero,
    /// b_i = d_j(a_ij m*) / m*; m* is the invariant measure by construction.
    GradientDrift { m_star: ScalarEval },
    /// b_i = (d_j(a_ij m*) + s_i) / m* with s the discrete curl of psi.
    DivFree {
        m_star: ScalarEval,
        psi: Vec<TrigPoly>,
        /// Extra scale on the stream part (used by matched-measure builds).
        #[serde(default = "one")]
        stream_scale: f64,
    },
    /// Constant drift: violates centering unless zero (designed failure).
    Constant([f64; 3]),
    /// Point reflection of another side: b(y) = -inner(-y), m*(y) = inner m*(-y).
    Reflected(Box<DriftSpec>),
}

fn one() -> f64 {
    1.0
}

impl DriftSpec {
    pub fn m_star(&self) -> ScalarEval {
        match self {
            DriftSpec::Zero | DriftSpec::Constant(_) => ScalarEval::Const(1.0),
            DriftSpec::GradientDrift { m_star } => m_star.clone(),
            DriftSpec::DivFree { m_star, .. } => m_star.clone(),
            DriftSpec::Reflected(_) => ScalarEval::Const(f64::NAN), // handled in sampling
        }
    }
}

/// Which one-sided family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Plus,
    Minus,
}

/// How the two sides join across the interface.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub enum InterfaceKind {
    /// Smooth blend of the one-sided drifts, Eq.-style "smooth connection".
    Blend,
    /// Drift built from a designed cylinder measure
    /// m_t = (1 - ramp) q_minus m*_minus + ramp q_plus m*_plus,
    /// so the invariant measure and the plateau constants are known.
    MatchedMeasure { q_plus: f64, q_minus: f64 },
}

/// Problem data: shared diffusion matrix, one-sided drifts, blend ramp and
/// ellipticity bounds.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CoefficientSet {
    pub d: usize,
    pub a_tilde: TrigMatrix,
    pub drift_plus: DriftSpec,
    pub drift_minus: DriftSpec,
    pub ramp: Ramp,
    pub interface: InterfaceKind,
    pub lambda: f64,
    pub big_lambda: f64,
}

impl CoefficientSet {
    pub fn identity(d: usize) -> Self {
        CoefficientSet {
            d,
            a_tilde: TrigMatrix::identity(d),
            drift_plus: DriftSpec::Zero,
            drift_minus: DriftSpec::Zero,
            ramp: Ramp::default(),
            interface: InterfaceKind::Blend,
            lambda: 1.0,
            big_lambda: 1.0,
        }
    }

    pub fn sample_a(&self, grid: &Arc<Grid>) -> MatrixField {
        self.a_tilde.sample(grid)
    }

    fn drift_of(&self, side: Side) -> &DriftSpec {
        match side {
            Side::Plus => &self.drift_plus,
            Side::Minus => &self.drift_minus,
        }
    }

    /// Designed measure factor of one side, sampled (reflection resolved).
    pub fn sample_m_star(&self, side: Side, grid: &Arc<Grid>) -> ScalarField {
        match self.drift_of(side) {
            DriftSpec::Reflected(inner) => {
                let ev = inner.m_star();
                reflect_field(&ScalarField::from_fn(grid, |p| ev.eval(p)))
            }
            spec => {
                let ev = spec.m_star();
                ScalarField::from_fn(grid, |p| ev.eval(p))
            }
        }
    }

    /// One-sided 1-periodic drift b_tilde sampled on `grid`.
    pub fn sample_side_drift(&self, side: Side, grid: &Arc<Grid>) -> Result<VectorField> {
        self.sample_spec_drift(self.drift_of(side), grid)
    }

    fn sample_spec_drift(&self, spec: &DriftSpec, grid: &Arc<Grid>) -> Result<VectorField> {
        let d = self.d;
        match spec {
            DriftSpec::Zero => Ok(VectorField::zeros(grid)),
            DriftSpec::Constant(c) => Ok(VectorField::from_fn(grid, |_| *c)),
            DriftSpec::GradientDrift { m_star } => {
                check_positive(m_star, grid)?;
                let at = &self.a_tilde;
                Ok(VectorField::from_fn(grid, |p| {
                    gradient_drift_at(at, m_star, p, d)
                }))
            }
            DriftSpec::DivFree {
                m_star,
                psi,
                stream_scale,
            } => {
                check_positive(m_star, grid)?;
                let at = &self.a_tilde;
                let mut b = VectorField::from_fn(grid, |p| gradient_drift_at(at, m_star, p, d));
                let s = discrete_curl(psi, grid, d)?;
                for i in 0..d {
                    let ms: Vec<f64> = {
                        let g = grid.clone();
                        (0..grid.n_nodes())
                            .map(|k| m_star.eval(&g.position(g.coords_of(k))))
                            .collect()
                    };
                    for (k, v) in b.comps[i].data.iter_mut().enumerate() {
                        *v += *stream_scale * s.comps[i].data[k] / ms[k];
                    }
                }
                Ok(b)
            }
            DriftSpec::Reflected(inner) => {
                let base = self.sample_spec_drift(inner, grid)?;
                let mut out = VectorField::zeros(grid);
                for i in 0..d {
                    out.comps[i] = reflect_field(&base.comps[i]);
                    for v in out.comps[i].data.iter_mut() {
                        *v = -*v;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Blended drift on a cylinder grid (wrapped ramp on double tori, plain
    /// ramp on truncated cylinders and boxes).
    pub fn sample_cylinder_drift(&self, grid: &Arc<Grid>) -> Result<VectorField> {
        match &self.interface {
            InterfaceKind::Blend => {
                let bp = self.sample_side_drift(Side::Plus, grid)?;
                let bm = self.sample_side_drift(Side::Minus, grid)?;
                let rho = self.sample_ramp(grid);
                let mut out = VectorField::zeros(grid);
                for i in 0..self.d {
                    for (k, v) in out.comps[i].data.iter_mut().enumerate() {
                        let r = rho.data[k];
                        *v = (1.0 - r) * bm.comps[i].data[k] + r * bp.comps[i].data[k];
                    }
                }
                Ok(out)
            }
            InterfaceKind::MatchedMeasure { .. } => {
                // Positivity gate on the designed measure.
                let _m_t = self
                    .designed_cylinder_measure(grid)?
                    .expect("matched measure always designed");
                let at = &self.a_tilde;
                let d = self.d;
                let ramp = self.ramp;
                let hl = cylinder_half_length(grid);
                let (qp, qm) = self.designed_q().unwrap();
                let (msp, msm) = (self.drift_plus.m_star(), self.drift_minus.m_star());
                // Analytic gradient part of d_j(a_ij m_t) / m_t.
                let mut b = VectorField::from_fn(grid, |p| {
                    let mut out = [0.0; MAX_DIM];
                    let rho = ramp_value(&ramp, p[0], hl, grid);
                    let drho = ramp_deriv(&ramp, p[0], hl, grid);
                    let mt = (1.0 - rho) * qm * msm.eval(p) + rho * qp * msp.eval(p);
                    for i in 0..d {
                        let mut num = 0.0;
                        for j in 0..d {
                            let ga = at.grad(i, j, p);
                            let gm = {
                                let gp = msp.grad(p);
                                let gmn = msm.grad(p);
                                let mut g = [0.0; MAX_DIM];
                                for (ax, gax) in g.iter_mut().enumerate() {
                                    *gax = (1.0 - rho) * qm * gmn[ax] + rho * qp * gp[ax];
                                }
                                g[0] += drho * (qp * msp.eval(p) - qm * msm.eval(p));
                                g
                            };
                            num += ga[j] * mt + at.eval(i, j, p) * gm[j];
                        }
                        out[i] = num / mt;
                    }
                    out
                });
                // Blended stream part: discrete curl of the blended potential.
                let (psi_p, sc_p) = stream_of(&self.drift_plus);
                let (psi_m, sc_m) = stream_of(&self.drift_minus);
                if psi_p.is_some() || psi_m.is_some() {
                    let rho = self.sample_ramp(grid);
                    let zero = vec![TrigPoly::default(); if d == 2 { 1 } else { 3 }];
                    let sp = discrete_curl(psi_p.unwrap_or(&zero), grid, d)?;
                    let sm = discrete_curl(psi_m.unwrap_or(&zero), grid, d)?;
                    let g = grid.clone();
                    for i in 0..d {
                        for (k, v) in b.comps[i].data.iter_mut().enumerate() {
                            let p = g.position(g.coords_of(k));
                            let r = rho.data[k];
                            let rhov = ramp_value(&ramp, p[0], hl, &g);
                            debug_assert!((r - rhov).abs() < 1e-12);
                            let mt = (1.0 - r) * qm * msm.eval(&p) + r * qp * msp.eval(&p);
                            let s = (1.0 - r) * sc_m * sm.comps[i].data[k]
                                + r * sc_p * sp.comps[i].data[k];
                            *v += s / mt;
                        }
                    }
                }
                Ok(b)
            }
        }
    }

    /// Ramp factor sampled on a cylinder/box grid.
    pub fn sample_ramp(&self, grid: &Arc<Grid>) -> ScalarField {
        let ramp = self.ramp;
        let hl = cylinder_half_length(grid);
        let g2 = grid.clone();
        ScalarField::from_fn(grid, move |p| ramp_value(&ramp, p[0], hl, &g2))
    }

    /// The designed cylinder measure of matched-measure families.
    pub fn designed_cylinder_measure(&self, grid: &Arc<Grid>) -> Result<Option<ScalarField>> {
        match &self.interface {
            InterfaceKind::Blend => Ok(None),
            InterfaceKind::MatchedMeasure { q_plus, q_minus } => {
                let (qp, qm) = (*q_plus, *q_minus);
                let (msp, msm) = (self.drift_plus.m_star(), self.drift_minus.m_star());
                let ramp = self.ramp;
                let hl = cylinder_half_length(grid);
                let g2 = grid.clone();
                let m = ScalarField::from_fn(grid, move |p| {
                    let rho = ramp_value(&ramp, p[0], hl, &g2);
                    (1.0 - rho) * qm * msm.eval(p) + rho * qp * msp.eval(p)
                });
                if m.min() <= 0.0 {
                    return Err(CoreError::Family(
                        "designed cylinder measure is not strictly positive".into(),
                    ));
                }
                Ok(Some(m))
            }
        }
    }

    pub fn designed_q(&self) -> Option<(f64, f64)> {
        match &self.interface {
            InterfaceKind::MatchedMeasure { q_plus, q_minus } => Some((*q_plus, *q_minus)),
            InterfaceKind::Blend => None,
        }
    }

    /// Spot-check symmetry and the ellipticity bounds at random nodes.
    pub fn check_ellipticity(&self, grid: &Arc<Grid>, seed: u64) -> Result<()> {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = self.d;
        for _ in 0..100 {
            let mut p = [0.0; MAX_DIM];
            for x in p.iter_mut().take(d) {
                *x = rng.random::<f64>();
            }
            let mut xi = [0.0; MAX_DIM];
            let mut norm = 0.0;
            for x in xi.iter_mut().take(d) {
                *x = rng.random::<f64>() - 0.5;
                norm += *x * *x;
            }
            let norm = norm.sqrt().max(1e-12);
            let mut quad = 0.0;
            for i in 0..d {
                for j in 0..d {
                    let aij = self.a_tilde.eval(i, j, &p);
                    let aji = self.a_tilde.eval(j, i, &p);
                    if (aij - aji).abs() > 1e-12 {
                        return Err(CoreError::Family("a_tilde asymmetric".into()));
                    }
                    quad += aij * xi[i] / norm * xi[j] / norm;
                }
            }
            if quad < self.lambda * (1.0 - 1e-9) || quad > self.big_lambda * (1.0 + 1e-9) {
                return Err(CoreError::Family(format!(
                    "ellipticity violated: xi.A xi = {quad:.6} outside [{}, {}]",
                    self.lambda, self.big_lambda
                )));
            }
        }
        let _ = grid;
        Ok(())
    }
}

fn stream_of(spec: &DriftSpec) -> (Option<&Vec<TrigPoly>>, f64) {
    match spec {
        DriftSpec::DivFree {
            psi, stream_scale, ..
        } => (Some(psi), *stream_scale),
        _ => (None, 1.0),
    }
}

fn cylinder_half_length(grid: &Grid) -> f64 {
    // Double torus stores origin = -2L; other grids never wrap the ramp.
    if grid.axial_bc == AxialBc::Periodic && grid.origin < 0.0 {
        -grid.origin / 2.0
    } else {
        f64::INFINITY
    }
}

fn ramp_value(ramp: &Ramp, y1: f64, half_length: f64, grid: &Grid) -> f64 {
    let _ = grid;
    if half_length.is_finite() {
        ramp.eval_wrapped(y1, half_length)
    } else {
        ramp.eval(y1)
    }
}

fn ramp_deriv(ramp: &Ramp, y1: f64, half_length: f64, grid: &Grid) -> f64 {
    let _ = grid;
    if half_length.is_finite() {
        ramp.deriv_wrapped(y1, half_length)
    } else {
        ramp.deriv(y1)
    }
}

fn gradient_drift_at(
    at: &TrigMatrix,
    m_star: &ScalarEval,
    p: &[f64; MAX_DIM],
    d: usize,
) -> [f64; MAX_DIM] {
    let ms = m_star.eval(p);
    let gm = m_star.grad(p);
    let mut out = [0.0; MAX_DIM];
    for i in 0..d {
        let mut num = 0.0;
        for j in 0..d {
            num += at.grad(i, j, p)[j] * ms + at.eval(i, j, p) * gm[j];
        }
        out[i] = num / ms;
    }
    out
}

fn check_positive(ev: &ScalarEval, grid: &Arc<Grid>) -> Result<()> {
    let f = ScalarField::from_fn(grid, |p| ev.eval(p));
    if f.min() <= 0.0 {
        return Err(CoreError::Family(format!(
            "designed measure factor not strictly positive (min {:.3e})",
            f.min()
        )));
    }
    Ok(())
}

/// Point reflection y -> -y of a sampled field (grid maps onto itself).
pub fn reflect_field(f: &ScalarField) -> ScalarField {
    let g = &f.grid;
    let mut out = ScalarField::zeros(g);
    let dims = g.dims;
    let d = g.d;
    for k in 0..f.data.len() {
        let c = g.coords_of(k);
        let mut rc = c;
        // Axial: position origin + j h -> -(origin + j h); on periodic axial
        // grids with origin = -2L this is index (N - j) mod N, on the unit
        // torus origin = 0 likewise.
        for (a, rca) in rc.iter_mut().enumerate().take(d) {
            *rca = (dims[a] - c[a]) % dims[a];
        }
        out.data[k] = f.data[g.index_of(rc)];
    }
    out
}

/// Discrete curl of stream potentials, centered differences on the sampled
/// potential: divergence-free to machine precision on the sampling grid.
/// d = 2: psi = [stream]; s = (D2 psi, -D1 psi).
/// d = 3: psi = [p1,p2,p3]; s = curl psi.
pub fn discrete_curl(psi: &[TrigPoly], grid: &Arc<Grid>, d: usize) -> Result<VectorField> {
    let centered = |f: &ScalarField, axis: usize| -> ScalarField {
        let g = &f.grid;
        let tab = g.neighbor_tables();

        let inv2h = 0.5 / g.h;
        let mut out = ScalarField::zeros(g);
        for k in 0..f.data.len() {
            let c = g.coords_of(k);
            let mut cp = c;
            cp[axis] = tab.plus[axis][c[axis]];
            let mut cm = c;
            cm[axis] = tab.minus[axis][c[axis]];
            out.data[k] = (f.data[g.index_of(cp)] - f.data[g.index_of(cm)]) * inv2h;
        }
        out
    };
    let mut s = VectorField::zeros(grid);
    if d == 2 {
        if psi.len() != 1 {
            return Err(CoreError::Family("d = 2 needs one stream potential".into()));
        }
        let sampled = ScalarField::from_fn(grid, |p| psi[0].eval(p));
        s.comps[0] = centered(&sampled, 1);
        s.comps[1] = centered(&sampled, 0);
        for v in s.comps[1].data.iter_mut() {
            *v = -*v;
        }
    } else {
        if psi.len() != 3 {
            return Err(CoreError::Family(
                "d = 3 needs a three-component vector potential".into(),
            ));
        }
        let sampled: Vec<ScalarField> = psi
            .iter()
            .map(|t| ScalarField::from_fn(grid, |p| t.eval(p)))
            .collect();
        // s_i = eps_{ijk} D_j psi_k
        let pairs = [(1usize, 2usize), (2, 0), (0, 1)];
        for (i, &(j, k)) in pairs.iter().enumerate() {
            let a = centered(&sampled[k], j);
            let b = centered(&sampled[j], k);
            for (idx, v) in s.comps[i].data.iter_mut().enumerate() {
                *v = a.data[idx] - b.data[idx];
            }
        }
    }
    Ok(s)
}

/// Verifies the sampled divergence-free part: max |D_i^c s_i| <= tol.
pub fn check_divergence_free(s: &VectorField, tol: f64) -> Result<f64> {
    let g = s.grid().clone();
    let tab = g.neighbor_tables();
    let strides = g.strides();
    let inv2h = 0.5 / g.h;
    let mut worst = 0.0f64;
    for k in 0..g.n_nodes() {
        let c = g.coords_of(k);
        let mut div = 0.0;
        for (a, comp) in s.comps.iter().enumerate() {
            let mut cp = c;
            cp[a] = tab.plus[a][c[a]];
            let mut cm = c;
            cm[a] = tab.minus[a][c[a]];
            let ip = cp[0] * strides[0] + cp[1] * strides[1] + cp[2] * strides[2];
            let im = cm[0] * strides[0] + cm[1] * strides[1] + cm[2] * strides[2];
            div += (comp.data[ip] - comp.data[im]) * inv2h;
        }
        worst = worst.max(div.abs());
    }
    if worst > tol {
        return Err(CoreError::Family(format!(
            "stream part fails the discrete divergence-free check: {worst:.3e} > {tol:.1e}"
        )));
    }
    Ok(worst)
}

/// Divergence-form problem data derived from a coefficient set and a measure.
pub struct DivergenceFormSet {
    /// a = a_tilde m (node samples).
    pub a: MatrixField,
    /// beta = b_tilde m (node samples).
    pub beta: VectorField,
    /// b_i = beta_i - D_j a_ij with all-centered node derivatives (reporting).
    pub b_node: VectorField,
    /// Staggered edge drift whose divergence is exactly -G^T m.
    pub b_edge: Vec<EdgeField>,
    pub m: ScalarField,
}

/// Staggered edge drift field of (a_tilde, b_tilde, m):
/// E_i = avg_i(b_i m) - D_i^+(a_ii m) - sum_{j!=i} avg_i(D_j^c(sym(a)_ij m)),
/// built so that div(E) = -(transposed generator applied to m) exactly.
pub fn drift_edge_field(
    a_tilde: &MatrixField,
    b_tilde: &VectorField,
    m: &ScalarField,
) -> Vec<EdgeField> {
    let g = m.grid.clone();
    let d = g.d;
    let tab = g.neighbor_tables();
    let strides = g.strides();
    let inv_h = 1.0 / g.h;
    let inv_2h = 0.5 / g.h;
    let md = &m.data;
    let mut edges = Vec::with_capacity(d);
    for i in 0..d {
        let mut e = EdgeField::zeros(&g, i);
        let dims_e = e.dims;
        let periodic_i = i > 0 || g.axial_bc == AxialBc::Periodic;
        let bt = &b_tilde.comps[i].data;
        crate::par::map_chunks(&mut e.data, |start, chunk| {
            for (k, v) in chunk.iter_mut().enumerate() {
                let c = crate::mac::coords_in(&dims_e, d, start + k);
                let here = c[0] * strides[0] + c[1] * strides[1] + c[2] * strides[2];
                let mut cp = c;
                cp[i] = if periodic_i {
                    (c[i] + 1) % g.dims[i]
                } else {
                    c[i] + 1
                };
                let plus = cp[0] * strides[0] + cp[1] * strides[1] + cp[2] * strides[2];
                let mut acc = 0.5 * (bt[here] * md[here] + bt[plus] * md[plus]);
                let aii = &a_tilde.at(i, i).data;
                acc -= (aii[plus] * md[plus] - aii[here] * md[here]) * inv_h;
                for j in 0..d {
                    if j == i {
                        continue;
                    }
                    // Centered derivative along j of sym(a)_ij m at the two
                    // nodes adjacent to the edge, then averaged.
                    let cross = |node: [usize; MAX_DIM]| -> f64 {
                        let mut np = node;
                        np[j] = tab.plus[j][node[j]];
                        let mut nm = node;
                        nm[j] = tab.minus[j][node[j]];
                        let ip = np[0] * strides[0] + np[1] * strides[1] + np[2] * strides[2];
                        let im = nm[0] * strides[0] + nm[1] * strides[1] + nm[2] * strides[2];
                        let f = |idx: usize| {
                            0.5 * (a_tilde.at(i, j).data[idx] + a_tilde.at(j, i).data[idx])
                                * md[idx]
                        };
                        (f(ip) - f(im)) * inv_2h
                    };
                    acc -= 0.5 * (cross(c) + cross(cp));
                }
                *v = acc;
            }
        });
        edges.push(e);
    }
    edges
}

/// Derives the divergence-form fields (1.9)-(1.11) from sampled data.
pub fn derive_divergence_fields(
    a_tilde: &MatrixField,
    b_tilde: &VectorField,
    m: &ScalarField,
) -> Result<DivergenceFormSet> {
    if m.min() <= 0.0 {
        return Err(CoreError::NegativeMeasure {
            min: m.min(),
            max: m.max(),
        });
    }
    let g = &m.grid;
    let d = g.d;
    let mut a = MatrixField::zeros(g);
    for i in 0..d {
        for j in 0..d {
            let src = &a_tilde.at(i, j).data;
            let dst = &mut a.at_mut(i, j).data;
            for k in 0..src.len() {
                dst[k] = src[k] * m.data[k];
            }
        }
    }
    let mut beta = VectorField::zeros(g);
    for i in 0..d {
        for (k, v) in beta.comps[i].data.iter_mut().enumerate() {
            *v = b_tilde.comps[i].data[k] * m.data[k];
        }
    }
    // Node-based b for reporting: all-centered derivatives.
    let mut b_node = VectorField::zeros(g);
    let tab = g.neighbor_tables();
    let strides = g.strides();
    let inv2h = 0.5 / g.h;
    for i in 0..d {
        for k in 0..g.n_nodes() {
            let c = g.coords_of(k);
            let mut acc = beta.comps[i].data[k];
            for j in 0..d {
                let mut cp = c;
                cp[j] = tab.plus[j][c[j]];
                let mut cm = c;
                cm[j] = tab.minus[j][c[j]];
                let ip = cp[0] * strides[0] + cp[1] * strides[1] + cp[2] * strides[2];
                let im = cm[0] * strides[0] + cm[1] * strides[1] + cm[2] * strides[2];
                acc -= (a.at(i, j).data[ip] - a.at(i, j).data[im]) * inv2h;
            }
            b_node.comps[i].data[k] = acc;
        }
    }
    let b_edge = drift_edge_field(a_tilde, b_tilde, m);
    Ok(DivergenceFormSet {
        a,
        beta,
        b_node,
        b_edge,
        m: m.clone(),
    })
}

/// Quadrature of b_tilde against a measure: the centering integrals.
pub fn centering_defect(b_tilde: &VectorField, m: &ScalarField) -> Vec<f64> {
    let d = b_tilde.d();
    (0..d)
        .map(|i| {
            let prod = ScalarField::from_vec(
                &m.grid,
                b_tilde.comps[i]
                    .data
                    .iter()
                    .zip(&m.data)
                    .map(|(b, mm)| b * mm)
                    .collect(),
            );
            ops::integrate(&prod, ops::Window::All)
        })
        .collect()
}
