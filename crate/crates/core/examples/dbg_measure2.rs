use homoglab_core::coeff::*;
use homoglab_core::grid::*;
use homoglab_core::linsolve::*;
use std::f64::consts::PI;

fn main() {
    let ms = ScalarEval::Trig(TrigPoly {
        c0: 1.0,
        terms: vec![TrigTerm { amp: 0.3, k: [1, 0, 0], phase: -PI / 2.0 }],
    });
    let cs = CoefficientSet {
        drift_plus: DriftSpec::GradientDrift { m_star: ms },
        ..CoefficientSet::identity(2)
    };
    let n = 128usize;
    let g = Grid::torus(2, n).unwrap();
    eprintln!("sampling a...");
    let a = cs.sample_a(&g);
    eprintln!("sampling b...");
    let b = cs.sample_side_drift(Side::Plus, &g).unwrap();
    eprintln!("weights...");
    let w = ScalarField::constant(&g, g.h * g.h);
    eprintln!("solving...");
    let t0 = std::time::Instant::now();
    match solve_singular_adjoint(&g, &a, &b, &w, 1.0, 1e-11) {
        Ok(sol) => eprintln!("ok iters={} t={:?}", sol.stats.iterations, t0.elapsed()),
        Err(e) => eprintln!("ERR {e} t={:?}", t0.elapsed()),
    }
}
