//! Small least-squares helpers for decay-rate and convergence-order fits.

#[derive(Clone, Copy, Debug)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

/// Ordinary least squares y = intercept + slope x.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LineFit {
        slope,
        intercept,
        r2,
        n,
    })
}

/// Log-log slope of `errs` against `scales` (both positive).
pub fn loglog_slope(scales: &[f64], errs: &[f64]) -> Option<LineFit> {
    if scales.iter().any(|&s| s <= 0.0) || errs.iter().any(|&e| e <= 0.0) {
        return None;
    }
    let xs: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    linear_fit(&xs, &ys)
}

/// Exponential decay fit d_j ~ C exp(-rate j) over samples above `floor`.
/// Returns (rate, fit) or None when fewer than `min_points` usable samples.
pub fn exp_decay_fit(
    values: &[(f64, f64)],
    floor: f64,
    min_points: usize,
) -> Option<(f64, LineFit)> {
    let usable: Vec<(f64, f64)> = values
        .iter()
        .filter(|(_, v)| *v > floor)
        .cloned()
        .collect();
    if usable.len() < min_points {
        return None;
    }
    let xs: Vec<f64> = usable.iter().map(|(x, _)| *x).collect();
    let ys: Vec<f64> = usable.iter().map(|(_, v)| v.ln()).collect();
    let fit = linear_fit(&xs, &ys)?;
    Some((-fit.slope, fit))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_slope() {
        let xs: Vec<f64> = (1..=6).map(|k| k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 3.0 * x).collect();
        let f = linear_fit(&xs, &ys).unwrap();
        assert!((f.slope + 3.0).abs() < 1e-12 && (f.intercept - 2.0).abs() < 1e-12);
        assert!(f.r2 > 0.999999);
    }

    #[test]
    fn exp_fit_ignores_floor() {
        let vals: Vec<(f64, f64)> = (0..10)
            .map(|j| (j as f64, 5.0 * (-1.3 * j as f64).exp()))
            .collect();
        let (rate, fit) = exp_decay_fit(&vals, 1e-4, 4).unwrap();
        assert!((rate - 1.3).abs() < 1e-6, "rate {rate}");
        assert!(fit.n < 10);
    }
}
