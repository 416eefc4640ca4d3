//! Empirical convergence-rate estimation by least squares on log-log data.

use serde::Serialize;
use thiserror::Error;

/// Minimum number of usable points for a rate fit.
pub const MIN_POINTS: usize = 10;

#[derive(Debug, Error)]
pub enum RateError {
    #[error("window [{lo}, {hi}] holds {got} usable points; need at least {need}")]
    WindowTooShort {
        lo: usize,
        hi: usize,
        got: usize,
        need: usize,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub window: (usize, usize),
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Plain least-squares slope of `y` against `x` (already transformed).
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y) * (y - mean_y)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let r_squared = if ss_tot <= f64::MIN_POSITIVE {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    (slope, intercept, r_squared)
}

/// Fits `log err` against `log t` over `lo <= t <= hi`. Entries with a
/// nonpositive error (exactly converged) are skipped.
pub fn fit_loglog(
    series: &[(usize, f64)],
    lo: usize,
    hi: usize,
) -> Result<RateReport, RateError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(t, err) in series {
        if t >= lo && t <= hi && err > 0.0 && t > 0 {
            xs.push((t as f64).ln());
            ys.push(err.ln());
        }
    }
    if xs.len() < MIN_POINTS {
        return Err(RateError::WindowTooShort {
            lo,
            hi,
            got: xs.len(),
            need: MIN_POINTS,
        });
    }
    let (slope, intercept, r_squared) = least_squares_slope(&xs, &ys);
    Ok(RateReport {
        window: (lo, hi),
        slope,
        intercept,
        r_squared,
        points: xs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_inverse_law_fits_slope_minus_one() {
        let series: Vec<(usize, f64)> = (1..=200).map(|t| (t, 3.0 / t as f64)).collect();
        let report = fit_loglog(&series, 1, 200).unwrap();
        assert_relative_eq!(report.slope, -1.0, epsilon = 1e-6);
        assert_relative_eq!(report.r_squared, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn inverse_sqrt_law_fits_slope_minus_half() {
        let series: Vec<(usize, f64)> = (1..=200).map(|t| (t, 2.0 / (t as f64).sqrt())).collect();
        let report = fit_loglog(&series, 10, 200).unwrap();
        assert_relative_eq!(report.slope, -0.5, epsilon = 1e-6);
    }

    #[test]
    fn short_windows_are_rejected() {
        let series: Vec<(usize, f64)> = (1..=5).map(|t| (t, 1.0 / t as f64)).collect();
        assert!(matches!(
            fit_loglog(&series, 1, 5),
            Err(RateError::WindowTooShort { .. })
        ));
    }
}
