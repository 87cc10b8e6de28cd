//! Small descriptive statistics used by the experiment harness.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngSeed;

/// Median of a sample (mean of the two middle values for even sizes).
pub fn median(xs: &[f64]) -> Option<f64> {
    quantile(xs, 0.5)
}

/// Linear-interpolation quantile (type 7).
pub fn quantile(xs: &[f64], q: f64) -> Option<f64> {
    if xs.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = q * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Ordinary least squares `y = intercept + slope x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return Err(Error::Precondition("x and y lengths differ".into()));
    }
    if xs.len() < 2 {
        return Err(Error::Precondition(format!("a line fit needs at least 2 points, got {}", xs.len())));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Precondition("all x values coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok(LineFit { slope, intercept: my - slope * mx })
}

/// Slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::Numerical("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    least_squares(&lx, &ly)
}

/// Percentile bootstrap for a statistic of grouped samples: each replicate
/// resamples every group with replacement and evaluates `stat` on the
/// resampled groups. Replicates where `stat` fails are skipped.
pub fn bootstrap_groups(
    groups: &[Vec<f64>],
    replicates: usize,
    level: f64,
    seed: RngSeed,
    stat: impl Fn(&[Vec<f64>]) -> Option<f64>,
) -> Option<(f64, f64)> {
    let mut rng = seed.rng();
    let mut values = Vec::with_capacity(replicates);
    let mut buf: Vec<Vec<f64>> = groups.iter().map(|g| Vec::with_capacity(g.len())).collect();
    for _ in 0..replicates {
        for (g, b) in groups.iter().zip(buf.iter_mut()) {
            b.clear();
            b.extend((0..g.len()).map(|_| g[rng.random_range(0..g.len())]));
        }
        if let Some(v) = stat(&buf).filter(|v| v.is_finite()) {
            values.push(v);
        }
    }
    let alpha = (1.0 - level) / 2.0;
    Some((quantile(&values, alpha)?, quantile(&values, 1.0 - alpha)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(quantile(&[1.0, 2.0], 0.0), Some(1.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn exact_line() {
        let f = least_squares(&[1.0, 2.0, 3.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept + 1.0).abs() < 1e-12);
        let p = log_log_slope(&[2.0, 4.0, 8.0], &[12.0, 48.0, 192.0]).unwrap();
        assert!((p.slope - 2.0).abs() < 1e-12);
        assert!(least_squares(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn bootstrap_brackets_constant_statistic() {
        let groups = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0]];
        let ci = bootstrap_groups(&groups, 200, 0.95, RngSeed::new(1, 0), |g| median(&g[0])).unwrap();
        assert!(ci.0 >= 1.0 && ci.1 <= 3.0 && ci.0 <= ci.1);
    }
}
