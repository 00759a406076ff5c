//! Small statistics layer shared by every estimator: compensated summation,
//! sample moments, quantiles, and ordinary least squares with a 95% band.

use crate::error::{Error, Result};

/// Neumaier-compensated accumulator. Summation order still matters for the
/// final bits, so reductions that must be reproducible feed it sequentially.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_total(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.total()
}

/// Sample mean and its standard error (divisor n-1).
pub fn mean_and_se(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::degenerate("mean_and_se", "need at least 2 samples"));
    }
    let mean = compensated_total(values.iter().copied()) / n as f64;
    let ss = compensated_total(values.iter().map(|v| (v - mean) * (v - mean)));
    let var = ss / (n - 1) as f64;
    Ok((mean, (var / n as f64).sqrt()))
}

/// Linear-interpolation quantile on a copy of the data, q in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::degenerate("quantile", "empty sample"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::parameter("q", format!("{q} outside [0,1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite sample in quantile"));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

pub fn median(values: &[f64]) -> Result<f64> {
    quantile(values, 0.5)
}

/// Two-sided 97.5% Student-t quantile; beyond the table an asymptotic
/// correction accurate to three digits.
pub fn t_quantile_975(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    match df {
        0 => f64::INFINITY,
        1..=30 => TABLE[df - 1],
        _ => 1.96 + 2.46 / df as f64,
    }
}

/// Ordinary least squares y = slope*x + intercept.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; infinite when df = 0.
    pub se_slope: f64,
    pub residuals: Vec<f64>,
    pub df: usize,
}

impl OlsFit {
    /// 95% confidence band for the slope.
    pub fn slope_band(&self) -> (f64, f64) {
        let half = t_quantile_975(self.df) * self.se_slope;
        (self.slope - half, self.slope + half)
    }

    pub fn residual_rms(&self) -> f64 {
        if self.residuals.is_empty() {
            return 0.0;
        }
        let ss = compensated_total(self.residuals.iter().map(|r| r * r));
        (ss / self.residuals.len() as f64).sqrt()
    }
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<OlsFit> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            context: "ols",
            expected: x.len(),
            got: y.len(),
        });
    }
    let k = x.len();
    if k < 2 {
        return Err(Error::degenerate("ols", "need at least 2 points"));
    }
    let xbar = compensated_total(x.iter().copied()) / k as f64;
    let ybar = compensated_total(y.iter().copied()) / k as f64;
    let sxx = compensated_total(x.iter().map(|xi| (xi - xbar) * (xi - xbar)));
    if sxx == 0.0 {
        return Err(Error::degenerate("ols", "all abscissae equal"));
    }
    let sxy = compensated_total(x.iter().zip(y).map(|(xi, yi)| (xi - xbar) * (yi - ybar)));
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let residuals: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| yi - (slope * xi + intercept))
        .collect();
    let df = k.saturating_sub(2);
    let se_slope = if df == 0 {
        f64::INFINITY
    } else {
        let ssr = compensated_total(residuals.iter().map(|r| r * r));
        (ssr / df as f64 / sxx).sqrt()
    };
    Ok(OlsFit {
        slope,
        intercept,
        se_slope,
        residuals,
        df,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancelled_unit() {
        let naive: f64 = [1e16, 1.0, -1e16].iter().sum();
        assert_ne!(naive, 1.0);
        assert_eq!(compensated_total([1e16, 1.0, -1e16]), 1.0);
    }

    #[test]
    fn mean_and_se_known_sample() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((m - 3.0).abs() < 1e-15);
        assert!((se - (0.5f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn quantile_linear_interpolation() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(median(&v).unwrap(), 2.5);
        assert!((quantile(&v, 0.9).unwrap() - 3.7).abs() < 1e-15);
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 4.0);
    }

    #[test]
    fn ols_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|xi| 2.0 * xi + 1.0).collect();
        let fit = ols(&x, &y).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-14);
        assert!((fit.intercept - 1.0).abs() < 1e-14);
        assert!(fit.se_slope < 1e-14);
        let (lo, hi) = fit.slope_band();
        assert!(lo <= 2.0 && 2.0 <= hi);
    }

    #[test]
    fn t_table_spot_values() {
        assert_eq!(t_quantile_975(5), 2.571);
        assert_eq!(t_quantile_975(30), 2.042);
        assert!((t_quantile_975(120) - 1.980).abs() < 5e-3);
        assert!(t_quantile_975(0).is_infinite());
    }

    #[test]
    fn ols_rejects_degenerate_input() {
        assert!(ols(&[1.0], &[1.0]).is_err());
        assert!(ols(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }
}
