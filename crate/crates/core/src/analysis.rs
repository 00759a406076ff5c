//! Monte Carlo estimators and statistical checks: convergence-rate fitting,
//! Hermite-sum scalings, Gaussian moment identities, and Hölder-ratio
//! scalings of the extended-driver components.
//!
//! Every estimator follows the same shape: paths fan out in parallel, each
//! worker fills its own result slot, and the reduction over slots is
//! sequential and compensated, so outputs are identical for any worker
//! count. Rates come from ordinary least squares on (log h, log error) with
//! a 95% band; a scaling check passes when the band intersects the target
//! within its stated tolerance, a moment check when the estimate sits
//! within four standard errors.

use crate::error::{Error, Result};
use crate::fbm::{self, FbmConfig, FbmSampler};
use crate::io;
use crate::models::{levy_area_model, NamedModel};
use crate::modified_eq;
use crate::paths::{self, MultiIndex};
use crate::schemes::{self, IntegrateOptions, Scheme};
use crate::seed::{self, Component};
use crate::stats;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Errors at or below this are indistinguishable from roundoff; a rate fit
/// on them would measure noise, so the fit refuses.
pub const RATE_FIT_MIN_ERROR: f64 = 1e-13;

/// Default small exponent offsets for the Hölder-ratio statistics.
pub const DEFAULT_DELTA: f64 = 0.05;

pub fn default_beta(hurst: f64) -> f64 {
    hurst - 0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorStatistic {
    RmsOfMax,
    MedianOfMax,
    MeanSquareAtT,
}

impl ErrorStatistic {
    pub fn id(&self) -> &'static str {
        match self {
            ErrorStatistic::RmsOfMax => "rms-of-max",
            ErrorStatistic::MedianOfMax => "median-of-max",
            ErrorStatistic::MeanSquareAtT => "mean-square-at-T",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ErrorRow {
    pub n: usize,
    pub h: f64,
    pub error: f64,
    pub paths: usize,
}

#[derive(Debug, Clone)]
pub struct ErrorTable {
    pub statistic: ErrorStatistic,
    pub rows: Vec<ErrorRow>,
}

impl ErrorTable {
    /// Rows must have strictly increasing n and share one horizon h·n.
    pub fn new(statistic: ErrorStatistic, rows: Vec<ErrorRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::degenerate("ErrorTable", "no rows"));
        }
        let horizon = rows[0].h * rows[0].n as f64;
        for (i, row) in rows.iter().enumerate() {
            if !(row.h > 0.0) || !row.error.is_finite() || row.error < 0.0 {
                return Err(Error::parameter(
                    "rows",
                    format!("row {i} has h={} error={}", row.h, row.error),
                ));
            }
            if (row.h * row.n as f64 - horizon).abs() > 1e-9 * horizon.abs() {
                return Err(Error::parameter(
                    "rows",
                    format!("row {i} horizon {} != {horizon}", row.h * row.n as f64),
                ));
            }
            if i > 0 && rows[i - 1].n >= row.n {
                return Err(Error::parameter(
                    "rows",
                    format!("n not strictly increasing at row {i}"),
                ));
            }
        }
        Ok(ErrorTable { statistic, rows })
    }

    pub fn to_csv(&self) -> String {
        let lines = self.rows.iter().map(|r| {
            format!(
                "{},{},{},{},{}",
                r.n,
                io::g17(r.h),
                io::g17(r.error),
                self.statistic.id(),
                r.paths
            )
        });
        io::csv_document("n,h,error,statistic,paths", lines)
    }
}

/// Least-squares rate over an error table, with the table it came from.
#[derive(Debug, Clone)]
pub struct RateReport {
    pub slope: f64,
    pub intercept: f64,
    /// Residuals of the final fit, in the order of the fitted rows.
    pub residuals: Vec<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
    /// True when the preasymptotic guard removed the coarsest row.
    pub dropped_coarsest: bool,
    pub table: ErrorTable,
}

impl RateReport {
    /// The 95% band intersects [target − tol, target + tol].
    pub fn passes(&self, target: f64, tol: f64) -> bool {
        self.ci_low.max(target - tol) <= self.ci_high.min(target + tol)
    }

    pub fn to_json(&self, target: f64, tol: f64) -> String {
        serde_json::json!({
            "target_exponent": target,
            "fitted_slope": self.slope,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "pass": self.passes(target, tol),
        })
        .to_string()
    }
}

/// OLS slope of log error against log h.
///
/// The coarsest row is dropped, once, when its residual exceeds three times
/// the fit's residual RMS and at least four rows are present; the report
/// keeps the full table and records the drop.
pub fn fit_rate(table: ErrorTable) -> Result<RateReport> {
    if table.rows.len() < 3 {
        return Err(Error::degenerate("fit_rate", "need at least 3 rows"));
    }
    for row in &table.rows {
        if row.error <= RATE_FIT_MIN_ERROR {
            return Err(Error::degenerate(
                "fit_rate",
                "error at or below the roundoff floor; rate is meaningless",
            ));
        }
    }
    let log_h: Vec<f64> = table.rows.iter().map(|r| r.h.ln()).collect();
    let log_e: Vec<f64> = table.rows.iter().map(|r| r.error.ln()).collect();
    let full = stats::ols(&log_h, &log_e)?;

    // Rows are ordered by increasing n, so the coarsest grid is row 0. Its
    // residual is measured against the fit of the finer rows: in a joint
    // fit the endpoint's leverage absorbs the deviation and the 3x test
    // can never fire on short tables. The absolute floor keeps roundoff
    // from tripping the guard on exact data.
    let mut dropped_coarsest = false;
    let fit = if table.rows.len() >= 4 {
        let sub = stats::ols(&log_h[1..], &log_e[1..])?;
        let predicted = sub.slope * log_h[0] + sub.intercept;
        let deviation = (log_e[0] - predicted).abs();
        if deviation > (3.0 * sub.residual_rms()).max(1e-9) {
            dropped_coarsest = true;
            sub
        } else {
            full
        }
    } else {
        full
    };
    let (ci_low, ci_high) = fit.slope_band();
    Ok(RateReport {
        slope: fit.slope,
        intercept: fit.intercept,
        residuals: fit.residuals,
        ci_low,
        ci_high,
        dropped_coarsest,
        table,
    })
}

fn validate_resolutions(n_list: &[usize], n_ref: usize) -> Result<()> {
    if n_list.is_empty() {
        return Err(Error::parameter("n_list", "empty"));
    }
    for (i, &n) in n_list.iter().enumerate() {
        if n == 0 {
            return Err(Error::parameter("n_list", "contains 0"));
        }
        if i > 0 && n_list[i - 1] >= n {
            return Err(Error::parameter(
                "n_list",
                format!("not strictly increasing at {n}"),
            ));
        }
        if n_ref % n != 0 {
            return Err(Error::parameter(
                "n_list",
                format!("{n} does not divide the reference resolution {n_ref}"),
            ));
        }
    }
    Ok(())
}

fn median_rows(
    statistic: ErrorStatistic,
    n_list: &[usize],
    horizon_t: f64,
    m_paths: usize,
    per_path: &[Vec<f64>],
) -> Result<ErrorTable> {
    let rows = n_list
        .iter()
        .enumerate()
        .map(|(ni, &n)| {
            let column: Vec<f64> = per_path.iter().map(|v| v[ni]).collect();
            Ok(ErrorRow {
                n,
                h: horizon_t / n as f64,
                error: stats::median(&column)?,
                paths: m_paths,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ErrorTable::new(statistic, rows)
}

/// RMS over coupled paths of the terminal gap between the area recursion at
/// each measured resolution and at the reference resolution.
pub fn levy_area_ms_error(
    hurst: f64,
    horizon_t: f64,
    n_list: &[usize],
    n_ref: usize,
    m_paths: usize,
    master_seed: u64,
) -> Result<ErrorTable> {
    validate_resolutions(n_list, n_ref)?;
    if m_paths == 0 {
        return Err(Error::parameter("m_paths", "0"));
    }
    let model = levy_area_model();
    let sampler = FbmSampler::new(FbmConfig {
        hurst,
        horizon_t,
        n_steps: n_ref,
        dim_d: model.noise_dim(),
        master_seed,
    })?;
    let options = IntegrateOptions::default();

    let per_path: Vec<Vec<f64>> = (0..m_paths as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let fine = sampler.path(i)?;
            let reference =
                schemes::integrate(Scheme::ModifiedMilstein, &fine, &model, &options)?;
            let z_ref = reference.final_state().to_vec();
            n_list
                .iter()
                .map(|&n| {
                    let coarse = fbm::coarsen(&fine, n_ref / n)?;
                    let run =
                        schemes::integrate(Scheme::ModifiedMilstein, &coarse, &model, &options)?;
                    let gap = run
                        .final_state()
                        .iter()
                        .zip(&z_ref)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    Ok(gap)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let rows = n_list
        .iter()
        .enumerate()
        .map(|(ni, &n)| {
            let mean_sq =
                stats::compensated_total(per_path.iter().map(|v| v[ni] * v[ni]))
                    / m_paths as f64;
            ErrorRow {
                n,
                h: horizon_t / n as f64,
                error: mean_sq.sqrt(),
                paths: m_paths,
            }
        })
        .collect();
    ErrorTable::new(ErrorStatistic::MeanSquareAtT, rows)
}

/// Median over coupled paths of the max grid gap between a scheme at each
/// measured resolution and the fine piecewise-linear reference.
pub fn pathwise_scheme_error(
    model: &NamedModel,
    scheme: Scheme,
    hurst: f64,
    horizon_t: f64,
    n_list: &[usize],
    n_ref: usize,
    ref_substeps: usize,
    m_paths: usize,
    master_seed: u64,
) -> Result<ErrorTable> {
    validate_resolutions(n_list, n_ref)?;
    if m_paths == 0 {
        return Err(Error::parameter("m_paths", "0"));
    }
    let sampler = FbmSampler::new(FbmConfig {
        hurst,
        horizon_t,
        n_steps: n_ref,
        dim_d: model.noise_dim(),
        master_seed,
    })?;
    let options = IntegrateOptions::default();

    let per_path: Vec<Vec<f64>> = (0..m_paths as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let fine = sampler.path(i)?;
            let reference = schemes::wong_zakai_reference(&fine, model, ref_substeps)?;
            n_list
                .iter()
                .map(|&n| {
                    let factor = n_ref / n;
                    let coarse = fbm::coarsen(&fine, factor)?;
                    let run = schemes::integrate(scheme, &coarse, model, &options)?;
                    let mut worst = 0.0f64;
                    for k in 1..=n {
                        let gap = run
                            .node(k)
                            .iter()
                            .zip(reference.node(k * factor))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt();
                        worst = worst.max(gap);
                    }
                    Ok(worst)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    median_rows(
        ErrorStatistic::MedianOfMax,
        n_list,
        horizon_t,
        m_paths,
        &per_path,
    )
}

/// Median over paths of the max grid gap between the one-step scheme and
/// the truncated modified equation, per resolution. Coarsenings of one
/// sample per path keep resolutions coupled.
pub fn backward_error_table(
    model: &NamedModel,
    hurst: f64,
    horizon_t: f64,
    n_list: &[usize],
    substeps: usize,
    m_paths: usize,
    master_seed: u64,
) -> Result<ErrorTable> {
    let finest = *n_list.last().ok_or(Error::parameter("n_list", "empty"))?;
    validate_resolutions(n_list, finest)?;
    if m_paths == 0 {
        return Err(Error::parameter("m_paths", "0"));
    }
    let sampler = FbmSampler::new(FbmConfig {
        hurst,
        horizon_t,
        n_steps: finest,
        dim_d: model.noise_dim(),
        master_seed,
    })?;

    let per_path: Vec<Vec<f64>> = (0..m_paths as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let fine = sampler.path(i)?;
            n_list
                .iter()
                .map(|&n| {
                    let coarse = fbm::coarsen(&fine, finest / n)?;
                    modified_eq::backward_error(&coarse, model, substeps)
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    median_rows(
        ErrorStatistic::MedianOfMax,
        n_list,
        horizon_t,
        m_paths,
        &per_path,
    )
}

/// Monte Carlo L² norms of windowed increment-power sums, raw and centered.
#[derive(Debug, Clone)]
pub struct HermiteScaling {
    pub degree: u32,
    /// Window as fractions of the horizon.
    pub window: (f64, f64),
    pub raw: ErrorTable,
    pub centered: ErrorTable,
}

/// L²(Ω) norm per resolution of Σ_{l=j+1}^{k} (ΔB_l)^m over a fixed window
/// [t_j, t_k]. Odd degrees are already centered; even degrees subtract the
/// exact mean (k−j)·(m−1)!!·h^{mH} for the centered table.
pub fn hermite_sum_l2(
    degree: u32,
    hurst: f64,
    horizon_t: f64,
    n_list: &[usize],
    window: (f64, f64),
    m_paths: usize,
    master_seed: u64,
) -> Result<HermiteScaling> {
    if !(1..=4).contains(&degree) {
        return Err(Error::parameter("degree", format!("{degree} not in 1..=4")));
    }
    let finest = *n_list.last().ok_or(Error::parameter("n_list", "empty"))?;
    validate_resolutions(n_list, finest)?;
    if m_paths < 2 {
        return Err(Error::parameter("m_paths", "need at least 2"));
    }
    let (lo, hi) = window;
    if !(0.0..1.0).contains(&lo) || !(lo..=1.0).contains(&hi) || lo >= hi {
        return Err(Error::parameter(
            "window",
            format!("({lo}, {hi}) not nested in [0, 1]"),
        ));
    }
    // The window must land on every grid, or tables would not be comparable.
    for &n in n_list {
        for frac in [lo, hi] {
            let pos = frac * n as f64;
            if (pos - pos.round()).abs() > 1e-9 {
                return Err(Error::parameter(
                    "window",
                    format!("fraction {frac} misses the n={n} grid"),
                ));
            }
        }
    }

    let sampler = FbmSampler::new(FbmConfig {
        hurst,
        horizon_t,
        n_steps: finest,
        dim_d: 1,
        master_seed,
    })?;

    let per_path: Vec<Vec<f64>> = (0..m_paths as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let fine = sampler.path(i)?;
            n_list
                .iter()
                .map(|&n| {
                    let coarse = fbm::coarsen(&fine, finest / n)?;
                    let j = (lo * n as f64).round() as usize;
                    let k = (hi * n as f64).round() as usize;
                    let mut acc = stats::CompensatedSum::new();
                    for l in j..k {
                        acc.add(coarse.increment(l)[0].powi(degree as i32));
                    }
                    Ok(acc.total())
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let double_factorial = |m: u32| -> f64 {
        let mut acc = 1.0;
        let mut v = m as i64;
        while v > 1 {
            acc *= v as f64;
            v -= 2;
        }
        acc
    };

    let mut raw_rows = Vec::with_capacity(n_list.len());
    let mut centered_rows = Vec::with_capacity(n_list.len());
    for (ni, &n) in n_list.iter().enumerate() {
        let h = horizon_t / n as f64;
        let count = ((hi - lo) * n as f64).round();
        let mean = if degree % 2 == 0 {
            count * double_factorial(degree - 1) * h.powf(degree as f64 * hurst)
        } else {
            0.0
        };
        let raw_ms =
            stats::compensated_total(per_path.iter().map(|v| v[ni] * v[ni])) / m_paths as f64;
        let centered_ms = stats::compensated_total(
            per_path.iter().map(|v| (v[ni] - mean) * (v[ni] - mean)),
        ) / m_paths as f64;
        raw_rows.push(ErrorRow {
            n,
            h,
            error: raw_ms.sqrt(),
            paths: m_paths,
        });
        centered_rows.push(ErrorRow {
            n,
            h,
            error: centered_ms.sqrt(),
            paths: m_paths,
        });
    }
    Ok(HermiteScaling {
        degree,
        window,
        raw: ErrorTable::new(ErrorStatistic::MeanSquareAtT, raw_rows)?,
        centered: ErrorTable::new(ErrorStatistic::MeanSquareAtT, centered_rows)?,
    })
}

/// Monte Carlo check of the fourth- and sixth-order mixed moment identities
/// for a centered Gaussian pair.
#[derive(Debug, Clone)]
pub struct MomentCheckReport {
    pub cov: [[f64; 2]; 2],
    pub samples: usize,
    pub m22_estimate: f64,
    pub m22_se: f64,
    pub m22_target: f64,
    pub m33_estimate: f64,
    pub m33_se: f64,
    pub m33_target: f64,
    pub pass: bool,
}

impl MomentCheckReport {
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "cov": self.cov,
            "samples": self.samples,
            "m22": {"estimate": self.m22_estimate, "se": self.m22_se, "target": self.m22_target},
            "m33": {"estimate": self.m33_estimate, "se": self.m33_se, "target": self.m33_target},
            "pass": self.pass,
        })
        .to_string()
    }
}

/// Targets: E[A²Ã²] = E[A²]E[Ã²] + 2(E[AÃ])² and
/// E[A³Ã³] = 6(E[AÃ])³ + 9·E[AÃ]·E[A²]·E[Ã²]. Passes within 4 SE of both.
pub fn gaussian_moment_check(
    cov: [[f64; 2]; 2],
    m_samples: usize,
    master_seed: u64,
) -> Result<MomentCheckReport> {
    let (v11, v22, c, c10) = (cov[0][0], cov[1][1], cov[0][1], cov[1][0]);
    let scale = v11.abs().max(v22.abs()).max(1e-300);
    if (c - c10).abs() > 1e-12 * scale {
        return Err(Error::parameter("cov", "not symmetric"));
    }
    if v11 < 0.0 || v22 < 0.0 || v11 * v22 - c * c < -1e-12 * scale * scale {
        return Err(Error::parameter("cov", "not positive semidefinite"));
    }
    if m_samples < 2 {
        return Err(Error::parameter("m_samples", "need at least 2"));
    }

    // Lower-triangular factor; the conditional variance is clamped at zero
    // so a boundary covariance (perfect correlation) stays sampleable.
    let l11 = v11.sqrt();
    let (l21, l22) = if l11 > 0.0 {
        (c / l11, (v22 - (c / l11) * (c / l11)).max(0.0).sqrt())
    } else {
        (0.0, v22.sqrt())
    };

    let mut rng = seed::rng_from(seed::derive(master_seed, Component::MomentCheck, 0));
    let mut p22 = Vec::with_capacity(m_samples);
    let mut p33 = Vec::with_capacity(m_samples);
    for _ in 0..m_samples {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let a = l11 * z1;
        let at = l21 * z1 + l22 * z2;
        p22.push(a * a * at * at);
        p33.push(a * a * a * at * at * at);
    }
    let (m22_estimate, m22_se) = stats::mean_and_se(&p22)?;
    let (m33_estimate, m33_se) = stats::mean_and_se(&p33)?;
    let m22_target = v11 * v22 + 2.0 * c * c;
    let m33_target = 6.0 * c * c * c + 9.0 * c * v11 * v22;
    let pass = (m22_estimate - m22_target).abs() <= 4.0 * m22_se
        && (m33_estimate - m33_target).abs() <= 4.0 * m33_se;
    Ok(MomentCheckReport {
        cov,
        samples: m_samples,
        m22_estimate,
        m22_se,
        m22_target,
        m33_estimate,
        m33_se,
        m33_target,
        pass,
    })
}

/// Which iterated integral of extended-driver components a Hölder-ratio
/// run measures. Multi-indices are in driver coordinates; weight-1 entries
/// are path components, weight-3 entries increment-cube processes.
#[derive(Debug, Clone)]
pub enum RatioProcess {
    /// sup |x̃^{n,α}_t − x̃^{n,α}_s| / (t−s)^{1/2−δ}, |α| = 3.
    Level1 { alpha: MultiIndex },
    /// sup |∫∫ dx̃^{n,inner} dx̃^{n,outer}| / (t−s)^{2β}.
    Level2 {
        inner: MultiIndex,
        outer: MultiIndex,
    },
    /// sup |∫∫∫ dx̃^{n,inner} dx̃^{n,middle} dx̃^{n,outer}| / (t−s)^{3β}.
    Level3 {
        inner: MultiIndex,
        middle: MultiIndex,
        outer: MultiIndex,
    },
}

impl RatioProcess {
    fn component_indices(&self) -> Vec<&MultiIndex> {
        match self {
            RatioProcess::Level1 { alpha } => vec![alpha],
            RatioProcess::Level2 { inner, outer } => vec![inner, outer],
            RatioProcess::Level3 {
                inner,
                middle,
                outer,
            } => vec![inner, middle, outer],
        }
    }

    fn validate(&self) -> Result<usize> {
        let comps = self.component_indices();
        let d = comps[0].len();
        for alpha in &comps {
            if alpha.len() != d {
                return Err(Error::Dimension {
                    context: "RatioProcess driver dim",
                    expected: d,
                    got: alpha.len(),
                });
            }
            if !matches!(alpha.weight(), 1 | 3) {
                return Err(Error::parameter(
                    "process",
                    format!("component weight {} not in {{1, 3}}", alpha.weight()),
                ));
            }
        }
        let max_weight = comps.iter().map(|a| a.weight()).max().unwrap();
        if max_weight != 3 {
            return Err(Error::parameter(
                "process",
                "at least one component must have weight 3",
            ));
        }
        if matches!(self, RatioProcess::Level1 { .. }) && comps[0].weight() != 3 {
            return Err(Error::parameter("process", "level-1 ratio needs |alpha| = 3"));
        }
        Ok(d)
    }

    /// Denominator exponent on |t − s|.
    pub fn holder_exponent(&self, delta: f64, beta: f64) -> f64 {
        match self {
            RatioProcess::Level1 { .. } => 0.5 - delta,
            RatioProcess::Level2 { .. } => 2.0 * beta,
            RatioProcess::Level3 { .. } => 3.0 * beta,
        }
    }

    /// Scaling exponent in h the sup ratio is compared against.
    pub fn rate_target(&self, hurst: f64) -> f64 {
        match self {
            RatioProcess::Level1 { .. } => 3.0 * hurst - 0.5,
            _ => 2.0 * hurst - 0.5,
        }
    }

    pub fn label(&self) -> String {
        match self {
            RatioProcess::Level1 { alpha } => format!("level1{alpha}"),
            RatioProcess::Level2 { inner, outer } => format!("level2[{inner},{outer}]"),
            RatioProcess::Level3 {
                inner,
                middle,
                outer,
            } => format!("level3[{inner},{middle},{outer}]"),
        }
    }
}

fn lag_powers(n: usize, h: f64, exponent: f64) -> Vec<f64> {
    (0..=n)
        .map(|lag| if lag == 0 { f64::NAN } else { (lag as f64 * h).powf(exponent) })
        .collect()
}

fn sup_ratio_level1(values: &[f64], h: f64, exponent: f64) -> f64 {
    let n = values.len() - 1;
    let pow = lag_powers(n, h, exponent);
    let mut best = 0.0f64;
    for j in 0..n {
        for k in j + 1..=n {
            best = best.max((values[k] - values[j]).abs() / pow[k - j]);
        }
    }
    best
}

/// Exact second iterated integral of two piecewise-linear scalars, swept
/// over all grid windows [t_j, t_k]: per segment the increment is
/// (inner_left − inner_j)·Δouter + ½·Δinner·Δouter.
fn sup_ratio_level2(inner: &[f64], outer: &[f64], h: f64, exponent: f64) -> f64 {
    let n = inner.len() - 1;
    let pow = lag_powers(n, h, exponent);
    let mut best = 0.0f64;
    for j in 0..n {
        let mut i2 = 0.0;
        for k in j + 1..=n {
            let d_in = inner[k] - inner[k - 1];
            let d_out = outer[k] - outer[k - 1];
            i2 += (inner[k - 1] - inner[j]) * d_out + 0.5 * d_in * d_out;
            best = best.max(i2.abs() / pow[k - j]);
        }
    }
    best
}

/// Exact third iterated integral over all grid windows; the running pair
/// (level-1 of the innermost, level-2 of the inner pair) is advanced with
/// the segment's ½ and 1/6 cross terms before its own update.
fn sup_ratio_level3(
    inner: &[f64],
    middle: &[f64],
    outer: &[f64],
    h: f64,
    exponent: f64,
) -> f64 {
    let n = inner.len() - 1;
    let pow = lag_powers(n, h, exponent);
    let mut best = 0.0f64;
    for j in 0..n {
        let mut a = 0.0;
        let mut i2 = 0.0;
        let mut i3 = 0.0;
        for k in j + 1..=n {
            let d_in = inner[k] - inner[k - 1];
            let d_mid = middle[k] - middle[k - 1];
            let d_out = outer[k] - outer[k - 1];
            i3 += i2 * d_out + 0.5 * a * d_mid * d_out + d_in * d_mid * d_out / 6.0;
            i2 += a * d_mid + 0.5 * d_in * d_mid;
            a += d_in;
            best = best.max(i3.abs() / pow[k - j]);
        }
    }
    best
}

/// Median over paths, per resolution, of the grid-pair sup ratio of the
/// named iterated integral. The slope of the result against h is compared
/// with the process's `rate_target`.
pub fn holder_ratio_scaling(
    process: &RatioProcess,
    hurst: f64,
    horizon_t: f64,
    n_list: &[usize],
    m_paths: usize,
    master_seed: u64,
    delta: f64,
    beta: f64,
) -> Result<ErrorTable> {
    let d = process.validate()?;
    if n_list.len() < 3 {
        return Err(Error::degenerate(
            "holder_ratio_scaling",
            "need at least 3 resolutions",
        ));
    }
    let finest = *n_list.last().unwrap();
    validate_resolutions(n_list, finest)?;
    if m_paths == 0 {
        return Err(Error::parameter("m_paths", "0"));
    }
    if !(0.0..0.5).contains(&delta) {
        return Err(Error::parameter("delta", format!("{delta} not in (0, 1/2)")));
    }
    if matches!(
        process,
        RatioProcess::Level2 { .. } | RatioProcess::Level3 { .. }
    ) && !(beta > 0.0 && beta < hurst)
    {
        return Err(Error::parameter(
            "beta",
            format!("{beta} not in (0, H = {hurst})"),
        ));
    }
    let exponent = process.holder_exponent(delta, beta);

    let sampler = FbmSampler::new(FbmConfig {
        hurst,
        horizon_t,
        n_steps: finest,
        dim_d: d,
        master_seed,
    })?;

    let per_path: Vec<Vec<f64>> = (0..m_paths as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let fine = sampler.path(i)?;
            n_list
                .iter()
                .map(|&n| {
                    let coarse = fbm::coarsen(&fine, finest / n)?;
                    let h = coarse.step();
                    let columns: Vec<Vec<f64>> = process
                        .component_indices()
                        .iter()
                        .map(|alpha| {
                            let p = paths::monomial_process(&coarse, alpha)?;
                            Ok((0..=n).map(|k| p.node(k)[0]).collect())
                        })
                        .collect::<Result<_>>()?;
                    Ok(match process {
                        RatioProcess::Level1 { .. } => {
                            sup_ratio_level1(&columns[0], h, exponent)
                        }
                        RatioProcess::Level2 { .. } => {
                            sup_ratio_level2(&columns[0], &columns[1], h, exponent)
                        }
                        RatioProcess::Level3 { .. } => sup_ratio_level3(
                            &columns[0], &columns[1], &columns[2], h, exponent,
                        ),
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    median_rows(
        ErrorStatistic::MedianOfMax,
        n_list,
        horizon_t,
        m_paths,
        &per_path,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::FbmPath;
    use crate::models::smooth_bounded_model;
    use crate::models::VectorField;
    use crate::paths::PiecewiseLinearPath;
    use crate::signature;
    use std::sync::Arc;

    fn synthetic_table(errors: &[(usize, f64)]) -> ErrorTable {
        let rows = errors
            .iter()
            .map(|&(n, error)| ErrorRow {
                n,
                h: 1.0 / n as f64,
                error,
                paths: 1,
            })
            .collect();
        ErrorTable::new(ErrorStatistic::MedianOfMax, rows).unwrap()
    }

    #[test]
    fn fit_rate_recovers_linear_order_exactly() {
        let table = synthetic_table(
            &[8, 16, 32, 64, 128].map(|n| (n, 0.37 / n as f64)),
        );
        let report = fit_rate(table).unwrap();
        assert!((report.slope - 1.0).abs() < 1e-12, "slope {}", report.slope);
        assert!(report.passes(1.0, 0.01));
    }

    #[test]
    fn fit_rate_handles_noisy_sublinear_order() {
        let mut rng = crate::seed::rng_from(701);
        let rows: Vec<(usize, f64)> = [8usize, 16, 32, 64, 128, 256]
            .iter()
            .map(|&n| {
                let h = 1.0 / n as f64;
                let noise: f64 = 1.0 + 0.01 * rng.gen_range(-1.0..1.0);
                (n, 0.8 * h.powf(0.3) * noise)
            })
            .collect();
        let report = fit_rate(synthetic_table(&rows)).unwrap();
        assert!(
            (0.25..=0.35).contains(&report.slope),
            "slope {}",
            report.slope
        );
    }

    #[test]
    fn fit_rate_on_constant_errors_is_flat() {
        let table = synthetic_table(&[8, 16, 32, 64].map(|n| (n, 0.123)));
        let report = fit_rate(table).unwrap();
        assert_eq!(report.slope, 0.0);
    }

    #[test]
    fn fit_rate_rejects_thin_or_degenerate_input() {
        assert!(fit_rate(synthetic_table(&[(8, 0.1), (16, 0.05)])).is_err());
        assert!(fit_rate(synthetic_table(&[(8, 0.1), (16, 0.05), (32, 0.0)])).is_err());
        assert!(
            fit_rate(synthetic_table(&[(8, 0.1), (16, 0.05), (32, 5e-14)])).is_err(),
            "roundoff-floor errors must refuse a fit"
        );
    }

    #[test]
    fn fit_rate_guard_drops_an_off_trend_coarsest_row() {
        let mut rows: Vec<(usize, f64)> = [8usize, 16, 32, 64, 128]
            .iter()
            .map(|&n| (n, 0.9 * (1.0 / n as f64).powf(0.5)))
            .collect();
        rows[0].1 *= 10.0;
        let report = fit_rate(synthetic_table(&rows)).unwrap();
        assert!(report.dropped_coarsest);
        assert!((report.slope - 0.5).abs() < 1e-9, "slope {}", report.slope);
        assert_eq!(report.table.rows.len(), 5, "report keeps the full table");
        assert_eq!(report.residuals.len(), 4);

        // With only three rows the guard must not fire.
        let short = vec![rows[0], rows[1], rows[2]];
        let report = fit_rate(synthetic_table(&short)).unwrap();
        assert!(!report.dropped_coarsest);
    }

    #[test]
    fn error_table_validation_and_csv() {
        let rows = vec![
            ErrorRow { n: 8, h: 0.125, error: 0.25, paths: 64 },
            ErrorRow { n: 16, h: 0.0625, error: 0.125, paths: 64 },
        ];
        let table = ErrorTable::new(ErrorStatistic::RmsOfMax, rows.clone()).unwrap();
        let csv = table.to_csv();
        assert!(csv.starts_with("n,h,error,statistic,paths\n"));
        assert!(csv.contains("rms-of-max"));
        assert_eq!(csv.lines().count(), 3);

        let reversed = vec![rows[1].clone(), rows[0].clone()];
        assert!(ErrorTable::new(ErrorStatistic::RmsOfMax, reversed).is_err());

        let mixed_horizon = vec![
            rows[0].clone(),
            ErrorRow { n: 16, h: 0.125, error: 0.1, paths: 64 },
        ];
        assert!(ErrorTable::new(ErrorStatistic::RmsOfMax, mixed_horizon).is_err());
    }

    #[test]
    fn levy_area_gap_vanishes_at_the_reference_resolution() {
        let table = levy_area_ms_error(0.4, 1.0, &[64], 64, 8, 11).unwrap();
        assert_eq!(table.rows[0].error, 0.0);
    }

    #[test]
    fn levy_area_recovers_the_classical_half_order_at_h05() {
        let table =
            levy_area_ms_error(0.5, 1.0, &[32, 64, 128, 256, 512], 4096, 512, 12).unwrap();
        let report = fit_rate(table).unwrap();
        assert!(
            (report.slope - 0.5).abs() < 0.1,
            "slope {} should be near 1/2",
            report.slope
        );
    }

    #[test]
    fn constant_sigma_scheme_errors_sit_at_roundoff() {
        struct Const;
        impl VectorField for Const {
            fn state_dim(&self) -> usize {
                2
            }
            fn noise_dim(&self) -> usize {
                2
            }
            fn sigma(&self, _y: &[f64], out: &mut [f64]) {
                out.copy_from_slice(&[1.0, 0.4, -0.3, 1.0]);
            }
            fn sigma_d1(&self, _y: &[f64], out: &mut [f64]) {
                out.fill(0.0);
            }
            fn sigma_d2(&self, _y: &[f64], out: &mut [f64]) {
                out.fill(0.0);
            }
        }
        let model = NamedModel {
            id: "const_analysis_test",
            field: Arc::new(Const),
            initial: vec![0.1, -0.2],
            globally_lip: true,
            notes: "",
        };
        let table = pathwise_scheme_error(
            &model,
            Scheme::ModifiedMilstein,
            0.4,
            1.0,
            &[16, 32, 64],
            256,
            4,
            8,
            13,
        )
        .unwrap();
        for row in &table.rows {
            assert!(row.error < 1e-13, "n={} error {}", row.n, row.error);
        }
        assert!(fit_rate(table).is_err(), "roundoff table must refuse a fit");
    }

    #[test]
    fn milstein_never_trails_euler_on_coupled_paths() {
        let model = smooth_bounded_model();
        let common = |scheme| {
            pathwise_scheme_error(&model, scheme, 0.45, 1.0, &[32, 64, 128], 1024, 8, 48, 14)
                .unwrap()
        };
        let milstein = common(Scheme::ModifiedMilstein);
        let euler = common(Scheme::ModifiedEuler);
        for (a, b) in milstein.rows.iter().zip(&euler.rows) {
            assert!(
                a.error <= b.error,
                "n={}: milstein {} vs euler {}",
                a.n,
                a.error,
                b.error
            );
        }
    }

    #[test]
    fn hermite_degree_one_telescopes_to_a_flat_line() {
        let scaling =
            hermite_sum_l2(1, 0.4, 1.0, &[16, 32, 64, 128], (0.25, 0.75), 64, 15).unwrap();
        let first = scaling.raw.rows[0].error;
        for row in &scaling.raw.rows {
            assert_eq!(row.error, first, "telescoped sums must agree across n");
        }
        let report = fit_rate(scaling.raw).unwrap();
        assert_eq!(report.slope, 0.0);
    }

    #[test]
    fn hermite_degree_two_splits_raw_and_centered_scalings() {
        let scaling =
            hermite_sum_l2(2, 0.5, 1.0, &[16, 32, 64, 128, 256], (0.25, 0.75), 4096, 16).unwrap();
        // Raw: the window mass dominates; per row the exact second moment
        // is W² + 2Wh with W = 0.5.
        let raw = fit_rate(scaling.raw.clone()).unwrap();
        assert!(raw.slope.abs() < 0.1, "raw slope {}", raw.slope);
        for row in &scaling.raw.rows {
            let expected = (0.25 + 2.0 * 0.5 * row.h).sqrt();
            assert!(
                (row.error - expected).abs() < 0.02 * expected,
                "raw norm {} vs {expected}",
                row.error
            );
        }
        // Centered: chi-square fluctuations, L² = √(2W)·h^{1/2}.
        let finest = scaling.centered.rows.last().unwrap();
        let expected = (2.0f64 * 0.5).sqrt() * finest.h.sqrt();
        assert!(
            (finest.error - expected).abs() < 0.1 * expected,
            "centered norm {} vs {}",
            finest.error,
            expected
        );
        let centered = fit_rate(scaling.centered).unwrap();
        assert!(
            (centered.slope - 0.5).abs() < 0.1,
            "centered slope {}",
            centered.slope
        );
    }

    #[test]
    fn hermite_degree_three_matches_the_odd_scaling() {
        let scaling =
            hermite_sum_l2(3, 0.35, 1.0, &[32, 64, 128, 256, 512], (0.25, 0.75), 4096, 17)
                .unwrap();
        let report = fit_rate(scaling.raw).unwrap();
        let target = 3.0 * 0.35 - 0.5;
        assert!(
            (report.slope - target).abs() < 0.1,
            "slope {} vs {}",
            report.slope,
            target
        );
    }

    #[test]
    fn hermite_window_and_degree_validation() {
        assert!(hermite_sum_l2(0, 0.4, 1.0, &[16, 32], (0.25, 0.75), 8, 1).is_err());
        assert!(hermite_sum_l2(5, 0.4, 1.0, &[16, 32], (0.25, 0.75), 8, 1).is_err());
        assert!(hermite_sum_l2(2, 0.4, 1.0, &[16, 32], (0.75, 0.25), 8, 1).is_err());
        // 0.3·16 is not a grid point.
        assert!(hermite_sum_l2(2, 0.4, 1.0, &[16, 32], (0.3, 0.75), 8, 1).is_err());
    }

    #[test]
    fn moment_check_independent_pair() {
        let report =
            gaussian_moment_check([[1.0, 0.0], [0.0, 1.0]], 200_000, 21).unwrap();
        assert_eq!(report.m22_target, 1.0);
        assert_eq!(report.m33_target, 0.0);
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn moment_check_perfectly_correlated_pair() {
        let report = gaussian_moment_check([[1.0, 1.0], [1.0, 1.0]], 200_000, 22).unwrap();
        assert_eq!(report.m22_target, 3.0);
        assert_eq!(report.m33_target, 15.0);
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn moment_check_half_correlation_targets() {
        let report = gaussian_moment_check([[1.0, 0.5], [0.5, 1.0]], 100_000, 23).unwrap();
        assert_eq!(report.m22_target, 1.5);
        assert_eq!(report.m33_target, 5.25);
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn moment_check_rejects_invalid_covariances() {
        assert!(gaussian_moment_check([[1.0, 1.5], [1.5, 1.0]], 100, 1).is_err());
        assert!(gaussian_moment_check([[1.0, 0.2], [0.3, 1.0]], 100, 1).is_err());
        assert!(gaussian_moment_check([[-1.0, 0.0], [0.0, 1.0]], 100, 1).is_err());
    }

    fn stack_columns(h: f64, columns: &[&[f64]]) -> PiecewiseLinearPath {
        let dim = columns.len();
        let n = columns[0].len() - 1;
        let mut values = Vec::with_capacity((n + 1) * dim);
        for k in 0..=n {
            for col in columns {
                values.push(col[k]);
            }
        }
        PiecewiseLinearPath::from_nodes(h, dim, values).unwrap()
    }

    fn monomial_column(path: &FbmPath, exps: Vec<u32>) -> Vec<f64> {
        let p = paths::monomial_process(path, &MultiIndex::new(exps).unwrap()).unwrap();
        (0..=path.n_steps()).map(|k| p.node(k)[0]).collect()
    }

    fn sample_path(hurst: f64, n: usize, d: usize, seed: u64) -> FbmPath {
        FbmSampler::new(FbmConfig {
            hurst,
            horizon_t: 1.0,
            n_steps: n,
            dim_d: d,
            master_seed: seed,
        })
        .unwrap()
        .path(0)
        .unwrap()
    }

    #[test]
    fn level2_sweep_matches_signature_products() {
        let path = sample_path(0.4, 32, 2, 31);
        let inner = monomial_column(&path, vec![3, 0]);
        let outer = monomial_column(&path, vec![0, 1]);
        let stacked = stack_columns(path.step(), &[&inner, &outer]);

        // Recompute the sweep's integral at chosen windows by cutting the
        // outer loop short: run the inner recursion directly.
        for (j, k) in [(0usize, 32usize), (3, 17), (10, 11), (5, 29)] {
            let mut i2 = 0.0;
            for l in j + 1..=k {
                let d_in = inner[l] - inner[l - 1];
                let d_out = outer[l] - outer[l - 1];
                i2 += (inner[l - 1] - inner[j]) * d_out + 0.5 * d_in * d_out;
            }
            let sig = signature::sig_of_path(&stacked, j, k);
            let want = sig.level2[1];
            assert!(
                (i2 - want).abs() < 1e-12 * want.abs().max(1.0),
                "window {j}..{k}: {i2} vs {want}"
            );
        }
    }

    #[test]
    fn level3_sweep_matches_signature_products() {
        let path = sample_path(0.4, 24, 2, 32);
        let inner = monomial_column(&path, vec![2, 1]);
        let middle = monomial_column(&path, vec![1, 0]);
        let outer = monomial_column(&path, vec![0, 3]);
        let stacked = stack_columns(path.step(), &[&inner, &middle, &outer]);

        for (j, k) in [(0usize, 24usize), (2, 13), (7, 8), (4, 21)] {
            let (mut a, mut i2, mut i3) = (0.0, 0.0, 0.0);
            for l in j + 1..=k {
                let d_in = inner[l] - inner[l - 1];
                let d_mid = middle[l] - middle[l - 1];
                let d_out = outer[l] - outer[l - 1];
                i3 += i2 * d_out + 0.5 * a * d_mid * d_out + d_in * d_mid * d_out / 6.0;
                i2 += a * d_mid + 0.5 * d_in * d_mid;
                a += d_in;
            }
            let sig = signature::sig_of_path(&stacked, j, k);
            let want = sig.level3[(0 * 3 + 1) * 3 + 2];
            assert!(
                (i3 - want).abs() < 1e-12 * want.abs().max(1.0),
                "window {j}..{k}: {i3} vs {want}"
            );
        }
    }

    #[test]
    fn sup_ratios_scale_homogeneously() {
        // Doubling a scalar column doubles level 1, quadruples level 2,
        // octuples level 3 at fixed windows.
        let path = sample_path(0.4, 16, 1, 33);
        let col = monomial_column(&path, vec![3]);
        let doubled: Vec<f64> = col.iter().map(|v| 2.0 * v).collect();
        let h = path.step();
        let r1 = sup_ratio_level1(&col, h, 0.45);
        let r1_doubled = sup_ratio_level1(&doubled, h, 0.45);
        assert!((r1_doubled - 2.0 * r1).abs() < 1e-12 * r1);

        let r2 = sup_ratio_level2(&col, &col, h, 0.6);
        let r2_doubled = sup_ratio_level2(&doubled, &doubled, h, 0.6);
        assert!((r2_doubled - 4.0 * r2).abs() < 1e-11 * r2);

        let r3 = sup_ratio_level3(&col, &col, &col, h, 0.9);
        let r3_doubled = sup_ratio_level3(&doubled, &doubled, &doubled, h, 0.9);
        assert!((r3_doubled - 8.0 * r3).abs() < 1e-10 * r3);
    }

    #[test]
    fn holder_ratio_scaling_validation() {
        let level1 = RatioProcess::Level1 {
            alpha: MultiIndex::new(vec![3, 0]).unwrap(),
        };
        // Too few resolutions.
        assert!(
            holder_ratio_scaling(&level1, 0.4, 1.0, &[64], 4, 1, DEFAULT_DELTA, 0.35).is_err()
        );
        assert!(holder_ratio_scaling(
            &level1,
            0.4,
            1.0,
            &[32, 64],
            4,
            1,
            DEFAULT_DELTA,
            0.35
        )
        .is_err());
        // Weight-2 component rejected.
        let bad = RatioProcess::Level1 {
            alpha: MultiIndex::new(vec![2, 0]).unwrap(),
        };
        assert!(
            holder_ratio_scaling(&bad, 0.4, 1.0, &[16, 32, 64], 4, 1, DEFAULT_DELTA, 0.35)
                .is_err()
        );
        // All-weight-1 level 2 rejected.
        let bad2 = RatioProcess::Level2 {
            inner: MultiIndex::new(vec![1, 0]).unwrap(),
            outer: MultiIndex::new(vec![0, 1]).unwrap(),
        };
        assert!(
            holder_ratio_scaling(&bad2, 0.4, 1.0, &[16, 32, 64], 4, 1, DEFAULT_DELTA, 0.35)
                .is_err()
        );
        // Beta outside (0, H) rejected for level 2.
        let ok2 = RatioProcess::Level2 {
            inner: MultiIndex::new(vec![3, 0]).unwrap(),
            outer: MultiIndex::new(vec![0, 1]).unwrap(),
        };
        assert!(
            holder_ratio_scaling(&ok2, 0.4, 1.0, &[16, 32, 64], 4, 1, DEFAULT_DELTA, 0.45)
                .is_err()
        );
        // Mismatched driver dims rejected.
        let mixed = RatioProcess::Level2 {
            inner: MultiIndex::new(vec![3]).unwrap(),
            outer: MultiIndex::new(vec![0, 1]).unwrap(),
        };
        assert!(
            holder_ratio_scaling(&mixed, 0.4, 1.0, &[16, 32, 64], 4, 1, DEFAULT_DELTA, 0.35)
                .is_err()
        );
    }

    #[test]
    fn holder_ratio_tables_are_positive_and_deterministic() {
        let process = RatioProcess::Level2 {
            inner: MultiIndex::new(vec![3, 0]).unwrap(),
            outer: MultiIndex::new(vec![0, 1]).unwrap(),
        };
        let run = || {
            holder_ratio_scaling(
                &process,
                0.4,
                1.0,
                &[16, 32, 64],
                8,
                77,
                DEFAULT_DELTA,
                default_beta(0.4),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.error, rb.error);
            assert!(ra.error > 0.0);
        }
        assert_eq!(a.statistic, ErrorStatistic::MedianOfMax);
    }

    #[test]
    fn estimators_are_stable_across_worker_counts() {
        let run_with = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                levy_area_ms_error(0.45, 1.0, &[16, 32, 64], 128, 32, 99).unwrap()
            })
        };
        let serial = run_with(1);
        let wide = run_with(4);
        for (a, b) in serial.rows.iter().zip(&wide.rows) {
            assert!(
                (a.error - b.error).abs() <= 1e-10 * a.error.abs().max(1.0),
                "worker-count drift: {} vs {}",
                a.error,
                b.error
            );
        }
    }

    #[test]
    fn backward_error_table_shrinks_with_resolution() {
        let model = smooth_bounded_model();
        let table =
            backward_error_table(&model, 0.45, 1.0, &[16, 32, 64], 16, 16, 101).unwrap();
        assert!(table.rows[0].error > table.rows[2].error);
        for row in &table.rows {
            assert!(row.error > 0.0 && row.error.is_finite());
        }
    }
}
