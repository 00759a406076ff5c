//! Config-driven experiment runner.
//!
//! One plain-text config in, CSV/JSON artifacts plus a hashed manifest out.
//! Grammar: the first significant line is a `[kind]` header, the rest are
//! `key = value` lines; `#` starts a comment. The key set is closed per
//! kind, so unknown or duplicate keys are line-numbered errors. Resolution
//! lists must be strictly increasing powers of two everywhere; coarsenings
//! then couple exactly across resolutions.

use crate::analysis::{self, ErrorTable, RatioProcess};
use crate::error::{Error, Result};
use crate::fbm::{FbmConfig, FbmSampler};
use crate::io;
use crate::models;
use crate::paths::{MultiIndex, PiecewiseLinearPath};
use crate::schemes::Scheme;
use crate::seed::{self, Component};
use crate::signature::{self, SigElement};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Componentwise gap ceiling for the randomized algebra suites.
pub const SELFTEST_TOL: f64 = 1e-12;

pub const KIND_IDS: [&str; 8] = [
    "fbm-sample",
    "levy-area",
    "scheme-rate",
    "backward-error",
    "hermite-scaling",
    "moment-check",
    "holder-scaling",
    "signature-selftest",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    FbmSample,
    LevyArea,
    SchemeRate,
    BackwardError,
    HermiteScaling,
    MomentCheck,
    HolderScaling,
    SignatureSelftest,
}

impl ExperimentKind {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "fbm-sample" => Ok(ExperimentKind::FbmSample),
            "levy-area" => Ok(ExperimentKind::LevyArea),
            "scheme-rate" => Ok(ExperimentKind::SchemeRate),
            "backward-error" => Ok(ExperimentKind::BackwardError),
            "hermite-scaling" => Ok(ExperimentKind::HermiteScaling),
            "moment-check" => Ok(ExperimentKind::MomentCheck),
            "holder-scaling" => Ok(ExperimentKind::HolderScaling),
            "signature-selftest" => Ok(ExperimentKind::SignatureSelftest),
            _ => Err(Error::UnknownId {
                kind: "experiment kind",
                id: id.to_string(),
            }),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            ExperimentKind::FbmSample => "fbm-sample",
            ExperimentKind::LevyArea => "levy-area",
            ExperimentKind::SchemeRate => "scheme-rate",
            ExperimentKind::BackwardError => "backward-error",
            ExperimentKind::HermiteScaling => "hermite-scaling",
            ExperimentKind::MomentCheck => "moment-check",
            ExperimentKind::HolderScaling => "holder-scaling",
            ExperimentKind::SignatureSelftest => "signature-selftest",
        }
    }

    fn allowed_keys(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::FbmSample => &["hurst", "horizon", "n", "paths", "dim", "seed", "out"],
            ExperimentKind::LevyArea => &[
                "hurst", "horizon", "n", "n_ref", "paths", "seed", "target", "tol", "out",
            ],
            ExperimentKind::SchemeRate => &[
                "hurst",
                "horizon",
                "n",
                "n_ref",
                "paths",
                "model",
                "scheme",
                "substeps",
                "seed",
                "target",
                "tol",
                "slope_min",
                "slope_max",
                "require_decreasing",
                "out",
            ],
            ExperimentKind::BackwardError => &[
                "hurst", "horizon", "n", "paths", "model", "substeps", "seed", "target", "tol",
                "out",
            ],
            ExperimentKind::HermiteScaling => &[
                "hurst",
                "horizon",
                "n",
                "paths",
                "degree",
                "window_lo",
                "window_hi",
                "seed",
                "target",
                "tol",
                "out",
            ],
            ExperimentKind::MomentCheck => &["rho", "var1", "var2", "paths", "seed", "out"],
            ExperimentKind::HolderScaling => &[
                "hurst", "horizon", "n", "paths", "level", "alpha", "inner", "middle", "outer",
                "delta", "beta", "seed", "target", "tol", "out",
            ],
            ExperimentKind::SignatureSelftest => &["instances", "seed", "out"],
        }
    }

    fn required_keys(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::FbmSample => &["hurst", "n", "seed"],
            ExperimentKind::LevyArea => &["hurst", "n", "n_ref", "paths", "seed"],
            ExperimentKind::SchemeRate => &["hurst", "n", "n_ref", "paths", "model", "scheme", "seed"],
            ExperimentKind::BackwardError => &["hurst", "n", "paths", "model", "seed"],
            ExperimentKind::HermiteScaling => &["hurst", "n", "paths", "degree", "seed"],
            ExperimentKind::MomentCheck => &["rho", "paths", "seed"],
            ExperimentKind::HolderScaling => &["hurst", "n", "paths", "level", "seed"],
            ExperimentKind::SignatureSelftest => &["seed"],
        }
    }
}

/// Parsed and validated experiment description. Optional fields are `None`
/// when the kind does not use them; derived defaults (target exponent,
/// tolerance, beta, substeps) resolve at run time from the kind and H.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub hurst: Option<f64>,
    pub horizon_t: f64,
    pub n_list: Vec<usize>,
    pub n_ref: Option<usize>,
    pub m_paths: usize,
    pub dim: usize,
    pub model_id: Option<String>,
    pub scheme_id: Option<String>,
    pub substeps: Option<usize>,
    pub degree: u32,
    pub window: (f64, f64),
    pub rho: f64,
    pub var1: f64,
    pub var2: f64,
    pub level: usize,
    pub alpha: Option<MultiIndex>,
    pub inner: Option<MultiIndex>,
    pub middle: Option<MultiIndex>,
    pub outer: Option<MultiIndex>,
    pub delta: f64,
    pub beta: Option<f64>,
    pub target: Option<f64>,
    pub tol: Option<f64>,
    pub slope_min: Option<f64>,
    pub slope_max: Option<f64>,
    pub require_decreasing: bool,
    pub instances: usize,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Slope target the rate fit is judged against; `None` for kinds that
    /// do not fit a rate.
    pub fn resolved_target(&self) -> Option<f64> {
        if let Some(t) = self.target {
            return Some(t);
        }
        let h = self.hurst?;
        match self.kind {
            ExperimentKind::LevyArea | ExperimentKind::SchemeRate => Some(2.0 * h - 0.5),
            ExperimentKind::BackwardError => Some(4.0 * h - 1.0),
            ExperimentKind::HermiteScaling => Some(f64::from(self.degree) * h - 0.5),
            ExperimentKind::HolderScaling => {
                self.ratio_process().map(|p| p.rate_target(h))
            }
            _ => None,
        }
    }

    pub fn resolved_tol(&self) -> f64 {
        if let Some(t) = self.tol {
            return t;
        }
        match self.kind {
            ExperimentKind::LevyArea => 0.08,
            ExperimentKind::SchemeRate | ExperimentKind::BackwardError => 0.15,
            ExperimentKind::HermiteScaling => 0.10,
            ExperimentKind::HolderScaling => match self.level {
                1 => 0.12,
                2 => 0.15,
                _ => 0.20,
            },
            _ => 0.0,
        }
    }

    pub fn resolved_substeps(&self) -> usize {
        self.substeps.unwrap_or(match self.kind {
            ExperimentKind::BackwardError => 32,
            _ => 8,
        })
    }

    pub fn resolved_beta(&self) -> f64 {
        match (self.beta, self.hurst) {
            (Some(b), _) => b,
            (None, Some(h)) => analysis::default_beta(h),
            (None, None) => 0.0,
        }
    }

    pub fn ratio_process(&self) -> Option<RatioProcess> {
        match self.level {
            1 => Some(RatioProcess::Level1 {
                alpha: self.alpha.clone()?,
            }),
            2 => Some(RatioProcess::Level2 {
                inner: self.inner.clone()?,
                outer: self.outer.clone()?,
            }),
            3 => Some(RatioProcess::Level3 {
                inner: self.inner.clone()?,
                middle: self.middle.clone()?,
                outer: self.outer.clone()?,
            }),
            _ => None,
        }
    }

    /// Canonical key/value view with every derived default resolved; this
    /// is what the manifest echoes.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        put("kind", self.kind.id().to_string());
        put("seed", self.seed.to_string());
        if let Some(h) = self.hurst {
            put("hurst", h.to_string());
            put("horizon", self.horizon_t.to_string());
        }
        if !self.n_list.is_empty() {
            let joined: Vec<String> = self.n_list.iter().map(|n| n.to_string()).collect();
            put("n", joined.join(" "));
        }
        if let Some(n_ref) = self.n_ref {
            put("n_ref", n_ref.to_string());
        }
        match self.kind {
            ExperimentKind::SignatureSelftest => put("instances", self.instances.to_string()),
            _ => put("paths", self.m_paths.to_string()),
        }
        if self.kind == ExperimentKind::FbmSample {
            put("dim", self.dim.to_string());
        }
        if let Some(id) = &self.model_id {
            put("model", id.clone());
        }
        if let Some(id) = &self.scheme_id {
            put("scheme", id.clone());
        }
        if matches!(
            self.kind,
            ExperimentKind::SchemeRate | ExperimentKind::BackwardError
        ) {
            put("substeps", self.resolved_substeps().to_string());
        }
        if self.kind == ExperimentKind::HermiteScaling {
            put("degree", self.degree.to_string());
            put("window_lo", self.window.0.to_string());
            put("window_hi", self.window.1.to_string());
        }
        if self.kind == ExperimentKind::MomentCheck {
            put("rho", self.rho.to_string());
            put("var1", self.var1.to_string());
            put("var2", self.var2.to_string());
        }
        if self.kind == ExperimentKind::HolderScaling {
            put("level", self.level.to_string());
            for (key, index) in [
                ("alpha", &self.alpha),
                ("inner", &self.inner),
                ("middle", &self.middle),
                ("outer", &self.outer),
            ] {
                if let Some(ix) = index {
                    put(key, ix.to_string());
                }
            }
            put("delta", self.delta.to_string());
            put("beta", self.resolved_beta().to_string());
        }
        if let Some(target) = self.resolved_target() {
            put("target", target.to_string());
            put("tol", self.resolved_tol().to_string());
        }
        if let Some(lo) = self.slope_min {
            put("slope_min", lo.to_string());
        }
        if let Some(hi) = self.slope_max {
            put("slope_max", hi.to_string());
        }
        if self.require_decreasing {
            put("require_decreasing", "true".to_string());
        }
        map
    }
}

fn config_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config {
        line,
        msg: msg.into(),
    }
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

/// Strips comments, finds the single `[kind]` header, and splits the rest
/// into raw key/value entries with their line numbers.
fn split_entries(text: &str) -> Result<(ExperimentKind, usize, Vec<Entry>)> {
    let mut kind: Option<(ExperimentKind, usize)> = None;
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return Err(config_err(line_no, "unterminated section header"));
            };
            if kind.is_some() {
                return Err(config_err(
                    line_no,
                    "a config holds exactly one experiment section",
                ));
            }
            let parsed = ExperimentKind::from_id(name.trim()).map_err(|_| {
                config_err(
                    line_no,
                    format!(
                        "unknown experiment kind `{}`; expected one of {}",
                        name.trim(),
                        KIND_IDS.join(", ")
                    ),
                )
            })?;
            kind = Some((parsed, line_no));
            continue;
        }
        if kind.is_none() {
            return Err(config_err(
                line_no,
                "key before the `[kind]` section header",
            ));
        }
        let Some(eq) = line.find('=') else {
            return Err(config_err(line_no, format!("expected `key = value`, got `{line}`")));
        };
        let key = line[..eq].trim().to_string();
        let value = line[eq + 1..].trim().to_string();
        if key.is_empty() {
            return Err(config_err(line_no, "empty key"));
        }
        if value.is_empty() {
            return Err(config_err(line_no, format!("empty value for `{key}`")));
        }
        entries.push(Entry {
            line: line_no,
            key,
            value,
        });
    }
    let (kind, kind_line) = kind.ok_or_else(|| config_err(0, "missing `[kind]` section header"))?;
    Ok((kind, kind_line, entries))
}

fn list_sep(c: char) -> bool {
    c == ',' || c.is_whitespace()
}

struct Fields {
    kind_line: usize,
    map: BTreeMap<String, (usize, String)>,
}

impl Fields {
    fn get(&self, key: &str) -> Option<&(usize, String)> {
        self.map.get(key)
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|(line, v)| {
                v.parse::<f64>().map_err(|_| {
                    config_err(*line, format!("`{key}`: expected a number, got `{v}`"))
                })
            })
            .transpose()
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|(line, v)| {
                v.parse::<usize>().map_err(|_| {
                    config_err(*line, format!("`{key}`: expected a non-negative integer, got `{v}`"))
                })
            })
            .transpose()
    }

    fn u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|(line, v)| {
                v.parse::<u64>().map_err(|_| {
                    config_err(*line, format!("`{key}`: expected a non-negative integer, got `{v}`"))
                })
            })
            .transpose()
    }

    fn bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|(line, v)| match v.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(config_err(
                    *line,
                    format!("`{key}`: expected true or false, got `{v}`"),
                )),
            })
            .transpose()
    }

    fn string(&self, key: &str) -> Option<String> {
        self.get(key).map(|(_, v)| v.clone())
    }

    fn usize_list(&self, key: &str) -> Result<Option<(usize, Vec<usize>)>> {
        self.get(key)
            .map(|(line, v)| {
                let list = v
                    .split(list_sep)
                    .filter(|tok| !tok.is_empty())
                    .map(|tok| {
                        tok.parse::<usize>().map_err(|_| {
                            config_err(
                                *line,
                                format!("`{key}`: expected integers, got `{tok}`"),
                            )
                        })
                    })
                    .collect::<Result<Vec<usize>>>()?;
                Ok((*line, list))
            })
            .transpose()
    }

    fn multi_index(&self, key: &str) -> Result<Option<MultiIndex>> {
        self.get(key)
            .map(|(line, v)| {
                let exps = v
                    .split(list_sep)
                    .filter(|tok| !tok.is_empty())
                    .map(|tok| {
                        tok.parse::<u32>().map_err(|_| {
                            config_err(
                                *line,
                                format!("`{key}`: expected exponents like `3 0`, got `{tok}`"),
                            )
                        })
                    })
                    .collect::<Result<Vec<u32>>>()?;
                MultiIndex::new(exps)
                    .map_err(|e| config_err(*line, format!("`{key}`: {e}")))
            })
            .transpose()
    }

    fn line_of(&self, key: &str) -> usize {
        self.get(key).map(|(line, _)| *line).unwrap_or(self.kind_line)
    }
}

/// Parses and fully validates a config text. Every diagnostic carries the
/// line it came from (the section header's line for missing keys).
pub fn validate_config(text: &str) -> Result<ExperimentConfig> {
    let (kind, kind_line, entries) = split_entries(text)?;

    let allowed = kind.allowed_keys();
    let mut map: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for entry in entries {
        if !allowed.contains(&entry.key.as_str()) {
            return Err(config_err(
                entry.line,
                format!(
                    "unknown key `{}` for experiment kind `{}`",
                    entry.key,
                    kind.id()
                ),
            ));
        }
        if map.contains_key(&entry.key) {
            return Err(config_err(
                entry.line,
                format!("duplicate key `{}`", entry.key),
            ));
        }
        map.insert(entry.key, (entry.line, entry.value));
    }
    let fields = Fields { kind_line, map };

    let hurst = fields.f64("hurst")?;
    if let Some(h) = hurst {
        let line = fields.line_of("hurst");
        if kind == ExperimentKind::FbmSample {
            if !(h > 0.0 && h < 1.0) {
                return Err(config_err(line, format!("`hurst`: {h} not in (0, 1)")));
            }
        } else if !(h > 0.25 && h < 0.5) {
            return Err(config_err(
                line,
                format!(
                    "`hurst`: {h} outside the supported (1/4, 1/2) range; only fbm-sample permits (0, 1)"
                ),
            ));
        }
    }

    let horizon_t = fields.f64("horizon")?.unwrap_or(1.0);
    if !(horizon_t > 0.0 && horizon_t.is_finite()) {
        return Err(config_err(
            fields.line_of("horizon"),
            format!("`horizon`: {horizon_t} not positive"),
        ));
    }

    let n_list = match fields.usize_list("n")? {
        Some((line, list)) => {
            for (i, &n) in list.iter().enumerate() {
                if !n.is_power_of_two() {
                    return Err(config_err(
                        line,
                        format!("`n`: {n} is not a power of two; dyadic coarsening needs powers of two"),
                    ));
                }
                if i > 0 && list[i - 1] >= n {
                    return Err(config_err(
                        line,
                        format!("`n`: not strictly increasing at {n}"),
                    ));
                }
            }
            if kind == ExperimentKind::FbmSample && list.len() != 1 {
                return Err(config_err(line, "`n`: fbm-sample takes exactly one resolution"));
            }
            let needs_fit = !matches!(kind, ExperimentKind::FbmSample);
            if needs_fit && list.len() < 3 {
                return Err(config_err(
                    line,
                    "`n`: a rate fit needs at least 3 resolutions",
                ));
            }
            list
        }
        None => Vec::new(),
    };

    let n_ref = fields.usize("n_ref")?;
    if let Some(r) = n_ref {
        let line = fields.line_of("n_ref");
        if !r.is_power_of_two() {
            return Err(config_err(line, format!("`n_ref`: {r} is not a power of two")));
        }
        if let Some(&last) = n_list.last() {
            if r <= last {
                return Err(config_err(
                    line,
                    format!("`n_ref`: {r} must exceed the finest measured resolution {last}"),
                ));
            }
        }
    }

    let m_paths = fields.usize("paths")?.unwrap_or(1);
    if fields.get("paths").is_some() {
        let line = fields.line_of("paths");
        let min = match kind {
            ExperimentKind::HermiteScaling | ExperimentKind::MomentCheck => 2,
            _ => 1,
        };
        if m_paths < min {
            return Err(config_err(line, format!("`paths`: need at least {min}")));
        }
    }

    let dim = fields.usize("dim")?.unwrap_or(1);
    if !(1..=8).contains(&dim) {
        return Err(config_err(
            fields.line_of("dim"),
            format!("`dim`: {dim} not in 1..=8"),
        ));
    }

    let model_id = fields.string("model");
    if let Some(id) = &model_id {
        models::model_by_id(id)
            .map_err(|_| config_err(fields.line_of("model"), format!("`model`: unknown model `{id}`")))?;
    }

    let scheme_id = fields.string("scheme");
    if let Some(id) = &scheme_id {
        let line = fields.line_of("scheme");
        let scheme = Scheme::from_id(id)
            .map_err(|_| config_err(line, format!("`scheme`: unknown scheme `{id}`")))?;
        if scheme == Scheme::WongZakaiRef {
            return Err(config_err(
                line,
                "`scheme`: wong_zakai_ref is the reference, not a measured scheme",
            ));
        }
    }

    let substeps = fields.usize("substeps")?;
    if let Some(s) = substeps {
        if s == 0 {
            return Err(config_err(fields.line_of("substeps"), "`substeps`: 0"));
        }
    }

    let degree = fields.usize("degree")?.unwrap_or(3) as u32;
    if !(1..=4).contains(&degree) {
        return Err(config_err(
            fields.line_of("degree"),
            format!("`degree`: {degree} not in 1..=4"),
        ));
    }

    let window = (
        fields.f64("window_lo")?.unwrap_or(0.25),
        fields.f64("window_hi")?.unwrap_or(0.75),
    );
    if !(0.0..1.0).contains(&window.0) || window.1 <= window.0 || window.1 > 1.0 {
        let line = fields
            .get("window_lo")
            .or_else(|| fields.get("window_hi"))
            .map(|(l, _)| *l)
            .unwrap_or(kind_line);
        return Err(config_err(
            line,
            format!("`window_lo`/`window_hi`: ({}, {}) not nested in [0, 1]", window.0, window.1),
        ));
    }

    let rho = fields.f64("rho")?.unwrap_or(0.0);
    if !(-1.0..=1.0).contains(&rho) {
        return Err(config_err(
            fields.line_of("rho"),
            format!("`rho`: {rho} not in [-1, 1]"),
        ));
    }
    let var1 = fields.f64("var1")?.unwrap_or(1.0);
    let var2 = fields.f64("var2")?.unwrap_or(1.0);
    for (key, v) in [("var1", var1), ("var2", var2)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(config_err(
                fields.line_of(key),
                format!("`{key}`: {v} not positive"),
            ));
        }
    }

    let level = fields.usize("level")?.unwrap_or(1);
    let alpha = fields.multi_index("alpha")?;
    let inner = fields.multi_index("inner")?;
    let middle = fields.multi_index("middle")?;
    let outer = fields.multi_index("outer")?;
    if kind == ExperimentKind::HolderScaling && fields.get("level").is_some() {
        if !(1..=3).contains(&level) {
            return Err(config_err(
                fields.line_of("level"),
                format!("`level`: {level} not in 1..=3"),
            ));
        }
        let slots: &[(&str, bool)] = match level {
            1 => &[("alpha", true), ("inner", false), ("middle", false), ("outer", false)],
            2 => &[("alpha", false), ("inner", true), ("middle", false), ("outer", true)],
            _ => &[("alpha", false), ("inner", true), ("middle", true), ("outer", true)],
        };
        for &(key, wanted) in slots {
            let present = fields.get(key).is_some();
            if wanted && !present {
                return Err(config_err(
                    kind_line,
                    format!("missing required key `{key}` for level = {level}"),
                ));
            }
            if !wanted && present {
                return Err(config_err(
                    fields.line_of(key),
                    format!("`{key}` does not apply at level = {level}"),
                ));
            }
        }
        let components: Vec<(&str, &MultiIndex)> = [
            ("alpha", &alpha),
            ("inner", &inner),
            ("middle", &middle),
            ("outer", &outer),
        ]
        .into_iter()
        .filter_map(|(k, ix)| ix.as_ref().map(|ix| (k, ix)))
        .collect();
        let d = components[0].1.len();
        let mut max_weight = 0;
        for (key, ix) in &components {
            if ix.len() != d {
                return Err(config_err(
                    fields.line_of(key),
                    format!("`{key}`: {} exponents, expected {d}", ix.len()),
                ));
            }
            if !matches!(ix.weight(), 1 | 3) {
                return Err(config_err(
                    fields.line_of(key),
                    format!("`{key}`: weight {} not in {{1, 3}}", ix.weight()),
                ));
            }
            max_weight = max_weight.max(ix.weight());
        }
        if max_weight != 3 {
            return Err(config_err(
                kind_line,
                "at least one component must have weight 3",
            ));
        }
    }

    let delta = fields.f64("delta")?.unwrap_or(analysis::DEFAULT_DELTA);
    if !(0.0 < delta && delta < 0.5) {
        return Err(config_err(
            fields.line_of("delta"),
            format!("`delta`: {delta} not in (0, 1/2)"),
        ));
    }
    let beta = fields.f64("beta")?;
    if let (Some(b), Some(h)) = (beta, hurst) {
        if !(b > 0.0 && b < h) {
            return Err(config_err(
                fields.line_of("beta"),
                format!("`beta`: {b} not in (0, H = {h})"),
            ));
        }
    }

    let target = fields.f64("target")?;
    let tol = fields.f64("tol")?;
    if let Some(t) = tol {
        if !(t > 0.0) {
            return Err(config_err(fields.line_of("tol"), format!("`tol`: {t} not positive")));
        }
    }
    let slope_min = fields.f64("slope_min")?;
    let slope_max = fields.f64("slope_max")?;
    match (slope_min, slope_max) {
        (Some(lo), Some(hi)) if lo >= hi => {
            return Err(config_err(
                fields.line_of("slope_min"),
                format!("`slope_min`: {lo} not below slope_max = {hi}"),
            ));
        }
        (Some(_), None) | (None, Some(_)) => {
            return Err(config_err(
                kind_line,
                "`slope_min` and `slope_max` come as a pair",
            ));
        }
        _ => {}
    }
    let require_decreasing = fields.bool("require_decreasing")?.unwrap_or(false);

    let instances = fields.usize("instances")?.unwrap_or(1000);
    if instances == 0 {
        return Err(config_err(fields.line_of("instances"), "`instances`: 0"));
    }

    let seed = fields.u64("seed")?.unwrap_or(0);
    let out_dir = fields.string("out").map(PathBuf::from);

    // Value-type errors above carry real line numbers; only after every
    // present key parses do absent ones get reported, at the header line.
    for key in kind.required_keys() {
        if fields.get(key).is_none() {
            return Err(config_err(
                kind_line,
                format!("missing required key `{key}` for kind `{}`", kind.id()),
            ));
        }
    }

    Ok(ExperimentConfig {
        kind,
        seed,
        hurst,
        horizon_t,
        n_list,
        n_ref,
        m_paths,
        dim,
        model_id,
        scheme_id,
        substeps,
        degree,
        window,
        rho,
        var1,
        var2,
        level,
        alpha,
        inner,
        middle,
        outer,
        delta,
        beta,
        target,
        tol,
        slope_min,
        slope_max,
        require_decreasing,
        instances,
        out_dir,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactRecord {
    pub file: String,
    pub sha256: String,
}

/// What a run wrote and how it went. `manifest.json` itself is not listed;
/// everything else the run emitted is, with content hashes.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub kind: String,
    pub version: String,
    pub master_seed: u64,
    pub config: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
    pub pass: bool,
    pub artifacts: Vec<ArtifactRecord>,
}

impl RunManifest {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}

struct Artifact {
    name: String,
    bytes: String,
}

struct Outputs {
    artifacts: Vec<Artifact>,
    pass: bool,
}

/// Executes the experiment and writes its artifacts plus `manifest.json`
/// under `out_dir`. `threads` bounds the worker pool; `None` uses the
/// process-global pool. Artifact bytes depend only on the config.
pub fn run(
    config: &ExperimentConfig,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<RunManifest> {
    let started = Instant::now();
    let outputs = match threads {
        Some(width) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(width)
                .build()
                .map_err(|e| Error::degenerate("worker pool", e.to_string()))?;
            pool.install(|| execute(config))?
        }
        None => execute(config)?,
    };

    let mut records = Vec::with_capacity(outputs.artifacts.len());
    for artifact in &outputs.artifacts {
        io::write_file(&out_dir.join(&artifact.name), artifact.bytes.as_bytes())?;
        records.push(ArtifactRecord {
            file: artifact.name.clone(),
            sha256: io::sha256_hex(artifact.bytes.as_bytes()),
        });
    }
    let manifest = RunManifest {
        kind: config.kind.id().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: config.seed,
        config: config.echo(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        pass: outputs.pass,
        artifacts: records,
    };
    io::write_file(&out_dir.join("manifest.json"), manifest.to_json()?.as_bytes())?;
    Ok(manifest)
}

fn execute(config: &ExperimentConfig) -> Result<Outputs> {
    match config.kind {
        ExperimentKind::FbmSample => run_fbm_sample(config),
        ExperimentKind::LevyArea => {
            let table = analysis::levy_area_ms_error(
                config.hurst.unwrap(),
                config.horizon_t,
                &config.n_list,
                config.n_ref.unwrap(),
                config.m_paths,
                config.seed,
            )?;
            rate_outputs(config, table)
        }
        ExperimentKind::SchemeRate => {
            let model = models::model_by_id(config.model_id.as_deref().unwrap())?;
            let scheme = Scheme::from_id(config.scheme_id.as_deref().unwrap())?;
            let table = analysis::pathwise_scheme_error(
                &model,
                scheme,
                config.hurst.unwrap(),
                config.horizon_t,
                &config.n_list,
                config.n_ref.unwrap(),
                config.resolved_substeps(),
                config.m_paths,
                config.seed,
            )?;
            rate_outputs(config, table)
        }
        ExperimentKind::BackwardError => {
            let model = models::model_by_id(config.model_id.as_deref().unwrap())?;
            let table = analysis::backward_error_table(
                &model,
                config.hurst.unwrap(),
                config.horizon_t,
                &config.n_list,
                config.resolved_substeps(),
                config.m_paths,
                config.seed,
            )?;
            rate_outputs(config, table)
        }
        ExperimentKind::HermiteScaling => {
            let scaling = analysis::hermite_sum_l2(
                config.degree,
                config.hurst.unwrap(),
                config.horizon_t,
                &config.n_list,
                config.window,
                config.m_paths,
                config.seed,
            )?;
            let raw_csv = scaling.raw.to_csv();
            let mut outputs = rate_outputs(config, scaling.centered)?;
            outputs.artifacts.insert(
                0,
                Artifact {
                    name: "errors_raw.csv".to_string(),
                    bytes: raw_csv,
                },
            );
            Ok(outputs)
        }
        ExperimentKind::MomentCheck => {
            let c = config.rho * (config.var1 * config.var2).sqrt();
            let cov = [[config.var1, c], [c, config.var2]];
            let report = analysis::gaussian_moment_check(cov, config.m_paths, config.seed)?;
            Ok(Outputs {
                pass: report.pass,
                artifacts: vec![Artifact {
                    name: "moment_check.json".to_string(),
                    bytes: report.to_json(),
                }],
            })
        }
        ExperimentKind::HolderScaling => {
            let process = config.ratio_process().ok_or_else(|| {
                Error::degenerate("holder-scaling", "level/component mismatch")
            })?;
            let table = analysis::holder_ratio_scaling(
                &process,
                config.hurst.unwrap(),
                config.horizon_t,
                &config.n_list,
                config.m_paths,
                config.seed,
                config.delta,
                config.resolved_beta(),
            )?;
            rate_outputs(config, table)
        }
        ExperimentKind::SignatureSelftest => {
            let report = signature_selftest(config.instances, config.seed)?;
            Ok(Outputs {
                pass: report.pass,
                artifacts: vec![Artifact {
                    name: "selftest.json".to_string(),
                    bytes: report.to_json()?,
                }],
            })
        }
    }
}

fn run_fbm_sample(config: &ExperimentConfig) -> Result<Outputs> {
    let sampler = FbmSampler::new(FbmConfig {
        hurst: config.hurst.unwrap(),
        horizon_t: config.horizon_t,
        n_steps: config.n_list[0],
        dim_d: config.dim,
        master_seed: config.seed,
    })?;
    let artifacts = (0..config.m_paths as u64)
        .map(|i| {
            let path = sampler.path(i)?;
            Ok(Artifact {
                name: format!("path_{i:04}.csv"),
                bytes: path.to_csv(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Outputs {
        artifacts,
        pass: true,
    })
}

fn strictly_decreasing(table: &ErrorTable) -> bool {
    table.rows.windows(2).all(|w| w[1].error < w[0].error)
}

/// Shared tail of every rate-fitting kind: errors CSV plus a rate JSON.
/// The pass verdict is the 95%-band rule against target ± tol, replaced by
/// a point-slope interval when `slope_min`/`slope_max` are set, and gated
/// on strict error decrease when `require_decreasing` is on.
fn rate_outputs(config: &ExperimentConfig, table: ErrorTable) -> Result<Outputs> {
    let csv = table.to_csv();
    let decreasing_ok = !config.require_decreasing || strictly_decreasing(&table);
    let report = analysis::fit_rate(table)?;
    let target = config
        .resolved_target()
        .ok_or_else(|| Error::degenerate("rate run", "no target exponent"))?;
    let slope_ok = match (config.slope_min, config.slope_max) {
        (Some(lo), Some(hi)) => report.slope >= lo && report.slope <= hi,
        _ => report.passes(target, config.resolved_tol()),
    };
    let pass = slope_ok && decreasing_ok;
    let json = serde_json::json!({
        "target_exponent": target,
        "fitted_slope": report.slope,
        "ci_low": report.ci_low,
        "ci_high": report.ci_high,
        "pass": pass,
    })
    .to_string();
    Ok(Outputs {
        artifacts: vec![
            Artifact {
                name: "errors.csv".to_string(),
                bytes: csv,
            },
            Artifact {
                name: "rate.json".to_string(),
                bytes: json,
            },
        ],
        pass,
    })
}

/// Randomized exact-algebra suites over the step-3 group: Chen splits,
/// inverses, the level-2 shuffle identity, and segment closed forms against
/// subdivision products. Gaps are componentwise, scaled by 1 + magnitudes.
#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub instances: usize,
    pub max_chen_gap: f64,
    pub max_inverse_gap: f64,
    pub max_shuffle_gap: f64,
    pub max_segment_gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl SelftestReport {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}

fn element_gap(a: &SigElement, b: &SigElement) -> f64 {
    let levels = [
        (&a.level1, &b.level1),
        (&a.level2, &b.level2),
        (&a.level3, &b.level3),
    ];
    let mut worst = 0.0f64;
    for (la, lb) in levels {
        for (x, y) in la.iter().zip(lb) {
            worst = worst.max((x - y).abs() / (1.0 + x.abs() + y.abs()));
        }
    }
    worst
}

pub fn signature_selftest(instances: usize, master_seed: u64) -> Result<SelftestReport> {
    if instances == 0 {
        return Err(Error::parameter("instances", "0"));
    }
    let mut max_chen = 0.0f64;
    let mut max_inverse = 0.0f64;
    let mut max_shuffle = 0.0f64;
    let mut max_segment = 0.0f64;

    for i in 0..instances as u64 {
        let mut rng = seed::rng_from(seed::derive(master_seed, Component::SelfTest, i));
        let d = rng.gen_range(2..=4usize);
        let n = rng.gen_range(4..=12usize);
        let mut values = vec![0.0; (n + 1) * d];
        for k in 1..=n {
            for l in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                values[k * d + l] = values[(k - 1) * d + l] + z;
            }
        }
        let path = PiecewiseLinearPath::from_nodes(1.0 / n as f64, d, values)?;

        let s = rng.gen_range(0..n - 1);
        let u = rng.gen_range(s + 1..n);
        let t = rng.gen_range(u + 1..=n);
        let left = signature::sig_of_path(&path, s, u);
        let right = signature::sig_of_path(&path, u, t);
        let whole = signature::sig_of_path(&path, s, t);
        max_chen = max_chen.max(element_gap(&signature::group_mul(&left, &right), &whole));

        let cancel = signature::group_mul(&whole, &signature::group_inv(&whole));
        max_inverse = max_inverse.max(element_gap(&cancel, &SigElement::identity(d)));

        for a in 0..d {
            for b in 0..d {
                let sym = whole.level2[a * d + b] + whole.level2[b * d + a];
                let prod = whole.level1[a] * whole.level1[b];
                let gap = (sym - prod).abs() / (1.0 + sym.abs() + prod.abs());
                max_shuffle = max_shuffle.max(gap);
            }
        }

        // A straight segment's signature is invariant under subdivision, so
        // the k-fold product of the 1/k sub-segment must reproduce it.
        let delta: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let whole_seg = signature::sig_segment(&delta);
        let k = rng.gen_range(2..=5usize);
        let sub: Vec<f64> = delta.iter().map(|x| x / k as f64).collect();
        let piece = signature::sig_segment(&sub);
        let mut acc = SigElement::identity(d);
        for _ in 0..k {
            acc = signature::group_mul(&acc, &piece);
        }
        max_segment = max_segment.max(element_gap(&acc, &whole_seg));

        let mut formula = SigElement::identity(d);
        formula.level1.copy_from_slice(&delta);
        for a in 0..d {
            for b in 0..d {
                formula.level2[a * d + b] = delta[a] * delta[b] / 2.0;
                for c in 0..d {
                    formula.level3[(a * d + b) * d + c] = delta[a] * delta[b] * delta[c] / 6.0;
                }
            }
        }
        max_segment = max_segment.max(element_gap(&formula, &whole_seg));
    }

    let pass = [max_chen, max_inverse, max_shuffle, max_segment]
        .iter()
        .all(|&g| g <= SELFTEST_TOL);
    Ok(SelftestReport {
        instances,
        max_chen_gap: max_chen,
        max_inverse_gap: max_inverse,
        max_shuffle_gap: max_shuffle,
        max_segment_gap: max_segment,
        tolerance: SELFTEST_TOL,
        pass,
    })
}
