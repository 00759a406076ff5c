//! Time-stepping schemes driven by fBm increments.
//!
//! The modified Milstein step replaces the Lévy area with the symmetric
//! product ½ΔB⊗ΔB, which is what makes it implementable from increments
//! alone. Implicit steps (Crank–Nicolson, midpoint) solve their relation by
//! fixed-point iteration seeded with the Euler step and fail loudly rather
//! than return an unconverged state. The Wong–Zakai reference integrates
//! the piecewise-linear ODE with classical fourth-order substeps and serves
//! as the truth proxy on finer coupled grids.

use crate::error::{Error, Result};
use crate::fbm::FbmPath;
use crate::io;
use crate::models::NamedModel;
use crate::paths::PiecewiseLinearPath;
use serde::Serialize;

pub const SCHEME_IDS: [&str; 5] = [
    "modified_milstein",
    "modified_euler",
    "crank_nicolson",
    "midpoint",
    "wong_zakai_ref",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scheme {
    ModifiedMilstein,
    ModifiedEuler,
    CrankNicolson,
    Midpoint,
    WongZakaiRef,
}

impl Scheme {
    pub fn from_id(id: &str) -> Result<Scheme> {
        match id {
            "modified_milstein" => Ok(Scheme::ModifiedMilstein),
            "modified_euler" => Ok(Scheme::ModifiedEuler),
            "crank_nicolson" => Ok(Scheme::CrankNicolson),
            "midpoint" => Ok(Scheme::Midpoint),
            "wong_zakai_ref" => Ok(Scheme::WongZakaiRef),
            _ => Err(Error::UnknownId {
                kind: "scheme",
                id: id.to_string(),
            }),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Scheme::ModifiedMilstein => "modified_milstein",
            Scheme::ModifiedEuler => "modified_euler",
            Scheme::CrankNicolson => "crank_nicolson",
            Scheme::Midpoint => "midpoint",
            Scheme::WongZakaiRef => "wong_zakai_ref",
        }
    }
}

/// Where a trajectory's noise came from: enough to re-draw the same sample.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub path_index: u64,
    /// Resolution the driving path was originally sampled at (coupling lineage).
    pub source_n_steps: usize,
    pub substeps: Option<usize>,
}

impl Provenance {
    pub fn of_path(path: &FbmPath, substeps: Option<usize>) -> Self {
        Provenance {
            master_seed: path.config.master_seed,
            path_index: path.path_index,
            source_n_steps: path.source_n_steps,
            substeps,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SchemeRun {
    pub model_id: String,
    pub scheme_id: &'static str,
    pub n_steps: usize,
    pub step: f64,
    pub horizon_t: f64,
    state_dim: usize,
    /// (n+1) × m row-major.
    trajectory: Vec<f64>,
    pub provenance: Provenance,
}

impl SchemeRun {
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.trajectory[k * self.state_dim..(k + 1) * self.state_dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.node(self.n_steps)
    }

    pub fn to_csv(&self) -> String {
        let m = self.state_dim;
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=m).map(|i| format!("y{i}")))
            .collect();
        let mut row = vec![0.0; m + 1];
        let lines: Vec<String> = (0..=self.n_steps)
            .map(|k| {
                row[0] = k as f64 * self.step;
                row[1..].copy_from_slice(self.node(k));
                io::csv_line(&row)
            })
            .collect();
        io::csv_document(&header.join(","), lines)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Fourth-order substeps per grid step for the Wong–Zakai reference.
    pub substeps: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            tol: 1e-12,
            max_iter: 100,
            substeps: 8,
        }
    }
}

/// Scratch buffers sized for one model; reused across steps and paths.
struct Scratch {
    sigma: Vec<f64>,
    sigma_b: Vec<f64>,
    d1: Vec<f64>,
    y_a: Vec<f64>,
    y_b: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
}

impl Scratch {
    fn new(m: usize, d: usize) -> Self {
        Scratch {
            sigma: vec![0.0; m * d],
            sigma_b: vec![0.0; m * d],
            d1: vec![0.0; m * d * m],
            y_a: vec![0.0; m],
            y_b: vec![0.0; m],
            k1: vec![0.0; m],
            k2: vec![0.0; m],
            k3: vec![0.0; m],
            k4: vec![0.0; m],
        }
    }
}

fn euler_into(model: &NamedModel, y: &[f64], db: &[f64], scratch: &mut Scratch, out: &mut [f64]) {
    let (m, d) = (model.state_dim(), model.noise_dim());
    model.field.sigma(y, &mut scratch.sigma);
    for i in 0..m {
        let mut acc = y[i];
        for l in 0..d {
            acc += scratch.sigma[i * d + l] * db[l];
        }
        out[i] = acc;
    }
}

fn milstein_into(
    model: &NamedModel,
    y: &[f64],
    db: &[f64],
    scratch: &mut Scratch,
    out: &mut [f64],
) {
    let (m, d) = (model.state_dim(), model.noise_dim());
    euler_into(model, y, db, scratch, out);
    model.field.sigma_d1(y, &mut scratch.d1);
    // + ½ Σ_{l1,l2} (σ′_{l1} σ_{l2})_i ΔB^{l1} ΔB^{l2}, as the explicit
    // double sum of the expansion.
    for i in 0..m {
        let mut acc = 0.0;
        for l1 in 0..d {
            for l2 in 0..d {
                let mut contraction = 0.0;
                for j in 0..m {
                    contraction += scratch.d1[(i * d + l1) * m + j] * scratch.sigma[j * d + l2];
                }
                acc += contraction * db[l1] * db[l2];
            }
        }
        out[i] += 0.5 * acc;
    }
}

enum ImplicitKind {
    CrankNicolson,
    Midpoint,
}

fn implicit_into(
    kind: ImplicitKind,
    model: &NamedModel,
    y: &[f64],
    db: &[f64],
    tol: f64,
    max_iter: usize,
    scratch: &mut Scratch,
    out: &mut [f64],
) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::parameter("tol", format!("{tol} not positive")));
    }
    let (m, d) = (model.state_dim(), model.noise_dim());
    match kind {
        ImplicitKind::CrankNicolson => model.field.sigma(y, &mut scratch.sigma_b),
        ImplicitKind::Midpoint => {}
    }
    euler_into(model, y, db, scratch, out);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        match kind {
            ImplicitKind::CrankNicolson => {
                // y⁺ = y + ½(σ(y) + σ(y⁺))·dB
                model.field.sigma(out, &mut scratch.sigma);
                for i in 0..m {
                    let mut acc = y[i];
                    for l in 0..d {
                        acc += 0.5
                            * (scratch.sigma_b[i * d + l] + scratch.sigma[i * d + l])
                            * db[l];
                    }
                    scratch.y_a[i] = acc;
                }
            }
            ImplicitKind::Midpoint => {
                // y⁺ = y + σ((y + y⁺)/2)·dB
                for i in 0..m {
                    scratch.y_b[i] = 0.5 * (y[i] + out[i]);
                }
                model.field.sigma(&scratch.y_b, &mut scratch.sigma);
                for i in 0..m {
                    let mut acc = y[i];
                    for l in 0..d {
                        acc += scratch.sigma[i * d + l] * db[l];
                    }
                    scratch.y_a[i] = acc;
                }
            }
        }
        residual = out
            .iter()
            .zip(&scratch.y_a)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        out.copy_from_slice(&scratch.y_a);
        if residual <= tol {
            return Ok(());
        }
    }
    Err(Error::FixedPoint {
        scheme: match kind {
            ImplicitKind::CrankNicolson => "crank_nicolson",
            ImplicitKind::Midpoint => "midpoint",
        },
        step: 0,
        residual,
        iters: max_iter,
    })
}

/// One fourth-order substep pass for ẏ = σ(y)·slope over time `dt`.
fn rk4_into(
    model: &NamedModel,
    slope: &[f64],
    dt: f64,
    substeps: usize,
    scratch: &mut Scratch,
    state: &mut [f64],
) {
    let (m, d) = (model.state_dim(), model.noise_dim());
    let sub_dt = dt / substeps as f64;
    for _ in 0..substeps {
        let eval = |y: &[f64], scratch_sigma: &mut Vec<f64>, out: &mut Vec<f64>, field: &dyn crate::models::VectorField| {
            field.sigma(y, scratch_sigma);
            for i in 0..m {
                let mut acc = 0.0;
                for l in 0..d {
                    acc += scratch_sigma[i * d + l] * slope[l];
                }
                out[i] = acc;
            }
        };
        eval(state, &mut scratch.sigma, &mut scratch.k1, &*model.field);
        for i in 0..m {
            scratch.y_a[i] = state[i] + 0.5 * sub_dt * scratch.k1[i];
        }
        eval(&scratch.y_a, &mut scratch.sigma, &mut scratch.k2, &*model.field);
        for i in 0..m {
            scratch.y_a[i] = state[i] + 0.5 * sub_dt * scratch.k2[i];
        }
        eval(&scratch.y_a, &mut scratch.sigma, &mut scratch.k3, &*model.field);
        for i in 0..m {
            scratch.y_a[i] = state[i] + sub_dt * scratch.k3[i];
        }
        eval(&scratch.y_a, &mut scratch.sigma, &mut scratch.k4, &*model.field);
        for i in 0..m {
            state[i] += sub_dt / 6.0
                * (scratch.k1[i] + 2.0 * scratch.k2[i] + 2.0 * scratch.k3[i] + scratch.k4[i]);
        }
    }
}

pub fn modified_milstein_step(y: &[f64], db: &[f64], model: &NamedModel) -> Vec<f64> {
    let mut scratch = Scratch::new(model.state_dim(), model.noise_dim());
    let mut out = vec![0.0; model.state_dim()];
    milstein_into(model, y, db, &mut scratch, &mut out);
    out
}

pub fn modified_euler_step(y: &[f64], db: &[f64], model: &NamedModel) -> Vec<f64> {
    let mut scratch = Scratch::new(model.state_dim(), model.noise_dim());
    let mut out = vec![0.0; model.state_dim()];
    euler_into(model, y, db, &mut scratch, &mut out);
    out
}

pub fn crank_nicolson_step(
    y: &[f64],
    db: &[f64],
    model: &NamedModel,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let mut scratch = Scratch::new(model.state_dim(), model.noise_dim());
    let mut out = vec![0.0; model.state_dim()];
    implicit_into(
        ImplicitKind::CrankNicolson,
        model,
        y,
        db,
        tol,
        max_iter,
        &mut scratch,
        &mut out,
    )?;
    Ok(out)
}

pub fn midpoint_step(
    y: &[f64],
    db: &[f64],
    model: &NamedModel,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let mut scratch = Scratch::new(model.state_dim(), model.noise_dim());
    let mut out = vec![0.0; model.state_dim()];
    implicit_into(
        ImplicitKind::Midpoint,
        model,
        y,
        db,
        tol,
        max_iter,
        &mut scratch,
        &mut out,
    )?;
    Ok(out)
}

/// Folds the per-step map from the model's initial condition over all path
/// increments.
pub fn integrate(
    scheme: Scheme,
    path: &FbmPath,
    model: &NamedModel,
    options: &IntegrateOptions,
) -> Result<SchemeRun> {
    let (m, d) = (model.state_dim(), model.noise_dim());
    if path.dim() != d {
        return Err(Error::Dimension {
            context: "integrate noise dim",
            expected: d,
            got: path.dim(),
        });
    }
    if options.substeps == 0 {
        return Err(Error::parameter("substeps", "0 (must be >= 1)"));
    }
    let n = path.n_steps();
    let h = path.step();
    let mut scratch = Scratch::new(m, d);
    let mut db = vec![0.0; d];
    let mut slope = vec![0.0; d];
    let mut trajectory = vec![0.0; (n + 1) * m];
    trajectory[..m].copy_from_slice(&model.initial);

    for k in 0..n {
        path.increment_into(k, &mut db);
        let (prev, rest) = trajectory.split_at_mut((k + 1) * m);
        let y = &prev[k * m..];
        let out = &mut rest[..m];
        match scheme {
            Scheme::ModifiedMilstein => milstein_into(model, y, &db, &mut scratch, out),
            Scheme::ModifiedEuler => euler_into(model, y, &db, &mut scratch, out),
            Scheme::CrankNicolson => implicit_into(
                ImplicitKind::CrankNicolson,
                model,
                y,
                &db,
                options.tol,
                options.max_iter,
                &mut scratch,
                out,
            )
            .map_err(|e| at_step(e, k))?,
            Scheme::Midpoint => implicit_into(
                ImplicitKind::Midpoint,
                model,
                y,
                &db,
                options.tol,
                options.max_iter,
                &mut scratch,
                out,
            )
            .map_err(|e| at_step(e, k))?,
            Scheme::WongZakaiRef => {
                for l in 0..d {
                    slope[l] = db[l] / h;
                }
                out.copy_from_slice(y);
                rk4_into(model, &slope, h, options.substeps, &mut scratch, out);
            }
        }
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: scheme.id().to_string(),
                step: k,
            });
        }
    }

    Ok(SchemeRun {
        model_id: model.id.to_string(),
        scheme_id: scheme.id(),
        n_steps: n,
        step: h,
        horizon_t: path.config.horizon_t,
        state_dim: m,
        trajectory,
        provenance: Provenance {
            master_seed: path.config.master_seed,
            path_index: path.path_index,
            source_n_steps: path.source_n_steps,
            substeps: match scheme {
                Scheme::WongZakaiRef => Some(options.substeps),
                _ => None,
            },
        },
    })
}

fn at_step(e: Error, k: usize) -> Error {
    match e {
        Error::FixedPoint {
            scheme,
            residual,
            iters,
            ..
        } => Error::FixedPoint {
            scheme,
            step: k,
            residual,
            iters,
        },
        other => other,
    }
}

pub fn wong_zakai_reference(
    path: &FbmPath,
    model: &NamedModel,
    substeps: usize,
) -> Result<SchemeRun> {
    integrate(
        Scheme::WongZakaiRef,
        path,
        model,
        &IntegrateOptions {
            substeps,
            ..IntegrateOptions::default()
        },
    )
}

/// Wong–Zakai reference over an already-assembled piecewise-linear driver
/// (an extended or zero-padded process rather than a raw sample). Provenance
/// is supplied by the caller since the driver itself carries none.
pub fn wong_zakai_reference_on_pwl(
    driver: &PiecewiseLinearPath,
    model: &NamedModel,
    substeps: usize,
    provenance: Provenance,
) -> Result<SchemeRun> {
    let (m, d) = (model.state_dim(), model.noise_dim());
    if driver.dim() != d {
        return Err(Error::Dimension {
            context: "wong_zakai_reference_on_pwl noise dim",
            expected: d,
            got: driver.dim(),
        });
    }
    if substeps == 0 {
        return Err(Error::parameter("substeps", "0 (must be >= 1)"));
    }
    let n = driver.n_steps();
    let h = driver.step();
    let mut scratch = Scratch::new(m, d);
    let mut db = vec![0.0; d];
    let mut slope = vec![0.0; d];
    let mut trajectory = vec![0.0; (n + 1) * m];
    trajectory[..m].copy_from_slice(&model.initial);

    for k in 0..n {
        driver.increment_into(k, &mut db);
        for l in 0..d {
            slope[l] = db[l] / h;
        }
        let (prev, rest) = trajectory.split_at_mut((k + 1) * m);
        let out = &mut rest[..m];
        out.copy_from_slice(&prev[k * m..]);
        rk4_into(model, &slope, h, substeps, &mut scratch, out);
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "wong_zakai_ref (pwl driver)".to_string(),
                step: k,
            });
        }
    }

    Ok(SchemeRun {
        model_id: model.id.to_string(),
        scheme_id: "wong_zakai_ref",
        n_steps: n,
        step: h,
        horizon_t: driver.horizon(),
        state_dim: m,
        trajectory,
        provenance,
    })
}
