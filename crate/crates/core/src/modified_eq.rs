//! Backward error analysis for the modified Milstein scheme: coefficients
//! of the order-3 truncated modified equation and its high-accuracy solver.
//!
//! Coefficient structure: f_α = σ_l at weight 1, f_α ≡ 0 at weight 2, and at
//! weight 3
//!
//!   f_α(y) = −(1/6) Σ [ σ″_{l1}(y)[σ_{l2}(y), σ_{l3}(y)]
//!                      + σ′_{l1}(y) σ′_{l2}(y) σ_{l3}(y) ],
//!
//! the sum over all ordered triples (l1,l2,l3) with e_{l1}+e_{l2}+e_{l3} = α.
//! Within each grid step the modified equation is an autonomous ODE with the
//! step's increment monomials frozen into the right-hand side; it is solved
//! with fourth-order substeps, optionally doubled until self-consistent.

use crate::error::{Error, Result};
use crate::fbm::FbmPath;
use crate::models::{NamedModel, VectorField};
use crate::paths::{self, MultiIndex, PiecewiseLinearPath};
use crate::schemes::{self, Provenance};
use std::sync::Arc;

/// Substep-doubling defaults for the refined solver.
pub const TME_BASE_SUBSTEPS: usize = 32;
pub const TME_MAX_SUBSTEPS: usize = 512;
pub const TME_REFINE_TOL: f64 = 1e-10;

/// Weight-3 coefficient evaluators for one model, in the canonical
/// (lexicographically decreasing) multi-index order.
#[derive(Clone)]
pub struct ModifiedCoefficients {
    model: NamedModel,
    weight3: Vec<MultiIndex>,
    /// Per weight-3 index: ordered component triples (l1, l2, l3).
    triples: Vec<Vec<(usize, usize, usize)>>,
}

pub fn build_coefficients(model: &NamedModel) -> ModifiedCoefficients {
    let d = model.noise_dim();
    let weight3 = paths::weight3_indices(d);
    let triples = weight3
        .iter()
        .map(|alpha| {
            let mut list = Vec::new();
            for l1 in 0..d {
                for l2 in 0..d {
                    for l3 in 0..d {
                        let mut counts = vec![0u32; d];
                        counts[l1] += 1;
                        counts[l2] += 1;
                        counts[l3] += 1;
                        if counts == alpha.0 {
                            list.push((l1, l2, l3));
                        }
                    }
                }
            }
            list
        })
        .collect();
    ModifiedCoefficients {
        model: model.clone(),
        weight3,
        triples,
    }
}

/// Buffers for σ, σ′, σ″ at one point, reused across evaluations.
pub struct CoeffScratch {
    sigma: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    tmp: Vec<f64>,
}

impl CoeffScratch {
    pub fn new(model: &NamedModel) -> Self {
        let (m, d) = (model.state_dim(), model.noise_dim());
        CoeffScratch {
            sigma: vec![0.0; m * d],
            d1: vec![0.0; m * d * m],
            d2: vec![0.0; m * d * m * m],
            tmp: vec![0.0; m],
        }
    }
}

impl ModifiedCoefficients {
    pub fn model(&self) -> &NamedModel {
        &self.model
    }

    pub fn weight3(&self) -> &[MultiIndex] {
        &self.weight3
    }

    /// All weight-3 coefficients at `y`, row `a` holding f_{α_a}(y).
    /// σ, σ′, σ″ are evaluated once.
    pub fn eval_f3_all(&self, y: &[f64], scratch: &mut CoeffScratch, out: &mut [f64]) {
        let m = self.model.state_dim();
        self.model.field.sigma(y, &mut scratch.sigma);
        self.model.field.sigma_d1(y, &mut scratch.d1);
        self.model.field.sigma_d2(y, &mut scratch.d2);
        for (a, triples) in self.triples.iter().enumerate() {
            eval_triples(
                &self.model,
                triples,
                scratch,
                &mut out[a * m..(a + 1) * m],
            );
        }
    }

    /// One weight-3 coefficient by canonical position.
    pub fn eval_f3(&self, position: usize, y: &[f64], scratch: &mut CoeffScratch, out: &mut [f64]) {
        self.model.field.sigma(y, &mut scratch.sigma);
        self.model.field.sigma_d1(y, &mut scratch.d1);
        self.model.field.sigma_d2(y, &mut scratch.d2);
        eval_triples(&self.model, &self.triples[position], scratch, out);
    }

    #[cfg(test)]
    fn eval_with_triples(
        &self,
        triples: &[(usize, usize, usize)],
        y: &[f64],
        scratch: &mut CoeffScratch,
        out: &mut [f64],
    ) {
        self.model.field.sigma(y, &mut scratch.sigma);
        self.model.field.sigma_d1(y, &mut scratch.d1);
        self.model.field.sigma_d2(y, &mut scratch.d2);
        eval_triples(&self.model, triples, scratch, out);
    }
}

fn eval_triples(
    model: &NamedModel,
    triples: &[(usize, usize, usize)],
    scratch: &mut CoeffScratch,
    out: &mut [f64],
) {
    let (m, d) = (model.state_dim(), model.noise_dim());
    out.fill(0.0);
    for &(l1, l2, l3) in triples {
        // σ′_{l2} σ_{l3} into tmp.
        for j in 0..m {
            let mut acc = 0.0;
            for k in 0..m {
                acc += scratch.d1[(j * d + l2) * m + k] * scratch.sigma[k * d + l3];
            }
            scratch.tmp[j] = acc;
        }
        for i in 0..m {
            let mut hess = 0.0;
            let mut grad = 0.0;
            for j in 0..m {
                let base = ((i * d + l1) * m + j) * m;
                for k in 0..m {
                    hess += scratch.d2[base + k]
                        * scratch.sigma[j * d + l2]
                        * scratch.sigma[k * d + l3];
                }
                grad += scratch.d1[(i * d + l1) * m + j] * scratch.tmp[j];
            }
            out[i] += hess + grad;
        }
    }
    for v in out.iter_mut() {
        *v *= -1.0 / 6.0;
    }
}

/// Trajectory of the truncated modified equation at grid points.
#[derive(Debug, Clone)]
pub struct TmeRun {
    pub n_steps: usize,
    pub step: f64,
    pub horizon_t: f64,
    state_dim: usize,
    trajectory: Vec<f64>,
    pub substeps: usize,
    /// Max grid gap between the last two refinement levels, when refined.
    pub refinement_gap: Option<f64>,
    pub provenance: Provenance,
}

impl TmeRun {
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.trajectory[k * self.state_dim..(k + 1) * self.state_dim]
    }

    pub fn final_state(&self) -> &[f64] {
        self.node(self.n_steps)
    }
}

/// Solves the truncated modified equation along `path` with a fixed number
/// of fourth-order substeps per grid step. Within step k the right-hand
/// side is Σ_α f_α(y) h⁻¹ Π_l (ΔB^l_k)^{α_l}, frozen by that step's
/// increment.
pub fn tme_solve(path: &FbmPath, coeffs: &ModifiedCoefficients, substeps: usize) -> Result<TmeRun> {
    let model = &coeffs.model;
    let (m, d) = (model.state_dim(), model.noise_dim());
    if path.dim() != d {
        return Err(Error::Dimension {
            context: "tme_solve noise dim",
            expected: d,
            got: path.dim(),
        });
    }
    if substeps == 0 {
        return Err(Error::parameter("substeps", "0 (must be >= 1)"));
    }
    let n = path.n_steps();
    let h = path.step();
    let n_w3 = coeffs.weight3.len();
    let mut scratch = CoeffScratch::new(model);
    let mut f3 = vec![0.0; n_w3 * m];
    let mut db = vec![0.0; d];
    let mut w1 = vec![0.0; d];
    let mut w3 = vec![0.0; n_w3];
    let mut state = vec![0.0; m];
    let mut stage = vec![0.0; m];
    let mut k1 = vec![0.0; m];
    let mut k2 = vec![0.0; m];
    let mut k3 = vec![0.0; m];
    let mut k4 = vec![0.0; m];
    let mut trajectory = vec![0.0; (n + 1) * m];
    trajectory[..m].copy_from_slice(&model.initial);
    state.copy_from_slice(&model.initial);

    for k in 0..n {
        path.increment_into(k, &mut db);
        for l in 0..d {
            w1[l] = db[l] / h;
        }
        for (a, alpha) in coeffs.weight3.iter().enumerate() {
            w3[a] = alpha.monomial(&db) / h;
        }
        let sub_dt = h / substeps as f64;
        for _ in 0..substeps {
            rhs(coeffs, &state, &w1, &w3, &mut scratch, &mut f3, &mut k1);
            for i in 0..m {
                stage[i] = state[i] + 0.5 * sub_dt * k1[i];
            }
            rhs(coeffs, &stage, &w1, &w3, &mut scratch, &mut f3, &mut k2);
            for i in 0..m {
                stage[i] = state[i] + 0.5 * sub_dt * k2[i];
            }
            rhs(coeffs, &stage, &w1, &w3, &mut scratch, &mut f3, &mut k3);
            for i in 0..m {
                stage[i] = state[i] + sub_dt * k3[i];
            }
            rhs(coeffs, &stage, &w1, &w3, &mut scratch, &mut f3, &mut k4);
            for i in 0..m {
                state[i] += sub_dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if !state.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "tme_solve".to_string(),
                step: k,
            });
        }
        trajectory[(k + 1) * m..(k + 2) * m].copy_from_slice(&state);
    }

    Ok(TmeRun {
        n_steps: n,
        step: h,
        horizon_t: path.config.horizon_t,
        state_dim: m,
        trajectory,
        substeps,
        refinement_gap: None,
        provenance: Provenance {
            master_seed: path.config.master_seed,
            path_index: path.path_index,
            source_n_steps: path.source_n_steps,
            substeps: Some(substeps),
        },
    })
}

fn rhs(
    coeffs: &ModifiedCoefficients,
    y: &[f64],
    w1: &[f64],
    w3: &[f64],
    scratch: &mut CoeffScratch,
    f3: &mut [f64],
    out: &mut [f64],
) {
    let model = &coeffs.model;
    let (m, d) = (model.state_dim(), model.noise_dim());
    coeffs.eval_f3_all(y, scratch, f3);
    for i in 0..m {
        let mut acc = 0.0;
        for l in 0..d {
            acc += scratch.sigma[i * d + l] * w1[l];
        }
        for a in 0..w3.len() {
            acc += f3[a * m + i] * w3[a];
        }
        out[i] = acc;
    }
}

/// Solves with substeps doubled from the base until two successive
/// refinements agree at all grid points within `TME_REFINE_TOL`, or the cap
/// is reached. The returned run carries the last gap observed.
pub fn tme_solve_refined(path: &FbmPath, coeffs: &ModifiedCoefficients) -> Result<TmeRun> {
    let mut current = tme_solve(path, coeffs, TME_BASE_SUBSTEPS)?;
    let mut substeps = TME_BASE_SUBSTEPS;
    while substeps < TME_MAX_SUBSTEPS {
        substeps *= 2;
        let finer = tme_solve(path, coeffs, substeps)?;
        let gap = max_grid_gap_tme(&current, &finer);
        current = finer;
        current.refinement_gap = Some(gap);
        if gap < TME_REFINE_TOL {
            break;
        }
    }
    Ok(current)
}

fn max_grid_gap_tme(a: &TmeRun, b: &TmeRun) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..=a.n_steps {
        let (xa, xb) = (a.node(k), b.node(k));
        let gap = xa
            .iter()
            .zip(xb)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(gap);
    }
    worst
}

/// The modified equation rewritten as an equation driven by the extended
/// path: component columns are σ first, then the weight-3 coefficients in
/// canonical order.
struct StackedField {
    coeffs: Arc<ModifiedCoefficients>,
}

impl VectorField for StackedField {
    fn state_dim(&self) -> usize {
        self.coeffs.model.state_dim()
    }

    fn noise_dim(&self) -> usize {
        self.coeffs.model.noise_dim() + self.coeffs.weight3.len()
    }

    fn sigma(&self, y: &[f64], out: &mut [f64]) {
        let model = &self.coeffs.model;
        let (m, d) = (model.state_dim(), model.noise_dim());
        let total = self.noise_dim();
        let mut scratch = CoeffScratch::new(model);
        let mut f3 = vec![0.0; self.coeffs.weight3.len() * m];
        self.coeffs.eval_f3_all(y, &mut scratch, &mut f3);
        for i in 0..m {
            for l in 0..d {
                out[i * total + l] = scratch.sigma[i * d + l];
            }
            for a in 0..self.coeffs.weight3.len() {
                out[i * total + d + a] = f3[a * m + i];
            }
        }
    }

    /// Central differences; the stacked field is only integrated, not
    /// expanded, so analytic derivatives are not carried.
    fn sigma_d1(&self, y: &[f64], out: &mut [f64]) {
        let m = self.state_dim();
        let cols = self.noise_dim();
        let eps = 1e-6;
        let mut yp = y.to_vec();
        let mut sp = vec![0.0; m * cols];
        let mut sm = vec![0.0; m * cols];
        for j in 0..m {
            yp[j] = y[j] + eps;
            self.sigma(&yp, &mut sp);
            yp[j] = y[j] - eps;
            self.sigma(&yp, &mut sm);
            yp[j] = y[j];
            for i in 0..m {
                for l in 0..cols {
                    out[(i * cols + l) * m + j] = (sp[i * cols + l] - sm[i * cols + l]) / (2.0 * eps);
                }
            }
        }
    }

    fn sigma_d2(&self, y: &[f64], out: &mut [f64]) {
        let m = self.state_dim();
        let cols = self.noise_dim();
        let eps = 1e-4;
        let mut yp = y.to_vec();
        let mut dp = vec![0.0; m * cols * m];
        let mut dm = vec![0.0; m * cols * m];
        for k in 0..m {
            yp[k] = y[k] + eps;
            self.sigma_d1(&yp, &mut dp);
            yp[k] = y[k] - eps;
            self.sigma_d1(&yp, &mut dm);
            yp[k] = y[k];
            for idx in 0..m * cols * m {
                out[idx * m + k] = (dp[idx] - dm[idx]) / (2.0 * eps);
            }
        }
    }
}

/// Returns the extended driver X̃ⁿ and a model wrapping the stacked field V,
/// such that the equation dy = V(y) dX̃ⁿ reproduces the modified equation.
pub fn tme_as_rde_driver(
    path: &FbmPath,
    coeffs: &ModifiedCoefficients,
) -> Result<(PiecewiseLinearPath, NamedModel)> {
    if path.dim() != coeffs.model.noise_dim() {
        return Err(Error::Dimension {
            context: "tme_as_rde_driver noise dim",
            expected: coeffs.model.noise_dim(),
            got: path.dim(),
        });
    }
    let xtilde = paths::assemble_xtilde(path)?;
    let field = StackedField {
        coeffs: Arc::new(coeffs.clone()),
    };
    let model = NamedModel {
        id: "tme_rde_driver",
        field: Arc::new(field),
        initial: coeffs.model.initial.clone(),
        globally_lip: false,
        notes: "stacked modified-equation field over the extended driver",
    };
    Ok((xtilde, model))
}

/// Max grid-point gap between the modified Milstein trajectory and the
/// modified-equation solution on the same path.
pub fn backward_error(path: &FbmPath, model: &NamedModel, substeps: usize) -> Result<f64> {
    let coeffs = build_coefficients(model);
    let run = schemes::integrate(
        schemes::Scheme::ModifiedMilstein,
        path,
        model,
        &schemes::IntegrateOptions::default(),
    )?;
    let tme = tme_solve(path, &coeffs, substeps)?;
    Ok(max_gap(&run, &tme))
}

/// As `backward_error`, with the substep-doubling solver.
pub fn backward_error_refined(path: &FbmPath, model: &NamedModel) -> Result<f64> {
    let coeffs = build_coefficients(model);
    let run = schemes::integrate(
        schemes::Scheme::ModifiedMilstein,
        path,
        model,
        &schemes::IntegrateOptions::default(),
    )?;
    let tme = tme_solve_refined(path, &coeffs)?;
    Ok(max_gap(&run, &tme))
}

fn max_gap(run: &schemes::SchemeRun, tme: &TmeRun) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..=run.n_steps {
        let (ya, yb) = (run.node(k), tme.node(k));
        let gap = ya
            .iter()
            .zip(yb)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(gap);
    }
    worst
}
