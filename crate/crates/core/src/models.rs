//! Test systems: diffusion fields σ with analytic first and second
//! derivatives.
//!
//! Flat layouts, all row-major:
//!   σ   out[i*d + l]              entry (i, l) of the m×d matrix
//!   σ′  out[(i*d + l)*m + j]      ∂σ_{i,l}/∂y_j
//!   σ″  out[((i*d + l)*m + j)*m + k]  ∂²σ_{i,l}/∂y_j∂y_k

use crate::error::{Error, Result};
use std::sync::Arc;

pub trait VectorField: Send + Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn sigma(&self, y: &[f64], out: &mut [f64]);
    fn sigma_d1(&self, y: &[f64], out: &mut [f64]);
    fn sigma_d2(&self, y: &[f64], out: &mut [f64]);
}

/// A registered test system: field, initial condition, and smoothness notes.
#[derive(Clone)]
pub struct NamedModel {
    pub id: &'static str,
    pub field: Arc<dyn VectorField>,
    pub initial: Vec<f64>,
    /// Whether the field is globally Lip^γ (bounded with bounded first and
    /// second derivatives). Linear-growth fields are admitted but flagged.
    pub globally_lip: bool,
    pub notes: &'static str,
}

impl std::fmt::Debug for NamedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NamedModel")
            .field("id", &self.id)
            .field("state_dim", &self.state_dim())
            .field("noise_dim", &self.noise_dim())
            .field("initial", &self.initial)
            .field("globally_lip", &self.globally_lip)
            .finish()
    }
}

impl NamedModel {
    pub fn state_dim(&self) -> usize {
        self.field.state_dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.field.noise_dim()
    }
}

/// dX¹ = dB¹, dX² = X¹ dB²: the second component accumulates the
/// non-symmetric part of the Lévy area of (B¹, B²).
struct LevyAreaField;

impl VectorField for LevyAreaField {
    fn state_dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        2
    }
    fn sigma(&self, y: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = y[0];
    }
    fn sigma_d1(&self, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        // ∂σ_{2,2}/∂y₁, the only nonzero entry.
        out[(1 * 2 + 1) * 2 + 0] = 1.0;
    }
    fn sigma_d2(&self, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

pub fn levy_area_model() -> NamedModel {
    NamedModel {
        id: "levy_area",
        field: Arc::new(LevyAreaField),
        initial: vec![0.0, 0.0],
        globally_lip: false,
        notes: "linear growth in y1; first component solves exactly as X1 = B1",
    }
}

/// Trig field with every entry of σ, σ′, σ″ bounded by 1.
struct SmoothBoundedField;

impl VectorField for SmoothBoundedField {
    fn state_dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        2
    }
    fn sigma(&self, y: &[f64], out: &mut [f64]) {
        // Columns σ_1 = (cos y₂, sin y₁)ᵀ, σ_2 = (sin y₂, cos y₁)ᵀ.
        out[0] = y[1].cos();
        out[1] = y[1].sin();
        out[2] = y[0].sin();
        out[3] = y[0].cos();
    }
    fn sigma_d1(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let (s0, c0) = y[0].sin_cos();
        let (s1, c1) = y[1].sin_cos();
        out[(0 * 2 + 0) * 2 + 1] = -s1; // ∂(cos y₂)/∂y₂
        out[(0 * 2 + 1) * 2 + 1] = c1; // ∂(sin y₂)/∂y₂
        out[(1 * 2 + 0) * 2 + 0] = c0; // ∂(sin y₁)/∂y₁
        out[(1 * 2 + 1) * 2 + 0] = -s0; // ∂(cos y₁)/∂y₁
    }
    fn sigma_d2(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let (s0, c0) = y[0].sin_cos();
        let (s1, c1) = y[1].sin_cos();
        out[((0 * 2 + 0) * 2 + 1) * 2 + 1] = -c1;
        out[((0 * 2 + 1) * 2 + 1) * 2 + 1] = -s1;
        out[((1 * 2 + 0) * 2 + 0) * 2 + 0] = -s0;
        out[((1 * 2 + 1) * 2 + 0) * 2 + 0] = -c0;
    }
}

pub fn smooth_bounded_model() -> NamedModel {
    NamedModel {
        id: "smooth_bounded",
        field: Arc::new(SmoothBoundedField),
        initial: vec![0.5, -0.3],
        globally_lip: true,
        notes: "all entries of sigma and its first two derivatives bounded by 1",
    }
}

/// σ(y) = y in one dimension; every step has a closed form.
struct ScalarGeometricField;

impl VectorField for ScalarGeometricField {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn sigma(&self, y: &[f64], out: &mut [f64]) {
        out[0] = y[0];
    }
    fn sigma_d1(&self, _y: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn sigma_d2(&self, _y: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
}

pub fn scalar_geometric_model() -> NamedModel {
    NamedModel {
        id: "scalar_geometric",
        field: Arc::new(ScalarGeometricField),
        initial: vec![1.0],
        globally_lip: false,
        notes: "linear growth; closed-form stepping oracle",
    }
}

pub const MODEL_IDS: [&str; 3] = ["levy_area", "smooth_bounded", "scalar_geometric"];

pub fn model_by_id(id: &str) -> Result<NamedModel> {
    match id {
        "levy_area" => Ok(levy_area_model()),
        "smooth_bounded" => Ok(smooth_bounded_model()),
        "scalar_geometric" => Ok(scalar_geometric_model()),
        _ => Err(Error::UnknownId {
            kind: "model",
            id: id.to_string(),
        }),
    }
}
