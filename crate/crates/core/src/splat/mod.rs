//! Gaussian-splat scenes: ingestion, synthesis and forward rendering.

mod ply;
mod render;
mod sh;
mod synth;

use nalgebra::{Matrix3, SymmetricEigen, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ply::{load_splat_file, read_splat_ply, write_splat_ply};
pub use render::{project_gaussian, render, render_layers, render_with, ProjectedGaussian, RenderLayers, RenderOptions, COV2D_FLOOR, FOOTPRINT_SIGMAS};
pub use sh::{eval_sh, SH_C0};
pub use synth::{synthesize_scene, Primitive, SceneSpec, Shape};

/// Smallest covariance eigenvalue kept after clamping (m²).
pub const MIN_COV_EIGENVALUE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SplatError {
    #[error("ply header line {line}: {msg}")]
    Header { line: usize, msg: String },
    #[error("ply record {record}: {msg}")]
    Record { record: usize, msg: String },
    #[error("missing vertex property `{0}`")]
    MissingProperty(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("invalid gaussian: {0}")]
    InvalidGaussian(String),
}

/// One anisotropic 3D Gaussian.
///
/// `sh` holds spherical-harmonic color coefficients per RGB channel: 1, 4, 9 or 16 entries
/// for degrees 0 through 3. Entry 0 is the DC term.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    covariance: Matrix3<f64>,
    pub opacity: f64,
    pub sh: Vec<[f64; 3]>,
}

impl Gaussian3D {
    /// Symmetrizes the covariance and clamps its eigenvalues below at [`MIN_COV_EIGENVALUE`].
    pub fn new(mean: Vector3<f64>, covariance: Matrix3<f64>, opacity: f64, sh: Vec<[f64; 3]>) -> Result<Self, SplatError> {
        if !mean.iter().chain(covariance.iter()).all(|v| v.is_finite()) || !opacity.is_finite() {
            return Err(SplatError::InvalidGaussian("non-finite value".into()));
        }
        if !(0.0..=1.0).contains(&opacity) {
            return Err(SplatError::InvalidGaussian(format!("opacity {opacity} outside [0, 1]")));
        }
        if !matches!(sh.len(), 1 | 4 | 9 | 16) {
            return Err(SplatError::InvalidGaussian(format!("{} SH coefficients", sh.len())));
        }
        Ok(Self { mean, covariance: clamp_covariance(&covariance), opacity, sh })
    }

    /// Builds Σ = R·diag(s²)·Rᵀ from per-axis standard deviations and an orientation.
    pub fn from_scale_rotation(
        mean: Vector3<f64>,
        scale: Vector3<f64>,
        rotation: &UnitQuaternion<f64>,
        opacity: f64,
        sh: Vec<[f64; 3]>,
    ) -> Result<Self, SplatError> {
        let r = rotation.to_rotation_matrix();
        let s2 = Matrix3::from_diagonal(&scale.map(|s| s * s));
        Self::new(mean, r.matrix() * s2 * r.matrix().transpose(), opacity, sh)
    }

    /// Degree-0 Gaussian whose view-independent color is `rgb`.
    pub fn with_color(mean: Vector3<f64>, covariance: Matrix3<f64>, opacity: f64, rgb: [f64; 3]) -> Result<Self, SplatError> {
        Self::new(mean, covariance, opacity, vec![rgb.map(|c| (c - 0.5) / SH_C0)])
    }

    pub fn covariance(&self) -> &Matrix3<f64> {
        &self.covariance
    }

    pub fn sh_degree(&self) -> usize {
        match self.sh.len() {
            1 => 0,
            4 => 1,
            9 => 2,
            _ => 3,
        }
    }

    /// Color of the DC term alone, clamped to [0, 1].
    pub fn base_color(&self) -> [f64; 3] {
        self.sh[0].map(|c| (SH_C0 * c + 0.5).clamp(0.0, 1.0))
    }
}

fn clamp_covariance(cov: &Matrix3<f64>) -> Matrix3<f64> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().all(|&v| v >= MIN_COV_EIGENVALUE) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(MIN_COV_EIGENVALUE));
    eig.eigenvectors * Matrix3::from_diagonal(&clamped) * eig.eigenvectors.transpose()
}

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn empty() -> Self {
        Self { min: [0.0; 3], max: [0.0; 3] }
    }

    pub fn around<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Aabb { min: [first.x, first.y, first.z], max: [first.x, first.y, first.z] };
        for p in it {
            for i in 0..3 {
                b.min[i] = b.min[i].min(p[i]);
                b.max[i] = b.max[i].max(p[i]);
            }
        }
        Some(b)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(0.5 * (self.min[0] + self.max[0]), 0.5 * (self.min[1] + self.max[1]), 0.5 * (self.min[2] + self.max[2]))
    }
}

/// The tagged object of interest: its name and world-space extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRegion {
    pub name: String,
    pub bounds: Aabb,
}

/// A collection of Gaussians with optional per-Gaussian object-of-interest labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatScene {
    gaussians: Vec<Gaussian3D>,
    bounds: Aabb,
    pub background: [f64; 3],
    labels: Option<Vec<bool>>,
    object: Option<ObjectRegion>,
}

impl SplatScene {
    pub fn new(gaussians: Vec<Gaussian3D>) -> Self {
        let bounds = Aabb::around(gaussians.iter().map(|g| &g.mean)).unwrap_or_else(Aabb::empty);
        Self { gaussians, bounds, background: [0.0; 3], labels: None, object: None }
    }

    pub fn with_background(mut self, background: [f64; 3]) -> Self {
        self.background = background;
        self
    }

    /// Tags the Gaussians flagged in `labels` as the object of interest named `name`.
    pub fn with_object(mut self, name: impl Into<String>, labels: Vec<bool>) -> Result<Self, SplatError> {
        if labels.len() != self.gaussians.len() {
            return Err(SplatError::Spec(format!("{} labels for {} gaussians", labels.len(), self.gaussians.len())));
        }
        let bounds = Aabb::around(self.gaussians.iter().zip(&labels).filter(|(_, l)| **l).map(|(g, _)| &g.mean))
            .ok_or_else(|| SplatError::Spec("object label set is empty".into()))?;
        self.object = Some(ObjectRegion { name: name.into(), bounds });
        self.labels = Some(labels);
        Ok(self)
    }

    pub(crate) fn set_object_region(&mut self, region: ObjectRegion) {
        self.object = Some(region);
    }

    pub fn gaussians(&self) -> &[Gaussian3D] {
        &self.gaussians
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn object(&self) -> Option<&ObjectRegion> {
        self.object.as_ref()
    }
}
