//! The hybrid pose score: in-distribution similarity gated by object visibility and collision.

use std::io::Write;
use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{compute_descriptor, id_score, knn_distance, DemoDataset, DescriptorBackend, DescriptorError};
use crate::geometry::{base_to_camera, CameraIntrinsics, NamedRig, Pose2D, RigidTransform};
use crate::imaging::{ImageRGB, Mask};
use crate::occupancy::{Clearance, OccupancyGrid, RobotFootprint};
use crate::splat::{render_with, RenderLayers, RenderOptions, SplatScene};

pub const DEFAULT_MIN_PIXELS: usize = 50;
/// Image area the visibility threshold refers to.
pub const REFERENCE_AREA: usize = 224 * 224;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("visibility gate: {0}")]
    Visibility(String),
    #[error("in-distribution score: {0}")]
    Descriptor(#[from] DescriptorError),
}

/// Decides whether the object of interest appears in a rendered view.
pub trait VisibilityBackend: Send + Sync {
    fn name(&self) -> &str;
    fn object_visible(&self, scene: &SplatScene, view: &RenderLayers, object_query: &str) -> Result<bool, ScoringError>;
}

/// Reference backend: counts pixels of the rendered object mask.
///
/// `min_pixels` is stated at 224×224; for other render sizes the pixel count is rescaled by
/// area before comparison.
#[derive(Debug, Clone, Copy)]
pub struct MaskVisibility {
    pub min_pixels: usize,
}

impl Default for MaskVisibility {
    fn default() -> Self {
        Self { min_pixels: DEFAULT_MIN_PIXELS }
    }
}

impl MaskVisibility {
    pub fn mask_passes(&self, mask: &Mask) -> bool {
        let area = mask.width() * mask.height();
        if area == 0 {
            return false;
        }
        // Integer comparison: count * REF / area >= min  <=>  count * REF >= min * area.
        (mask.count() as u128) * (REFERENCE_AREA as u128) >= (self.min_pixels as u128) * (area as u128)
    }
}

impl VisibilityBackend for MaskVisibility {
    fn name(&self) -> &str {
        "mask"
    }

    fn object_visible(&self, scene: &SplatScene, view: &RenderLayers, _object_query: &str) -> Result<bool, ScoringError> {
        if scene.object().is_none() {
            return Err(ScoringError::Config("mask visibility needs a scene with a tagged object".into()));
        }
        let mask = view.object_mask.as_ref().ok_or_else(|| ScoringError::Config("render produced no object mask".into()))?;
        Ok(self.mask_passes(mask))
    }
}

/// Hands the view to an external program: `program [args..] <png path> <object query>`.
/// The object counts as visible when stdout contains "yes" (case-insensitive).
#[derive(Debug, Clone)]
pub struct CommandVisibility {
    pub program: PathBuf,
    pub args: Vec<String>,
}

static COMMAND_CALLS: AtomicU64 = AtomicU64::new(0);

impl VisibilityBackend for CommandVisibility {
    fn name(&self) -> &str {
        "command"
    }

    fn object_visible(&self, _scene: &SplatScene, view: &RenderLayers, object_query: &str) -> Result<bool, ScoringError> {
        let n = COMMAND_CALLS.fetch_add(1, Ordering::Relaxed);
        let path = std::env::temp_dir().join(format!("mobipose-view-{}-{n}.png", std::process::id()));
        view.rgb.save_png(&path).map_err(|e| ScoringError::Visibility(e.to_string()))?;
        let out = Command::new(&self.program).args(&self.args).arg(&path).arg(object_query).output();
        let _ = std::fs::remove_file(&path);
        let out = out.map_err(|e| ScoringError::Visibility(format!("{}: {e}", self.program.display())))?;
        if !out.status.success() {
            return Err(ScoringError::Visibility(format!("{} exited with {}", self.program.display(), out.status)));
        }
        Ok(String::from_utf8_lossy(&out.stdout).to_lowercase().contains("yes"))
    }
}

/// Renders the view from `cam` and applies the visibility backend.
pub fn object_visible(scene: &SplatScene, cam: &RigidTransform, k: &CameraIntrinsics, backend: &dyn VisibilityBackend) -> Result<bool, ScoringError> {
    let query = scene.object().map(|o| o.name.clone()).unwrap_or_default();
    let view = render_with(scene, cam, k, &RenderOptions::default());
    backend.object_visible(scene, &view, &query)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub view: String,
    pub k_id: f64,
    pub k_obj: bool,
    pub id_skipped: bool,
}

impl ViewScore {
    pub fn gated(&self) -> f64 {
        if self.k_obj {
            self.k_id
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub pose: Pose2D,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    pub k_id: f64,
    pub k_obj: bool,
    pub k_col: bool,
    pub combined: f64,
    /// K_obj was not evaluated because the collision gate failed.
    pub obj_skipped: bool,
    /// K_id was not evaluated because an earlier gate failed.
    pub id_skipped: bool,
    #[serde(default)]
    pub out_of_bounds: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_view: Option<Vec<ViewScore>>,
}

impl ScoreResult {
    /// A result carrying only a combined value, for objectives that are not built on a scene.
    pub fn plain(pose: Pose2D, height: Option<f64>, value: f64) -> Self {
        Self {
            pose,
            height,
            k_id: value,
            k_obj: true,
            k_col: true,
            combined: value,
            obj_skipped: false,
            id_skipped: false,
            out_of_bounds: false,
            per_view: None,
        }
    }
}

/// Everything a score evaluation needs. Immutable and shareable across threads.
#[derive(Clone)]
pub struct ScoringContext {
    pub scene: Arc<SplatScene>,
    pub grid: Arc<OccupancyGrid>,
    pub footprint: RobotFootprint,
    pub dataset: Arc<DemoDataset>,
    pub descriptor: Arc<dyn DescriptorBackend>,
    pub visibility: Arc<dyn VisibilityBackend>,
    /// Active camera views; one for single-view scoring, several for the max composition.
    pub views: Vec<NamedRig>,
    pub intrinsics: CameraIntrinsics,
    pub k: usize,
    pub tau: f64,
    pub render: RenderOptions,
}

impl ScoringContext {
    pub fn validate(&self) -> Result<(), ScoringError> {
        if self.views.is_empty() {
            return Err(ScoringError::Config("no camera view configured".into()));
        }
        if self.k == 0 || self.k > self.dataset.len() {
            return Err(ScoringError::Descriptor(DescriptorError::InvalidK { k: self.k, n: self.dataset.len() }));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(ScoringError::Descriptor(DescriptorError::InvalidTau(self.tau)));
        }
        Ok(())
    }

    fn object_query(&self) -> String {
        self.scene.object().map(|o| o.name.clone()).unwrap_or_default()
    }

    pub fn render_view(&self, p: &Pose2D, rig: &RigidTransform, height: f64) -> RenderLayers {
        let cam = base_to_camera(p, rig, height);
        render_with(&self.scene, &cam, &self.intrinsics, &self.render)
    }

    /// Raw K_id of a rendered image, without any gate.
    pub fn id_score_of(&self, img: &ImageRGB) -> Result<f64, ScoringError> {
        let d = compute_descriptor(img, self.descriptor.as_ref())?;
        Ok(id_score(knn_distance(&d, &self.dataset, self.k)?, self.tau)?)
    }

    fn view_score(&self, p: &Pose2D, rig: &NamedRig, height: f64, query: &str) -> Result<ViewScore, ScoringError> {
        let view = self.render_view(p, &rig.transform, height);
        let k_obj = self.visibility.object_visible(&self.scene, &view, query)?;
        if !k_obj {
            return Ok(ViewScore { view: rig.name.clone(), k_id: 0.0, k_obj, id_skipped: true });
        }
        let k_id = self.id_score_of(&view.rgb)?;
        Ok(ViewScore { view: rig.name.clone(), k_id, k_obj, id_skipped: false })
    }

    /// Single-view hybrid score using the first configured view.
    pub fn hybrid_score(&self, p: &Pose2D, height: Option<f64>) -> Result<ScoreResult, ScoringError> {
        self.score_views(p, height, &self.views[..1], false)
    }

    /// Max over views of the gated per-view score, composed with the shared collision gate.
    pub fn hybrid_score_multiview(&self, p: &Pose2D, height: Option<f64>) -> Result<ScoreResult, ScoringError> {
        if self.views.len() < 2 {
            return Err(ScoringError::Config(format!("multi-view scoring needs at least 2 views, {} configured", self.views.len())));
        }
        self.score_views(p, height, &self.views, true)
    }

    /// Dispatches on the number of configured views.
    pub fn score(&self, p: &Pose2D, height: Option<f64>) -> Result<ScoreResult, ScoringError> {
        if self.views.len() >= 2 {
            self.hybrid_score_multiview(p, height)
        } else {
            self.hybrid_score(p, height)
        }
    }

    pub fn score_batch(&self, poses: &[(Pose2D, Option<f64>)]) -> Result<Vec<ScoreResult>, ScoringError> {
        poses.par_iter().map(|(p, h)| self.score(p, *h)).collect()
    }

    fn score_views(&self, p: &Pose2D, height: Option<f64>, views: &[NamedRig], record_views: bool) -> Result<ScoreResult, ScoringError> {
        let p = p.normalized();
        let clearance = self.grid.clearance(&p, &self.footprint);
        let mut result = ScoreResult {
            pose: p,
            height,
            k_id: 0.0,
            k_obj: false,
            k_col: clearance.is_free(),
            combined: 0.0,
            obj_skipped: true,
            id_skipped: true,
            out_of_bounds: clearance == Clearance::OutOfBounds,
            per_view: None,
        };
        if !result.k_col {
            return Ok(result);
        }
        let query = self.object_query();
        let h = height.unwrap_or(0.0);
        let scores = views.iter().map(|rig| self.view_score(&p, rig, h, &query)).collect::<Result<Vec<_>, _>>()?;
        // First view attaining the maximum gated value wins.
        let best = scores.iter().enumerate().fold(0, |b, (i, s)| if s.gated() > scores[b].gated() { i } else { b });
        let best = &scores[best];
        result.obj_skipped = false;
        result.k_obj = scores.iter().any(|s| s.k_obj);
        result.k_id = best.k_id;
        result.id_skipped = best.id_skipped;
        result.combined = best.gated();
        if record_views {
            result.per_view = Some(scores);
        }
        Ok(result)
    }

    /// Evaluates every sub-score for every view with no early exit. Used to check gating.
    pub fn score_exhaustive(&self, p: &Pose2D, height: Option<f64>) -> Result<(bool, Vec<ViewScore>), ScoringError> {
        let p = p.normalized();
        let k_col = self.grid.clearance(&p, &self.footprint).is_free();
        let query = self.object_query();
        let h = height.unwrap_or(0.0);
        let views = self
            .views
            .iter()
            .map(|rig| {
                let view = self.render_view(&p, &rig.transform, h);
                let k_obj = self.visibility.object_visible(&self.scene, &view, &query)?;
                let k_id = self.id_score_of(&view.rgb)?;
                Ok(ViewScore { view: rig.name.clone(), k_id, k_obj, id_skipped: false })
            })
            .collect::<Result<Vec<_>, ScoringError>>()?;
        Ok((k_col, views))
    }
}

/// The sub-dataset whose task label equals `task`.
pub fn filter_dataset_by_task(dataset: &DemoDataset, task: &str) -> Result<DemoDataset, ScoringError> {
    Ok(dataset.filter_by_task(task)?)
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(results: &[ScoreResult], mut w: W) -> std::io::Result<()> {
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<ScoreResult>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}
