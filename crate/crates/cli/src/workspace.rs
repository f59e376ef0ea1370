//! Turns a [`RunConfig`] into the loaded scene, camera, grid and scoring context.

use std::sync::Arc;

use mobipose::bopt::PoseBounds;
use mobipose::descriptor::{DemoDataset, DescriptorBackend, PatchStat};
use mobipose::geometry::{CameraConfig, NamedRig, Pose2D};
use mobipose::harness::{generate_scene, mix_seed, survey_grid, HarnessScene};
use mobipose::occupancy::{Bounds2D, OccupancyGrid, RobotFootprint};
use mobipose::scoring::{CommandVisibility, MaskVisibility, ScoringContext, VisibilityBackend};
use mobipose::splat::{load_splat_file, RenderOptions, SplatScene};

use crate::config::RunConfig;
use crate::error::CliError;

/// Seed salt for the synthetic demo frames (matches the harness "ours" method).
pub const DEMO_SALT: u64 = 0xD0;

pub struct Workspace {
    pub scene: Arc<SplatScene>,
    pub camera: CameraConfig,
    pub grid: Arc<OccupancyGrid>,
    pub footprint: RobotFootprint,
    /// Search box used when the config does not set one.
    pub default_bounds: PoseBounds,
    /// Present when the scene is the generated room.
    pub synthetic: Option<HarnessScene>,
}

impl Workspace {
    pub fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        let footprint = RobotFootprint::new(cfg.grid.footprint_radius).map_err(|e| CliError::config("invalid footprint", e.to_string()))?;
        let loaded_grid = match &cfg.paths.grid {
            Some(p) => Some(Arc::new(OccupancyGrid::load(p)?)),
            None => None,
        };
        let file_camera = match &cfg.paths.camera {
            Some(p) => Some(CameraConfig::load(p).map_err(|e| CliError::config("invalid camera config", e.to_string()))?),
            None => None,
        };

        if let Some(path) = &cfg.paths.scene {
            let scene = Arc::new(load_splat_file(path)?);
            let camera = file_camera.ok_or_else(|| CliError::config("camera config not found", "a scene file needs [paths] camera"))?;
            let grid = match loaded_grid {
                Some(g) => g,
                None => {
                    let b = scene.bounds();
                    let bounds = cfg.grid.bounds.unwrap_or(Bounds2D { min: [b.min[0], b.min[1]], max: [b.max[0], b.max[1]] });
                    Arc::new(survey_grid(&scene, bounds, cfg.grid.resolution, cfg.grid.survey_height)?)
                }
            };
            let gb = grid.bounds();
            return Ok(Self {
                scene,
                camera,
                default_bounds: PoseBounds::new((gb.min[0], gb.max[0]), (gb.min[1], gb.max[1])),
                grid,
                footprint,
                synthetic: None,
            });
        }

        let hs = generate_scene(&cfg.synthetic.scene, cfg.synthetic.seed)?;
        let camera = file_camera.unwrap_or_else(|| CameraConfig { intrinsics: hs.intrinsics, rigs: vec![hs.rig.clone()] });
        Ok(Self {
            scene: hs.scene.clone(),
            camera,
            grid: loaded_grid.unwrap_or_else(|| hs.grid.clone()),
            footprint,
            default_bounds: hs.search_bounds,
            synthetic: Some(hs),
        })
    }

    pub fn oracle(&self) -> Option<Pose2D> {
        self.synthetic.as_ref().map(|h| h.oracle)
    }

    /// The rigs named in `names`, or the first rig when `names` is empty.
    pub fn views(&self, names: &[String]) -> Result<Vec<NamedRig>, CliError> {
        if names.is_empty() {
            return Ok(vec![self.camera.rigs[0].clone()]);
        }
        names
            .iter()
            .map(|n| self.camera.rigs.iter().find(|r| &r.name == n).cloned().ok_or_else(|| CliError::config("unknown view", format!("no rig named `{n}`"))))
            .collect()
    }

    pub fn dataset(&self, cfg: &RunConfig, backend: &dyn DescriptorBackend) -> Result<DemoDataset, CliError> {
        let ds = match (&cfg.paths.dataset, &self.synthetic) {
            (Some(dir), _) => DemoDataset::load_dir(dir, backend)?,
            (None, Some(hs)) => hs.demo_dataset(&cfg.synthetic.scene, mix_seed(hs.seed, DEMO_SALT), backend)?,
            (None, None) => return Err(CliError::config("dataset not found", "no [paths] dataset configured")),
        };
        Ok(match &cfg.scoring.task {
            Some(task) => ds.filter_by_task(task)?,
            None => ds,
        })
    }

    pub fn scoring_context(&self, cfg: &RunConfig, views: &[String]) -> Result<ScoringContext, CliError> {
        let backend: Arc<dyn DescriptorBackend> = Arc::new(PatchStat);
        let dataset = self.dataset(cfg, backend.as_ref())?;
        let tau = match cfg.scoring.tau {
            Some(t) => t,
            None => dataset.calibrate_tau()?,
        };
        let visibility: Arc<dyn VisibilityBackend> = match &cfg.scoring.visibility_command {
            Some(cmd) if !cmd.is_empty() => Arc::new(CommandVisibility { program: cmd[0].clone().into(), args: cmd[1..].to_vec() }),
            Some(_) => return Err(CliError::config("invalid config", "visibility_command is empty")),
            None => Arc::new(MaskVisibility { min_pixels: cfg.scoring.min_pixels }),
        };
        let ctx = ScoringContext {
            scene: self.scene.clone(),
            grid: self.grid.clone(),
            footprint: self.footprint,
            dataset: Arc::new(dataset),
            descriptor: backend,
            visibility,
            views: self.views(views)?,
            intrinsics: self.camera.intrinsics,
            k: cfg.scoring.k,
            tau,
            render: RenderOptions::default(),
        };
        ctx.validate()?;
        Ok(ctx)
    }
}
