//! Run configuration (TOML). Every section is optional; a missing scene means the built-in
//! synthetic room.

use std::path::{Path, PathBuf};

use mobipose::bopt::{BoConfig, ExclusionZone, KernelParams, PoseBounds};
use mobipose::harness::{ModelConfig, SceneConfig, SuiteConfig, SURVEY_HEIGHT};
use mobipose::metrics::EPISODES_PER_SIGMA;
use mobipose::occupancy::{Bounds2D, DEFAULT_FOOTPRINT_RADIUS};
use mobipose::scoring::DEFAULT_MIN_PIXELS;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Sim,
    Real,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Gaussian-splat PLY file.
    pub scene: Option<PathBuf>,
    /// Demo dataset directory holding `index.json`.
    pub dataset: Option<PathBuf>,
    /// Occupancy grid file; built from rendered depth when absent.
    pub grid: Option<PathBuf>,
    /// Camera TOML (intrinsics and rigs).
    pub camera: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Layout seed of the generated room.
    pub seed: u64,
    pub scene: SceneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    /// Keep only demos with this task label.
    pub task: Option<String>,
    pub k: usize,
    /// Fixed K_id temperature; calibrated from the dataset when absent.
    pub tau: Option<f64>,
    pub min_pixels: usize,
    /// Rig names to score with; the first rig when empty.
    pub views: Vec<String>,
    /// External visibility detector: program followed by its arguments.
    pub visibility_command: Option<Vec<String>>,
    /// Robot start pose [x, y, θ] marked on the score map.
    pub start: Option<[f64; 3]>,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            task: None,
            k: mobipose::descriptor::DEFAULT_K,
            tau: None,
            min_pixels: DEFAULT_MIN_PIXELS,
            views: Vec::new(),
            visibility_command: None,
            start: None,
        }
    }
}

/// Optimizer settings; unset fields come from the profile preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoSection {
    pub n_init: Option<usize>,
    pub n_iter: Option<usize>,
    pub n_batch: Option<usize>,
    pub kappa: Option<f64>,
    pub candidate_pool: Option<usize>,
    pub local_fraction: Option<f64>,
    pub max_observations: Option<usize>,
    pub kernel: Option<KernelParams>,
    pub bounds: Option<PoseBounds>,
    pub exclusion_zones: Vec<ExclusionZone>,
    pub optimize_height: bool,
}

impl BoSection {
    pub fn resolve(&self, profile: Profile, bounds: PoseBounds, seed: u64, optimize_height: bool) -> BoConfig {
        let bounds = self.bounds.unwrap_or(bounds);
        let mut c = match profile {
            Profile::Sim => BoConfig::sim(bounds),
            Profile::Real => BoConfig::real(bounds),
        };
        c.seed = seed;
        c.n_init = self.n_init.unwrap_or(c.n_init);
        c.n_iter = self.n_iter.unwrap_or(c.n_iter);
        c.n_batch = self.n_batch.unwrap_or(c.n_batch);
        c.kappa = self.kappa.unwrap_or(c.kappa);
        c.candidate_pool = self.candidate_pool.unwrap_or(c.candidate_pool);
        c.local_fraction = self.local_fraction.unwrap_or(c.local_fraction);
        c.max_observations = self.max_observations.or(c.max_observations);
        c.kernel = self.kernel.unwrap_or(c.kernel);
        c.exclusion_zones = self.exclusion_zones.clone();
        c.optimize_height = optimize_height || self.optimize_height;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub resolution: f64,
    pub footprint_radius: f64,
    pub survey_height: f64,
    /// Mapped region; the scene's xy extent when absent.
    pub bounds: Option<Bounds2D>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { resolution: 0.05, footprint_radius: DEFAULT_FOOTPRINT_RADIUS, survey_height: SURVEY_HEIGHT, bounds: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewFiles {
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// JSON list of [σ, success rate] pairs; measured on the synthetic model when absent.
    pub samples: Option<PathBuf>,
    pub sigmas: Option<Vec<f64>>,
    pub episodes_per_sigma: usize,
    /// Image/mask pairs for visual feasibility; rendered near the oracle when empty.
    pub views: Vec<ViewFiles>,
    /// Number of near-oracle views rendered when no view files are given.
    pub n_views: usize,
    pub model: ModelConfig,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { samples: None, sigmas: None, episodes_per_sigma: EPISODES_PER_SIGMA, views: Vec::new(), n_views: 30, model: ModelConfig::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub paths: Paths,
    pub synthetic: SyntheticConfig,
    pub scoring: ScoringConfig,
    pub bo: BoSection,
    pub grid: GridSection,
    pub harness: SuiteConfig,
    pub metrics: MetricsSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::config("invalid config", e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.check_paths()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config("config not found", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut self.paths.scene);
        fix(&mut self.paths.dataset);
        fix(&mut self.paths.grid);
        fix(&mut self.paths.camera);
        fix(&mut self.paths.out);
        fix(&mut self.metrics.samples);
        for v in &mut self.metrics.views {
            for p in [&mut v.image, &mut v.mask] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    /// Referenced inputs must exist.
    pub fn check_paths(&self) -> Result<(), CliError> {
        let check = |p: &Option<PathBuf>, what: &str| match p {
            Some(p) if !p.exists() => Err(CliError::config(format!("{what} not found"), p.display().to_string())),
            _ => Ok(()),
        };
        check(&self.paths.scene, "scene")?;
        check(&self.paths.dataset, "dataset")?;
        check(&self.paths.grid, "grid")?;
        check(&self.paths.camera, "camera config")?;
        check(&self.metrics.samples, "samples")?;
        for v in &self.metrics.views {
            check(&Some(v.image.clone()), "view image")?;
            check(&Some(v.mask.clone()), "view mask")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_synthetic_defaults() {
        let c = RunConfig::from_toml_str("", Path::new(".")).unwrap();
        assert_eq!(c, RunConfig::default());
        assert!(c.paths.scene.is_none());
    }

    #[test]
    fn profile_presets_fill_unset_fields() {
        let b = PoseBounds::new((0.0, 1.0), (0.0, 1.0));
        let sim = BoSection::default().resolve(Profile::Sim, b, 3, false);
        assert_eq!((sim.n_init, sim.kappa, sim.seed), (2500, 1.96, 3));
        let real = BoSection::default().resolve(Profile::Real, b, 0, false);
        assert_eq!((real.n_init, real.kappa), (1000, 0.5));
        let set = BoSection { n_init: Some(40), kappa: Some(0.1), ..Default::default() }.resolve(Profile::Real, b, 0, true);
        assert_eq!((set.n_init, set.kappa, set.n_iter, set.optimize_height), (40, 0.1, real.n_iter, true));
    }

    #[test]
    fn missing_dataset_is_reported() {
        let err = RunConfig::from_toml_str("[paths]\ndataset = \"nope\"\n", Path::new("/nonexistent")).unwrap_err();
        assert_eq!(err.error, "dataset not found");
        assert_eq!(err.code, crate::error::EXIT_CONFIG);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("[bo]\nn_inti = 3\n", Path::new(".")).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("demos")).unwrap();
        let c = RunConfig::from_toml_str("[paths]\ndataset = \"demos\"\nout = \"runs\"\n", dir.path()).unwrap();
        assert_eq!(c.paths.dataset.unwrap(), dir.path().join("demos"));
        assert_eq!(c.paths.out.unwrap(), dir.path().join("runs"));
    }
}
