use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{ImageBuffer, Luma, Rgb, RgbImage};
use mobipose::bopt::{optimize, BoConfig, OptimizationTrace};
use mobipose::geometry::{base_to_camera, Pose2D};
use mobipose::harness::{bar_chart_data, evaluate, generate_scene, EvalReport, SuccessModel};
use mobipose::imaging::{ImageDepth, ImageRGB, Mask};
use mobipose::metrics::{decay_plot_data, default_sigmas, fit_decay, measure_spatial_feasibility, visual_feasibility, DecayFit};
use mobipose::occupancy::{Cell, OccupancyGrid};
use mobipose::scoring::{read_jsonl, write_jsonl, ScoreResult};
use mobipose::splat::{render_with, RenderOptions};
use serde::Serialize;

use crate::config::{Profile, RunConfig};
use crate::error::CliError;
use crate::output::Artifacts;
use crate::score_map::{emit_score_map, FREE, OCCUPIED};
use crate::workspace::Workspace;

/// Default height-offset search range (m) when height optimization is on and unset.
pub const DEFAULT_HEIGHT_RANGE: (f64, f64) = (-0.3, 0.3);

/// Flags shared by every command; each overrides the matching config entry.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub profile: Option<Profile>,
    pub out: Option<PathBuf>,
    pub views: Option<Vec<String>>,
    pub height_opt: bool,
}

impl Overrides {
    pub fn seed(&self, cfg: &RunConfig) -> u64 {
        self.seed.or(cfg.seed).unwrap_or(0)
    }

    pub fn profile(&self, cfg: &RunConfig) -> Profile {
        self.profile.or(cfg.profile).unwrap_or_default()
    }

    pub fn out_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.out.clone().or_else(|| cfg.paths.out.clone()).unwrap_or_else(|| PathBuf::from("mobipose-out"))
    }

    pub fn views(&self, cfg: &RunConfig) -> Vec<String> {
        self.views.clone().unwrap_or_else(|| cfg.scoring.views.clone())
    }
}

pub fn parse_pose(text: &str) -> Result<Pose2D, CliError> {
    let v: Vec<f64> =
        text.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| CliError::config("invalid pose", format!("`{text}`: {e}")))?;
    match v[..] {
        [x, y, theta] if v.iter().all(|c| c.is_finite()) => Ok(Pose2D::new(x, y, theta).normalized()),
        _ => Err(CliError::config("invalid pose", format!("`{text}`: expected x,y,theta"))),
    }
}

#[derive(Debug, Serialize)]
pub struct OptimizeSummary {
    pub profile: Profile,
    pub seed: u64,
    pub best_pose: Pose2D,
    pub best_height: Option<f64>,
    pub best_score: f64,
    pub best_index: usize,
    pub n_evaluated: usize,
    pub wall_time_s: f64,
    pub oracle: Option<Pose2D>,
    pub bo: BoConfig,
}

pub fn resolve_bo(cfg: &RunConfig, ov: &Overrides, ws: &Workspace) -> BoConfig {
    let mut bo = cfg.bo.resolve(ov.profile(cfg), ws.default_bounds, ov.seed(cfg), ov.height_opt);
    if bo.optimize_height && bo.bounds.height.is_none() {
        bo.bounds.height = Some(DEFAULT_HEIGHT_RANGE);
    }
    bo
}

/// Runs the optimizer and writes `trace.jsonl`, `summary.json` and `score_map.png`.
pub fn cmd_optimize(cfg: &RunConfig, ov: &Overrides) -> Result<Vec<PathBuf>, CliError> {
    let start = Instant::now();
    let ws = Workspace::load(cfg)?;
    let ctx = ws.scoring_context(cfg, &ov.views(cfg))?;
    let bo = resolve_bo(cfg, ov, &ws);
    log::info!("optimizing: {} initial, {} rounds of {}, kappa {}", bo.n_init, bo.n_iter, bo.n_batch, bo.kappa);
    let trace = optimize(&ctx, &bo)?;
    let elapsed = start.elapsed().as_secs_f64();

    let mut art = Artifacts::new();
    art.add("trace.jsonl", trace_bytes(&trace)?);
    let start_pose = cfg.scoring.start.map(|[x, y, t]| Pose2D::new(x, y, t));
    let map = emit_score_map(&trace.evaluated, &ws.grid, ws.oracle().as_ref(), start_pose.as_ref())?;
    art.add_png("score_map.png", &map)?;
    art.add_json(
        "summary.json",
        &OptimizeSummary {
            profile: ov.profile(cfg),
            seed: bo.seed,
            best_pose: trace.best_pose,
            best_height: trace.best_height,
            best_score: trace.best_score,
            best_index: trace.best_index,
            n_evaluated: trace.evaluated.len(),
            wall_time_s: elapsed,
            oracle: ws.oracle(),
            bo,
        },
    )?;
    art.commit(&ov.out_dir(cfg))
}

pub fn trace_bytes(trace: &OptimizationTrace) -> Result<Vec<u8>, CliError> {
    let mut bytes = Vec::new();
    write_jsonl(&trace.evaluated, &mut bytes)?;
    Ok(bytes)
}

#[derive(Debug, Serialize)]
struct RenderedView {
    name: String,
    object_pixels: Option<usize>,
    depth_hits: usize,
}

#[derive(Debug, Serialize)]
struct RenderSummary {
    pose: Pose2D,
    height: f64,
    views: Vec<RenderedView>,
}

/// Renders one pose from each selected view: `rgb_<view>.png`, `depth_<view>.png` (16-bit
/// millimeters), `mask_<view>.png` when the scene has an object, and `render.json`.
pub fn cmd_render(cfg: &RunConfig, ov: &Overrides, pose: &Pose2D, height: f64) -> Result<Vec<PathBuf>, CliError> {
    let ws = Workspace::load(cfg)?;
    let mut art = Artifacts::new();
    let mut views = Vec::new();
    for rig in ws.views(&ov.views(cfg))? {
        let cam = base_to_camera(pose, &rig.transform, height);
        let layers = render_with(&ws.scene, &cam, &ws.camera.intrinsics, &RenderOptions::default());
        art.add_png(&format!("rgb_{}.png", rig.name), &rgb8(&layers.rgb))?;
        art.add(&format!("depth_{}.png", rig.name), depth_png(&layers.depth)?);
        if let Some(mask) = &layers.object_mask {
            art.add_png(&format!("mask_{}.png", rig.name), &mask_rgb(mask))?;
        }
        views.push(RenderedView {
            name: rig.name.clone(),
            object_pixels: layers.object_mask.as_ref().map(|m| m.count()),
            depth_hits: layers.depth.values().iter().filter(|d| **d != ImageDepth::NO_HIT).count(),
        });
    }
    art.add_json("render.json", &RenderSummary { pose: *pose, height, views })?;
    art.commit(&ov.out_dir(cfg))
}

fn rgb8(img: &ImageRGB) -> RgbImage {
    RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let c = img.get(x as usize, y as usize);
        Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

fn mask_rgb(m: &Mask) -> RgbImage {
    RgbImage::from_fn(m.width() as u32, m.height() as u32, |x, y| if m.get(x as usize, y as usize) { Rgb([255; 3]) } else { Rgb([0; 3]) })
}

fn depth_png(d: &ImageDepth) -> Result<Vec<u8>, CliError> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(d.width() as u32, d.height() as u32, |x, y| {
        Luma([(d.get(x as usize, y as usize) as f64 * 1000.0).round().clamp(0.0, 65535.0) as u16])
    });
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).map_err(|e| CliError::config("png encoding failed", e.to_string()))?;
    Ok(buf.into_inner())
}

pub fn grid_image(grid: &OccupancyGrid) -> RgbImage {
    let (w, h) = grid.dims();
    RgbImage::from_fn(w as u32, h as u32, |x, y| if grid.get(x as usize, h - 1 - y as usize) == Cell::Free { FREE } else { OCCUPIED })
}

#[derive(Debug, Serialize)]
struct GridSummary {
    dims: (usize, usize),
    resolution: f64,
    origin: [f64; 2],
    height_band: (f64, f64),
    free: usize,
    occupied: usize,
    unknown: usize,
}

/// Writes the scene's occupancy grid (`grid.ogrd`), a one-pixel-per-cell `grid.png` and
/// `grid.json` with cell counts.
pub fn cmd_build_grid(cfg: &RunConfig, ov: &Overrides) -> Result<Vec<PathBuf>, CliError> {
    let ws = Workspace::load(cfg)?;
    let g = &ws.grid;
    let mut bytes = Vec::new();
    g.write_to(&mut bytes)?;
    let count = |c: Cell| g.cells().iter().filter(|x| **x == c).count();
    let mut art = Artifacts::new();
    art.add("grid.ogrd", bytes);
    art.add_png("grid.png", &grid_image(g))?;
    art.add_json(
        "grid.json",
        &GridSummary {
            dims: g.dims(),
            resolution: g.resolution(),
            origin: g.origin(),
            height_band: g.height_band(),
            free: count(Cell::Free),
            occupied: count(Cell::Occupied),
            unknown: count(Cell::Unknown),
        },
    )?;
    art.commit(&ov.out_dir(cfg))
}

#[derive(Debug, Serialize)]
struct EvaluateSummary {
    reports: Vec<EvalReport>,
    ours_poses: Vec<(usize, u64, Pose2D, f64)>,
    total_episodes: usize,
    wall_time_s: f64,
}

/// Runs the harness suite: `report.json`, `episodes.jsonl` and `bar_chart.json`.
/// `--seed` replaces the suite's seed list with that single seed.
pub fn cmd_evaluate(cfg: &RunConfig, ov: &Overrides) -> Result<Vec<PathBuf>, CliError> {
    let start = Instant::now();
    let mut suite = cfg.harness.clone();
    if let Some(s) = ov.seed {
        suite.seeds = vec![s];
    }
    let out = evaluate(&suite)?;
    let mut episodes = Vec::new();
    for (method, scene, seed, ep) in &out.episodes {
        serde_json::to_writer(&mut episodes, &serde_json::json!({ "method": method, "scene": scene, "seed": seed, "episode": ep }))?;
        episodes.push(b'\n');
    }
    let mut art = Artifacts::new();
    art.add("episodes.jsonl", episodes);
    art.add_json("bar_chart.json", &bar_chart_data(&out.reports))?;
    art.add_json(
        "report.json",
        &EvaluateSummary {
            reports: out.reports,
            ours_poses: out.ours_poses,
            total_episodes: suite.total_episodes(),
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    )?;
    art.commit(&ov.out_dir(cfg))
}

#[derive(Debug, Serialize)]
struct DecayReport {
    source: &'static str,
    samples: Vec<(f64, f64)>,
    episodes_per_sigma: Option<usize>,
    fit: DecayFit,
}

#[derive(Debug, Serialize)]
struct VisualPlot {
    /// Per-view object fraction, in view order.
    fractions: Vec<f64>,
    /// Views sorted by fraction, descending.
    sorted: Vec<f64>,
    s_v: f64,
}

/// Feasibility metrics: `decay.json` + `decay_plot.json` (spatial) and `visual.json` +
/// `visual_plot.json` (visual). Recorded inputs are used when configured; otherwise both are
/// measured on the synthetic room.
pub fn cmd_metrics(cfg: &RunConfig, ov: &Overrides) -> Result<Vec<PathBuf>, CliError> {
    let m = &cfg.metrics;
    let seed = ov.seed(cfg);
    let needs_scene = m.samples.is_none() || (m.views.is_empty() && cfg.paths.scene.is_none());
    let hs = if needs_scene { Some(generate_scene(&cfg.synthetic.scene, cfg.synthetic.seed)?) } else { None };

    let decay = match &m.samples {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let samples: Vec<(f64, f64)> = serde_json::from_str(&text).map_err(|e| CliError::config("invalid samples", format!("{}: {e}", path.display())))?;
            DecayReport { source: "file", fit: fit_decay(&samples)?, samples, episodes_per_sigma: None }
        }
        None => {
            let hs = hs.as_ref().expect("synthetic scene generated");
            let model = SuccessModel::new(hs.oracle, m.model.peak, [m.model.scale_xy, m.model.scale_xy, m.model.scale_theta_deg.to_radians()])?;
            let sigmas = m.sigmas.clone().unwrap_or_else(default_sigmas);
            let s = measure_spatial_feasibility(&model, &sigmas, m.episodes_per_sigma, seed)?;
            DecayReport { source: "synthetic", samples: s.samples, episodes_per_sigma: Some(s.episodes_per_sigma), fit: s.fit }
        }
    };
    let mut art = Artifacts::new();
    art.add_json("decay_plot.json", &decay_plot_data(&decay.samples, &decay.fit, 50))?;
    art.add_json("decay.json", &decay)?;

    let views: Vec<(ImageRGB, Mask)> = if !m.views.is_empty() {
        m.views
            .iter()
            .map(|v| {
                let img = ImageRGB::load(&v.image).map_err(|e| CliError::config("invalid view image", e.to_string()))?;
                let mask = Mask::load(&v.mask).map_err(|e| CliError::config("invalid view mask", e.to_string()))?;
                Ok((img, mask))
            })
            .collect::<Result<_, CliError>>()?
    } else if let Some(hs) = &hs {
        let scene_cfg = mobipose::harness::SceneConfig { demo_frames: m.n_views, ..cfg.synthetic.scene.clone() };
        hs.demo_poses(&scene_cfg, seed)
            .iter()
            .map(|p| {
                let cam = base_to_camera(p, &hs.rig.transform, 0.0);
                let l = render_with(&hs.scene, &cam, &hs.intrinsics, &RenderOptions::default());
                (l.rgb, l.object_mask.expect("synthetic scene is labeled"))
            })
            .collect()
    } else {
        log::warn!("no view files configured for a scene file; skipping visual feasibility");
        Vec::new()
    };
    if !views.is_empty() {
        let v = visual_feasibility(&views)?;
        let mut sorted = v.per_view.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        art.add_json("visual_plot.json", &VisualPlot { fractions: v.per_view.clone(), sorted, s_v: v.s_v })?;
        art.add_json("visual.json", &v)?;
    }
    art.commit(&ov.out_dir(cfg))
}

/// Re-draws a score map from a saved trace. The grid comes from `grid` or the configured scene.
pub fn cmd_score_map(
    cfg: &RunConfig,
    ov: &Overrides,
    trace: &Path,
    grid: Option<&Path>,
    oracle: Option<Pose2D>,
    start: Option<Pose2D>,
) -> Result<Vec<PathBuf>, CliError> {
    let text = std::fs::read_to_string(trace).map_err(|e| CliError::config("trace not found", format!("{}: {e}", trace.display())))?;
    let results: Vec<ScoreResult> = read_jsonl(&text)?;
    let (grid, ws_oracle) = match grid {
        Some(p) => (std::sync::Arc::new(OccupancyGrid::load(p)?), None),
        None => {
            let ws = Workspace::load(cfg)?;
            let o = ws.oracle();
            (ws.grid, o)
        }
    };
    let img = emit_score_map(&results, &grid, oracle.or(ws_oracle).as_ref(), start.as_ref())?;
    let mut art = Artifacts::new();
    art.add_png("score_map.png", &img)?;
    art.commit(&ov.out_dir(cfg))
}
