//! Synthetic end-to-end evaluation: generated rooms, planted success models, pose-selection
//! methods and seeded episode suites.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bopt::{optimize, BoConfig, BoError, OptimizationTrace, PoseBounds};
use crate::descriptor::{DemoDataset, DescriptorBackend, DescriptorError, PatchStat, DEFAULT_K};
use crate::geometry::{base_to_camera, wrap, CameraIntrinsics, NamedRig, Pose2D, RigidTransform};
use crate::metrics::PolicyTrial;
use crate::occupancy::{build_occupancy, Bounds2D, OccupancyError, OccupancyGrid, PosedDepth, RobotFootprint};
use crate::scoring::{MaskVisibility, ScoringContext, ScoringError, VisibilityBackend};
use crate::splat::{render_with, synthesize_scene, Primitive, RenderOptions, SceneSpec, Shape, SplatError, SplatScene};

/// Navigation counts as successful within this distance of the oracle pose.
pub const NAV_SUCCESS_RADIUS: f64 = 0.5;
const START_TRIES: usize = 1000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("no valid start pose after {0} tries")]
    NoStartPose(usize),
    #[error(transparent)]
    Scene(#[from] SplatError),
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Optimizer(#[from] BoError),
}

/// q(p) = q₀ · exp(−½[(Δx/s_x)² + (Δy/s_y)² + (Δθ/s_θ)²]) around the oracle pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessModel {
    pub oracle: Pose2D,
    pub peak: f64,
    /// (s_x, s_y, s_θ) in meters, meters, radians.
    pub scales: [f64; 3],
}

impl SuccessModel {
    pub fn new(oracle: Pose2D, peak: f64, scales: [f64; 3]) -> Result<Self, HarnessError> {
        if !(peak > 0.0 && peak <= 1.0) {
            return Err(HarnessError::Config(format!("peak success {peak} outside (0, 1]")));
        }
        if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(HarnessError::Config(format!("bad success-model scales {scales:?}")));
        }
        Ok(Self { oracle: oracle.normalized(), peak, scales })
    }

    pub fn probability(&self, p: &Pose2D) -> f64 {
        let dx = (p.x - self.oracle.x) / self.scales[0];
        let dy = (p.y - self.oracle.y) / self.scales[1];
        let dt = wrap(p.theta - self.oracle.theta) / self.scales[2];
        self.peak * (-0.5 * (dx * dx + dy * dy + dt * dt)).exp()
    }
}

impl PolicyTrial for SuccessModel {
    fn nominal_pose(&self) -> Pose2D {
        self.oracle
    }

    fn attempt(&self, start: &Pose2D, rng: &mut ChaCha8Rng) -> bool {
        rng.random::<f64>() < self.probability(start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraSetup {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    /// Camera position in the base frame.
    pub mount: [f64; 3],
    pub pitch_down_deg: f64,
}

impl Default for CameraSetup {
    fn default() -> Self {
        Self { width: 128, height: 96, hfov_deg: 70.0, mount: [0.15, 0.0, 1.1], pitch_down_deg: 30.0 }
    }
}

impl CameraSetup {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, HarnessError> {
        CameraIntrinsics::from_fov(self.width, self.height, self.hfov_deg.to_radians()).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn rig(&self) -> NamedRig {
        NamedRig { name: "main".into(), transform: RigidTransform::camera_mount(self.mount, 0.0, self.pitch_down_deg.to_radians()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Room interior extent (x, y) in meters, centered on the origin.
    pub room: [f64; 2],
    /// Surface Gaussians per m² (walls use 60% of it).
    pub density: f64,
    pub n_obstacles: usize,
    /// Distance from the object to the oracle base pose.
    pub oracle_standoff: f64,
    pub start_distance: (f64, f64),
    /// Start poses lie within ± this bearing (degrees) of the object-to-oracle direction.
    pub start_bearing_deg: f64,
    pub start_heading_noise_deg: f64,
    pub grid_resolution: f64,
    pub footprint_radius: f64,
    pub camera: CameraSetup,
    pub demo_frames: usize,
    /// Demo start poses are drawn within this distance (m) and heading (degrees) of the oracle.
    pub demo_jitter: (f64, f64),
    /// Half-width of the square optimization region around the object.
    pub search_radius: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            room: [5.0, 5.0],
            density: 100.0,
            n_obstacles: 3,
            oracle_standoff: 0.7,
            start_distance: (1.5, 2.5),
            start_bearing_deg: 20.0,
            start_heading_noise_deg: 15.0,
            grid_resolution: 0.05,
            footprint_radius: 0.35,
            camera: CameraSetup::default(),
            demo_frames: 30,
            demo_jitter: (0.05, 5.0),
            search_radius: 1.0,
        }
    }
}

/// A generated room with its oracle pose, occupancy grid and camera.
#[derive(Debug, Clone)]
pub struct HarnessScene {
    pub seed: u64,
    pub spec: SceneSpec,
    pub scene: Arc<SplatScene>,
    pub object_center: [f64; 3],
    pub oracle: Pose2D,
    pub grid: Arc<OccupancyGrid>,
    pub footprint: RobotFootprint,
    pub intrinsics: CameraIntrinsics,
    pub rig: NamedRig,
    pub search_bounds: PoseBounds,
}

/// SplitMix64 finalizer over a combined pair; used to derive independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const PALETTE: [[f64; 3]; 6] = [[0.75, 0.35, 0.30], [0.30, 0.55, 0.75], [0.40, 0.70, 0.35], [0.80, 0.70, 0.30], [0.55, 0.40, 0.70], [0.35, 0.65, 0.65]];

/// Room layout: checkered floor and walls, a table against one wall with the tagged object
/// near its front edge, a few props on the table and random obstacle boxes.
pub fn scene_spec(cfg: &SceneConfig, seed: u64) -> Result<(SceneSpec, [f64; 3], Pose2D), HarnessError> {
    let [rx, ry] = cfg.room;
    if !(rx >= 3.0 && ry >= 3.0) {
        return Err(HarnessError::Config(format!("room {:?} is smaller than 3 m", cfg.room)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hx, hy) = (rx / 2.0, ry / 2.0);
    let wall_density = cfg.density * 0.6;
    let mut prims = vec![Primitive::new(Shape::Plane { size: [rx, ry] }, [0.0, 0.0, 0.0], [0.62, 0.6, 0.55]).checker(0.5)];
    let wall_h = 2.0;
    for (i, (c, size)) in [
        ([hx + 0.025, 0.0, wall_h / 2.0], [0.05, ry + 0.1, wall_h]),
        ([-hx - 0.025, 0.0, wall_h / 2.0], [0.05, ry + 0.1, wall_h]),
        ([0.0, hy + 0.025, wall_h / 2.0], [rx + 0.1, 0.05, wall_h]),
        ([0.0, -hy - 0.025, wall_h / 2.0], [rx + 0.1, 0.05, wall_h]),
    ]
    .into_iter()
    .enumerate()
    {
        prims.push(Primitive::new(Shape::Box { size }, c, PALETTE[(i + seed as usize) % PALETTE.len()]).density(wall_density).checker(0.4));
    }

    // Table against a random wall, front facing into the room.
    let wall = rng.random_range(0..4);
    let inward = [PI, 0.0, -PI / 2.0, PI / 2.0][wall];
    let front = inward + rng.random_range(-15f64..15.0).to_radians();
    let (f, along) = (Vector3::new(front.cos(), front.sin(), 0.0), rng.random_range(-1.0..1.0));
    let wall_dir = Vector3::new(-inward.sin(), inward.cos(), 0.0);
    let half_extent = if wall < 2 { hx } else { hy };
    let table_depth = 0.6;
    let table_c = -Vector3::new(inward.cos(), inward.sin(), 0.0) * (half_extent - 0.45) + wall_dir * along;
    prims.push(Primitive::new(Shape::Box { size: [table_depth, 0.9, 0.75] }, [table_c.x, table_c.y, 0.375], [0.5, 0.35, 0.2]).yaw(front).checker(0.15));
    let obj_xy = table_c + f * (table_depth / 2.0 - 0.12);
    let object_center = [obj_xy.x, obj_xy.y, 0.75 + 0.1];
    prims.push(Primitive::new(Shape::Box { size: [0.2, 0.2, 0.2] }, object_center, [0.85, 0.15, 0.15]).yaw(front).tagged("target"));
    let side = Vector3::new(-f.y, f.x, 0.0);
    let prop_a = table_c + side * 0.3 - f * 0.05;
    prims.push(Primitive::new(Shape::Sphere { radius: 0.08 }, [prop_a.x, prop_a.y, 0.83], [0.2, 0.4, 0.8]));
    let prop_b = table_c - side * 0.3;
    prims.push(Primitive::new(Shape::Box { size: [0.12, 0.25, 0.3] }, [prop_b.x, prop_b.y, 0.9], [0.9, 0.8, 0.2]).yaw(front));

    let oracle_xy = obj_xy + f * cfg.oracle_standoff;
    let oracle = Pose2D::new(oracle_xy.x, oracle_xy.y, wrap(front + PI));

    let mut placed = 0;
    for _ in 0..200 {
        if placed == cfg.n_obstacles {
            break;
        }
        let size = [rng.random_range(0.3..0.6), rng.random_range(0.3..0.6), rng.random_range(0.4..1.0)];
        let c = Vector3::new(rng.random_range(-hx + 0.5..hx - 0.5), rng.random_range(-hy + 0.5..hy - 0.5), size[2] / 2.0);
        let flat = Vector3::new(c.x, c.y, 0.0);
        if (flat - oracle_xy).norm() < 1.3 || (flat - table_c).norm() < 1.2 {
            continue;
        }
        let color = PALETTE[rng.random_range(0..PALETTE.len())];
        prims.push(Primitive::new(Shape::Box { size }, [c.x, c.y, c.z], color).yaw(rng.random_range(-PI..PI)).checker(0.2));
        placed += 1;
    }
    let mut spec = SceneSpec::new(cfg.density, prims);
    spec.seed = seed;
    spec.background = [0.9, 0.9, 0.92];
    Ok((spec, object_center, oracle))
}

/// Height of the survey cameras above the floor.
pub const SURVEY_HEIGHT: f64 = 1.9;

/// Depth views used to map a region: downward-looking cameras at `height` above a 5×5 grid of
/// positions spanning the middle 72% of `bounds`, two headings each. Seen face-on, flat splats
/// give accurate depth.
pub fn survey_views(bounds: &Bounds2D, height: f64) -> Result<Vec<(RigidTransform, CameraIntrinsics)>, HarnessError> {
    let k = CameraIntrinsics::from_fov(96, 72, 100f64.to_radians()).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mount = RigidTransform::camera_mount([0.0, 0.0, height], 0.0, PI / 2.0);
    let c = [(bounds.min[0] + bounds.max[0]) / 2.0, (bounds.min[1] + bounds.max[1]) / 2.0];
    let ext = [bounds.max[0] - bounds.min[0], bounds.max[1] - bounds.min[1]];
    let mut out = Vec::new();
    for ix in -2..=2 {
        for iy in -2..=2 {
            for h in 0..2 {
                let p = Pose2D::new(c[0] + ix as f64 * ext[0] * 0.18, c[1] + iy as f64 * ext[1] * 0.18, h as f64 * PI / 2.0);
                out.push((base_to_camera(&p, &mount, 0.0), k));
            }
        }
    }
    Ok(out)
}

/// Occupancy grid over `bounds` from median-depth renders of the survey views.
pub fn survey_grid(scene: &SplatScene, bounds: Bounds2D, resolution: f64, height: f64) -> Result<OccupancyGrid, HarnessError> {
    let opts = RenderOptions { median_depth: true, ..RenderOptions::default() };
    let depth: Vec<PosedDepth> = survey_views(&bounds, height)?
        .into_iter()
        .map(|(camera, intrinsics)| PosedDepth { depth: render_with(scene, &camera, &intrinsics, &opts).depth, camera, intrinsics })
        .collect();
    Ok(build_occupancy(&depth, resolution, crate::occupancy::DEFAULT_HEIGHT_BAND, bounds)?)
}

pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<HarnessScene, HarnessError> {
    let (spec, object_center, oracle) = scene_spec(cfg, seed)?;
    let scene = Arc::new(synthesize_scene(&spec)?);
    let [hx, hy] = [cfg.room[0] / 2.0, cfg.room[1] / 2.0];
    let grid = survey_grid(&scene, Bounds2D { min: [-hx, -hy], max: [hx, hy] }, cfg.grid_resolution, SURVEY_HEIGHT)?;
    let r = cfg.search_radius;
    let search_bounds =
        PoseBounds::new(((object_center[0] - r).max(-hx), (object_center[0] + r).min(hx)), ((object_center[1] - r).max(-hy), (object_center[1] + r).min(hy)));
    Ok(HarnessScene {
        seed,
        spec,
        scene,
        object_center,
        oracle,
        grid: Arc::new(grid),
        footprint: RobotFootprint::new(cfg.footprint_radius)?,
        intrinsics: cfg.camera.intrinsics()?,
        rig: cfg.camera.rig(),
        search_bounds,
    })
}

impl HarnessScene {
    pub fn render_rgb(&self, p: &Pose2D) -> crate::imaging::ImageRGB {
        render_with(&self.scene, &base_to_camera(p, &self.rig.transform, 0.0), &self.intrinsics, &RenderOptions::default()).rgb
    }

    /// Whether the object passes the reference visibility gate from base pose `p`.
    pub fn object_visible(&self, p: &Pose2D) -> Result<bool, HarnessError> {
        let cam = base_to_camera(p, &self.rig.transform, 0.0);
        let view = render_with(&self.scene, &cam, &self.intrinsics, &RenderOptions::default());
        Ok(MaskVisibility::default().object_visible(&self.scene, &view, "target")?)
    }

    pub fn demo_poses(&self, cfg: &SceneConfig, seed: u64) -> Vec<Pose2D> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, deg) = cfg.demo_jitter;
        (0..cfg.demo_frames)
            .map(|_| {
                let rho = r * rng.random::<f64>().sqrt();
                let a = rng.random_range(-PI..PI);
                let dt = rng.random_range(-deg..=deg).to_radians();
                Pose2D::new(self.oracle.x + rho * a.cos(), self.oracle.y + rho * a.sin(), wrap(self.oracle.theta + dt))
            })
            .collect()
    }

    /// Demo start frames rendered near the oracle pose.
    pub fn demo_dataset(&self, cfg: &SceneConfig, seed: u64, backend: &dyn DescriptorBackend) -> Result<DemoDataset, HarnessError> {
        let frames = self.demo_poses(cfg, seed).iter().map(|p| (self.render_rgb(p), None)).collect();
        Ok(DemoDataset::from_frames(frames, backend)?)
    }

    pub fn scoring_context(&self, dataset: DemoDataset, backend: Arc<dyn DescriptorBackend>) -> Result<ScoringContext, HarnessError> {
        let tau = dataset.calibrate_tau()?;
        let ctx = ScoringContext {
            scene: self.scene.clone(),
            grid: self.grid.clone(),
            footprint: self.footprint,
            k: DEFAULT_K.min(dataset.len()),
            dataset: Arc::new(dataset),
            descriptor: backend,
            visibility: Arc::new(MaskVisibility::default()),
            views: vec![self.rig.clone()],
            intrinsics: self.intrinsics,
            tau,
            render: RenderOptions::default(),
        };
        ctx.validate()?;
        Ok(ctx)
    }

    /// Rejection-samples a collision-free start pose with the object in view.
    pub fn sample_start(&self, cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<Pose2D, HarnessError> {
        let (ox, oy) = (self.object_center[0], self.object_center[1]);
        let bearing = (self.oracle.y - oy).atan2(self.oracle.x - ox);
        let spread = cfg.start_bearing_deg.to_radians();
        let noise = cfg.start_heading_noise_deg.to_radians();
        for _ in 0..START_TRIES {
            let b = bearing + rng.random_range(-spread..=spread);
            let d = rng.random_range(cfg.start_distance.0..=cfg.start_distance.1);
            let (x, y) = (ox + d * b.cos(), oy + d * b.sin());
            let facing = (oy - y).atan2(ox - x);
            let p = Pose2D::new(x, y, wrap(facing + rng.random_range(-noise..=noise)));
            if self.grid.clearance(&p, &self.footprint).is_free() && self.object_visible(&p)? {
                return Ok(p);
            }
        }
        Err(HarnessError::NoStartPose(START_TRIES))
    }
}

/// Chooses an execution pose given the robot's start pose.
pub trait PoseSelector {
    fn label(&self) -> &str;
    fn choose(&self, start: &Pose2D) -> Result<Pose2D, HarnessError>;
}

pub struct Teleport(pub Pose2D);

impl PoseSelector for Teleport {
    fn label(&self) -> &str {
        "teleport"
    }

    fn choose(&self, _start: &Pose2D) -> Result<Pose2D, HarnessError> {
        Ok(self.0)
    }
}

pub struct Stay;

impl PoseSelector for Stay {
    fn label(&self) -> &str {
        "stay"
    }

    fn choose(&self, start: &Pose2D) -> Result<Pose2D, HarnessError> {
        Ok(*start)
    }
}

/// A pose computed once (e.g. by the optimizer) and used regardless of the start.
pub struct Fixed {
    pub label: String,
    pub pose: Pose2D,
}

impl PoseSelector for Fixed {
    fn label(&self) -> &str {
        &self.label
    }

    fn choose(&self, _start: &Pose2D) -> Result<Pose2D, HarnessError> {
        Ok(self.pose)
    }
}

/// Drives toward the known object position and stops at a fixed standoff, facing it.
pub struct NaiveApproach {
    pub object: [f64; 2],
    pub grid: Arc<OccupancyGrid>,
    pub footprint: RobotFootprint,
    pub standoff: f64,
}

pub const NAIVE_STANDOFF: f64 = 0.6;
const NAIVE_ANGLES: usize = 180;
const NAIVE_MAX_EXTRA: f64 = 3.0;

impl NaiveApproach {
    fn facing(&self, x: f64, y: f64) -> Pose2D {
        Pose2D::new(x, y, (self.object[1] - y).atan2(self.object[0] - x))
    }
}

impl PoseSelector for NaiveApproach {
    fn label(&self) -> &str {
        "naive"
    }

    /// Walks rings outward from the standoff in grid-resolution steps; on the first ring with a
    /// free pose, returns the free pose nearest the start. With no free pose anywhere, falls back
    /// to the sampled pose farthest from any blocked cell.
    fn choose(&self, start: &Pose2D) -> Result<Pose2D, HarnessError> {
        let step = self.grid.resolution();
        let rings = (NAIVE_MAX_EXTRA / step).ceil() as usize;
        let mut fallback: Option<(f64, Pose2D)> = None;
        for ring in 0..=rings {
            let r = self.standoff + ring as f64 * step;
            let mut best: Option<(f64, Pose2D)> = None;
            for i in 0..NAIVE_ANGLES {
                let a = 2.0 * PI * i as f64 / NAIVE_ANGLES as f64;
                let p = self.facing(self.object[0] + r * a.cos(), self.object[1] + r * a.sin());
                if self.grid.clearance(&p, &self.footprint).is_free() {
                    let d = p.distance_xy(start);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, p));
                    }
                } else if self.grid.cell_of(p.x, p.y).is_some() && ring % 10 == 0 {
                    let c = self.grid.clearance_distance(p.x, p.y);
                    if fallback.is_none_or(|(bc, _)| c > bc) {
                        fallback = Some((c, p));
                    }
                }
            }
            if let Some((_, p)) = best {
                return Ok(p);
            }
        }
        fallback.map(|(_, p)| p).ok_or_else(|| HarnessError::Config("naive approach found no candidate inside the grid".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub start_pose: Pose2D,
    pub chosen_pose: Pose2D,
    pub nav_success: bool,
    pub exec_success: bool,
    pub collision: bool,
    pub success_probability: f64,
    pub seed: u64,
}

/// One episode: sample the start, let the method choose, check collision, draw success.
///
/// The start pose and the success draw come from the same seeded stream, so different methods
/// run with the same `seed` share both (common random numbers).
pub fn run_episode(method: &dyn PoseSelector, hs: &HarnessScene, cfg: &SceneConfig, model: &SuccessModel, seed: u64) -> Result<EpisodeResult, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = hs.sample_start(cfg, &mut rng)?;
    let u: f64 = rng.random();
    let chosen = method.choose(&start)?;
    Ok(episode_outcome(start, chosen, &hs.grid, &hs.footprint, model, u, seed))
}

/// Grades a chosen pose: collision on the grid, then success iff `u < q(chosen)`.
pub fn episode_outcome(
    start: Pose2D,
    chosen: Pose2D,
    grid: &OccupancyGrid,
    footprint: &RobotFootprint,
    model: &SuccessModel,
    u: f64,
    seed: u64,
) -> EpisodeResult {
    let chosen = chosen.normalized();
    let collision = !grid.clearance(&chosen, footprint).is_free();
    let q = model.probability(&chosen);
    EpisodeResult {
        start_pose: start,
        chosen_pose: chosen,
        nav_success: chosen.is_finite() && chosen.distance_xy(&model.oracle) <= NAV_SUCCESS_RADIUS,
        exec_success: !collision && chosen.is_finite() && u < q,
        collision,
        success_probability: q,
        seed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Ours,
    Naive,
    Stay,
    Teleport,
}

impl MethodKind {
    pub fn label(self) -> &'static str {
        match self {
            MethodKind::Ours => "ours",
            MethodKind::Naive => "naive",
            MethodKind::Stay => "stay",
            MethodKind::Teleport => "teleport",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub peak: f64,
    pub scale_xy: f64,
    pub scale_theta_deg: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { peak: 0.8, scale_xy: 0.1, scale_theta_deg: 10.0 }
    }
}

/// Optimizer budget for the "ours" method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OursConfig {
    pub n_init: usize,
    pub n_iter: usize,
    pub n_batch: usize,
    pub kappa: f64,
}

impl Default for OursConfig {
    fn default() -> Self {
        Self { n_init: 300, n_iter: 40, n_batch: 5, kappa: 1.96 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub scenes: usize,
    pub seeds: Vec<u64>,
    pub episodes_per_scene: usize,
    /// Base seed from which scene layouts are derived.
    pub scene_seed: u64,
    pub scene: SceneConfig,
    pub model: ModelConfig,
    pub ours: OursConfig,
    pub methods: Vec<MethodKind>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            scenes: 10,
            seeds: vec![0, 1, 2],
            episodes_per_scene: 5,
            scene_seed: 0,
            scene: SceneConfig::default(),
            model: ModelConfig::default(),
            ours: OursConfig::default(),
            methods: vec![MethodKind::Ours, MethodKind::Naive, MethodKind::Stay, MethodKind::Teleport],
        }
    }
}

impl SuiteConfig {
    pub fn total_episodes(&self) -> usize {
        self.scenes * self.seeds.len() * self.episodes_per_scene
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.scenes == 0 || self.seeds.is_empty() || self.episodes_per_scene == 0 || self.methods.is_empty() {
            return Err(HarnessError::Config("suite needs at least one scene, seed, episode and method".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n − 1) over per-seed rates; 0 for a single seed.
    pub std: f64,
    pub episodes: usize,
    pub nav_rate: f64,
    pub collision_rate: f64,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn from_episodes(method: &str, per_seed: &[Vec<EpisodeResult>]) -> Self {
        let rates: Vec<f64> = per_seed.iter().map(|eps| eps.iter().filter(|e| e.exec_success).count() as f64 / eps.len().max(1) as f64).collect();
        let all: Vec<&EpisodeResult> = per_seed.iter().flatten().collect();
        let n = all.len().max(1) as f64;
        let (mean, std) = mean_std(&rates);
        Self {
            method: method.into(),
            per_seed: rates,
            mean,
            std,
            episodes: all.len(),
            nav_rate: all.iter().filter(|e| e.nav_success).count() as f64 / n,
            collision_rate: all.iter().filter(|e| e.collision).count() as f64 / n,
        }
    }
}

/// Everything produced by a suite run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub reports: Vec<EvalReport>,
    /// (method, scene index, seed, episode) for every episode run.
    pub episodes: Vec<(String, usize, u64, EpisodeResult)>,
    /// The optimizer's pose per (scene index, seed), when "ours" ran.
    pub ours_poses: Vec<(usize, u64, Pose2D, f64)>,
}

/// Bar-chart rows: method, mean, std.
pub fn bar_chart_data(reports: &[EvalReport]) -> Vec<(String, f64, f64)> {
    reports.iter().map(|r| (r.method.clone(), r.mean, r.std)).collect()
}

/// Runs the optimizer for one scene; returns the trace.
pub fn optimize_scene(hs: &HarnessScene, cfg: &SceneConfig, ours: &OursConfig, seed: u64) -> Result<OptimizationTrace, HarnessError> {
    let backend: Arc<dyn DescriptorBackend> = Arc::new(PatchStat);
    let dataset = hs.demo_dataset(cfg, mix_seed(hs.seed, 0xD0), backend.as_ref())?;
    let ctx = hs.scoring_context(dataset, backend)?;
    let mut bo = BoConfig::new(ours.n_init, ours.n_iter, ours.n_batch, ours.kappa, hs.search_bounds);
    bo.seed = seed;
    Ok(optimize(&ctx, &bo)?)
}

pub fn evaluate(suite: &SuiteConfig) -> Result<SuiteOutcome, HarnessError> {
    suite.validate()?;
    let scale = [suite.model.scale_xy, suite.model.scale_xy, suite.model.scale_theta_deg.to_radians()];
    let mut per_method: Vec<Vec<Vec<EpisodeResult>>> = vec![vec![Vec::new(); suite.seeds.len()]; suite.methods.len()];
    let mut episodes = Vec::new();
    let mut ours_poses = Vec::new();
    for scene_idx in 0..suite.scenes {
        let hs = generate_scene(&suite.scene, mix_seed(suite.scene_seed, scene_idx as u64))?;
        let model = SuccessModel::new(hs.oracle, suite.model.peak, scale)?;
        for (si, &seed) in suite.seeds.iter().enumerate() {
            let run_seed = mix_seed(seed, scene_idx as u64);
            for (mi, kind) in suite.methods.iter().enumerate() {
                let selector: Box<dyn PoseSelector> = match kind {
                    MethodKind::Ours => {
                        let trace = optimize_scene(&hs, &suite.scene, &suite.ours, run_seed)?;
                        log::info!("scene {scene_idx} seed {seed}: optimizer best {:.4} at {:?}", trace.best_score, trace.best_pose);
                        ours_poses.push((scene_idx, seed, trace.best_pose, trace.best_score));
                        Box::new(Fixed { label: "ours".into(), pose: trace.best_pose })
                    }
                    MethodKind::Naive => Box::new(NaiveApproach {
                        object: [hs.object_center[0], hs.object_center[1]],
                        grid: hs.grid.clone(),
                        footprint: hs.footprint,
                        standoff: NAIVE_STANDOFF,
                    }),
                    MethodKind::Stay => Box::new(Stay),
                    MethodKind::Teleport => Box::new(Teleport(hs.oracle)),
                };
                for ep in 0..suite.episodes_per_scene {
                    let ep_seed = mix_seed(run_seed, ep as u64);
                    let r = run_episode(selector.as_ref(), &hs, &suite.scene, &model, ep_seed)?;
                    episodes.push((kind.label().to_string(), scene_idx, seed, r.clone()));
                    per_method[mi][si].push(r);
                }
            }
        }
    }
    let reports = suite.methods.iter().zip(&per_method).map(|(k, eps)| EvalReport::from_episodes(k.label(), eps)).collect();
    Ok(SuiteOutcome { reports, episodes, ours_poses })
}
