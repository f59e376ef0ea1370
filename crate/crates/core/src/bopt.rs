//! Gaussian-process Bayesian optimization of base poses with a UCB acquisition.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap, Pose2D};
use crate::scoring::{ScoreResult, ScoringContext, ScoringError};

/// Candidates closer than this in the embedded space count as already evaluated.
pub const DUPLICATE_EPS: f64 = 1e-6;
const MAX_POOL_ROUNDS: usize = 16;
/// Local candidates are drawn around this many of the best observations (at least n_batch).
const LOCAL_ANCHORS: usize = 5;
/// Perturbation standard deviations, as fractions of each dimension's range.
const LOCAL_SCALES: [f64; 2] = [0.05, 0.01];

#[derive(Debug, Error)]
pub enum BoError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("kernel matrix is not positive definite even with jitter {0:e}")]
    Singular(f64),
    #[error("no candidate poses survive the exclusion zones")]
    NoCandidates,
    #[error(transparent)]
    Objective(#[from] ScoringError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_var: f64,
    pub length_scale: f64,
    pub noise_var: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self { signal_var: 1.0, length_scale: 0.2, noise_var: 1e-4 }
    }
}

impl KernelParams {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_var * (-0.5 * d2 / (self.length_scale * self.length_scale)).exp()
    }
}

/// Search box. Heading always spans a full turn; `height` is used only when height optimization is on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseBounds {
    pub x: (f64, f64),
    pub y: (f64, f64),
    #[serde(default)]
    pub height: Option<(f64, f64)>,
}

impl PoseBounds {
    pub fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        Self { x, y, height: None }
    }

    fn validate(&self, optimize_height: bool) -> Result<(), BoError> {
        let ok = |r: (f64, f64)| r.0 < r.1 && r.0.is_finite() && r.1.is_finite();
        if !ok(self.x) || !ok(self.y) {
            return Err(BoError::Config(format!("bad bounds {self:?}")));
        }
        match (optimize_height, self.height) {
            (true, None) => Err(BoError::Config("height optimization needs height bounds".into())),
            (true, Some(h)) if !ok(h) => Err(BoError::Config(format!("bad height bounds {h:?}"))),
            _ => Ok(()),
        }
    }
}

/// A disc in the xy-plane that sampling must avoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExclusionZone {
    pub center: Pose2D,
    pub radius: f64,
}

impl ExclusionZone {
    pub fn contains(&self, p: &Pose2D) -> bool {
        self.center.distance_xy(p) < self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub n_init: usize,
    pub n_iter: usize,
    pub n_batch: usize,
    pub kappa: f64,
    pub bounds: PoseBounds,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_pool")]
    pub candidate_pool: usize,
    #[serde(default)]
    pub exclusion_zones: Vec<ExclusionZone>,
    #[serde(default)]
    pub optimize_height: bool,
    #[serde(default)]
    pub kernel: KernelParams,
    /// Share of each candidate pool drawn near the best observations.
    #[serde(default = "default_local_fraction")]
    pub local_fraction: f64,
    /// Cap on GP observations; zero-score points are subsampled first.
    #[serde(default)]
    pub max_observations: Option<usize>,
}

fn default_pool() -> usize {
    1024
}

fn default_local_fraction() -> f64 {
    0.5
}

impl BoConfig {
    pub fn new(n_init: usize, n_iter: usize, n_batch: usize, kappa: f64, bounds: PoseBounds) -> Self {
        Self {
            n_init,
            n_iter,
            n_batch,
            kappa,
            bounds,
            seed: 0,
            candidate_pool: default_pool(),
            exclusion_zones: Vec::new(),
            optimize_height: false,
            kernel: KernelParams::default(),
            local_fraction: default_local_fraction(),
            max_observations: None,
        }
    }

    /// Simulation preset: 2500 initial samples, 100 rounds of 5, κ = 1.96.
    pub fn sim(bounds: PoseBounds) -> Self {
        Self { max_observations: Some(1000), ..Self::new(2500, 100, 5, 1.96, bounds) }
    }

    /// Real-robot preset: 1000 initial samples, κ = 0.5.
    pub fn real(bounds: PoseBounds) -> Self {
        Self { max_observations: Some(1000), ..Self::new(1000, 100, 5, 0.5, bounds) }
    }

    pub fn validate(&self) -> Result<(), BoError> {
        if self.n_init == 0 || self.n_iter == 0 || self.n_batch == 0 || self.candidate_pool == 0 {
            return Err(BoError::Config("n_init, n_iter, n_batch and candidate_pool must be at least 1".into()));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(BoError::Config(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        let k = &self.kernel;
        if !(k.signal_var > 0.0 && k.length_scale > 0.0 && k.noise_var >= 0.0) {
            return Err(BoError::Config(format!("bad kernel parameters {k:?}")));
        }
        if !(0.0..=1.0).contains(&self.local_fraction) {
            return Err(BoError::Config(format!("local_fraction must be in [0, 1], got {}", self.local_fraction)));
        }
        if self.max_observations == Some(0) {
            return Err(BoError::Config("max_observations must be at least 1".into()));
        }
        self.bounds.validate(self.optimize_height)
    }

    fn excluded(&self, p: &Pose2D) -> bool {
        self.exclusion_zones.iter().any(|z| z.contains(p))
    }

    fn sample_pose(&self, rng: &mut ChaCha8Rng) -> (Pose2D, Option<f64>) {
        let b = &self.bounds;
        let p = Pose2D::new(rng.random_range(b.x.0..b.x.1), rng.random_range(b.y.0..b.y.1), rng.random_range(-PI..PI));
        let h = if self.optimize_height { b.height.map(|r| rng.random_range(r.0..r.1)) } else { None };
        (p, h)
    }
}

/// (x, y, sin θ, cos θ[, h]) with every coordinate mapped to [0, 1].
pub fn embed_pose(p: &Pose2D, height: Option<f64>, bounds: &PoseBounds) -> Vec<f64> {
    let unit = |v: f64, r: (f64, f64)| (v - r.0) / (r.1 - r.0);
    let mut e = vec![unit(p.x, bounds.x), unit(p.y, bounds.y), 0.5 * (p.theta.sin() + 1.0), 0.5 * (p.theta.cos() + 1.0)];
    if let (Some(h), Some(r)) = (height, bounds.height) {
        e.push(unit(h, r));
    }
    e
}

/// Exact GP regression with fixed hyperparameters and zero prior mean.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    params: KernelParams,
    points: Vec<Vec<f64>>,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpSurrogate {
    pub fn fit(points: Vec<Vec<f64>>, values: &[f64], params: KernelParams) -> Result<Self, BoError> {
        if points.is_empty() || points.len() != values.len() {
            return Err(BoError::Config(format!("{} points, {} values", points.len(), values.len())));
        }
        let n = points.len();
        let gram = DMatrix::from_fn(n, n, |i, j| params.eval(&points[i], &points[j]));
        let mut jitter = 0.0;
        let chol = loop {
            let mut m = gram.clone();
            for i in 0..n {
                m[(i, i)] += params.noise_var + jitter;
            }
            if let Some(c) = Cholesky::<f64, Dyn>::new(m) {
                break c;
            }
            jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
            if jitter > 1e-2 {
                return Err(BoError::Singular(jitter));
            }
            log::debug!("kernel matrix not positive definite, jitter {jitter:e}");
        };
        let alpha = chol.solve(&DVector::from_column_slice(values));
        Ok(Self { params, points, chol_l: chol.l(), alpha, jitter })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Diagonal jitter that was needed beyond the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Posterior mean and variance of the latent function.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        self.predict_many(&[x.to_vec()])[0]
    }

    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Vec<(f64, f64)> {
        let n = self.points.len();
        let kstar = DMatrix::from_fn(n, xs.len(), |i, j| self.params.eval(&self.points[i], &xs[j]));
        let mean = kstar.transpose() * &self.alpha;
        let v = self.chol_l.solve_lower_triangular(&kstar).expect("cholesky factor has a positive diagonal");
        (0..xs.len())
            .map(|j| {
                let reduction = v.column(j).norm_squared();
                (mean[j], (self.params.signal_var - reduction).max(0.0))
            })
            .collect()
    }
}

pub fn ucb(gp: &GpSurrogate, x: &[f64], kappa: f64) -> f64 {
    let (m, v) = gp.predict(x);
    m + kappa * v.sqrt()
}

/// One round of raw candidates: a `local_fraction` share are Gaussian perturbations of the
/// best observations so far, the rest are uniform over the bounds.
pub fn candidate_pool(observed: &[ScoreResult], config: &BoConfig, rng: &mut ChaCha8Rng) -> Vec<(Pose2D, Option<f64>)> {
    let mut top: Vec<&ScoreResult> = observed.iter().filter(|r| r.combined > 0.0).collect();
    top.sort_by(|a, b| b.combined.total_cmp(&a.combined));
    top.truncate(config.n_batch.max(LOCAL_ANCHORS));
    let n_local = if top.is_empty() { 0 } else { (config.candidate_pool as f64 * config.local_fraction).round() as usize };
    let b = &config.bounds;
    let mut pool = Vec::with_capacity(config.candidate_pool);
    for i in 0..config.candidate_pool {
        if i >= n_local {
            pool.push(config.sample_pose(rng));
            continue;
        }
        let anchor = top[rng.random_range(0..top.len())];
        let scale = LOCAL_SCALES[rng.random_range(0..LOCAL_SCALES.len())];
        let mut step = |span: f64| scale * span * rng.sample::<f64, _>(StandardNormal);
        let x = (anchor.pose.x + step(b.x.1 - b.x.0)).clamp(b.x.0, b.x.1);
        let y = (anchor.pose.y + step(b.y.1 - b.y.0)).clamp(b.y.0, b.y.1);
        let theta = wrap(anchor.pose.theta + step(2.0 * PI));
        let h = match (config.optimize_height, b.height, anchor.height) {
            (true, Some(r), Some(h)) => Some((h + step(r.1 - r.0)).clamp(r.0, r.1)),
            (true, Some(r), None) => Some(rng.random_range(r.0..r.1)),
            _ => None,
        };
        pool.push((Pose2D::new(x, y, theta), h));
    }
    pool
}

/// Draws candidate pools, removes excluded and already-evaluated poses, and returns the
/// top `n_batch` by UCB (ties keep pool order).
pub fn propose_batch(gp: &GpSurrogate, observed: &[ScoreResult], config: &BoConfig, rng: &mut ChaCha8Rng) -> Result<Vec<(Pose2D, Option<f64>)>, BoError> {
    let evaluated: Vec<Vec<f64>> = observed.iter().map(|r| embed_pose(&r.pose, r.height, &config.bounds)).collect();
    let mut survivors: Vec<((Pose2D, Option<f64>), Vec<f64>)> = Vec::new();
    for _ in 0..MAX_POOL_ROUNDS {
        for (p, h) in candidate_pool(observed, config, rng) {
            if config.excluded(&p) {
                continue;
            }
            let e = embed_pose(&p, h, &config.bounds);
            if is_duplicate(&e, &evaluated) {
                continue;
            }
            survivors.push(((p, h), e));
        }
        if survivors.len() >= config.n_batch {
            break;
        }
    }
    if survivors.is_empty() {
        return Err(BoError::NoCandidates);
    }
    let embedded: Vec<Vec<f64>> = survivors.iter().map(|(_, e)| e.clone()).collect();
    let acq: Vec<f64> = gp.predict_many(&embedded).into_iter().map(|(m, v)| m + config.kappa * v.sqrt()).collect();
    let mut order: Vec<usize> = (0..survivors.len()).collect();
    order.sort_by(|&a, &b| acq[b].total_cmp(&acq[a]).then(a.cmp(&b)));

    let mut chosen: Vec<(Pose2D, Option<f64>)> = Vec::with_capacity(config.n_batch);
    let mut chosen_e: Vec<Vec<f64>> = Vec::new();
    for i in order {
        if chosen.len() == config.n_batch {
            break;
        }
        let (pose, e) = &survivors[i];
        if is_duplicate(e, &chosen_e) {
            continue;
        }
        chosen.push(*pose);
        chosen_e.push(e.clone());
    }
    Ok(chosen)
}

fn is_duplicate(e: &[f64], others: &[Vec<f64>]) -> bool {
    others.iter().any(|o| o.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() < DUPLICATE_EPS * DUPLICATE_EPS)
}

/// Something that scores a base pose. Gate failures must come back as a zero score, not an error.
pub trait Objective: Sync {
    fn evaluate(&self, p: &Pose2D, height: Option<f64>) -> Result<ScoreResult, ScoringError>;
}

impl<F> Objective for F
where
    F: Fn(&Pose2D, Option<f64>) -> Result<ScoreResult, ScoringError> + Sync,
{
    fn evaluate(&self, p: &Pose2D, height: Option<f64>) -> Result<ScoreResult, ScoringError> {
        self(p, height)
    }
}

impl Objective for ScoringContext {
    fn evaluate(&self, p: &Pose2D, height: Option<f64>) -> Result<ScoreResult, ScoringError> {
        self.score(p, height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub evaluated: Vec<ScoreResult>,
    pub best_index: usize,
    pub best_pose: Pose2D,
    pub best_height: Option<f64>,
    pub best_score: f64,
}

impl OptimizationTrace {
    fn from_results(evaluated: Vec<ScoreResult>) -> Self {
        let best_index = evaluated.iter().enumerate().fold(0, |b, (i, r)| if r.combined > evaluated[b].combined { i } else { b });
        let best = &evaluated[best_index];
        Self { best_pose: best.pose, best_height: best.height, best_score: best.combined, best_index, evaluated }
    }

    /// Running maximum of the combined score after each evaluation.
    pub fn running_best(&self) -> Vec<f64> {
        self.evaluated
            .iter()
            .scan(f64::NEG_INFINITY, |m, r| {
                *m = m.max(r.combined);
                Some(*m)
            })
            .collect()
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The `n_init` seeded initial poses, rejection-sampled outside the exclusion zones.
pub fn initial_samples(config: &BoConfig) -> Result<Vec<(Pose2D, Option<f64>)>, BoError> {
    config.validate()?;
    let mut rng = rng_stream(config.seed, 0);
    let mut out = Vec::with_capacity(config.n_init);
    let max_tries = 1000 * config.n_init;
    let mut tries = 0;
    while out.len() < config.n_init {
        tries += 1;
        if tries > max_tries {
            return Err(BoError::NoCandidates);
        }
        let s = config.sample_pose(&mut rng);
        if !config.excluded(&s.0) {
            out.push(s);
        }
    }
    Ok(out)
}

pub fn optimize(f: &dyn Objective, config: &BoConfig) -> Result<OptimizationTrace, BoError> {
    let init = initial_samples(config)?;
    optimize_from(f, config, init)
}

/// Runs the loop starting from the given initial poses instead of the seeded draw.
pub fn optimize_from(f: &dyn Objective, config: &BoConfig, initial: Vec<(Pose2D, Option<f64>)>) -> Result<OptimizationTrace, BoError> {
    config.validate()?;
    if initial.is_empty() {
        return Err(BoError::Config("no initial poses".into()));
    }
    let mut rng = rng_stream(config.seed, 1);
    let mut results = evaluate_batch(f, &initial)?;
    for iter in 0..config.n_iter {
        let embedded: Vec<Vec<f64>> = results.iter().map(|r| embed_pose(&r.pose, r.height, &config.bounds)).collect();
        let scores: Vec<f64> = results.iter().map(|r| r.combined).collect();
        let (gp_x, gp_y) = select_observations(&embedded, &scores, config.max_observations, config.seed ^ iter as u64);
        let gp = GpSurrogate::fit(gp_x, &normalize_scores(&gp_y), config.kernel)?;
        let batch = propose_batch(&gp, &results, config, &mut rng)?;
        results.extend(evaluate_batch(f, &batch)?);
        log::debug!("bo round {iter}: best {:.4}", results.iter().map(|r| r.combined).fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(OptimizationTrace::from_results(results))
}

fn evaluate_batch(f: &dyn Objective, poses: &[(Pose2D, Option<f64>)]) -> Result<Vec<ScoreResult>, BoError> {
    Ok(poses.par_iter().map(|(p, h)| f.evaluate(&p.normalized(), *h)).collect::<Result<Vec<_>, _>>()?)
}

/// Min-max normalization to [0, 1]; a constant vector maps to zeros.
pub fn normalize_scores(y: &[f64]) -> Vec<f64> {
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; y.len()];
    }
    y.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Keeps every nonzero observation and a seeded subsample of zero-score ones up to `cap`.
fn select_observations(x: &[Vec<f64>], y: &[f64], cap: Option<usize>, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let Some(cap) = cap.filter(|c| *c < x.len()) else {
        return (x.to_vec(), y.to_vec());
    };
    let zeros: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 0.0).collect();
    let nonzero = y.len() - zeros.len();
    let keep_zeros = cap.saturating_sub(nonzero).min(zeros.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; y.len()];
    for i in (0..y.len()).filter(|&i| y[i] != 0.0) {
        keep[i] = true;
    }
    for j in sample(&mut rng, zeros.len(), keep_zeros) {
        keep[zeros[j]] = true;
    }
    let idx: Vec<usize> = (0..y.len()).filter(|&i| keep[i]).collect();
    (idx.iter().map(|&i| x[i].clone()).collect(), idx.iter().map(|&i| y[i]).collect())
}
