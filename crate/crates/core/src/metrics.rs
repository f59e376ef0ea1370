//! Mobilization feasibility metrics: the spatial half-life φ of an exponential success decay,
//! and the visual occupancy fraction S_v.

use std::f64::consts::LN_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose2D;
use crate::imaging::{ImageRGB, Mask};

/// Episodes per perturbation scale in the reference protocol.
pub const EPISODES_PER_SIGMA: usize = 150;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least 2 samples with positive success rate at distinct sigma, got {0}")]
    TooFewPoints(usize),
    #[error("success rate does not decay (fitted gamma = {0})")]
    NonDecaying(f64),
    #[error("invalid sample ({0}, {1})")]
    InvalidSample(f64, f64),
    #[error("view {index}: image is {image:?}, mask is {mask:?}")]
    DimensionMismatch { index: usize, image: (usize, usize), mask: (usize, usize) },
    #[error("no views")]
    NoViews,
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// S(σ) = c0 · exp(−γ σ), with φ = ln 2 / γ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub c0: f64,
    pub gamma: f64,
    pub phi: f64,
    /// RMS of (rate − fitted rate) over all samples, censored ones included.
    pub residual: f64,
    pub n_points: usize,
    /// Zero-rate samples left out of the log-linear fit.
    pub n_censored: usize,
}

impl DecayFit {
    pub fn from_gamma(c0: f64, gamma: f64) -> Result<Self, MetricsError> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(MetricsError::NonDecaying(gamma));
        }
        Ok(Self { c0, gamma, phi: LN_2 / gamma, residual: 0.0, n_points: 0, n_censored: 0 })
    }

    pub fn from_phi(c0: f64, phi: f64) -> Result<Self, MetricsError> {
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(MetricsError::Invalid(format!("phi must be positive, got {phi}")));
        }
        Self::from_gamma(c0, LN_2 / phi)
    }

    pub fn predict(&self, sigma: f64) -> f64 {
        self.c0 * (-self.gamma * sigma).exp()
    }
}

/// Log-linear least squares of ln(rate) against σ over the positive-rate samples.
pub fn fit_decay(samples: &[(f64, f64)]) -> Result<DecayFit, MetricsError> {
    for &(s, r) in samples {
        if !(s.is_finite() && s >= 0.0 && (0.0..=1.0).contains(&r)) {
            return Err(MetricsError::InvalidSample(s, r));
        }
    }
    let pos: Vec<(f64, f64)> = samples.iter().filter(|(_, r)| *r > 0.0).map(|&(s, r)| (s, r.ln())).collect();
    let distinct = {
        let mut xs: Vec<f64> = pos.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs.len()
    };
    if distinct < 2 {
        return Err(MetricsError::TooFewPoints(distinct));
    }
    let n = pos.len() as f64;
    let mx = pos.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pos.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pos.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pos.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut fit = DecayFit::from_gamma(intercept.exp(), -slope)?;
    let sq: f64 = samples.iter().map(|&(s, r)| (r - fit.predict(s)).powi(2)).sum();
    fit.residual = (sq / samples.len() as f64).sqrt();
    fit.n_points = samples.len();
    fit.n_censored = samples.len() - pos.len();
    Ok(fit)
}

/// Observed samples plus the fitted curve on an even σ grid, for a decay chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayPlotData {
    pub samples: Vec<(f64, f64)>,
    pub curve: Vec<(f64, f64)>,
    pub fit: DecayFit,
}

pub fn decay_plot_data(samples: &[(f64, f64)], fit: &DecayFit, n_curve: usize) -> DecayPlotData {
    let hi = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    let n = n_curve.max(2);
    let curve = (0..n)
        .map(|i| {
            let s = hi * i as f64 / (n - 1) as f64;
            (s, fit.predict(s))
        })
        .collect();
    DecayPlotData { samples: samples.to_vec(), curve, fit: *fit }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualFeasibility {
    pub s_v: f64,
    pub n_views: usize,
    pub per_view: Vec<f64>,
}

/// Mean fraction of pixels covered by the object-of-interest mask.
pub fn visual_feasibility(views: &[(ImageRGB, Mask)]) -> Result<VisualFeasibility, MetricsError> {
    if views.is_empty() {
        return Err(MetricsError::NoViews);
    }
    let mut per_view = Vec::with_capacity(views.len());
    for (index, (img, mask)) in views.iter().enumerate() {
        if (img.width(), img.height()) != (mask.width(), mask.height()) {
            return Err(MetricsError::DimensionMismatch { index, image: (img.width(), img.height()), mask: (mask.width(), mask.height()) });
        }
        per_view.push(mask.fraction());
    }
    Ok(VisualFeasibility { s_v: per_view.iter().sum::<f64>() / per_view.len() as f64, n_views: per_view.len(), per_view })
}

/// A policy that can be run from an arbitrary start pose.
pub trait PolicyTrial: Sync {
    /// The pose the policy expects to start from.
    fn nominal_pose(&self) -> Pose2D;
    fn attempt(&self, start: &Pose2D, rng: &mut ChaCha8Rng) -> bool;
}

/// σ grid used when none is given: 0 to 0.4 m in 0.05 m steps.
pub fn default_sigmas() -> Vec<f64> {
    (0..9).map(|i| i as f64 * 0.05).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialFeasibility {
    pub samples: Vec<(f64, f64)>,
    pub episodes_per_sigma: usize,
    pub fit: DecayFit,
}

/// Runs `episodes_per_sigma` trials per σ with (x, y) of the nominal pose perturbed by
/// independent N(0, σ²) noise (heading untouched), then fits the decay curve.
pub fn measure_spatial_feasibility(trial: &dyn PolicyTrial, sigmas: &[f64], episodes_per_sigma: usize, seed: u64) -> Result<SpatialFeasibility, MetricsError> {
    if episodes_per_sigma == 0 {
        return Err(MetricsError::Invalid("episodes_per_sigma must be at least 1".into()));
    }
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(MetricsError::Invalid(format!("sigma {s}")));
    }
    let nominal = trial.nominal_pose();
    let samples: Vec<(f64, f64)> = sigmas
        .par_iter()
        .enumerate()
        .map(|(i, &sigma)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let noise = Normal::new(0.0, sigma).expect("sigma checked above");
            let wins = (0..episodes_per_sigma)
                .filter(|_| {
                    let start = Pose2D::new(nominal.x + noise.sample(&mut rng), nominal.y + noise.sample(&mut rng), nominal.theta);
                    trial.attempt(&start, &mut rng)
                })
                .count();
            (sigma, wins as f64 / episodes_per_sigma as f64)
        })
        .collect();
    let fit = fit_decay(&samples)?;
    Ok(SpatialFeasibility { samples, episodes_per_sigma, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn two_points_force_the_curve() {
        let f = fit_decay(&[(0.0, 0.6), (0.1, 0.3)]).unwrap();
        assert!((f.c0 - 0.6).abs() < 1e-12);
        assert!((f.gamma - LN_2 / 0.1).abs() < 1e-9);
        assert!((f.phi - 0.1).abs() < 1e-12);
    }

    #[test]
    fn noiseless_exponential_recovered() {
        let samples: Vec<(f64, f64)> = (0..7)
            .map(|i| {
                let s = i as f64 * 0.05;
                (s, 0.8 * (-5.0 * s).exp())
            })
            .collect();
        let f = fit_decay(&samples).unwrap();
        assert!((f.gamma - 5.0).abs() < 1e-9);
        assert!((f.c0 - 0.8).abs() < 1e-9);
        assert!((f.phi - 0.138_629_436_111_989).abs() < 1e-12);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn stove_phi_identity() {
        let f = DecayFit::from_phi(1.0, 0.031).unwrap();
        assert!((f.gamma - 22.36).abs() < 0.01);
        assert_eq!(f.phi, 0.031);
        assert_eq!(DecayFit::from_gamma(1.0, f.gamma).unwrap().phi, 0.031);
    }

    #[test]
    fn zero_rates_are_censored() {
        let f = fit_decay(&[(0.0, 0.8), (0.1, 0.4), (0.2, 0.0)]).unwrap();
        assert_eq!(f.n_censored, 1);
        assert_eq!(f.n_points, 3);
        assert!((f.phi - 0.1).abs() < 1e-12);
        // The censored point still shows up in the residual: fitted 0.2 against observed 0.
        assert!((f.residual - (0.04f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(fit_decay(&[(0.0, 0.5)]), Err(MetricsError::TooFewPoints(1))));
        assert!(matches!(fit_decay(&[(0.1, 0.5), (0.1, 0.4)]), Err(MetricsError::TooFewPoints(1))));
        assert!(matches!(fit_decay(&[(0.0, 0.3), (0.1, 0.6)]), Err(MetricsError::NonDecaying(_))));
        assert!(matches!(fit_decay(&[(0.0, 1.3), (0.1, 0.6)]), Err(MetricsError::InvalidSample(..))));
    }

    fn views_with_fraction(fracs: &[f64]) -> Vec<(ImageRGB, Mask)> {
        fracs
            .iter()
            .map(|f| {
                let n = (f * 100.0).round() as usize;
                let bits = (0..100).map(|i| i < n).collect();
                (ImageRGB::filled(10, 10, [0.0; 3]), Mask::new(10, 10, bits).unwrap())
            })
            .collect()
    }

    #[test]
    fn visual_examples() {
        assert_eq!(visual_feasibility(&views_with_fraction(&[0.25])).unwrap().s_v, 0.25);
        assert_eq!(visual_feasibility(&views_with_fraction(&[0.0])).unwrap().s_v, 0.0);
        assert!((visual_feasibility(&views_with_fraction(&[0.1, 0.3])).unwrap().s_v - 0.2).abs() < 1e-15);
        assert!(matches!(visual_feasibility(&[]), Err(MetricsError::NoViews)));
        let bad = vec![(ImageRGB::filled(10, 10, [0.0; 3]), Mask::empty(5, 5))];
        assert!(matches!(visual_feasibility(&bad), Err(MetricsError::DimensionMismatch { .. })));
    }

    struct Planted {
        q0: f64,
        s: f64,
    }

    impl PolicyTrial for Planted {
        fn nominal_pose(&self) -> Pose2D {
            Pose2D::new(1.0, -2.0, 0.3)
        }

        fn attempt(&self, start: &Pose2D, rng: &mut ChaCha8Rng) -> bool {
            let d2 = start.distance_xy(&self.nominal_pose()).powi(2);
            rng.random::<f64>() < self.q0 * (-d2 / (2.0 * self.s * self.s)).exp()
        }
    }

    /// Monte-Carlo half-success deviation: the σ at which the mean success rate is half the
    /// rate at σ = 0, bisected on 10⁶ noise draws per evaluation.
    fn half_success_oracle(q0: f64, s: f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws: Vec<(f64, f64)> =
            (0..1_000_000).map(|_| (rng.sample::<f64, _>(rand_distr::StandardNormal), rng.sample::<f64, _>(rand_distr::StandardNormal))).collect();
        let rate = |sigma: f64| draws.iter().map(|(a, b)| q0 * (-(sigma * sigma) * (a * a + b * b) / (2.0 * s * s)).exp()).sum::<f64>() / draws.len() as f64;
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if rate(mid) > 0.5 * q0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn planted_model_phi_close_to_half_success() {
        let model = Planted { q0: 0.9, s: 0.1 };
        let out = measure_spatial_feasibility(&model, &default_sigmas(), 10_000, 3).unwrap();
        let rates: Vec<f64> = out.samples.iter().map(|s| s.1).collect();
        assert!(rates.windows(2).all(|w| w[1] <= w[0] + 0.02), "{rates:?}");
        let curve = decay_plot_data(&out.samples, &out.fit, 50).curve;
        assert!(curve.windows(2).all(|w| w[1].1 < w[0].1));
        let oracle = half_success_oracle(0.9, 0.1);
        assert!((out.fit.phi - oracle).abs() / oracle < 0.15, "phi {} oracle {oracle}", out.fit.phi);
    }

    #[test]
    fn sigma_zero_only_fails() {
        let model = Planted { q0: 0.9, s: 0.1 };
        assert!(matches!(measure_spatial_feasibility(&model, &[0.0], 150, 0), Err(MetricsError::TooFewPoints(1))));
        assert_eq!(EPISODES_PER_SIGMA, 150);
    }

    #[test]
    fn measurement_is_deterministic() {
        let model = Planted { q0: 0.9, s: 0.1 };
        let a = measure_spatial_feasibility(&model, &default_sigmas(), 150, 11).unwrap();
        let b = measure_spatial_feasibility(&model, &default_sigmas(), 150, 11).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn phi_gamma_identity(samples in prop::collection::vec((0.0f64..1.0, 0.01f64..1.0), 2..12)) {
            if let Ok(f) = fit_decay(&samples) {
                prop_assert!((f.phi * f.gamma - LN_2).abs() <= 2.0 * f64::EPSILON);
            }
        }

        #[test]
        fn scale_consistent(c0 in 0.2f64..1.0, gamma in 0.5f64..20.0, c in 0.05f64..1.0) {
            let samples: Vec<(f64, f64)> = (0..6).map(|i| (i as f64 * 0.04, c0 * (-gamma * i as f64 * 0.04).exp())).collect();
            let scaled: Vec<(f64, f64)> = samples.iter().map(|&(s, r)| (s, c * r)).collect();
            let a = fit_decay(&samples).unwrap();
            let b = fit_decay(&scaled).unwrap();
            prop_assert!((b.c0 - c * a.c0).abs() < 1e-9);
            prop_assert!((b.gamma - a.gamma).abs() < 1e-9);
        }

        #[test]
        fn exact_exponential_reproduced(c0 in 0.05f64..1.0, gamma in 0.1f64..40.0) {
            let samples: Vec<(f64, f64)> = (0..8).map(|i| (i as f64 * 0.03, c0 * (-gamma * i as f64 * 0.03).exp())).collect();
            let f = fit_decay(&samples).unwrap();
            prop_assert!((f.c0 - c0).abs() < 1e-9 && (f.gamma - gamma).abs() < 1e-9);
        }

        #[test]
        fn visual_permutation_invariant(fracs in prop::collection::vec(0.0f64..1.0, 1..8)) {
            let views = views_with_fraction(&fracs);
            let mut rev = views.clone();
            rev.reverse();
            let a = visual_feasibility(&views).unwrap().s_v;
            let b = visual_feasibility(&rev).unwrap().s_v;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
