//! EWA projection and front-to-back alpha compositing.

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use rayon::prelude::*;

use super::{eval_sh, Gaussian3D, SplatScene};
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::imaging::{ImageDepth, ImageRGB, Mask};

/// Lower bound on the eigenvalues of a projected 2D covariance (px²).
pub const COV2D_FLOOR: f64 = 0.3;
/// Gaussians contribute only where the Mahalanobis distance is at most this many sigmas.
pub const FOOTPRINT_SIGMAS: f64 = 3.0;
/// Gaussians closer than this (camera z, meters) are culled.
pub const NEAR_PLANE: f64 = 0.1;
/// The projection Jacobian is evaluated no further off-axis than this multiple of the half field of view.
const JACOBIAN_FOV_MARGIN: f64 = 1.3;
const ROWS_PER_BAND: usize = 16;

/// A Gaussian mapped into image space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGaussian {
    pub center: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub opacity: f64,
}

impl ProjectedGaussian {
    fn conic(&self) -> Matrix2<f64> {
        // cov2d is SPD after clamping.
        self.cov2d.try_inverse().unwrap_or_else(Matrix2::zeros)
    }

    fn radius(&self) -> f64 {
        FOOTPRINT_SIGMAS * max_eigenvalue(&self.cov2d).sqrt()
    }
}

fn max_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let mid = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    mid + disc
}

/// Clamps both eigenvalues of a symmetric 2×2 matrix below at `floor`.
fn clamp_cov2d(m: &Matrix2<f64>, floor: f64) -> Matrix2<f64> {
    let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    let mid = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (mid + disc, mid - disc);
    if l2 >= floor {
        return Matrix2::new(a, b, b, d);
    }
    if disc < 1e-15 {
        let v = l1.max(floor);
        return Matrix2::new(v, 0.0, 0.0, v);
    }
    // Eigenvector of l1.
    let v1 = if b.abs() > 1e-15 {
        Vector2::new(l1 - d, b).normalize()
    } else if a >= d {
        Vector2::new(1.0, 0.0)
    } else {
        Vector2::new(0.0, 1.0)
    };
    let v2 = Vector2::new(-v1.y, v1.x);
    v1 * v1.transpose() * l1.max(floor) + v2 * v2.transpose() * l2.max(floor)
}

/// Projects one Gaussian with the EWA local affine approximation.
///
/// `cam` is the world-from-camera pose. Returns `None` when the mean is not in front of the camera.
pub fn project_gaussian(g: &Gaussian3D, cam: &RigidTransform, k: &CameraIntrinsics) -> Option<ProjectedGaussian> {
    let world_to_cam = cam.rotation().inverse();
    let t = world_to_cam * (g.mean - cam.translation());
    if t.z <= NEAR_PLANE {
        return None;
    }
    let (x, y, z) = (t.x, t.y, t.z);
    // Far off-axis the local affine approximation blows up; evaluate it at the frustum margin instead.
    let lim_x = JACOBIAN_FOV_MARGIN * 0.5 * k.width as f64 / k.fx;
    let lim_y = JACOBIAN_FOV_MARGIN * 0.5 * k.height as f64 / k.fy;
    let (jx, jy) = ((x / z).clamp(-lim_x, lim_x) * z, (y / z).clamp(-lim_y, lim_y) * z);
    let j = Matrix2x3::new(k.fx / z, 0.0, -k.fx * jx / (z * z), 0.0, k.fy / z, -k.fy * jy / (z * z));
    let w = world_to_cam.matrix();
    let m = j * w;
    let cov = m * g.covariance() * m.transpose();
    Some(ProjectedGaussian {
        center: Vector2::new(k.cx + k.fx * x / z, k.cy + k.fy * y / z),
        cov2d: clamp_cov2d(&cov, COV2D_FLOOR),
        depth: z,
        opacity: g.opacity,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    /// Split rows into bands rendered on the rayon pool. Output is identical either way.
    pub parallel: bool,
    /// Accumulated opacity needed before a pixel reports a depth.
    pub min_depth_alpha: f64,
    /// Report the depth of the Gaussian at which accumulated weight first reaches
    /// `min_depth_alpha` instead of the α-weighted mean. Avoids depths interpolated
    /// across silhouettes.
    pub median_depth: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { parallel: true, min_depth_alpha: 0.5, median_depth: false }
    }
}

/// Color, depth and (for tagged scenes) object-of-interest mask of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderLayers {
    pub rgb: ImageRGB,
    pub depth: ImageDepth,
    pub object_mask: Option<Mask>,
}

struct Splat {
    center: Vector2<f64>,
    conic: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
    depth: f64,
    object: bool,
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

#[derive(Clone, Copy)]
struct Accum {
    color: [f64; 3],
    transmittance: f64,
    depth: f64,
    weight: f64,
    object: f64,
    median: f64,
}

impl Default for Accum {
    fn default() -> Self {
        Self { color: [0.0; 3], transmittance: 1.0, depth: 0.0, weight: 0.0, object: 0.0, median: f64::NAN }
    }
}

fn prepare(scene: &SplatScene, cam: &RigidTransform, k: &CameraIntrinsics) -> Vec<Splat> {
    let origin = cam.translation();
    let labels = scene.labels();
    let (w, h) = (k.width as f64, k.height as f64);
    let mut splats: Vec<(usize, Splat)> = scene
        .gaussians()
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let p = project_gaussian(g, cam, k)?;
            let r = p.radius();
            let (u, v) = (p.center.x, p.center.y);
            if u + r < 0.0 || v + r < 0.0 || u - r > w - 1.0 || v - r > h - 1.0 || !(u.is_finite() && v.is_finite()) {
                return None;
            }
            let dir: Vector3<f64> = (g.mean - origin).normalize();
            let splat = Splat {
                center: p.center,
                conic: p.conic(),
                opacity: p.opacity,
                color: eval_sh(&g.sh, &dir),
                depth: p.depth,
                object: labels.is_some_and(|l| l[i]),
                x0: (u - r).ceil().max(0.0) as usize,
                x1: (u + r).floor().min(w - 1.0) as usize,
                y0: (v - r).ceil().max(0.0) as usize,
                y1: (v + r).floor().min(h - 1.0) as usize,
            };
            Some((i, splat))
        })
        .collect();
    splats.sort_by(|a, b| a.1.depth.total_cmp(&b.1.depth).then(a.0.cmp(&b.0)));
    splats.into_iter().map(|(_, s)| s).collect()
}

fn blend_band(splats: &[Splat], median_at: f64, rows: std::ops::Range<usize>, width: usize, band: &mut [Accum]) {
    let cutoff = FOOTPRINT_SIGMAS * FOOTPRINT_SIGMAS;
    for s in splats {
        if s.y1 < rows.start || s.y0 >= rows.end || s.x0 > s.x1 {
            continue;
        }
        let (a, b, c) = (s.conic[(0, 0)], s.conic[(0, 1)], s.conic[(1, 1)]);
        for py in s.y0.max(rows.start)..=s.y1.min(rows.end - 1) {
            let dy = py as f64 - s.center.y;
            let row = &mut band[(py - rows.start) * width..][..width];
            for px in s.x0..=s.x1 {
                let dx = px as f64 - s.center.x;
                let m = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
                if m > cutoff {
                    continue;
                }
                let alpha = s.opacity * (-0.5 * m).exp();
                if alpha <= 0.0 {
                    continue;
                }
                let acc = &mut row[px];
                let w = acc.transmittance * alpha;
                for ch in 0..3 {
                    acc.color[ch] += w * s.color[ch];
                }
                acc.depth += w * s.depth;
                acc.weight += w;
                if acc.median.is_nan() && acc.weight >= median_at {
                    acc.median = s.depth;
                }
                if s.object {
                    acc.object += w;
                }
                acc.transmittance *= 1.0 - alpha;
            }
        }
    }
}

/// Renders color, depth and the object mask (when the scene carries labels).
pub fn render_with(scene: &SplatScene, cam: &RigidTransform, k: &CameraIntrinsics, opts: &RenderOptions) -> RenderLayers {
    let (w, h) = (k.width, k.height);
    let splats = prepare(scene, cam, k);
    let mut acc = vec![Accum::default(); w * h];
    let band_len = ROWS_PER_BAND * w;
    if opts.parallel {
        acc.par_chunks_mut(band_len).enumerate().for_each(|(bi, band)| {
            let start = bi * ROWS_PER_BAND;
            blend_band(&splats, opts.min_depth_alpha, start..start + band.len() / w, w, band);
        });
    } else {
        acc.chunks_mut(band_len).enumerate().for_each(|(bi, band)| {
            let start = bi * ROWS_PER_BAND;
            blend_band(&splats, opts.min_depth_alpha, start..start + band.len() / w, w, band);
        });
    }

    let bg = scene.background;
    let mut rgb = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for a in &acc {
        let mut c = [0f32; 3];
        for ch in 0..3 {
            c[ch] = (a.color[ch] + a.transmittance * bg[ch]).clamp(0.0, 1.0) as f32;
        }
        rgb.push(c);
        depth.push(match (a.weight >= opts.min_depth_alpha, opts.median_depth) {
            (false, _) => ImageDepth::NO_HIT,
            (true, false) => (a.depth / a.weight) as f32,
            (true, true) => a.median as f32,
        });
        mask.push(a.object > 0.5);
    }
    RenderLayers {
        rgb: ImageRGB::from_pixels(w, h, rgb).expect("sized buffer"),
        depth: ImageDepth::from_values(w, h, depth).expect("sized buffer"),
        object_mask: scene.labels().map(|_| Mask::new(w, h, mask).expect("sized buffer")),
    }
}

pub fn render_layers(scene: &SplatScene, cam: &RigidTransform, k: &CameraIntrinsics) -> RenderLayers {
    render_with(scene, cam, k, &RenderOptions::default())
}

/// Renders the RGB and depth images seen from world-from-camera pose `cam`.
pub fn render(scene: &SplatScene, cam: &RigidTransform, k: &CameraIntrinsics) -> (ImageRGB, ImageDepth) {
    let layers = render_layers(scene, cam, k);
    (layers.rgb, layers.depth)
}
