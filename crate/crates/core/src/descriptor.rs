//! Dense image descriptors, demonstration datasets and the KNN in-distribution score.

use std::collections::BinaryHeap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{ImageError, ImageRGB};

/// Neighbors averaged by the in-distribution score.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("image has zero size")]
    EmptyImage,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("k = {k} is outside 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("descriptor shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("tau must be positive, got {0}")]
    InvalidTau(f64),
    #[error("cannot calibrate tau: {0}")]
    Calibration(String),
    #[error("no demonstrations for task `{0}`")]
    NoTaskMatches(String),
    #[error("dataset not found: {0}")]
    NotFound(PathBuf),
    #[error("dataset: {0}")]
    Format(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// An H'×W'×D feature grid, stored row-major with the feature axis innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorTensor {
    grid_h: usize,
    grid_w: usize,
    dim: usize,
    values: Vec<f32>,
}

impl DescriptorTensor {
    pub fn new(grid_h: usize, grid_w: usize, dim: usize, values: Vec<f32>) -> Result<Self, DescriptorError> {
        if values.len() != grid_h * grid_w * dim {
            return Err(DescriptorError::Format(format!("{} values for shape {grid_h}x{grid_w}x{dim}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DescriptorError::Format("non-finite descriptor value".into()));
        }
        Ok(Self { grid_h, grid_w, dim, values })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.grid_h, self.grid_w, self.dim)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.grid_w + col) * self.dim;
        &self.values[start..start + self.dim]
    }

    /// Scales the flattened tensor to unit L2 norm (all-zero tensors are left as is).
    pub fn l2_normalized(mut self) -> Self {
        let norm = self.values.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut self.values {
                *v = (*v as f64 / norm) as f32;
            }
        }
        self
    }

    /// Euclidean distance between flattened tensors.
    pub fn distance(&self, other: &DescriptorTensor) -> Result<f64, DescriptorError> {
        if self.shape() != other.shape() {
            return Err(DescriptorError::ShapeMismatch(self.shape(), other.shape()));
        }
        Ok(flat_distance(&self.values, &other.values))
    }

    /// Binary layout: grid_h, grid_w, dim as u32 little-endian, then the values as f32 little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.values.len());
        for d in [self.grid_h, self.grid_w, self.dim] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DescriptorError> {
        if bytes.len() < 12 {
            return Err(DescriptorError::Format("descriptor header truncated".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let (h, w, d) = (dim(0), dim(1), dim(2));
        let n = h * w * d;
        if bytes.len() != 12 + 4 * n {
            return Err(DescriptorError::Format(format!("expected {} payload bytes, found {}", 4 * n, bytes.len() - 12)));
        }
        let values = bytes[12..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(h, w, d, values)
    }
}

fn flat_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Maps images to dense descriptors. Implementations must be deterministic.
pub trait DescriptorBackend: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Images are resized (bilinear) to this (width, height) before encoding.
    fn input_size(&self) -> (usize, usize);
    fn encode(&self, img: &ImageRGB) -> Result<DescriptorTensor, DescriptorError>;
}

/// Resizes to the backend input and encodes.
pub fn compute_descriptor(img: &ImageRGB, backend: &dyn DescriptorBackend) -> Result<DescriptorTensor, DescriptorError> {
    if img.width() == 0 || img.height() == 0 {
        return Err(DescriptorError::EmptyImage);
    }
    let (w, h) = backend.input_size();
    let resized = img.resize_bilinear(w, h)?;
    backend.encode(&resized)
}

/// Hand-crafted patch statistics: per 14-px patch of a 224×224 image, the mean RGB and an
/// 8-bin magnitude-weighted histogram of luminance gradient orientation (D = 11).
#[derive(Debug, Clone, Copy, Default)]
pub struct PatchStat;

impl PatchStat {
    pub const PATCH: usize = 14;
    pub const GRID: usize = 16;
    pub const BINS: usize = 8;
    pub const SIZE: usize = Self::PATCH * Self::GRID;
}

fn luminance(c: [f32; 3]) -> f64 {
    0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64
}

impl DescriptorBackend for PatchStat {
    fn name(&self) -> &str {
        "patchstat"
    }

    fn dim(&self) -> usize {
        3 + Self::BINS
    }

    fn input_size(&self) -> (usize, usize) {
        (Self::SIZE, Self::SIZE)
    }

    fn encode(&self, img: &ImageRGB) -> Result<DescriptorTensor, DescriptorError> {
        let (w, h) = (img.width(), img.height());
        if w == 0 || h == 0 {
            return Err(DescriptorError::EmptyImage);
        }
        let img = if (w, h) != (Self::SIZE, Self::SIZE) { img.resize_bilinear(Self::SIZE, Self::SIZE)? } else { img.clone() };
        let n = Self::SIZE;
        let lum: Vec<f64> = img.pixels().iter().map(|c| luminance(*c)).collect();
        let at = |x: usize, y: usize| lum[y * n + x];
        let dim = self.dim();
        let mut out = vec![0f64; Self::GRID * Self::GRID * dim];
        for y in 0..n {
            for x in 0..n {
                let cell = ((y / Self::PATCH) * Self::GRID + x / Self::PATCH) * dim;
                let c = img.get(x, y);
                for ch in 0..3 {
                    out[cell + ch] += c[ch] as f64;
                }
                // Central differences with replicated borders.
                let gx = at((x + 1).min(n - 1), y) - at(x.saturating_sub(1), y);
                let gy = at(x, (y + 1).min(n - 1)) - at(x, y.saturating_sub(1));
                let mag = gx.hypot(gy);
                if mag > 0.0 {
                    let angle = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
                    let bin = ((angle / std::f64::consts::TAU * Self::BINS as f64) as usize).min(Self::BINS - 1);
                    out[cell + 3 + bin] += mag;
                }
            }
        }
        let area = (Self::PATCH * Self::PATCH) as f64;
        let values = out.iter().map(|v| (v / area) as f32).collect();
        Ok(DescriptorTensor::new(Self::GRID, Self::GRID, dim, values)?.l2_normalized())
    }
}

/// A demonstration start frame with its descriptor.
#[derive(Debug, Clone)]
pub struct DemoEntry {
    pub frame: Option<ImageRGB>,
    pub descriptor: DescriptorTensor,
    pub task: Option<String>,
}

#[derive(Debug, Clone)]
pub struct DemoDataset {
    entries: Vec<DemoEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexRecord {
    file: String,
    #[serde(default)]
    task: Option<String>,
    /// Optional precomputed descriptor file (binary tensor format).
    #[serde(default)]
    descriptor: Option<String>,
}

pub const INDEX_FILE: &str = "index.json";

impl DemoDataset {
    pub fn new(entries: Vec<DemoEntry>) -> Result<Self, DescriptorError> {
        let first = entries.first().ok_or(DescriptorError::EmptyDataset)?.descriptor.shape();
        if let Some(bad) = entries.iter().find(|e| e.descriptor.shape() != first) {
            return Err(DescriptorError::ShapeMismatch(first, bad.descriptor.shape()));
        }
        Ok(Self { entries })
    }

    /// Encodes each frame with `backend`.
    pub fn from_frames(frames: Vec<(ImageRGB, Option<String>)>, backend: &dyn DescriptorBackend) -> Result<Self, DescriptorError> {
        let entries = frames
            .into_iter()
            .map(|(frame, task)| {
                let descriptor = compute_descriptor(&frame, backend)?;
                Ok(DemoEntry { frame: Some(frame), descriptor, task })
            })
            .collect::<Result<Vec<_>, DescriptorError>>()?;
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[DemoEntry] {
        &self.entries
    }

    /// Loads `dir/index.json` (a list of `{file, task?, descriptor?}` records).
    /// Entries with a `descriptor` file use it verbatim; the rest are encoded with `backend`.
    pub fn load_dir(dir: &Path, backend: &dyn DescriptorBackend) -> Result<Self, DescriptorError> {
        if !dir.is_dir() {
            return Err(DescriptorError::NotFound(dir.to_path_buf()));
        }
        let index_path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&index_path).map_err(|_| DescriptorError::NotFound(index_path.clone()))?;
        let records: Vec<IndexRecord> = serde_json::from_str(&text).map_err(|e| DescriptorError::Format(format!("{}: {e}", index_path.display())))?;
        let entries = records
            .into_iter()
            .map(|r| {
                let frame = ImageRGB::load(&dir.join(&r.file))?;
                let descriptor = match &r.descriptor {
                    Some(d) => DescriptorTensor::from_bytes(&std::fs::read(dir.join(d))?)?,
                    None => compute_descriptor(&frame, backend)?,
                };
                Ok(DemoEntry { frame: Some(frame), descriptor, task: r.task })
            })
            .collect::<Result<Vec<_>, DescriptorError>>()?;
        Self::new(entries)
    }

    /// Writes frames as PNG plus the index file into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<(), DescriptorError> {
        std::fs::create_dir_all(dir)?;
        let mut records = Vec::new();
        for (i, e) in self.entries.iter().enumerate() {
            let frame = e.frame.as_ref().ok_or_else(|| DescriptorError::Format(format!("entry {i} has no frame")))?;
            let file = format!("frame_{i:04}.png");
            frame.save_png(&dir.join(&file))?;
            records.push(IndexRecord { file, task: e.task.clone(), descriptor: None });
        }
        let mut f = std::fs::File::create(dir.join(INDEX_FILE))?;
        f.write_all(serde_json::to_string_pretty(&records).expect("serializable").as_bytes())?;
        Ok(())
    }

    /// Keeps the entries whose task label equals `task` exactly.
    pub fn filter_by_task(&self, task: &str) -> Result<DemoDataset, DescriptorError> {
        let entries: Vec<DemoEntry> = self.entries.iter().filter(|e| e.task.as_deref() == Some(task)).cloned().collect();
        if entries.is_empty() {
            return Err(DescriptorError::NoTaskMatches(task.to_string()));
        }
        Ok(DemoDataset { entries })
    }

    /// Median of all pairwise flattened distances.
    pub fn median_pairwise_distance(&self) -> Result<f64, DescriptorError> {
        let n = self.entries.len();
        if n < 2 {
            return Err(DescriptorError::Calibration("need at least two entries".into()));
        }
        let mut d = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                d.push(flat_distance(self.entries[i].descriptor.values(), self.entries[j].descriptor.values()));
            }
        }
        d.sort_by(f64::total_cmp);
        let m = d.len();
        Ok(if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) })
    }

    /// Temperature for [`id_score`]: the median pairwise distance, which must be positive.
    pub fn calibrate_tau(&self) -> Result<f64, DescriptorError> {
        let tau = self.median_pairwise_distance()?;
        if !(tau > 0.0) {
            return Err(DescriptorError::Calibration("median pairwise distance is zero".into()));
        }
        Ok(tau)
    }
}

#[derive(PartialEq)]
struct Neighbor {
    dist: f64,
    index: usize,
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist.total_cmp(&other.dist).then(self.index.cmp(&other.index))
    }
}

/// Indices and distances of the `k` nearest entries, nearest first (ties by index).
pub fn k_nearest(query: &DescriptorTensor, dataset: &DemoDataset, k: usize) -> Result<Vec<(usize, f64)>, DescriptorError> {
    if dataset.is_empty() {
        return Err(DescriptorError::EmptyDataset);
    }
    if k == 0 || k > dataset.len() {
        return Err(DescriptorError::InvalidK { k, n: dataset.len() });
    }
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for (index, e) in dataset.entries().iter().enumerate() {
        let dist = query.distance(&e.descriptor)?;
        heap.push(Neighbor { dist, index });
        if heap.len() > k {
            heap.pop();
        }
    }
    Ok(heap.into_sorted_vec().into_iter().map(|n| (n.index, n.dist)).collect())
}

/// Mean L2 distance from `query` to its `k` nearest dataset descriptors.
pub fn knn_distance(query: &DescriptorTensor, dataset: &DemoDataset, k: usize) -> Result<f64, DescriptorError> {
    let nn = k_nearest(query, dataset, k)?;
    Ok(nn.iter().map(|(_, d)| d).sum::<f64>() / k as f64)
}

/// exp(−distance / tau), in (0, 1].
pub fn id_score(distance: f64, tau: f64) -> Result<f64, DescriptorError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(DescriptorError::InvalidTau(tau));
    }
    Ok((-distance.max(0.0) / tau).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec_tensor(v: Vec<f32>) -> DescriptorTensor {
        let n = v.len();
        DescriptorTensor::new(1, 1, n, v).unwrap()
    }

    fn dataset(vs: Vec<Vec<f32>>) -> DemoDataset {
        DemoDataset::new(vs.into_iter().map(|v| DemoEntry { frame: None, descriptor: vec_tensor(v), task: None }).collect()).unwrap()
    }

    /// Brute force: every distance, full sort, mean of the first k.
    fn brute_force(query: &[f32], data: &[Vec<f32>], k: usize) -> f64 {
        let mut d: Vec<(f64, usize)> =
            data.iter().enumerate().map(|(i, v)| (query.iter().zip(v).map(|(a, b)| ((*a as f64) - (*b as f64)).powi(2)).sum::<f64>().sqrt(), i)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d[..k].iter().map(|x| x.0).sum::<f64>() / k as f64
    }

    #[test]
    fn constant_gray_has_no_gradients() {
        let t = compute_descriptor(&ImageRGB::filled(100, 60, [0.5; 3]), &PatchStat).unwrap();
        assert_eq!(t.shape(), (16, 16, 11));
        let first = t.cell(0, 0)[0];
        for r in 0..16 {
            for c in 0..16 {
                let cell = t.cell(r, c);
                assert!(cell[..3].iter().all(|v| *v == first));
                assert!(cell[3..].iter().all(|v| *v == 0.0));
            }
        }
        let norm: f64 = t.values().iter().map(|v| (*v as f64).powi(2)).sum();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shape_for_any_input() {
        let img = ImageRGB::from_pixels(224, 224, (0..224 * 224).map(|i| [(i % 7) as f32 / 7.0, 0.2, 0.9]).collect()).unwrap();
        assert_eq!(compute_descriptor(&img, &PatchStat).unwrap().shape(), (16, 16, 11));
        assert!(compute_descriptor(&ImageRGB::filled(0, 0, [0.0; 3]), &PatchStat).is_err());
    }

    #[test]
    fn vertical_step_edge_bins() {
        // Oracle: direct central-difference convolution locates gradients at x = 111 and 112,
        // which fall in grid columns 7 and 8.
        let mut img = ImageRGB::filled(224, 224, [0.2; 3]);
        for y in 0..224 {
            for x in 112..224 {
                img.set(x, y, [0.8; 3]);
            }
        }
        let lum: Vec<f64> = (0..224).map(|x| if x < 112 { 0.2 } else { 0.8 }).collect();
        let grad_cols: Vec<usize> = (0..224).filter(|&x| (lum[(x + 1).min(223)] - lum[x.saturating_sub(1)]).abs() > 1e-12).map(|x| x / 14).collect();
        assert_eq!(grad_cols, vec![7, 8]);

        let t = compute_descriptor(&img, &PatchStat).unwrap();
        for r in 0..16 {
            for c in 0..16 {
                let has = t.cell(r, c)[3..].iter().any(|v| *v != 0.0);
                assert_eq!(has, c == 7 || c == 8, "cell ({r},{c})");
                if has {
                    // Rightward gradient lands in bin 0 only.
                    assert!(t.cell(r, c)[4..].iter().all(|v| *v == 0.0));
                }
            }
        }
    }

    #[test]
    fn descriptor_deterministic() {
        let img = ImageRGB::from_pixels(50, 40, (0..2000).map(|i| [((i * 37) % 101) as f32 / 101.0, 0.3, ((i * 13) % 17) as f32 / 17.0]).collect()).unwrap();
        let first = compute_descriptor(&img, &PatchStat).unwrap();
        for _ in 0..1000 {
            assert_eq!(compute_descriptor(&img, &PatchStat).unwrap().values(), first.values());
        }
    }

    #[test]
    fn knn_examples() {
        let ds = dataset(vec![vec![0.0, 1.0], vec![3.0, 3.0], vec![1.0, 1.0]]);
        assert_eq!(knn_distance(&vec_tensor(vec![1.0, 1.0]), &ds, 1).unwrap(), 0.0);
        let same = dataset(vec![vec![0.5, 0.5]; 5]);
        assert_eq!(knn_distance(&vec_tensor(vec![0.5, 0.5]), &same, 5).unwrap(), 0.0);
        // Entries at distances 1, 2, 5 from the origin query.
        let d = dataset(vec![vec![0.0, 5.0], vec![1.0, 0.0], vec![0.0, 2.0]]);
        let q = vec_tensor(vec![0.0, 0.0]);
        assert_eq!(knn_distance(&q, &d, 2).unwrap(), brute_force(&[0.0, 0.0], &[vec![0.0, 5.0], vec![1.0, 0.0], vec![0.0, 2.0]], 2));
        assert_eq!(knn_distance(&q, &d, 2).unwrap(), 1.5);
    }

    #[test]
    fn knn_errors() {
        let d = dataset(vec![vec![0.0]]);
        assert!(matches!(knn_distance(&vec_tensor(vec![0.0]), &d, 2), Err(DescriptorError::InvalidK { .. })));
        assert!(matches!(knn_distance(&vec_tensor(vec![0.0]), &d, 0), Err(DescriptorError::InvalidK { .. })));
        assert!(matches!(DemoDataset::new(vec![]), Err(DescriptorError::EmptyDataset)));
    }

    #[test]
    fn id_score_examples() {
        assert_eq!(id_score(0.0, 2.0).unwrap(), 1.0);
        assert!((id_score(2.0, 2.0).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert!(id_score(1.0, 0.0).is_err());
        assert!(id_score(1.0, -1.0).is_err());
    }

    #[test]
    fn tau_is_median_pairwise() {
        // Points on a line at 0, 2, 6: pairwise distances {2, 4, 6}.
        let ds = dataset(vec![vec![0.0], vec![2.0], vec![6.0]]);
        assert_eq!(ds.calibrate_tau().unwrap(), 4.0);
        assert!(dataset(vec![vec![1.0]]).calibrate_tau().is_err());
        assert!(dataset(vec![vec![1.0], vec![1.0]]).calibrate_tau().is_err());
    }

    #[test]
    fn filter_by_task() {
        let mk = |t: &str| DemoEntry { frame: None, descriptor: vec_tensor(vec![0.0]), task: Some(t.to_string()) };
        let ds = DemoDataset::new(vec![mk("A"), mk("A"), mk("B")]).unwrap();
        assert_eq!(ds.filter_by_task("A").unwrap().len(), 2);
        assert_eq!(ds.filter_by_task("B").unwrap().len(), 1);
        assert!(matches!(ds.filter_by_task("C"), Err(DescriptorError::NoTaskMatches(_))));
    }

    #[test]
    fn tensor_bytes_roundtrip() {
        let t = DescriptorTensor::new(2, 1, 3, vec![1.0, -2.0, 0.5, 0.25, 8.0, -0.125]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..4], &2u32.to_le_bytes());
        assert_eq!(DescriptorTensor::from_bytes(&bytes).unwrap(), t);
        assert!(DescriptorTensor::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn dataset_dir_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let frames = vec![(ImageRGB::filled(32, 32, [0.2, 0.4, 0.6]), Some("open".to_string())), (ImageRGB::filled(32, 32, [0.6, 0.4, 0.2]), None)];
        let ds = DemoDataset::from_frames(frames, &PatchStat).unwrap();
        ds.save_dir(dir.path()).unwrap();
        let back = DemoDataset::load_dir(dir.path(), &PatchStat).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.entries()[0].task.as_deref(), Some("open"));
        assert!(matches!(DemoDataset::load_dir(&dir.path().join("missing"), &PatchStat), Err(DescriptorError::NotFound(_))));
    }

    #[test]
    fn external_descriptor_files_used() {
        let dir = tempfile::tempdir().unwrap();
        ImageRGB::filled(8, 8, [0.0; 3]).save_png(&dir.path().join("a.png")).unwrap();
        let t = DescriptorTensor::new(1, 2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        std::fs::write(dir.path().join("a.desc"), t.to_bytes()).unwrap();
        std::fs::write(dir.path().join(INDEX_FILE), r#"[{"file": "a.png", "descriptor": "a.desc"}]"#).unwrap();
        let ds = DemoDataset::load_dir(dir.path(), &PatchStat).unwrap();
        assert_eq!(ds.entries()[0].descriptor, t);
    }

    fn arb_dataset() -> impl Strategy<Value = (Vec<Vec<f32>>, Vec<f32>, usize)> {
        (1usize..=100, 1usize..6)
            .prop_flat_map(|(n, dim)| (prop::collection::vec(prop::collection::vec(-1.0f32..1.0, dim), n), prop::collection::vec(-1.0f32..1.0, dim), 1..=n))
    }

    proptest! {
        #[test]
        fn knn_matches_brute_force((data, q, k) in arb_dataset()) {
            let ds = dataset(data.clone());
            prop_assert_eq!(knn_distance(&vec_tensor(q.clone()), &ds, k).unwrap(), brute_force(&q, &data, k));
        }

        #[test]
        fn score_invariant_to_order((data, q, k) in arb_dataset(), seed in 0u64..1000) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut shuffled = data.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = knn_distance(&vec_tensor(q.clone()), &dataset(data), k).unwrap();
            let b = knn_distance(&vec_tensor(q.clone()), &dataset(shuffled), k).unwrap();
            // Same multiset of the k smallest distances; summation order is by distance.
            prop_assert_eq!(a, b);
        }

        #[test]
        fn closer_entry_never_increases_distance((data, q, k) in arb_dataset(), t in 0.0f32..1.0) {
            let before = knn_distance(&vec_tensor(q.clone()), &dataset(data.clone()), k).unwrap();
            let nn = k_nearest(&vec_tensor(q.clone()), &dataset(data.clone()), k).unwrap();
            let kth = nn.last().unwrap().0;
            // New entry on the segment between the query and its k-th neighbor.
            let new: Vec<f32> = q.iter().zip(&data[kth]).map(|(a, b)| a + t * (b - a)).collect();
            let mut more = data.clone();
            more.push(new);
            let after = knn_distance(&vec_tensor(q.clone()), &dataset(more), k).unwrap();
            prop_assert!(after <= before + 1e-12);
        }
    }
}
