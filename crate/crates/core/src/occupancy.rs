//! 2D occupancy grids built from posed depth images, and the disc-footprint collision gate.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{unproject, CameraIntrinsics, Pose2D, RigidTransform};
use crate::imaging::ImageDepth;

pub const DEFAULT_FOOTPRINT_RADIUS: f64 = 0.35;
pub const DEFAULT_HEIGHT_BAND: (f64, f64) = (0.10, 1.60);

const MAGIC: &[u8; 4] = b"OGRD";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum OccupancyError {
    #[error("no depth images supplied")]
    NoImages,
    #[error("degenerate grid: {0}")]
    Degenerate(String),
    #[error("depth image {index} is {got:?}, intrinsics expect {want:?}")]
    SizeMismatch { index: usize, got: (usize, usize), want: (usize, usize) },
    #[error("grid file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Free,
    Occupied,
    Unknown,
}

impl Cell {
    fn to_byte(self) -> u8 {
        match self {
            Cell::Free => 0,
            Cell::Occupied => 1,
            Cell::Unknown => 2,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => Cell::Free,
            1 => Cell::Occupied,
            2 => Cell::Unknown,
            _ => return None,
        })
    }
}

/// Rectangular workspace extent in world x/y (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds2D {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    resolution: f64,
    origin: [f64; 2],
    width: usize,
    height: usize,
    height_band: (f64, f64),
    cells: Vec<Cell>,
}

#[derive(Debug, Clone, Copy)]
pub struct RobotFootprint {
    radius: f64,
}

impl RobotFootprint {
    pub fn new(radius: f64) -> Result<Self, OccupancyError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(OccupancyError::Degenerate(format!("footprint radius {radius}")));
        }
        Ok(Self { radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl Default for RobotFootprint {
    fn default() -> Self {
        Self { radius: DEFAULT_FOOTPRINT_RADIUS }
    }
}

/// Result of a footprint query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Clearance {
    Free,
    Blocked,
    /// The pose center lies outside the grid.
    OutOfBounds,
}

impl Clearance {
    pub fn is_free(self) -> bool {
        self == Clearance::Free
    }
}

impl OccupancyGrid {
    /// A grid covering `bounds` with every cell set to `fill`.
    pub fn new(bounds: Bounds2D, resolution: f64, height_band: (f64, f64), fill: Cell) -> Result<Self, OccupancyError> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(OccupancyError::Degenerate(format!("resolution {resolution}")));
        }
        if !(height_band.0 < height_band.1) {
            return Err(OccupancyError::Degenerate(format!("height band {height_band:?}")));
        }
        let span = [bounds.max[0] - bounds.min[0], bounds.max[1] - bounds.min[1]];
        if !(span[0] > 0.0 && span[1] > 0.0) || !span.iter().all(|s| s.is_finite()) {
            return Err(OccupancyError::Degenerate(format!("bounds {bounds:?}")));
        }
        let width = (span[0] / resolution).ceil() as usize;
        let height = (span[1] / resolution).ceil() as usize;
        Ok(Self { resolution, origin: bounds.min, width, height, height_band, cells: vec![fill; width * height] })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn height_band(&self) -> (f64, f64) {
        self.height_band
    }

    pub fn bounds(&self) -> Bounds2D {
        Bounds2D { min: self.origin, max: [self.origin[0] + self.width as f64 * self.resolution, self.origin[1] + self.height as f64 * self.resolution] }
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn get(&self, ix: usize, iy: usize) -> Cell {
        self.cells[iy * self.width + ix]
    }

    pub fn set(&mut self, ix: usize, iy: usize, c: Cell) {
        self.cells[iy * self.width + ix] = c;
    }

    /// Cell index containing world point (x, y), if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.origin[0]) / self.resolution).floor();
        let fy = ((y - self.origin[1]) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || !fx.is_finite() || !fy.is_finite() {
            return None;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        (ix < self.width && iy < self.height).then_some((ix, iy))
    }

    /// World-space center of a cell.
    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (self.origin[0] + (ix as f64 + 0.5) * self.resolution, self.origin[1] + (iy as f64 + 0.5) * self.resolution)
    }

    /// Folds one world point into the grid: in-band points occupy, other points mark free.
    pub fn insert_point(&mut self, p: &Vector3<f64>) {
        if let Some((ix, iy)) = self.cell_of(p.x, p.y) {
            let in_band = p.z >= self.height_band.0 && p.z <= self.height_band.1;
            let c = &mut self.cells[iy * self.width + ix];
            *c = match (*c, in_band) {
                (_, true) | (Cell::Occupied, _) => Cell::Occupied,
                _ => Cell::Free,
            };
        }
    }

    /// Whether the disc of `footprint.radius` centered at the pose touches only free cells.
    /// Heading is ignored. Unknown cells and cells beyond the grid edge count as blocked.
    pub fn clearance(&self, p: &Pose2D, footprint: &RobotFootprint) -> Clearance {
        if self.cell_of(p.x, p.y).is_none() {
            return Clearance::OutOfBounds;
        }
        let r = footprint.radius;
        let res = self.resolution;
        let lo_x = ((p.x - r - self.origin[0]) / res).floor() as i64;
        let hi_x = ((p.x + r - self.origin[0]) / res).floor() as i64;
        let lo_y = ((p.y - r - self.origin[1]) / res).floor() as i64;
        let hi_y = ((p.y + r - self.origin[1]) / res).floor() as i64;
        for iy in lo_y..=hi_y {
            for ix in lo_x..=hi_x {
                // Closest point of the cell rectangle to the disc center.
                let x0 = self.origin[0] + ix as f64 * res;
                let y0 = self.origin[1] + iy as f64 * res;
                let dx = p.x - p.x.clamp(x0, x0 + res);
                let dy = p.y - p.y.clamp(y0, y0 + res);
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                if ix < 0 || iy < 0 || ix as usize >= self.width || iy as usize >= self.height {
                    return Clearance::Blocked;
                }
                if self.get(ix as usize, iy as usize) != Cell::Free {
                    return Clearance::Blocked;
                }
            }
        }
        Clearance::Free
    }

    /// Distance from (x, y) to the nearest non-free cell center (∞ when there is none).
    pub fn clearance_distance(&self, x: f64, y: f64) -> f64 {
        let mut best = f64::INFINITY;
        for iy in 0..self.height {
            for ix in 0..self.width {
                if self.get(ix, iy) != Cell::Free {
                    let (cx, cy) = self.cell_center(ix, iy);
                    best = best.min((cx - x).hypot(cy - y));
                }
            }
        }
        best
    }

    /// Binary layout: "OGRD", version u32, resolution f64, origin x/y f64, width/height u32,
    /// band min/max f64 (all little-endian), then one byte per cell (0 free, 1 occupied, 2 unknown), row-major.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), OccupancyError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.resolution.to_le_bytes())?;
        w.write_all(&self.origin[0].to_le_bytes())?;
        w.write_all(&self.origin[1].to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&self.height_band.0.to_le_bytes())?;
        w.write_all(&self.height_band.1.to_le_bytes())?;
        let bytes: Vec<u8> = self.cells.iter().map(|c| c.to_byte()).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, OccupancyError> {
        let mut head = [0u8; 56];
        r.read_exact(&mut head).map_err(|_| OccupancyError::Format("header truncated".into()))?;
        if &head[..4] != MAGIC {
            return Err(OccupancyError::Format("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(head[o..o + 8].try_into().unwrap());
        if u32_at(4) != VERSION {
            return Err(OccupancyError::Format(format!("unsupported version {}", u32_at(4))));
        }
        let resolution = f64_at(8);
        let origin = [f64_at(16), f64_at(24)];
        let (width, height) = (u32_at(32) as usize, u32_at(36) as usize);
        let band = (f64_at(40), f64_at(48));
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != width * height {
            return Err(OccupancyError::Format(format!("expected {} cells, found {}", width * height, payload.len())));
        }
        let cells =
            payload.iter().map(|b| Cell::from_byte(*b).ok_or_else(|| OccupancyError::Format(format!("bad cell byte {b}")))).collect::<Result<Vec<_>, _>>()?;
        if !(resolution > 0.0) || !(band.0 < band.1) || width == 0 || height == 0 {
            return Err(OccupancyError::Format("degenerate grid header".into()));
        }
        Ok(Self { resolution, origin, width, height, height_band: band, cells })
    }

    pub fn save(&self, path: &Path) -> Result<(), OccupancyError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, OccupancyError> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

/// A depth image with the world-from-camera pose and intrinsics it was captured with.
#[derive(Debug, Clone)]
pub struct PosedDepth {
    pub depth: ImageDepth,
    pub camera: RigidTransform,
    pub intrinsics: CameraIntrinsics,
}

/// Unprojects every valid depth pixel into the world and bins it.
///
/// A cell is occupied if at least one point inside `height_band` falls in it, free if it
/// only received points outside the band, and unknown if it received none.
pub fn build_occupancy(images: &[PosedDepth], resolution: f64, height_band: (f64, f64), bounds: Bounds2D) -> Result<OccupancyGrid, OccupancyError> {
    if images.is_empty() {
        return Err(OccupancyError::NoImages);
    }
    let mut grid = OccupancyGrid::new(bounds, resolution, height_band, Cell::Unknown)?;
    for (index, img) in images.iter().enumerate() {
        let k = &img.intrinsics;
        if (img.depth.width(), img.depth.height()) != (k.width, k.height) {
            return Err(OccupancyError::SizeMismatch { index, got: (img.depth.width(), img.depth.height()), want: (k.width, k.height) });
        }
        for v in 0..k.height {
            for u in 0..k.width {
                if !img.depth.is_hit(u, v) {
                    continue;
                }
                let p_cam = unproject(u as f64, v as f64, img.depth.get(u, v) as f64, k);
                grid.insert_point(&img.camera.transform_point(&p_cam));
            }
        }
    }
    Ok(grid)
}
