//! Float image buffers shared by the renderer, descriptors and metrics.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image has zero size")]
    Empty,
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("image io: {0}")]
    Io(String),
}

/// Row-major RGB image with channels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    width: usize,
    height: usize,
    pixels: Vec<[f32; 3]>,
}

impl ImageRGB {
    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        Self { width, height, pixels: vec![color; width * height] }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[f32; 3]>) -> Result<Self, ImageError> {
        if pixels.len() != width * height {
            return Err(ImageError::DimensionMismatch(width, height, pixels.len(), 1));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [f32; 3]) {
        self.pixels[y * self.width + x] = c;
    }

    /// Bilinear resampling with half-pixel alignment; an identity resize returns the input unchanged.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<ImageRGB, ImageError> {
        if self.width == 0 || self.height == 0 || width == 0 || height == 0 {
            return Err(ImageError::Empty);
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let taps = |dst: usize, scale: f64, n: usize| {
            let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, s - i0 as f64)
        };
        let cols: Vec<_> = (0..width).map(|x| taps(x, sx, self.width)).collect();
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            let (y0, y1, fy) = taps(y, sy, self.height);
            for &(x0, x1, fx) in &cols {
                let mut c = [0f32; 3];
                for (ch, v) in c.iter_mut().enumerate() {
                    let top = self.get(x0, y0)[ch] as f64 * (1.0 - fx) + self.get(x1, y0)[ch] as f64 * fx;
                    let bot = self.get(x0, y1)[ch] as f64 * (1.0 - fx) + self.get(x1, y1)[ch] as f64 * fx;
                    *v = (top * (1.0 - fy) + bot * fy) as f32;
                }
                out.push(c);
            }
        }
        Ok(ImageRGB { width, height, pixels: out })
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for (dst, src) in img.pixels_mut().zip(&self.pixels) {
            *dst = image::Rgb(src.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        img
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let pixels = img.pixels().map(|p| p.0.map(|v| v as f32 / 255.0)).collect();
        Self { width: img.width() as usize, height: img.height() as usize, pixels }
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png).map_err(|e| ImageError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path).map_err(|e| ImageError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }
}

/// Per-pixel depth in meters; [`ImageDepth::NO_HIT`] marks pixels with no surface.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDepth {
    width: usize,
    height: usize,
    depth: Vec<f32>,
}

impl ImageDepth {
    pub const NO_HIT: f32 = 0.0;

    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, depth: vec![Self::NO_HIT; width * height] }
    }

    pub fn from_values(width: usize, height: usize, depth: Vec<f32>) -> Result<Self, ImageError> {
        if depth.len() != width * height {
            return Err(ImageError::DimensionMismatch(width, height, depth.len(), 1));
        }
        Ok(Self { width, height, depth })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.depth[y * self.width + x]
    }

    pub fn values(&self) -> &[f32] {
        &self.depth
    }

    pub fn is_hit(&self, x: usize, y: usize) -> bool {
        let d = self.get(x, y);
        d.is_finite() && d > 0.0
    }
}

/// Binary per-pixel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, ImageError> {
        if bits.len() != width * height {
            return Err(ImageError::DimensionMismatch(width, height, bits.len(), 1));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.count() as f64 / self.bits.len() as f64
    }

    /// Loads a grayscale PNG; any nonzero pixel is set.
    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path).map_err(|e| ImageError::Io(format!("{}: {e}", path.display())))?.to_luma8();
        let bits = img.pixels().map(|p| p.0[0] > 0).collect();
        Ok(Self { width: img.width() as usize, height: img.height() as usize, bits })
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let mut img = image::GrayImage::new(self.width as u32, self.height as u32);
        for (dst, b) in img.pixels_mut().zip(&self.bits) {
            *dst = image::Luma([if *b { 255 } else { 0 }]);
        }
        img.save_with_format(path, image::ImageFormat::Png).map_err(|e| ImageError::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize_is_exact() {
        let img = ImageRGB::from_pixels(3, 2, (0..6).map(|i| [i as f32 / 6.0, 0.5, 1.0]).collect()).unwrap();
        assert_eq!(img.resize_bilinear(3, 2).unwrap(), img);
    }

    #[test]
    fn upsample_interpolates_linearly() {
        let img = ImageRGB::from_pixels(2, 1, vec![[0.0; 3], [1.0; 3]]).unwrap();
        let up = img.resize_bilinear(4, 1).unwrap();
        let r: Vec<f32> = up.pixels().iter().map(|p| p[0]).collect();
        assert_eq!(r, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = ImageRGB::filled(37, 23, [0.3, 0.4, 0.5]);
        let r = img.resize_bilinear(224, 224).unwrap();
        assert!(r.pixels().iter().all(|p| (p[0] - 0.3).abs() < 1e-6 && (p[2] - 0.5).abs() < 1e-6));
    }

    #[test]
    fn zero_size_rejected() {
        assert!(ImageRGB::filled(0, 4, [0.0; 3]).resize_bilinear(2, 2).is_err());
    }

    #[test]
    fn mask_fraction() {
        let mut m = Mask::empty(4, 4);
        for x in 0..4 {
            m.set(x, 0, true);
        }
        assert_eq!(m.fraction(), 0.25);
    }
}
