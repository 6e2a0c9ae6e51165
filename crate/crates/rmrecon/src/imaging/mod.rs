//! HDR image buffers, masks, pinhole cameras, and file/scene I/O.

mod camera;
mod pfm;
mod scene;

pub use camera::Camera;
pub use pfm::{decode_pfm, encode_pfm, load_pfm, save_pfm};
pub use scene::{load_scene, save_scene, SceneConfig, SceneView, VolumeBox};

use std::path::Path;

use crate::error::{Error, Result};

/// Default floor applied before taking the log of radiance values.
pub const LOG_FLOOR: f64 = 1e-6;

/// Float image, row-major with top-left origin. Radiance buffers hold
/// nonnegative values; derived buffers (logs, normal channels) may not.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageF {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!("non-finite value {v}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Validates the radiance invariant (finite, nonnegative).
    pub fn validate_radiance(&self) -> Result<()> {
        if let Some(v) = self.data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidImage(format!(
                "radiance must be finite and nonnegative, got {v}"
            )));
        }
        Ok(())
    }
}

/// Elementwise natural log of `max(value, floor)`.
pub fn log_radiance(image: &ImageF, floor: f64) -> ImageF {
    assert!(floor > 0.0, "log floor must be positive");
    ImageF {
        width: image.width,
        height: image.height,
        channels: image.channels,
        data: image.data.iter().map(|&v| v.max(floor).ln()).collect(),
    }
}

/// Binary object mask paired with an image of the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "mask length {} != {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// 8-neighborhood dilation by one pixel.
    pub fn dilate(&self) -> MaskImage {
        let (w, h) = (self.width as i64, self.height as i64);
        let mut out = vec![false; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                if !self.data[(y * w + x) as usize] {
                    continue;
                }
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && nx < w && ny >= 0 && ny < h {
                            out[(ny * w + nx) as usize] = true;
                        }
                    }
                }
            }
        }
        MaskImage {
            width: self.width,
            height: self.height,
            data: out,
        }
    }

    /// Removes mask pixels within `radius` (Chebyshev) of an unmasked pixel
    /// or the image border.
    pub fn erode(&self, radius: usize) -> MaskImage {
        let mut cur = self.clone();
        for _ in 0..radius {
            let (w, h) = (cur.width as i64, cur.height as i64);
            let mut out = vec![false; cur.data.len()];
            for y in 0..h {
                for x in 0..w {
                    if !cur.data[(y * w + x) as usize] {
                        continue;
                    }
                    let mut keep = true;
                    'scan: for dy in -1..=1 {
                        for dx in -1..=1 {
                            let (nx, ny) = (x + dx, y + dy);
                            if nx < 0 || nx >= w || ny < 0 || ny >= h {
                                keep = false;
                                break 'scan;
                            }
                            if !cur.data[(ny * w + nx) as usize] {
                                keep = false;
                                break 'scan;
                            }
                        }
                    }
                    out[(y * w + x) as usize] = keep;
                }
            }
            cur = MaskImage {
                width: cur.width,
                height: cur.height,
                data: out,
            };
        }
        cur
    }
}

/// Loads an 8-bit PNG as a mask, thresholding at 128.
pub fn load_mask(path: impl AsRef<Path>) -> Result<MaskImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
    let gray = img.to_luma8();
    let data = gray.pixels().map(|p| p.0[0] >= 128).collect();
    MaskImage::new(gray.width() as usize, gray.height() as usize, data)
}

/// Saves a mask as an 8-bit gray PNG (object = 255).
pub fn save_mask(mask: &MaskImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(mask.width as u32, mask.height as u32, buf)
        .ok_or_else(|| Error::Png("mask buffer size mismatch".into()))?;
    img.save(path)
        .map_err(|e| Error::Png(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_radiance_identity_and_floor() {
        let img = ImageF::new(2, 1, 1, vec![1.0, 0.0]).unwrap();
        let log = log_radiance(&img, 1e-6);
        assert_eq!(log.data[0], 0.0);
        assert_eq!(log.data[1], (1e-6f64).ln());
    }

    #[test]
    fn log_radiance_inverse_above_floor() {
        let vals = vec![1e-6, 0.01, 1.0, 37.5, 1e4];
        let img = ImageF::new(5, 1, 1, vals.clone()).unwrap();
        let log = log_radiance(&img, 1e-6);
        for (orig, l) in vals.iter().zip(&log.data) {
            assert!((l.exp() - orig).abs() <= 1e-12 * orig.max(1.0));
        }
    }

    #[test]
    fn log_radiance_monotone_finite() {
        let vals: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        let img = ImageF::new(100, 1, 1, vals).unwrap();
        let log = log_radiance(&img, 1e-6);
        for w in log.data.windows(2) {
            assert!(w[1] >= w[0]);
            assert!(w[0].is_finite() && w[1].is_finite());
        }
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let mask = MaskImage::new(3, 2, vec![true, false, true, false, true, false]).unwrap();
        save_mask(&mask, &p).unwrap();
        let back = load_mask(&p).unwrap();
        assert_eq!(mask, back);
    }
}
