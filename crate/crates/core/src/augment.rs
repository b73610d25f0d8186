//! Masking augmentation for grayscale text-line images.
//!
//! A binomial number of full-height vertical bands is replaced with uniform
//! 8-bit noise. Band left edges are uniform over the image width, band widths
//! uniform over `[min_width, max_width]`; bands are clipped at the right border
//! and may overlap.

use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const LINE_HEIGHT: usize = 40;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl LineImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::MalformedImage(format!(
                "empty image {width}x{height}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::MalformedImage(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// Binary PGM (`P5`, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::MalformedImage("truncated PGM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        if fields[0] != "P5" {
            return Err(Error::MalformedImage(format!(
                "unsupported PGM magic {:?}",
                fields[0]
            )));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::MalformedImage(format!("bad PGM number {s:?}")))
        };
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(Error::MalformedImage(format!(
                "unsupported maxval {maxval}"
            )));
        }
        let raster = bytes.get(pos..).unwrap_or(&[]);
        if raster.len() != width * height {
            return Err(Error::MalformedImage(format!(
                "expected {} raster bytes, found {}",
                width * height,
                raster.len()
            )));
        }
        Self::new(height, width, raster.to_vec())
    }
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<LineImage> {
    let path = path.as_ref();
    LineImage::from_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_pgm(img: &LineImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, img.to_pgm()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskingParams {
    /// Per-column success probability of the binomial region count.
    pub probability: f64,
    pub min_width: usize,
    pub max_width: usize,
}

impl MaskingParams {
    pub fn new(probability: f64, min_width: usize, max_width: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&probability) {
            return Err(Error::InvalidParam(format!(
                "masking probability {probability} outside [0, 1)"
            )));
        }
        if min_width == 0 || min_width > max_width {
            return Err(Error::InvalidParam(format!(
                "masking width range [{min_width}, {max_width}] is invalid"
            )));
        }
        if probability * max_width as f64 >= 1.0 {
            log::warn!(
                "masking p * max_width = {} >= 1; most of each line will be masked",
                probability * max_width as f64
            );
        }
        Ok(Self {
            probability,
            min_width,
            max_width,
        })
    }

    /// Expected fraction of columns covered, ignoring overlap and clipping.
    pub fn expected_area_fraction(&self) -> f64 {
        self.probability * (self.min_width + self.max_width) as f64 / 2.0
    }
}

impl Default for MaskingParams {
    fn default() -> Self {
        masking_setting(MaskingSetting::Base)
    }
}

/// The three equal-volume masking configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingSetting {
    Half,
    Base,
    Double,
}

impl MaskingSetting {
    pub const ALL: [MaskingSetting; 3] = [
        MaskingSetting::Half,
        MaskingSetting::Base,
        MaskingSetting::Double,
    ];
}

pub fn masking_setting(setting: MaskingSetting) -> MaskingParams {
    let (probability, min_width, max_width) = match setting {
        MaskingSetting::Half => (2.5e-3, 5, 80),
        MaskingSetting::Base => (5e-3, 5, 40),
        MaskingSetting::Double => (10e-3, 5, 20),
    };
    MaskingParams {
        probability,
        min_width,
        max_width,
    }
}

/// Draws the masked column bands for an image of `width` columns. Each band
/// is returned unclipped as `(left, width)`.
pub fn sample_regions<R: Rng>(
    width: usize,
    params: &MaskingParams,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    if params.probability == 0.0 {
        return Vec::new();
    }
    let count = Binomial::new(width as u64, params.probability)
        .expect("probability validated")
        .sample(rng);
    (0..count)
        .map(|_| {
            let left = rng.random_range(0..width);
            let w = rng.random_range(params.min_width..=params.max_width);
            (left, w)
        })
        .collect()
}

/// Masked image and the clipped column ranges that were overwritten.
pub fn mask_line_with_regions(
    img: &LineImage,
    params: &MaskingParams,
    seed: u64,
) -> (LineImage, Vec<Range<usize>>) {
    let mut rng = seed::rng(seed);
    let regions = sample_regions(img.width, params, &mut rng);
    let mut out = img.clone();
    let mut ranges = Vec::with_capacity(regions.len());
    for (left, w) in regions {
        let cols = left..(left + w).min(img.width);
        for row in 0..img.height {
            for col in cols.clone() {
                out.pixels[row * img.width + col] = rng.random();
            }
        }
        ranges.push(cols);
    }
    (out, ranges)
}

pub fn mask_line(img: &LineImage, params: &MaskingParams, seed: u64) -> LineImage {
    mask_line_with_regions(img, params, seed).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(width: usize) -> LineImage {
        let pixels = (0..LINE_HEIGHT * width).map(|i| (i % 251) as u8).collect();
        LineImage::new(LINE_HEIGHT, width, pixels).unwrap()
    }

    #[test]
    fn zero_probability_is_identity() {
        let img = gradient(300);
        let p = MaskingParams::new(0.0, 5, 40).unwrap();
        for seed in 0..20 {
            assert_eq!(mask_line(&img, &p, seed), img);
        }
    }

    #[test]
    fn pixels_outside_regions_unchanged() {
        let img = gradient(800);
        let p = MaskingParams::new(0.02, 5, 40).unwrap();
        let (out, regions) = mask_line_with_regions(&img, &p, 11);
        assert!(!regions.is_empty());
        for col in 0..img.width() {
            let masked = regions.iter().any(|r| r.contains(&col));
            if !masked {
                for row in 0..LINE_HEIGHT {
                    assert_eq!(out.get(row, col), img.get(row, col));
                }
            }
        }
    }

    #[test]
    fn same_seed_same_output() {
        let img = gradient(500);
        let p = masking_setting(MaskingSetting::Double);
        assert_eq!(mask_line(&img, &p, 99), mask_line(&img, &p, 99));
        assert_ne!(mask_line(&img, &p, 99), mask_line(&img, &p, 100));
    }

    #[test]
    fn settings_table() {
        let base = masking_setting(MaskingSetting::Base);
        assert_eq!(
            (base.probability, base.min_width, base.max_width),
            (5e-3, 5, 40)
        );
        let half = masking_setting(MaskingSetting::Half);
        assert_eq!(
            (half.probability, half.min_width, half.max_width),
            (2.5e-3, 5, 80)
        );
        let double = masking_setting(MaskingSetting::Double);
        assert_eq!(
            (double.probability, double.min_width, double.max_width),
            (10e-3, 5, 20)
        );
    }

    #[test]
    fn invalid_params() {
        assert!(MaskingParams::new(1.0, 5, 40).is_err());
        assert!(MaskingParams::new(0.1, 0, 40).is_err());
        assert!(MaskingParams::new(0.1, 50, 40).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let img = gradient(37);
        let back = LineImage::from_pgm(&img.to_pgm()).unwrap();
        assert_eq!(back, img);
        let with_comment = b"P5\n# note\n2 1\n255\n\x00\xff";
        let small = LineImage::from_pgm(with_comment).unwrap();
        assert_eq!(small.pixels(), &[0, 255]);
        assert!(LineImage::from_pgm(b"P2\n2 1\n255\n01").is_err());
        assert!(LineImage::from_pgm(b"P5\n2 2\n255\n\x00").is_err());
    }
}
