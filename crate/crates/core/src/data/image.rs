//! Grayscale image operations for ingestion and augmentation.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// Single-channel image with intensities on the 8-bit scale `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<GrayImage> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::shape(format!(
                "image {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> GrayImage {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample at continuous pixel coordinates; coordinates outside
    /// the image take the nearest border value.
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f32, y - y0 as f32);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear resize with pixel-center alignment.
    pub fn resize(&self, width: usize, height: usize) -> GrayImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let src_y = (y as f32 + 0.5) * sy - 0.5;
            for x in 0..width {
                data.push(self.sample((x as f32 + 0.5) * sx - 0.5, src_y));
            }
        }
        GrayImage { width, height, data }
    }

    /// Rotation about the image center by `degrees` (counter-clockwise),
    /// bilinear, with border replication outside the source.
    pub fn rotate(&self, degrees: f32) -> GrayImage {
        if degrees == 0.0 {
            return self.clone();
        }
        let (s, c) = degrees.to_radians().sin_cos();
        let cx = (self.width - 1) as f32 / 2.0;
        let cy = (self.height - 1) as f32 / 2.0;
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            let dy = y as f32 - cy;
            for x in 0..self.width {
                let dx = x as f32 - cx;
                data.push(self.sample(c * dx - s * dy + cx, s * dx + c * dy + cy));
            }
        }
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn crop(&self, r: CropRect) -> Result<GrayImage> {
        if r.width == 0 || r.height == 0 || r.x + r.width > self.width || r.y + r.height > self.height {
            return Err(Error::shape(format!(
                "crop {r:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(r.width * r.height);
        for y in r.y..r.y + r.height {
            data.extend_from_slice(&self.data[y * self.width + r.x..y * self.width + r.x + r.width]);
        }
        Ok(GrayImage {
            width: r.width,
            height: r.height,
            data,
        })
    }

    pub fn flip_horizontal(&self) -> GrayImage {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn center_crop(&self, width: usize, height: usize) -> Result<GrayImage> {
        if width > self.width || height > self.height {
            return Err(Error::shape(format!(
                "center crop {width}x{height} larger than {}x{} image",
                self.width, self.height
            )));
        }
        self.crop(CropRect {
            x: (self.width - width) / 2,
            y: (self.height - height) / 2,
            width,
            height,
        })
    }

    /// Intensities divided by 255.
    pub fn to_unit(&self) -> Vec<f32> {
        self.data.iter().map(|v| (v / 255.0).clamp(0.0, 1.0)).collect()
    }

    pub fn load(path: &Path) -> Result<GrayImage> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let luma = img.to_luma8();
        let (w, h) = luma.dimensions();
        GrayImage::new(w as usize, h as usize, luma.into_raw().into_iter().map(f32::from).collect())
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.to_u8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

pub const MAX_ROTATION_DEG: f32 = 7.0;
pub const CROP_AREA: (f32, f32) = (0.08, 1.0);
pub const CROP_ASPECT: (f32, f32) = (0.75, 4.0 / 3.0);
const CROP_RETRIES: usize = 10;

/// Random choices of one training augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub angle_deg: f32,
    pub crop: CropRect,
    pub flip: bool,
}

fn center_fallback(width: usize, height: usize) -> CropRect {
    let ratio = width as f32 / height as f32;
    let (w, h) = if ratio < CROP_ASPECT.0 {
        (width, ((width as f32 / CROP_ASPECT.0).round() as usize).min(height))
    } else if ratio > CROP_ASPECT.1 {
        (((height as f32 * CROP_ASPECT.1).round() as usize).min(width), height)
    } else {
        (width, height)
    };
    CropRect {
        x: (width - w) / 2,
        y: (height - h) / 2,
        width: w,
        height: h,
    }
}

/// Crop rectangle with a given area fraction and width/height ratio, if it
/// fits; the position is drawn uniformly.
pub fn crop_for(width: usize, height: usize, area: f32, aspect: f32, rng: &mut impl Rng) -> Option<CropRect> {
    let target = area * (width * height) as f32;
    let w = (target * aspect).sqrt().round() as usize;
    let h = (target / aspect).sqrt().round() as usize;
    if w == 0 || h == 0 || w > width || h > height {
        return None;
    }
    Some(CropRect {
        x: rng.gen_range(0..=width - w),
        y: rng.gen_range(0..=height - h),
        width: w,
        height: h,
    })
}

impl AugmentParams {
    pub fn identity(width: usize, height: usize) -> AugmentParams {
        AugmentParams {
            angle_deg: 0.0,
            crop: CropRect {
                x: 0,
                y: 0,
                width,
                height,
            },
            flip: false,
        }
    }

    pub fn sample(width: usize, height: usize, rng: &mut impl Rng) -> AugmentParams {
        let angle_deg = rng.gen_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
        let mut crop = None;
        for _ in 0..CROP_RETRIES {
            let area = rng.gen_range(CROP_AREA.0..=CROP_AREA.1);
            let aspect = rng.gen_range(CROP_ASPECT.0..=CROP_ASPECT.1);
            crop = crop_for(width, height, area, aspect, rng);
            if crop.is_some() {
                break;
            }
        }
        let crop = crop.unwrap_or_else(|| center_fallback(width, height));
        let flip = rng.gen_bool(0.5);
        AugmentParams { angle_deg, crop, flip }
    }

    /// rotate, crop, flip, resize to `size`, scale to `[0, 1]`.
    pub fn apply(&self, image: &GrayImage, size: usize) -> Result<Vec<f32>> {
        let mut img = image.rotate(self.angle_deg).crop(self.crop)?;
        if self.flip {
            img = img.flip_horizontal();
        }
        Ok(img.resize(size, size).to_unit())
    }
}

pub fn augment_train(image: &GrayImage, size: usize, rng: &mut impl Rng) -> Result<Vec<f32>> {
    AugmentParams::sample(image.width, image.height, rng).apply(image, size)
}

/// Resize target before the evaluation center crop: 256 for 224 and 480 for
/// 448; other sizes keep the 224/256 ratio.
pub fn eval_resize(size: usize) -> usize {
    match size {
        224 => 256,
        448 => 480,
        s => (s * 8 + 3) / 7,
    }
}

pub fn preprocess_eval(image: &GrayImage, size: usize) -> Result<Vec<f32>> {
    let r = eval_resize(size);
    Ok(image.resize(r, r).center_crop(size, size)?.to_unit())
}

/// Maps a continuous position in an evaluation input of side `size` back to
/// the `width x height` source image it was preprocessed from.
pub fn eval_to_source(x: f32, y: f32, width: usize, height: usize, size: usize) -> (f32, f32) {
    let r = eval_resize(size);
    let offset = ((r - size) / 2) as f32;
    ((x + offset) * width as f32 / r as f32, (y + offset) * height as f32 / r as f32)
}
