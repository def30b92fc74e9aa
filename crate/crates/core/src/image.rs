//! Plain images and label maps exchanged between the generators, the
//! networks and the evaluation code.

use std::path::Path;

use objman_tensor::{Scalar, Tensor};

use crate::{Error, Result};

/// An `H × W × 3` image with channel values in `[0, 1]`, stored pixel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width * 3] }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut img = Self::new(height, width);
        for px in img.data.chunks_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for i in 0..height {
            for j in 0..width {
                data.extend_from_slice(&f(i, j));
            }
        }
        Self { height, width, data }
    }

    pub fn from_raw(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!("{}x{}x3 image from {} values", height, width, data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, i: usize, j: usize) -> [f32; 3] {
        let o = (i * self.width + j) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, i: usize, j: usize, rgb: [f32; 3]) {
        let o = (i * self.width + j) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Rec. 601 luma per pixel, row-major.
    pub fn luminance(&self) -> Vec<f32> {
        self.data.chunks(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect()
    }

    /// Channel-first `[3, H, W]` tensor.
    pub fn to_chw<T: Scalar>(&self) -> Tensor<T> {
        let plane = self.height * self.width;
        let mut out = vec![T::zero(); 3 * plane];
        for (p, px) in self.data.chunks(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = T::lit(px[c] as f64);
            }
        }
        Tensor::from_vec(&[3, self.height, self.width], out).expect("sized above")
    }

    /// Inverse of [`ImageTensor::to_chw`]; accepts `[3, H, W]` or `[1, 3, H, W]`.
    pub fn from_chw<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        let (h, w) = match s {
            [3, h, w] | [1, 3, h, w] => (*h, *w),
            _ => return Err(Error::Shape(format!("expected a [3, H, W] image tensor, got {s:?}"))),
        };
        let plane = h * w;
        let src = t.data();
        let mut data = vec![0.0; 3 * plane];
        for p in 0..plane {
            for c in 0..3 {
                data[p * 3 + c] = src[c * plane + p].as_f64() as f32;
            }
        }
        Ok(Self { height: h, width: w, data })
    }

    /// Stacks images into an `[N, 3, H, W]` batch.
    pub fn batch<T: Scalar>(images: &[&ImageTensor]) -> Result<Tensor<T>> {
        let items: Vec<Tensor<T>> = images.iter().map(|im| im.to_chw()).collect();
        Ok(Tensor::stack(&items)?)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("sized buffer")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Self { height: img.height() as usize, width: img.width() as usize, data }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|e| image_err(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }
}

pub(crate) fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

/// Per-pixel integer labels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, labels: vec![0; height * width] }
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.labels[i * self.width + j]
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .expect("sized buffer");
        img.save(path).map_err(|e| image_err(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| image_err(path, e))?;
        if img.color() != image::ColorType::L8 {
            return Err(Error::format(path, format!("label map must be 8-bit gray, found {:?}", img.color())));
        }
        let img = img.to_luma8();
        Ok(Self { height: img.height() as usize, width: img.width() as usize, labels: img.into_raw() })
    }
}
