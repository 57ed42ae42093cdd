//! PNG reading/writing for RGB images and 8-bit masks.
//!
//! RGB values map to `[-1, 1]` via `v / 127.5 - 1`; masks map to `[0, 1]`.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|e| image_err(path, e))
}

pub fn to_u8(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn from_u8(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

pub fn load_rgb(path: &Path) -> Result<LatentTensor> {
    let img = open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut t = LatentTensor::zeros(3, h, w);
    let buf = t.as_mut_slice();
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            buf[c * h * w + y as usize * w + x as usize] = from_u8(px.0[c]);
        }
    }
    Ok(t)
}

pub fn rgb_to_image(t: &LatentTensor) -> RgbImage {
    let (c, h, w) = t.shape();
    let data = t.as_slice();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let mut px = [0u8; 3];
        for (ch, slot) in px.iter_mut().enumerate() {
            let src = ch.min(c - 1);
            *slot = to_u8(data[src * h * w + y as usize * w + x as usize]);
        }
        Rgb(px)
    })
}

/// Round-trip a float image through 8-bit quantization.
pub fn quantize(t: &LatentTensor) -> LatentTensor {
    let mut out = t.clone();
    for v in out.as_mut_slice() {
        *v = from_u8(to_u8(*v));
    }
    out
}

pub fn encode_png_rgb(t: &LatentTensor) -> Vec<u8> {
    let mut bytes = Vec::new();
    rgb_to_image(t)
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .expect("in-memory png encoding");
    bytes
}

pub fn save_rgb(t: &LatentTensor, path: &Path) -> Result<()> {
    write_bytes(path, &encode_png_rgb(t))
}

pub fn load_mask(path: &Path) -> Result<Array2<f64>> {
    let img = open(path)?.to_luma8();
    Ok(gray_to_array(&img).mapv(|v| v as f64 / 255.0))
}

pub fn load_mask_raw(path: &Path) -> Result<Array2<u8>> {
    Ok(gray_to_array(&open(path)?.to_luma8()))
}

fn gray_to_array(img: &GrayImage) -> Array2<u8> {
    let (w, h) = img.dimensions();
    Array2::from_shape_fn((h as usize, w as usize), |(i, j)| img.get_pixel(j as u32, i as u32).0[0])
}

/// Encode a binary mask (values 0/1) as 0/255 grayscale PNG.
pub fn encode_png_mask(mask: &Array2<u8>) -> Vec<u8> {
    let (h, w) = mask.dim();
    let img: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask[[y as usize, x as usize]] > 0 { 255 } else { 0 }])
    });
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .expect("in-memory png encoding");
    bytes
}

pub fn image_dimensions(path: &Path) -> Result<(usize, usize)> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let (w, h) = image::image_dimensions(path).map_err(|e| image_err(path, e))?;
    Ok((h as usize, w as usize))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
