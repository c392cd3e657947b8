//! Image conversion and PPM output. Images are `[C, H, W]` tensors in `[0, 1]`.

use std::fs;
use std::path::Path;

use image::imageops::FilterType;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn chw(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.dims() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::InvalidShape(format!("expected [C, H, W] image, got {}", t.shape()))),
    }
}

/// `[3, H, W]` RGB → `[1, H, W]` gray.
pub fn to_grayscale(img: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(img)?;
    if c != 3 {
        return Err(Error::InvalidShape(format!("grayscale needs 3 channels, got {c}")));
    }
    let plane = h * w;
    let d = img.data();
    let gray = (0..plane)
        .map(|p| LUMA[0] * d[p] + LUMA[1] * d[plane + p] + LUMA[2] * d[2 * plane + p])
        .collect();
    Tensor::from_vec([1, h, w], gray)
}

/// Copies a single plane `copies` times: `[1, H, W]` → `[copies, H, W]`.
pub fn replicate(gray: &Tensor, copies: usize) -> Result<Tensor> {
    let (c, h, w) = chw(gray)?;
    if c != 1 || copies == 0 {
        return Err(Error::InvalidArgument(format!("replicate {} plane(s) {copies} times", c)));
    }
    Tensor::from_vec([copies, h, w], gray.data().repeat(copies))
}

/// Prepends or appends planes so the channel count becomes `target`:
/// each extra plane is `fill`.
pub fn pad_channels(img: &Tensor, fill: &Tensor, target: usize, prepend: bool) -> Result<Tensor> {
    let (c, h, w) = chw(img)?;
    let (fc, fh, fw) = chw(fill)?;
    if fc != 1 || fh != h || fw != w || target < c {
        return Err(Error::InvalidArgument(format!("cannot pad {} to {target} channels", img.shape())));
    }
    let extra = fill.data().repeat(target - c);
    let data = if prepend {
        [extra, img.data().to_vec()].concat()
    } else {
        [img.data().to_vec(), extra].concat()
    };
    Tensor::from_vec([target, h, w], data)
}

/// Loads any supported image file as `[3, H, W]`.
pub fn load_rgb(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    Ok(rgb8_to_tensor(&img))
}

/// Loads an image, center-crops it to a square and resizes to `side × side`.
pub fn load_rgb_square(path: &Path, side: usize) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    if w as usize == side && h as usize == side {
        return Ok(rgb8_to_tensor(&img));
    }
    let s = w.min(h);
    let cropped = image::imageops::crop_imm(&img, (w - s) / 2, (h - s) / 2, s, s).to_image();
    let resized = image::imageops::resize(&cropped, side as u32, side as u32, FilterType::Lanczos3);
    Ok(rgb8_to_tensor(&resized))
}

fn rgb8_to_tensor(img: &image::RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = f64::from(px[c]) / 255.0;
        }
    }
    Tensor::from_vec([3, h, w], data).expect("image buffer")
}

/// Binary PPM (P6, maxval 255) bytes of a `[3, H, W]` image; values are
/// clamped to `[0, 1]` and rounded.
pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = chw(img)?;
    if c != 3 {
        return Err(Error::InvalidShape(format!("PPM needs 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..3 {
            let v = img.data()[ch * plane + p];
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn write_ppm(path: &Path, img: &Tensor) -> Result<()> {
    let bytes = encode_ppm(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
