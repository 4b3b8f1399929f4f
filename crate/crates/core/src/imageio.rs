//! 8-bit RGB PNG reading/writing for `[3, H, W]` tensors in `[0, 1]`.

use adar_tensor::Tensor;
use std::path::Path;

use crate::{Error, Result};

fn image_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Quantizes `[C, H, W]` (C = 1 or 3) values in `[0, 1]` to 8 bits, RGB order.
pub fn to_rgb8(img: &Tensor<f32>) -> Result<(u32, u32, Vec<u8>)> {
    let (c, h, w) = match *img.shape() {
        [c @ (1 | 3), h, w] => (c, h, w),
        ref s => return Err(Error::Invalid(format!("expected [1|3, H, W] image, got {s:?}"))),
    };
    let hw = h * w;
    let d = img.data();
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let mut buf = Vec::with_capacity(3 * hw);
    for i in 0..hw {
        for ch in 0..3 {
            buf.push(q(d[(ch % c) * hw + i]));
        }
    }
    Ok((w as u32, h as u32, buf))
}

pub fn save_png(path: impl AsRef<Path>, img: &Tensor<f32>) -> Result<()> {
    save_png_with_text(path, img, &[])
}

/// Writes an RGB PNG carrying `(keyword, text)` pairs as `tEXt` chunks.
pub fn save_png_with_text(path: impl AsRef<Path>, img: &Tensor<f32>, text: &[(&str, &str)]) -> Result<()> {
    let path = path.as_ref();
    let (w, h, buf) = to_rgb8(img)?;
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, w, h);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        for (k, v) in text {
            enc.add_text_chunk(k.to_string(), v.to_string())
                .map_err(|e| image_error(path, e))?;
        }
        let mut writer = enc.write_header().map_err(|e| image_error(path, e))?;
        writer.write_image_data(&buf).map_err(|e| image_error(path, e))?;
        writer.finish().map_err(|e| image_error(path, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// The `tEXt` chunks of a PNG file.
pub fn read_png_text(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = png::Decoder::new(std::io::BufReader::new(file))
        .read_info()
        .map_err(|e| image_error(path, e))?;
    Ok(reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .map(|c| (c.keyword.clone(), c.text.clone()))
        .collect())
}

/// Loads any 8-bit image as `[3, H, W]` with values `k / 255`.
pub fn load_png(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => image_error(path, other),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let hw = w * h;
    let mut data = vec![0.0f32; 3 * hw];
    for (i, px) in img.pixels().enumerate() {
        for ch in 0..3 {
            data[ch * hw + i] = (px.0[ch] as f64 / 255.0) as f32;
        }
    }
    Ok(Tensor::new([3, h, w], data)?)
}

/// Tiles `[C, H, W]` images (all the same size) into `rows x cols`,
/// separated by 1-pixel gray lines.
pub fn grid(images: &[Tensor<f32>], cols: usize) -> Result<Tensor<f32>> {
    let first = images.first().ok_or_else(|| Error::Invalid("grid: no images".into()))?;
    let (h, w) = (first.shape()[1], first.shape()[2]);
    let rows = images.len().div_ceil(cols);
    let (gh, gw) = (rows * (h + 1) + 1, cols * (w + 1) + 1);
    let mut data = vec![0.5f32; 3 * gh * gw];
    for (k, img) in images.iter().enumerate() {
        let c = img.shape()[0];
        if img.shape()[1..] != [h, w] {
            return Err(Error::Invalid("grid: images differ in size".into()));
        }
        let (oy, ox) = ((k / cols) * (h + 1) + 1, (k % cols) * (w + 1) + 1);
        for ch in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data[(ch * gh + oy + y) * gw + ox + x] = img.data()[((ch % c) * h + y) * w + x];
                }
            }
        }
    }
    Ok(Tensor::new([3, gh, gw], data)?)
}
