//! 8-bit RGB PNG reading and writing, and reflective padding.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor_core::{Shape, Tensor};

/// Reads any image the decoder understands as a `(1, 3, H, W)` tensor in `[0, 1]`.
pub fn load_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    Ok(from_rgb8(&img))
}

pub fn from_rgb8(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    Tensor::from_fn(Shape::new(1, 3, h as usize, w as usize), |_, c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    })
}

/// Quantises a value in `[0, 1]` to 8 bits: clamp, scale by 255, round half to even.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

/// Converts one batch item of a 3-channel tensor to an 8-bit image.
pub fn to_rgb8(t: &Tensor, item: usize) -> Result<RgbImage> {
    let s = t.shape();
    if s.channels != 3 || item >= s.batch {
        return Err(Error::shape("to_rgb8", format!("need a 3-channel item {item} of {s}")));
    }
    Ok(ImageBuffer::from_fn(s.width as u32, s.height as u32, |x, y| {
        Rgb([0, 1, 2].map(|c| quantize(t.at(item, c, y as usize, x as usize))))
    }))
}

/// Writes the first batch item as an 8-bit RGB PNG. Single-channel tensors are written as
/// grey.
pub fn save_png(path: &Path, t: &Tensor) -> Result<()> {
    let t = if t.shape().channels == 1 {
        let s = t.shape();
        Tensor::from_fn(Shape::new(s.batch, 3, s.height, s.width), |b, _, y, x| t.at(b, 0, y, x))
    } else {
        t.clone()
    };
    to_rgb8(&t, 0)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Pads bottom and right by reflection so both sides are multiples of `multiple`.
pub fn reflect_pad(t: &Tensor, multiple: usize) -> Tensor {
    let s = t.shape();
    let up = |n: usize| n.div_ceil(multiple) * multiple;
    let (h, w) = (up(s.height), up(s.width));
    if (h, w) == (s.height, s.width) {
        return t.clone();
    }
    Tensor::from_fn(Shape::new(s.batch, s.channels, h, w), |b, c, y, x| {
        t.at(b, c, reflect(y, s.height), reflect(x, s.width))
    })
}

/// Top-left `height x width` window.
pub fn crop(t: &Tensor, height: usize, width: usize) -> Tensor {
    let s = t.shape();
    Tensor::from_fn(Shape::new(s.batch, s.channels, height, width), |b, c, y, x| t.at(b, c, y, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantisation_rounds_half_to_even() {
        assert_eq!(quantize(0.5), 128); // 127.5 -> 128
        assert_eq!(quantize(1.5 / 255.0), 2);
        assert_eq!(quantize(2.5 / 255.0), 2);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(1.7), 255);
        for v in 0..=255u8 {
            assert_eq!(quantize(v as f64 / 255.0), v);
        }
    }

    #[test]
    fn png_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let t = Tensor::from_fn(Shape::new(1, 3, 5, 7), |_, c, y, x| ((c * 91 + y * 37 + x * 13) % 256) as f64 / 255.0);
        save_png(&path, &t).unwrap();
        assert_eq!(load_png(&path).unwrap(), t);
    }

    #[test]
    fn reflect_padding() {
        let t = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        let p = reflect_pad(&t, 4);
        assert_eq!(p.shape(), Shape::new(1, 1, 4, 4));
        assert_eq!(&p.data()[..4], &[1.0, 2.0, 3.0, 2.0]);
        assert!(p.data().chunks(4).all(|r| r == [1.0, 2.0, 3.0, 2.0]));
        assert_eq!(crop(&p, 1, 3), t);
        assert_eq!(reflect(5, 3), 1);
        assert_eq!(reflect(4, 3), 0);
    }
}
