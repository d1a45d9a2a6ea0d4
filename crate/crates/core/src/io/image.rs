//! Image loading to `[-1, 1]` tensors and replicate padding.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reads a PNG or PPM image as `[1, 3, H, W]` with values in `[-1, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let img = ::image::open(path.as_ref())?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Ok(Tensor::from_fn(&[1, 3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f32 / 127.5 - 1.0
    }))
}

/// Writes 8-bit RGB pixels; the format follows the file extension.
pub fn save_rgb(path: impl AsRef<Path>, img: &::image::RgbImage) -> Result<()> {
    img.save(path.as_ref())?;
    Ok(())
}

/// Writes a `[3, H, W]` or `[1, 3, H, W]` tensor in `[-1, 1]` as 8-bit RGB,
/// the inverse of [`load_image`] up to rounding.
pub fn save_image(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let (h, w) = match t.shape() {
        &[3, h, w] | &[1, 3, h, w] => (h, w),
        s => return Err(Error::InvalidArgument(format!("expected a [3, H, W] image, got {s:?}"))),
    };
    let d = t.data();
    let px = |c: usize, x: u32, y: u32| ((d[(c * h + y as usize) * w + x as usize] + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
    let img = ::image::RgbImage::from_fn(w as u32, h as u32, |x, y| ::image::Rgb([px(0, x, y), px(1, x, y), px(2, x, y)]));
    save_rgb(path, &img)
}

/// Pads `[B, C, H, W]` at the bottom and right by repeating the last row and
/// column until both extents are multiples of `m`.
pub fn pad_to_multiple(t: &Tensor<f32>, m: usize) -> Result<Tensor<f32>> {
    if t.ndim() != 4 || m == 0 {
        return Err(Error::InvalidArgument(format!("cannot pad shape {:?} to a multiple of {m}", t.shape())));
    }
    let &[b, c, h, w] = t.shape() else { unreachable!() };
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (ph, pw) == (h, w) {
        return Ok(t.clone());
    }
    let d = t.data();
    Ok(Tensor::from_fn(&[b, c, ph, pw], |i| {
        let (bc, y, x) = (i / (ph * pw), (i / pw) % ph, i % pw);
        d[(bc * h + y.min(h - 1)) * w + x.min(w - 1)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replicate_pad_repeats_edges() {
        let t = Tensor::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[1, 1, 2, 3]).unwrap();
        let p = pad_to_multiple(&t, 4).unwrap();
        assert_eq!(p.shape(), &[1, 1, 4, 4]);
        assert_eq!(&p.data()[..4], &[1.0, 2.0, 3.0, 3.0]);
        assert_eq!(&p.data()[12..], &[4.0, 5.0, 6.0, 6.0]);
    }

    #[test]
    fn png_round_trip_maps_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = ::image::RgbImage::from_fn(2, 1, |x, _| ::image::Rgb([0, 255, if x == 0 { 0 } else { 255 }]));
        save_rgb(&path, &img).unwrap();
        let t = load_image(&path).unwrap();
        assert_eq!(t.shape(), &[1, 3, 1, 2]);
        assert_eq!(t.data(), &[-1.0, -1.0, 1.0, 1.0, -1.0, 1.0]);
    }
}
