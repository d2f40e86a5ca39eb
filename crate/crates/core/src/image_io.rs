//! 8-bit RGB image files (PNG and binary PPM) to and from normalized
//! `[3,H,W]` tensors.

use std::path::Path;

use image::{DynamicImage, ExtendedColorType, ImageFormat, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::real::{r, Real};
use crate::tensor::Tensor;

/// Decode a PNG or PPM(P6) file into a `[3,H,W]` tensor with values `k/255`.
pub fn load_image<R: Real>(path: &Path) -> Result<Tensor<R>> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let decoded: DynamicImage = reader
        .decode()
        .map_err(|e| Error::Format(format!("cannot decode {}: {e}", path.display())))?;
    let rgb: RgbImage = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![R::zero(); 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[(c * h + y) * w + x] = r::<R>(px.0[c] as f64 / 255.0);
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Round a normalized channel value to its 8-bit code.
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Quantize a tensor onto the 8-bit grid (`k/255` values), as written to disk.
pub fn quantize_tensor<R: Real>(t: &Tensor<R>) -> Tensor<R> {
    let data = t
        .data()
        .iter()
        .map(|&v| r::<R>(quantize_u8(v.to_f64_lossy()) as f64 / 255.0))
        .collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

/// Encode a `[3,H,W]` tensor as an 8-bit RGB image; the format follows the
/// file extension (`.png` or `.ppm`).
pub fn save_image<R: Real>(t: &Tensor<R>, path: &Path) -> Result<()> {
    let shape = t.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::Shape(format!(
            "save_image expects [3,H,W], got {shape:?}"
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    let mut bytes = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                bytes.push(quantize_u8(t.at3(c, y, x).to_f64_lossy()));
            }
        }
    }
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => ImageFormat::Png,
        Some("ppm") => ImageFormat::Pnm,
        other => {
            return Err(Error::Argument(format!(
                "unsupported image extension {other:?} (use .png or .ppm)"
            )))
        }
    };
    image::save_buffer_with_format(
        path,
        &bytes,
        w as u32,
        h as u32,
        ExtendedColorType::Rgb8,
        format,
    )
    .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor<f64> {
        let mut t = Tensor::zeros(vec![3, 4, 5]);
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..5 {
                    *t.at3_mut(c, y, x) = ((c * 83 + y * 17 + x * 29) % 256) as f64 / 255.0;
                }
            }
        }
        t
    }

    #[test]
    fn png_round_trip_is_exact_on_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let t = sample();
        save_image(&t, &path).unwrap();
        let back: Tensor<f64> = load_image(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert!(back.max_abs_diff(&t).unwrap() < 1e-12);
    }

    #[test]
    fn ppm_round_trip_is_exact_on_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let t = sample();
        save_image(&t, &path).unwrap();
        let back: Tensor<f64> = load_image(&path).unwrap();
        assert!(back.max_abs_diff(&t).unwrap() < 1e-12);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_image::<f64>(Path::new("/nonexistent/nope.png")).unwrap_err();
        assert!(err.is_io());
    }

    #[test]
    fn quantization_rounds_to_nearest_code() {
        assert_eq!(quantize_u8(0.0), 0);
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(0.5), 128);
        assert_eq!(quantize_u8(-0.3), 0);
        assert_eq!(quantize_u8(1.7), 255);
    }
}
