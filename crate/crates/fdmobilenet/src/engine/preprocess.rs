//! Image preprocessing: bilinear resize, center crop, intensity scaling.

use crate::tensor::{Shape, Tensor};

use super::EngineError;

/// Bilinear resample to `new_h` x `new_w` using half-pixel sample centers:
/// destination pixel `d` reads from source coordinate
/// `(d + 0.5) * size_ratio - 0.5`, clamped to the image.
pub fn resize_bilinear(image: &Tensor, new_h: usize, new_w: usize) -> Result<Tensor, EngineError> {
    let Shape { n, c, h, w } = image.shape();
    let out_shape = Shape::new(n, c, new_h, new_w)?;
    if (new_h, new_w) == (h, w) {
        return Ok(image.clone());
    }
    let scale_y = h as f32 / new_h as f32;
    let scale_x = w as f32 / new_w as f32;
    // Precompute the source taps for each destination column.
    let x_taps: Vec<(usize, usize, f32)> = (0..new_w)
        .map(|dx| source_taps(dx, scale_x, w))
        .collect();
    let mut out = vec![0.0f32; out_shape.numel()];
    for plane in 0..n * c {
        let src = &image.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * new_h * new_w..(plane + 1) * new_h * new_w];
        for dy in 0..new_h {
            let (y0, y1, fy) = source_taps(dy, scale_y, h);
            let row0 = &src[y0 * w..(y0 + 1) * w];
            let row1 = &src[y1 * w..(y1 + 1) * w];
            let dst_row = &mut dst[dy * new_w..(dy + 1) * new_w];
            for (d, &(x0, x1, fx)) in dst_row.iter_mut().zip(&x_taps) {
                let top = row0[x0] + fx * (row0[x1] - row0[x0]);
                let bottom = row1[x0] + fx * (row1[x1] - row1[x0]);
                *d = top + fy * (bottom - top);
            }
        }
    }
    Ok(Tensor::new(out_shape, out).expect("sized to shape"))
}

fn source_taps(dst: usize, scale: f32, size: usize) -> (usize, usize, f32) {
    let center = (dst as f32 + 0.5) * scale - 0.5;
    let clamped = center.clamp(0.0, (size - 1) as f32);
    let lo = clamped.floor() as usize;
    let hi = (lo + 1).min(size - 1);
    (lo, hi, clamped - lo as f32)
}

/// Cut the centered `size` x `size` window, rounding the margin down on
/// the top/left side.
pub fn center_crop(image: &Tensor, size: usize) -> Result<Tensor, EngineError> {
    let Shape { n, c, h, w } = image.shape();
    if h < size || w < size {
        return Err(EngineError::CropTooLarge { crop: size, h, w });
    }
    let y0 = (h - size) / 2;
    let x0 = (w - size) / 2;
    let out_shape = Shape::new(n, c, size, size)?;
    let mut out = Vec::with_capacity(out_shape.numel());
    for plane in 0..n * c {
        let src = &image.data()[plane * h * w..(plane + 1) * h * w];
        for y in 0..size {
            let row = &src[(y0 + y) * w + x0..(y0 + y) * w + x0 + size];
            out.extend_from_slice(row);
        }
    }
    Ok(Tensor::new(out_shape, out).expect("sized to shape"))
}

/// Standard inference-time pipeline for an 8-bit image held as floats in
/// `[0, 255]`: resize so the shorter edge is `short_side` (the other edge
/// scales proportionally, rounded to nearest), center-crop to `crop`, and
/// scale intensities to `[0, 1]`.
pub fn preprocess(image: &Tensor, short_side: usize, crop: usize) -> Result<Tensor, EngineError> {
    let Shape { h, w, .. } = image.shape();
    let (new_h, new_w) = if h <= w {
        let scaled = (w as f64 * short_side as f64 / h as f64).round() as usize;
        (short_side, scaled.max(1))
    } else {
        let scaled = (h as f64 * short_side as f64 / w as f64).round() as usize;
        (scaled.max(1), short_side)
    };
    let resized = resize_bilinear(image, new_h, new_w)?;
    let cropped = center_crop(&resized, crop)?;
    let shape = cropped.shape();
    let data = cropped.into_data().iter().map(|v| v / 255.0).collect();
    Ok(Tensor::new(shape, data).expect("same length"))
}

/// Per-channel affine normalization: `(x - mean[c]) / std[c]`.
pub fn normalize(image: &Tensor, mean: &[f32], std: &[f32]) -> Result<Tensor, EngineError> {
    let Shape { n, c, h, w } = image.shape();
    if mean.len() != c || std.len() != c {
        return Err(EngineError::BadNormalization {
            channels: c,
            mean: mean.len(),
            std: std.len(),
        });
    }
    if let Some(channel) = std.iter().position(|s| *s == 0.0) {
        return Err(EngineError::ZeroStd { channel });
    }
    let mut out = Vec::with_capacity(image.numel());
    for sample in 0..n {
        for ch in 0..c {
            let base = (sample * c + ch) * h * w;
            let (m, s) = (mean[ch], std[ch]);
            out.extend(image.data()[base..base + h * w].iter().map(|v| (v - m) / s));
        }
    }
    Ok(Tensor::new(image.shape(), out).expect("same length"))
}
