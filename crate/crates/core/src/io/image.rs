use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `floor(clamp((v + 1) / 2, 0, 1) * 255 + 0.5)`; NaN maps to 0.
pub fn to_byte(v: f64) -> u8 {
    let u = ((v + 1.0) / 2.0).clamp(0.0, 1.0);
    if u.is_nan() {
        return 0;
    }
    (u * 255.0 + 0.5).floor() as u8
}

fn chw<T: Scalar>(image: &Tensor<T>) -> Result<(usize, usize)> {
    match *image.shape() {
        [3, h, w] | [1, 3, h, w] => Ok((h, w)),
        ref s => Err(Error::shape(
            "ppm",
            format!("expected [3, H, W] or [1, 3, H, W], got {s:?}"),
        )),
    }
}

/// Binary PPM (P6, maxval 255) of a planar RGB image in `[-1, 1]`.
pub fn ppm_bytes<T: Scalar>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let (h, w) = chw(image)?;
    let d = image.data();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push(to_byte(d[(c * h + y) * w + x].f64()));
            }
        }
    }
    Ok(out)
}

/// Tiles `[N, 3, H, W]` row-major into a `[3, rows*H, cols*W]` image;
/// unused cells are `-1` (black).
pub fn image_grid<T: Scalar>(images: &Tensor<T>, cols: usize) -> Result<Tensor<T>> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 3 || cols == 0 {
        return Err(Error::shape(
            "image_grid",
            format!("images {s:?} with {cols} columns"),
        ));
    }
    let (n, h, w) = (s[0], s[2], s[3]);
    let rows = n.div_ceil(cols).max(1);
    let (gh, gw) = (rows * h, cols * w);
    let mut out = vec![T::of(-1.0); 3 * gh * gw];
    let d = images.data();
    for i in 0..n {
        let (oy, ox) = ((i / cols) * h, (i % cols) * w);
        for c in 0..3 {
            for y in 0..h {
                let src = ((i * 3 + c) * h + y) * w;
                let dst = (c * gh + oy + y) * gw + ox;
                out[dst..dst + w].copy_from_slice(&d[src..src + w]);
            }
        }
    }
    Tensor::new(&[3, gh, gw], out)
}
