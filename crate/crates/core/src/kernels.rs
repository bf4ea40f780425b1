//! Raw tensor kernels with no autodiff bookkeeping.
//!
//! Every kernel accumulates in a fixed row-major order, so repeated calls on
//! identical inputs are bitwise identical.

use crate::error::{Error, Result};
use crate::tensor::{nchw, Scalar, Tensor};

fn conv_extent(input: usize, k: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad + 1).checked_sub(k).filter(|&v| v > 0)
}

/// Geometry shared by the convolution kernels.
///
/// Planes are handled zero-padded to `hp x wp`. An output plane is laid out
/// with the padded row stride `wp`, so for kernel tap `(ky, kx)` every
/// output element reads the input at a fixed offset `ky * wp + kx`, and one
/// tap becomes a single contiguous multiply-add of length `span`. Columns
/// `wo..wp` of such a plane are scratch and get discarded.
#[derive(Clone, Copy)]
struct Geom {
    h: usize,
    w: usize,
    pad: usize,
    hp: usize,
    wp: usize,
    ho: usize,
    wo: usize,
    span: usize,
}

impl Geom {
    fn new(h: usize, w: usize, k: usize, pad: usize) -> Option<Self> {
        let ho = conv_extent(h, k, pad)?;
        let wo = conv_extent(w, k, pad)?;
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        Some(Geom {
            h,
            w,
            pad,
            hp,
            wp,
            ho,
            wo,
            span: (ho - 1) * wp + wo,
        })
    }

    fn padded_len(&self) -> usize {
        self.hp * self.wp
    }

    /// Copies `planes` (each `h x w`) into zero-padded `hp x wp` planes.
    fn pad_planes<T: Scalar>(&self, planes: &[T]) -> Vec<T> {
        let count = planes.len() / (self.h * self.w);
        if self.pad == 0 {
            return planes.to_vec();
        }
        let mut out = vec![T::zero(); count * self.padded_len()];
        for (src, dst) in planes
            .chunks_exact(self.h * self.w)
            .zip(out.chunks_exact_mut(self.padded_len()))
        {
            for y in 0..self.h {
                let d = (y + self.pad) * self.wp + self.pad;
                dst[d..d + self.w].copy_from_slice(&src[y * self.w..(y + 1) * self.w]);
            }
        }
        out
    }

    /// Lays `ho x wo` planes out with row stride `wp`, zero-filling the
    /// scratch columns.
    fn stride_planes<T: Scalar>(&self, planes: &[T]) -> Vec<T> {
        let count = planes.len() / (self.ho * self.wo);
        let len = self.ho * self.wp;
        let mut out = vec![T::zero(); count * len];
        for (src, dst) in planes
            .chunks_exact(self.ho * self.wo)
            .zip(out.chunks_exact_mut(len))
        {
            for y in 0..self.ho {
                dst[y * self.wp..y * self.wp + self.wo]
                    .copy_from_slice(&src[y * self.wo..(y + 1) * self.wo]);
            }
        }
        out
    }
}

/// `dst += a * src`, elementwise.
#[inline]
fn axpy<T: Scalar>(dst: &mut [T], a: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Dot product with eight interleaved partial sums, combined in a fixed
/// order.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    for (i, (&x, &y)) in ta.iter().zip(tb).enumerate() {
        acc[i] += x * y;
    }
    ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]))
}

/// Stride-1 cross-correlation, `NCHW` input with `OIHW` weight.
///
/// Each output element accumulates its products in `(c, ky, kx)` order
/// starting from zero; the bias, when present, is added last. Taps that
/// fall on padding contribute an exact zero.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, wd) = nchw("conv2d", x.shape())?;
    let (o, ci, kh, kw) = nchw("conv2d", w.shape())?;
    if ci != c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels, weight expects {ci}"),
        ));
    }
    let g = match Geom::new(h, wd, kh, pad) {
        Some(g) if kh == kw => g,
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} with pad {pad} does not fit {h}x{wd}"),
            ))
        }
    };
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?}, expected [{o}]", b.shape()),
            ));
        }
    }
    let k = kh;
    let xp = g.pad_planes(x.data());
    let wdat = w.data();
    let plen = g.padded_len();
    let (ho, wo) = (g.ho, g.wo);
    let mut out = Vec::with_capacity(n * o * ho * wo);
    let mut acc = vec![T::zero(); g.span];
    for b in 0..n {
        for oc in 0..o {
            acc.fill(T::zero());
            for ic in 0..c {
                let inp = &xp[(b * c + ic) * plen..(b * c + ic + 1) * plen];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wdat[((oc * c + ic) * k + ky) * k + kx];
                        let off = ky * g.wp + kx;
                        axpy(&mut acc, wv, &inp[off..off + g.span]);
                    }
                }
            }
            let bv = bias.map(|t| t.data()[oc]);
            for y in 0..ho {
                let row = &acc[y * g.wp..y * g.wp + wo];
                match bv {
                    Some(bv) => out.extend(row.iter().map(|&v| v + bv)),
                    None => out.extend_from_slice(row),
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, o, ho, wo], out))
}

/// Adjoint of [`conv2d`] with respect to its input: maps an output-shaped
/// gradient `N x O x Ho x Wo` back to `N x C x H x W`.
pub fn conv2d_input_grad<T: Scalar>(
    gy: &Tensor<T>,
    w: &Tensor<T>,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, o, ho, wo) = nchw("conv2d_input_grad", gy.shape())?;
    let (ow, c, kh, kw) = nchw("conv2d_input_grad", w.shape())?;
    if ow != o {
        return Err(Error::shape(
            "conv2d_input_grad",
            format!("gradient has {o} channels, weight has {ow} outputs"),
        ));
    }
    let dims = (
        (ho + kh - 1).checked_sub(2 * pad).filter(|&v| v > 0),
        (wo + kw - 1).checked_sub(2 * pad).filter(|&v| v > 0),
    );
    let g = match dims {
        (Some(h), Some(wd)) if kh == kw => {
            Geom::new(h, wd, kh, pad).filter(|g| g.ho == ho && g.wo == wo)
        }
        _ => None,
    }
    .ok_or_else(|| Error::shape("conv2d_input_grad", "padding larger than kernel support"))?;
    let k = kh;
    let (h, wd) = (g.h, g.w);
    let gs = g.stride_planes(gy.data());
    let glen = ho * g.wp;
    let wdat = w.data();
    let mut out = Vec::with_capacity(n * c * h * wd);
    let mut acc = vec![T::zero(); g.padded_len()];
    for b in 0..n {
        for ic in 0..c {
            acc.fill(T::zero());
            for oc in 0..o {
                let gp = &gs[(b * o + oc) * glen..(b * o + oc) * glen + g.span];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wdat[((oc * c + ic) * k + ky) * k + kx];
                        let off = ky * g.wp + kx;
                        axpy(&mut acc[off..off + g.span], wv, gp);
                    }
                }
            }
            for y in 0..h {
                let s = (y + pad) * g.wp + pad;
                out.extend_from_slice(&acc[s..s + wd]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, h, wd], out))
}

/// Adjoint of [`conv2d`] with respect to its weight.
pub fn conv2d_weight_grad<T: Scalar>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    pad: usize,
    kernel: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, wd) = nchw("conv2d_weight_grad", x.shape())?;
    let (ng, o, ho, wo) = nchw("conv2d_weight_grad", gy.shape())?;
    let g = Geom::new(h, wd, kernel, pad)
        .filter(|g| ng == n && g.ho == ho && g.wo == wo)
        .ok_or_else(|| {
            Error::shape(
                "conv2d_weight_grad",
                format!(
                    "input {:?} incompatible with gradient {:?}",
                    x.shape(),
                    gy.shape()
                ),
            )
        })?;
    let k = kernel;
    let xp = g.pad_planes(x.data());
    let gs = g.stride_planes(gy.data());
    let (plen, glen) = (g.padded_len(), ho * g.wp);
    let mut out = vec![T::zero(); o * c * k * k];
    for oc in 0..o {
        for ic in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let off = ky * g.wp + kx;
                    let mut acc = T::zero();
                    for b in 0..n {
                        let gp = &gs[(b * o + oc) * glen..(b * o + oc) * glen + g.span];
                        let inp =
                            &xp[(b * c + ic) * plen + off..(b * c + ic) * plen + off + g.span];
                        acc += dot(gp, inp);
                    }
                    out[((oc * c + ic) * k + ky) * k + kx] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![o, c, k, k], out))
}

/// Fixed per-channel 2x spatial resampling operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Resample {
    NearestUp,
    BilinearUp,
    /// 2x2 box average.
    AvgPoolDown,
}

/// Sparse 1-D operator: `rows[i]` lists `(input index, weight)`.
type Sparse1d = Vec<Vec<(usize, f64)>>;

impl Resample {
    fn matrix(self, n_in: usize) -> Sparse1d {
        match self {
            Resample::NearestUp => (0..2 * n_in).map(|i| vec![(i / 2, 1.0)]).collect(),
            Resample::BilinearUp => (0..2 * n_in)
                .map(|i| {
                    // half-pixel centres: source coordinate i/2 - 1/4
                    let m = i / 2;
                    let neighbour = if i % 2 == 0 {
                        m.saturating_sub(1)
                    } else {
                        (m + 1).min(n_in - 1)
                    };
                    if neighbour == m {
                        vec![(m, 1.0)]
                    } else {
                        vec![(m, 0.75), (neighbour, 0.25)]
                    }
                })
                .collect(),
            Resample::AvgPoolDown => (0..n_in / 2)
                .map(|i| vec![(2 * i, 0.5), (2 * i + 1, 0.5)])
                .collect(),
        }
    }

    fn out_len(self, n_in: usize) -> usize {
        match self {
            Resample::NearestUp | Resample::BilinearUp => 2 * n_in,
            Resample::AvgPoolDown => n_in / 2,
        }
    }

    /// Input extent of the forward operator whose adjoint consumes `m`.
    fn adjoint_source_len(self, m: usize) -> Option<usize> {
        match self {
            Resample::NearestUp | Resample::BilinearUp => m.is_multiple_of(2).then_some(m / 2),
            Resample::AvgPoolDown => Some(2 * m),
        }
    }

    fn operator(self, m: usize, adjoint: bool) -> Option<Sparse1d> {
        if !adjoint {
            if self == Resample::AvgPoolDown && (!m.is_multiple_of(2) || m < 2) {
                return None;
            }
            return Some(self.matrix(m));
        }
        let n_in = self.adjoint_source_len(m)?;
        if n_in == 0 {
            return None;
        }
        let fwd = self.matrix(n_in);
        debug_assert_eq!(fwd.len(), m);
        let mut t: Sparse1d = vec![Vec::new(); n_in];
        for (i, row) in fwd.iter().enumerate() {
            for &(j, wgt) in row {
                t[j].push((i, wgt));
            }
        }
        Some(t)
    }
}

/// Applies a [`Resample`] operator (or its adjoint) to every channel plane.
pub fn resample<T: Scalar>(x: &Tensor<T>, kind: Resample, adjoint: bool) -> Result<Tensor<T>> {
    let (n, c, h, w) = nchw("resample", x.shape())?;
    let (ry, rx) = match (kind.operator(h, adjoint), kind.operator(w, adjoint)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::shape(
                "resample",
                format!("{kind:?} (adjoint={adjoint}) cannot act on {h}x{w}"),
            ))
        }
    };
    let (ho, wo) = (ry.len(), rx.len());
    debug_assert!(adjoint || (ho == kind.out_len(h) && wo == kind.out_len(w)));
    let ry: Vec<Vec<(usize, T)>> = ry
        .into_iter()
        .map(|r| r.into_iter().map(|(i, v)| (i, T::of(v))).collect())
        .collect();
    let rx: Vec<Vec<(usize, T)>> = rx
        .into_iter()
        .map(|r| r.into_iter().map(|(i, v)| (i, T::of(v))).collect())
        .collect();
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in xd.chunks_exact(h * w) {
        for row in &ry {
            for col in &rx {
                let mut acc = T::zero();
                for &(iy, wy) in row {
                    for &(ix, wx) in col {
                        acc += wy * wx * plane[iy * w + ix];
                    }
                }
                out.push(acc);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, ho, wo], out))
}

fn transpose2<T: Scalar>(d: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); d.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = d[i * cols + j];
        }
    }
    t
}

/// `op(a) @ op(b)` for 2-D tensors, where `op` optionally transposes.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
    let (ar, ac) = match *a.shape() {
        [r, c] => (r, c),
        _ => {
            return Err(Error::shape(
                "matmul",
                format!("lhs not 2-D: {:?}", a.shape()),
            ))
        }
    };
    let (br, bc) = match *b.shape() {
        [r, c] => (r, c),
        _ => {
            return Err(Error::shape(
                "matmul",
                format!("rhs not 2-D: {:?}", b.shape()),
            ))
        }
    };
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, nn) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(Error::shape(
            "matmul",
            format!(
                "inner extents differ: {:?}{} x {:?}{}",
                a.shape(),
                if ta { "ᵀ" } else { "" },
                b.shape(),
                if tb { "ᵀ" } else { "" }
            ),
        ));
    }
    let ad = if ta {
        transpose2(a.data(), ar, ac)
    } else {
        a.to_vec()
    };
    let bd = if tb {
        transpose2(b.data(), br, bc)
    } else {
        b.to_vec()
    };
    let mut out = vec![T::zero(); m * nn];
    for i in 0..m {
        let orow = &mut out[i * nn..(i + 1) * nn];
        for p in 0..k {
            let av = ad[i * k + p];
            let brow = &bd[p * nn..(p + 1) * nn];
            for (dst, &bv) in orow.iter_mut().zip(brow) {
                *dst += av * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, nn], out))
}

/// `(N, C, spatial size)` for a tensor with at least two axes.
fn nc_rest(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(
            op,
            format!("need at least [N, C], got {shape:?}"),
        ));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

/// `y[n, c, ...] = x[n, c, ...] * s[n, c]`.
pub fn channel_scale<T: Scalar>(x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, rest) = nc_rest("channel_scale", x.shape())?;
    if s.shape() != [n, c] {
        return Err(Error::shape(
            "channel_scale",
            format!("scales {:?} for input {:?}", s.shape(), x.shape()),
        ));
    }
    let sd = s.data();
    let mut out = x.to_vec();
    for (i, chunk) in out.chunks_exact_mut(rest).enumerate() {
        let sv = sd[i];
        for v in chunk {
            *v *= sv;
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// `y[n, c] = sum over spatial positions of a * b`.
pub fn channel_dot<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, rest) = nc_rest("channel_dot", a.shape())?;
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "channel_dot",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let out = a
        .data()
        .chunks_exact(rest)
        .zip(b.data().chunks_exact(rest))
        .map(|(x, y)| {
            let mut acc = T::zero();
            for (&p, &q) in x.iter().zip(y) {
                acc += p * q;
            }
            acc
        })
        .collect();
    Ok(Tensor::from_parts(vec![n, c], out))
}

/// Adds a per-channel bias `b[C]` to an `N x C x ...` tensor.
pub fn add_bias<T: Scalar>(x: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c, rest) = nc_rest("add_bias", x.shape())?;
    if b.shape() != [c] {
        return Err(Error::shape(
            "add_bias",
            format!("bias {:?} for input {:?}", b.shape(), x.shape()),
        ));
    }
    let bd = b.data();
    let mut out = x.to_vec();
    for (i, chunk) in out.chunks_exact_mut(rest).enumerate() {
        let bv = bd[i % c];
        for v in chunk {
            *v += bv;
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Sums an `N x C x ...` tensor down to `[C]`.
pub fn channel_sum<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c, rest) = nc_rest("channel_sum", x.shape())?;
    let mut out = vec![T::zero(); c];
    for (i, chunk) in x.data().chunks_exact(rest).enumerate() {
        let acc = &mut out[i % c];
        for &v in chunk {
            *acc += v;
        }
    }
    Ok(Tensor::from_parts(vec![c], out))
}

/// Broadcasts `b[C]` to `shape = [N, C, ...]`.
pub fn broadcast_channels<T: Scalar>(b: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    let (n, c, rest) = nc_rest("broadcast_channels", shape)?;
    if b.shape() != [c] {
        return Err(Error::shape(
            "broadcast_channels",
            format!("{:?} into {:?}", b.shape(), shape),
        ));
    }
    let mut out = Vec::with_capacity(n * c * rest);
    for _ in 0..n {
        for &v in b.data() {
            out.extend(std::iter::repeat_n(v, rest));
        }
    }
    Ok(Tensor::from_parts(shape.to_vec(), out))
}

/// Stacks tensors along the channel axis, preserving argument order.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
    let (n, _, rest) = nc_rest("concat_channels", first.shape())?;
    let tail = &first.shape()[2..];
    let mut total = 0;
    for x in xs {
        let (nx, cx, _) = nc_rest("concat_channels", x.shape())?;
        if nx != n || &x.shape()[2..] != tail {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} vs {:?}", x.shape(), first.shape()),
            ));
        }
        total += cx;
    }
    let mut out = Vec::with_capacity(n * total * rest);
    for b in 0..n {
        for x in xs {
            let cx = x.shape()[1];
            out.extend_from_slice(&x.data()[b * cx * rest..(b + 1) * cx * rest]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[1] = total;
    Ok(Tensor::from_parts(shape, out))
}

/// Channels `start .. start + len` of an `N x C x ...` tensor.
pub fn slice_channels<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (n, c, rest) = nc_rest("slice_channels", x.shape())?;
    if len == 0 || start + len > c {
        return Err(Error::shape(
            "slice_channels",
            format!("range {start}..{} out of {c} channels", start + len),
        ));
    }
    let mut out = Vec::with_capacity(n * len * rest);
    for b in 0..n {
        let base = (b * c + start) * rest;
        out.extend_from_slice(&x.data()[base..base + len * rest]);
    }
    let mut shape = x.shape().to_vec();
    shape[1] = len;
    Ok(Tensor::from_parts(shape, out))
}

/// Places `x` at channel offset `start` of a zero tensor with `total` channels.
pub fn embed_channels<T: Scalar>(x: &Tensor<T>, start: usize, total: usize) -> Result<Tensor<T>> {
    let (n, c, rest) = nc_rest("embed_channels", x.shape())?;
    if start + c > total {
        return Err(Error::shape(
            "embed_channels",
            format!("{c} channels at {start} exceed {total}"),
        ));
    }
    let mut out = vec![T::zero(); n * total * rest];
    for b in 0..n {
        let dst = (b * total + start) * rest;
        out[dst..dst + c * rest].copy_from_slice(&x.data()[b * c * rest..(b + 1) * c * rest]);
    }
    let mut shape = x.shape().to_vec();
    shape[1] = total;
    Ok(Tensor::from_parts(shape, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rnd(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Inner product <a, b> over all elements.
    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_adjoints_satisfy_inner_product_identity() {
        for &(k, pad) in &[(3, 1), (1, 0), (3, 0)] {
            let x = rnd(&[2, 3, 5, 6], 1);
            let w = rnd(&[4, 3, k, k], 2);
            let y = conv2d(&x, &w, None, pad).unwrap();
            let g = rnd(y.shape(), 3);
            let gx = conv2d_input_grad(&g, &w, pad).unwrap();
            let gw = conv2d_weight_grad(&x, &g, pad, k).unwrap();
            assert_eq!(gx.shape(), x.shape());
            let lhs = dot(&y, &g);
            assert!((lhs - dot(&x, &gx)).abs() < 1e-10 * lhs.abs().max(1.0));
            assert!((lhs - dot(&w, &gw)).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn resample_adjoints_satisfy_inner_product_identity() {
        for kind in [
            Resample::NearestUp,
            Resample::BilinearUp,
            Resample::AvgPoolDown,
        ] {
            let x = rnd(&[1, 2, 4, 6], 7);
            let y = resample(&x, kind, false).unwrap();
            let g = rnd(y.shape(), 8);
            let gx = resample(&g, kind, true).unwrap();
            assert_eq!(gx.shape(), x.shape());
            assert!((dot(&y, &g) - dot(&x, &gx)).abs() < 1e-12);
        }
    }

    #[test]
    fn avg_pool_rejects_odd_extent() {
        let x = Tensor::<f64>::zeros(&[1, 1, 3, 4]);
        assert!(resample(&x, Resample::AvgPoolDown, false).is_err());
    }

    #[test]
    fn matmul_transposes() {
        let a = Tensor::<f64>::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::<f64>::from_f64(&[2, 3], &[1., 0., 1., 0., 1., 0.]).unwrap();
        let abt = matmul(&a, &b, false, true).unwrap();
        assert_eq!(abt.data(), &[4., 2., 10., 5.]);
        let atb = matmul(&a, &b, true, false).unwrap();
        assert_eq!(atb.shape(), &[3, 3]);
        assert_eq!(atb.data()[0], 1.0);
        assert!(matmul(&a, &b, false, false).is_err());
    }

    #[test]
    fn channel_ops_round_trip() {
        let x = rnd(&[2, 3, 2, 2], 11);
        let parts = [
            slice_channels(&x, 0, 1).unwrap(),
            slice_channels(&x, 1, 2).unwrap(),
        ];
        let back = concat_channels(&[&parts[0], &parts[1]]).unwrap();
        assert_eq!(back, x);
        let e = embed_channels(&parts[1], 1, 3).unwrap();
        assert_eq!(slice_channels(&e, 1, 2).unwrap(), parts[1]);
        assert!(slice_channels(&e, 0, 1)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }
}
