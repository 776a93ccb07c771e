//! Dense forward primitives over `C x H x W` tensors.
//!
//! Values are stored as `f32`; every reduction accumulates in `f64`.
//! Convolutions are cross-correlations (no kernel flip).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::{Error, Result};

/// Row-major `C x H x W` tensor of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor3 {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::shape(
                "tensor",
                format!("buffer of {} values for shape {c}x{h}x{w}", data.len()),
            ));
        }
        Ok(Tensor3 { c, h, w, data })
    }

    pub fn filled(c: usize, h: usize, w: usize, value: f32) -> Self {
        Tensor3 {
            c,
            h,
            w,
            data: vec![value; c * h * w],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn row(&self, c: usize, y: usize) -> &[f32] {
        let start = self.index(c, y, 0);
        &self.data[start..start + self.w]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Order-sensitive FNV-1a digest of the raw bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.data {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Convolution weights, `[cout][cin][k][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub cout: usize,
    pub cin: usize,
    pub k: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Transposed-convolution weights, `[cin][cout][k][k]` (the usual
/// deep-learning layout for transposed convolutions).
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvKernel {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

fn check_kernel_len(op: &'static str, weight: usize, bias: usize, expect: usize, cout: usize) -> Result<()> {
    if weight != expect || bias != cout {
        return Err(Error::shape(
            op,
            format!("weight/bias lengths {weight}/{bias}, expected {expect}/{cout}"),
        ));
    }
    Ok(())
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
fn seeded_values<R: Rng>(rng: &mut R, n: usize, fan_in: usize) -> Vec<f32> {
    let bound = 1.0 / crate::math::sqrt(fan_in.max(1) as f64);
    (0..n).map(|_| rng.random_range(-bound..=bound) as f32).collect()
}

impl ConvKernel {
    pub fn new(cout: usize, cin: usize, k: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        check_kernel_len("conv2d kernel", weight.len(), bias.len(), cout * cin * k * k, cout)?;
        Ok(ConvKernel {
            cout,
            cin,
            k,
            weight,
            bias,
        })
    }

    pub fn zeros(cout: usize, cin: usize, k: usize) -> Self {
        ConvKernel {
            cout,
            cin,
            k,
            weight: vec![0.0; cout * cin * k * k],
            bias: vec![0.0; cout],
        }
    }

    pub fn seeded<R: Rng>(rng: &mut R, cout: usize, cin: usize, k: usize) -> Self {
        let fan_in = cin * k * k;
        ConvKernel {
            cout,
            cin,
            k,
            weight: seeded_values(rng, cout * cin * k * k, fan_in),
            bias: seeded_values(rng, cout, fan_in),
        }
    }

    #[inline]
    pub fn w(&self, co: usize, ci: usize, ky: usize, kx: usize) -> f32 {
        self.weight[((co * self.cin + ci) * self.k + ky) * self.k + kx]
    }
}

impl DeconvKernel {
    pub fn new(cin: usize, cout: usize, k: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        check_kernel_len("deconv2d kernel", weight.len(), bias.len(), cout * cin * k * k, cout)?;
        Ok(DeconvKernel {
            cin,
            cout,
            k,
            weight,
            bias,
        })
    }

    pub fn zeros(cin: usize, cout: usize, k: usize) -> Self {
        DeconvKernel {
            cin,
            cout,
            k,
            weight: vec![0.0; cout * cin * k * k],
            bias: vec![0.0; cout],
        }
    }

    pub fn seeded<R: Rng>(rng: &mut R, cin: usize, cout: usize, k: usize) -> Self {
        let fan_in = cin * k * k;
        DeconvKernel {
            cin,
            cout,
            k,
            weight: seeded_values(rng, cout * cin * k * k, fan_in),
            bias: seeded_values(rng, cout, fan_in),
        }
    }

    #[inline]
    pub fn w(&self, ci: usize, co: usize, ky: usize, kx: usize) -> f32 {
        self.weight[((ci * self.cout + co) * self.k + ky) * self.k + kx]
    }
}

/// Per-channel `scale * x + shift`; the inference-time form of batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineNorm {
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
}

impl AffineNorm {
    pub fn identity(c: usize) -> Self {
        AffineNorm {
            scale: vec![1.0; c],
            shift: vec![0.0; c],
        }
    }

    /// Folds running statistics into a scale/shift pair.
    pub fn from_batch_norm(gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32], eps: f32) -> Result<Self> {
        let c = gamma.len();
        if beta.len() != c || mean.len() != c || var.len() != c {
            return Err(Error::shape("batch norm", "parameter vectors differ in length"));
        }
        let mut scale = Vec::with_capacity(c);
        let mut shift = Vec::with_capacity(c);
        for i in 0..c {
            let s = gamma[i] as f64 / crate::math::sqrt(var[i] as f64 + eps as f64);
            scale.push(s as f32);
            shift.push((beta[i] as f64 - mean[i] as f64 * s) as f32);
        }
        Ok(AffineNorm { scale, shift })
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

/// `floor((n + 2p - k) / s) + 1`, or `None` when the kernel does not fit.
pub fn conv_output_size(n: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || n + 2 * padding < k {
        return None;
    }
    Some((n + 2 * padding - k) / stride + 1)
}

/// `s (n - 1) + k - 2p + output_padding`, or `None` if that is not positive.
pub fn deconv_output_size(n: usize, k: usize, stride: usize, padding: usize, output_padding: usize) -> Option<usize> {
    if stride == 0 || n == 0 {
        return None;
    }
    let full = stride * (n - 1) + k + output_padding;
    full.checked_sub(2 * padding).filter(|&v| v > 0)
}

const MR: usize = 4;
const NR: usize = 4;
const KC: usize = 256;

#[inline(always)]
fn fma_row(acc: &mut [f64; NR], a: f64, b: &[f64; NR]) {
    for (x, &y) in acc.iter_mut().zip(b) {
        *x += a * y;
    }
}

/// `c = bias + a b` for row-major `a: m x kd`, `b: kd x n`, `c: m x n`,
/// accumulated in `f64`.
///
/// Every output is `bias` plus its products summed in ascending `r`, so the
/// result does not depend on the blocking.
fn gemm_bias(a: &[f32], m: usize, kd: usize, b: &[f32], n: usize, bias: &[f32], c: &mut [f32]) {
    let mut c64 = vec![0.0f64; m * n];
    for (row, &bv) in c64.chunks_exact_mut(n.max(1)).zip(bias) {
        row.fill(bv as f64);
    }
    let mb = m.div_ceil(MR);
    let nb = n.div_ceil(NR);
    let mut apack = vec![0.0f64; mb * KC * MR];
    let mut bstrip = vec![0.0f64; KC * NR];
    let mut k0 = 0;
    while k0 < kd && n > 0 {
        let kc = (kd - k0).min(KC);
        for ib in 0..mb {
            let blk = &mut apack[ib * KC * MR..][..kc * MR];
            for (r, dst) in blk.chunks_exact_mut(MR).enumerate() {
                for (t, d) in dst.iter_mut().enumerate() {
                    let i = ib * MR + t;
                    *d = if i < m { a[i * kd + k0 + r] as f64 } else { 0.0 };
                }
            }
        }
        for jb in 0..nb {
            let j0 = jb * NR;
            let nw = (n - j0).min(NR);
            for (r, dst) in bstrip[..kc * NR].chunks_exact_mut(NR).enumerate() {
                let src = &b[(k0 + r) * n + j0..][..nw];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v as f64;
                }
                dst[nw..].fill(0.0);
            }
            for ib in 0..mb {
                let mut acc = [[0.0f64; NR]; MR];
                for (t, accrow) in acc.iter_mut().enumerate() {
                    let i = ib * MR + t;
                    if i < m {
                        accrow[..nw].copy_from_slice(&c64[i * n + j0..][..nw]);
                    }
                }
                let blk = &apack[ib * KC * MR..][..kc * MR];
                for (av, bv) in blk.chunks_exact(MR).zip(bstrip[..kc * NR].chunks_exact(NR)) {
                    let bv: &[f64; NR] = bv.try_into().unwrap();
                    for (accrow, &a) in acc.iter_mut().zip(av) {
                        fma_row(accrow, a, bv);
                    }
                }
                for (t, accrow) in acc.iter().enumerate() {
                    let i = ib * MR + t;
                    if i < m {
                        c64[i * n + j0..][..nw].copy_from_slice(&accrow[..nw]);
                    }
                }
            }
        }
        k0 += kc;
    }
    for (d, &v) in c.iter_mut().zip(&c64) {
        *d = v as f32;
    }
}

pub fn conv2d(x: &Tensor3, kernel: &ConvKernel, stride: usize, padding: usize) -> Result<Tensor3> {
    if kernel.cin != x.c {
        return Err(Error::shape(
            "conv2d",
            format!("kernel expects {} input channels, tensor has {}", kernel.cin, x.c),
        ));
    }
    let ho = conv_output_size(x.h, kernel.k, stride, padding)
        .ok_or_else(|| Error::shape("conv2d", format!("kernel {} does not fit height {}", kernel.k, x.h)))?;
    let wo = conv_output_size(x.w, kernel.k, stride, padding)
        .ok_or_else(|| Error::shape("conv2d", format!("kernel {} does not fit width {}", kernel.k, x.w)))?;

    let k = kernel.k;
    let kd = x.c * k * k;
    let mut out = Tensor3::zeros(kernel.cout, ho, wo);
    // Row `(ci, ky, kx)` of `patch` holds the input taps of one output row.
    let mut patch = vec![0.0f32; kd * wo];
    let mut rows = vec![0.0f32; kernel.cout * wo];
    let pad = padding as isize;

    for oy in 0..ho {
        for (r, dst) in patch.chunks_exact_mut(wo).enumerate() {
            let (ci, ky, kx) = (r / (k * k), (r / k) % k, r % k);
            let iy = (oy * stride + ky) as isize - pad;
            if iy < 0 || iy >= x.h as isize {
                dst.fill(0.0);
                continue;
            }
            let in_row = x.row(ci, iy as usize);
            for (ox, d) in dst.iter_mut().enumerate() {
                let ix = (ox * stride + kx) as isize - pad;
                *d = if ix >= 0 && (ix as usize) < x.w {
                    in_row[ix as usize]
                } else {
                    0.0
                };
            }
        }
        gemm_bias(&kernel.weight, kernel.cout, kd, &patch, wo, &kernel.bias, &mut rows);
        for (co, src) in rows.chunks_exact(wo).enumerate() {
            let base = out.index(co, oy, 0);
            out.data[base..base + wo].copy_from_slice(src);
        }
    }
    Ok(out)
}

/// Transposed convolution. Rows/columns added by `output_padding` receive no
/// kernel taps and hold the bias only.
pub fn deconv2d(
    x: &Tensor3,
    kernel: &DeconvKernel,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Result<Tensor3> {
    if kernel.cin != x.c {
        return Err(Error::shape(
            "deconv2d",
            format!("kernel expects {} input channels, tensor has {}", kernel.cin, x.c),
        ));
    }
    if output_padding >= stride.max(1) && output_padding > 0 {
        return Err(Error::shape(
            "deconv2d",
            format!("output padding {output_padding} must be smaller than stride {stride}"),
        ));
    }
    let ho = deconv_output_size(x.h, kernel.k, stride, padding, output_padding)
        .ok_or_else(|| Error::shape("deconv2d", "non-positive output height"))?;
    let wo = deconv_output_size(x.w, kernel.k, stride, padding, output_padding)
        .ok_or_else(|| Error::shape("deconv2d", "non-positive output width"))?;

    let k = kernel.k;
    let (s, p) = (stride, padding);
    let cout = kernel.cout;
    let mut out = Tensor3::zeros(cout, ho, wo);

    // Output (oy, ox) = (iy s + ky - p, ix s + kx - p): only taps with
    // ky = oy + p and kx = ox + p (mod s) contribute. Group the output by
    // phase and gather per phase.
    let taps = |phase: usize| -> Vec<usize> { (0..k).filter(|&t| (phase + p) % s == t % s).collect() };
    let mut packed: Vec<Vec<f32>> = Vec::with_capacity(s * s);
    let mut tap_lists: Vec<(Vec<usize>, Vec<usize>)> = Vec::with_capacity(s * s);
    for py in 0..s {
        for px in 0..s {
            let (kys, kxs) = (taps(py), taps(px));
            let kd = x.c * kys.len() * kxs.len();
            let mut a = vec![0.0f32; cout * kd];
            for co in 0..cout {
                let mut r = 0;
                for ci in 0..x.c {
                    for &ky in &kys {
                        for &kx in &kxs {
                            a[co * kd + r] = kernel.w(ci, co, ky, kx);
                            r += 1;
                        }
                    }
                }
            }
            packed.push(a);
            tap_lists.push((kys, kxs));
        }
    }

    let mut patch = Vec::new();
    let mut rows = Vec::new();
    for oy in 0..ho {
        let py = oy % s;
        for px in 0..s.min(wo) {
            let nq = (wo - px).div_ceil(s);
            let (kys, kxs) = &tap_lists[py * s + px];
            let kd = x.c * kys.len() * kxs.len();
            patch.clear();
            patch.resize(kd * nq, 0.0f32);
            let mut r = 0;
            for ci in 0..x.c {
                for &ky in kys {
                    let ty = (oy + p) as isize - ky as isize;
                    let iy = ty.div_euclid(s as isize);
                    let row_ok = ty >= 0 && (iy as usize) < x.h;
                    for &kx in kxs {
                        if row_ok {
                            let in_row = x.row(ci, iy as usize);
                            let dst = &mut patch[r * nq..(r + 1) * nq];
                            for (q, d) in dst.iter_mut().enumerate() {
                                let tx = (px + q * s + p) as isize - kx as isize;
                                if tx >= 0 {
                                    let ix = tx as usize / s;
                                    if ix < x.w {
                                        *d = in_row[ix];
                                    }
                                }
                            }
                        }
                        r += 1;
                    }
                }
            }
            rows.clear();
            rows.resize(cout * nq, 0.0f32);
            gemm_bias(&packed[py * s + px], cout, kd, &patch, nq, &kernel.bias, &mut rows);
            for (co, src) in rows.chunks_exact(nq).enumerate() {
                let base = out.index(co, oy, 0);
                for (q, &v) in src.iter().enumerate() {
                    out.data[base + px + q * s] = v;
                }
            }
        }
    }
    Ok(out)
}

pub fn relu(x: &Tensor3) -> Tensor3 {
    let mut out = x.clone();
    relu_inplace(&mut out);
    out
}

pub fn relu_inplace(x: &mut Tensor3) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn affine_norm(x: &Tensor3, norm: &AffineNorm) -> Result<Tensor3> {
    let mut out = x.clone();
    affine_norm_inplace(&mut out, norm)?;
    Ok(out)
}

pub fn affine_norm_inplace(x: &mut Tensor3, norm: &AffineNorm) -> Result<()> {
    if norm.scale.len() != x.c || norm.shift.len() != x.c {
        return Err(Error::shape(
            "affine_norm",
            format!(
                "{} scale / {} shift entries for {} channels",
                norm.scale.len(),
                norm.shift.len(),
                x.c
            ),
        ));
    }
    let n = x.h * x.w;
    for c in 0..x.c {
        let (s, b) = (norm.scale[c] as f64, norm.shift[c] as f64);
        for v in &mut x.data[c * n..(c + 1) * n] {
            *v = (s * *v as f64 + b) as f32;
        }
    }
    Ok(())
}

/// Stacks tensors along the channel axis, in argument order.
pub fn concat_channels(xs: &[&Tensor3]) -> Result<Tensor3> {
    let first = xs.first().ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
    let (h, w) = (first.h, first.w);
    if let Some(bad) = xs.iter().find(|t| t.h != h || t.w != w) {
        return Err(Error::shape(
            "concat_channels",
            format!("spatial size {}x{} differs from {h}x{w}", bad.h, bad.w),
        ));
    }
    let c = xs.iter().map(|t| t.c).sum();
    let mut data = Vec::with_capacity(c * h * w);
    for t in xs {
        data.extend_from_slice(&t.data);
    }
    Tensor3::from_vec(c, h, w, data)
}

/// Pointwise maximum over same-shaped tensors.
pub fn elementwise_max(xs: &[&Tensor3]) -> Result<Tensor3> {
    let first = xs.first().ok_or_else(|| Error::shape("elementwise_max", "no inputs"))?;
    if let Some(bad) = xs.iter().find(|t| t.shape() != first.shape()) {
        return Err(Error::shape(
            "elementwise_max",
            format!("shape {:?} differs from {:?}", bad.shape(), first.shape()),
        ));
    }
    let mut out = (*first).clone();
    for t in &xs[1..] {
        for (o, &v) in out.data.iter_mut().zip(&t.data) {
            if v > *o {
                *o = v;
            }
        }
    }
    Ok(out)
}
