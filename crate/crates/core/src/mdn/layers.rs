//! Dense and convolution kernels for the forward pass.

use super::MdnError;

/// Channel-major stack of 2D planes, row-major within a plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Planes {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * height * width, "plane data length");
        Planes {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Planes::new(channels, height, width, vec![0.0; channels * height * width])
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn view(&self) -> PlaneView<'_> {
        PlaneView {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: &self.data,
        }
    }
}

/// Borrowed [`Planes`].
#[derive(Debug, Clone, Copy)]
pub struct PlaneView<'a> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: &'a [f32],
}

#[inline(always)]
fn dot_portable(a: &[f32], b: &[f32]) -> f32 {
    const LANES: usize = 16;
    let mut acc = [0.0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = 0.0f32;
    for v in acc {
        s += v;
    }
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline(always)]
fn axpy_portable(y: &mut [f32], alpha: f32, x: &[f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn dot_avx2(a: &[f32], b: &[f32]) -> f32 {
    dot_portable(a, b)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn axpy_avx2(y: &mut [f32], alpha: f32, x: &[f32]) {
    axpy_portable(y, alpha, x)
}

/// Dot product with a fixed 16-lane accumulation order, so every code path
/// returns bit-identical results.
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports the enabled feature.
        return unsafe { dot_avx2(a, b) };
    }
    dot_portable(a, b)
}

pub fn axpy(y: &mut [f32], alpha: f32, x: &[f32]) {
    debug_assert_eq!(y.len(), x.len());
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports the enabled feature.
        return unsafe { axpy_avx2(y, alpha, x) };
    }
    axpy_portable(y, alpha, x)
}

const TILE_O: usize = 4;
const TILE_P: usize = 16;

/// `out[o][p] = bias[o] + Σ_r w[o][r]·x[r][p]`, summing `r` in ascending order
/// for every element so the tiled and tail paths agree bit for bit.
#[inline(always)]
fn gemm_bias_portable(w: &[f32], x: &[f32], bias: &[f32], rows: usize, plane: usize, out: &mut [f32]) {
    let oc = bias.len();
    let full_o = oc - oc % TILE_O;
    let full_p = plane - plane % TILE_P;
    for p0 in (0..full_p).step_by(TILE_P) {
        for o0 in (0..full_o).step_by(TILE_O) {
            let mut acc = [[0.0f32; TILE_P]; TILE_O];
            for (j, a) in acc.iter_mut().enumerate() {
                *a = [bias[o0 + j]; TILE_P];
            }
            for r in 0..rows {
                let xr: &[f32; TILE_P] = x[r * plane + p0..r * plane + p0 + TILE_P].try_into().unwrap();
                for (j, a) in acc.iter_mut().enumerate() {
                    let wv = w[(o0 + j) * rows + r];
                    for l in 0..TILE_P {
                        a[l] += wv * xr[l];
                    }
                }
            }
            for (j, a) in acc.iter().enumerate() {
                out[(o0 + j) * plane + p0..(o0 + j) * plane + p0 + TILE_P].copy_from_slice(a);
            }
        }
    }
    gemm_tails(w, x, bias, rows, plane, out, full_o, full_p);
}

/// Leftover output channels over all pixels, and leftover pixels for the tiled channels.
#[allow(clippy::too_many_arguments)]
fn gemm_tails(
    w: &[f32],
    x: &[f32],
    bias: &[f32],
    rows: usize,
    plane: usize,
    out: &mut [f32],
    full_o: usize,
    full_p: usize,
) {
    for o in 0..bias.len() {
        let p_start = if o < full_o { full_p } else { 0 };
        for p in p_start..plane {
            let mut acc = bias[o];
            for r in 0..rows {
                acc += w[o * rows + r] * x[r * plane + p];
            }
            out[o * plane + p] = acc;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_bias_avx2(w: &[f32], x: &[f32], bias: &[f32], rows: usize, plane: usize, out: &mut [f32]) {
    use std::arch::x86_64::*;
    let oc = bias.len();
    let full_o = oc - oc % TILE_O;
    let full_p = plane - plane % TILE_P;
    let xp = x.as_ptr();
    let wp = w.as_ptr();
    let op = out.as_mut_ptr();
    for p0 in (0..full_p).step_by(TILE_P) {
        for o0 in (0..full_o).step_by(TILE_O) {
            // SAFETY: every index stays below rows·plane for x, oc·rows for w
            // and oc·plane for out, which the caller's length checks guarantee.
            unsafe {
                let mut acc = [_mm256_setzero_ps(); 2 * TILE_O];
                for j in 0..TILE_O {
                    let b = _mm256_set1_ps(bias[o0 + j]);
                    acc[2 * j] = b;
                    acc[2 * j + 1] = b;
                }
                for r in 0..rows {
                    let x0 = _mm256_loadu_ps(xp.add(r * plane + p0));
                    let x1 = _mm256_loadu_ps(xp.add(r * plane + p0 + 8));
                    for j in 0..TILE_O {
                        let wv = _mm256_set1_ps(*wp.add((o0 + j) * rows + r));
                        acc[2 * j] = _mm256_add_ps(acc[2 * j], _mm256_mul_ps(wv, x0));
                        acc[2 * j + 1] = _mm256_add_ps(acc[2 * j + 1], _mm256_mul_ps(wv, x1));
                    }
                }
                for j in 0..TILE_O {
                    _mm256_storeu_ps(op.add((o0 + j) * plane + p0), acc[2 * j]);
                    _mm256_storeu_ps(op.add((o0 + j) * plane + p0 + 8), acc[2 * j + 1]);
                }
            }
        }
    }
    gemm_tails(w, x, bias, rows, plane, out, full_o, full_p);
}

fn gemm_bias(w: &[f32], x: &[f32], bias: &[f32], rows: usize, plane: usize, out: &mut [f32]) {
    debug_assert_eq!(w.len(), bias.len() * rows);
    debug_assert_eq!(x.len(), rows * plane);
    debug_assert_eq!(out.len(), bias.len() * plane);
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports the enabled feature.
        return unsafe { gemm_bias_avx2(w, x, bias, rows, plane, out) };
    }
    gemm_bias_portable(w, x, bias, rows, plane, out)
}

/// `weight` is `[out][in]` row-major.
pub fn dense(weight: &[f32], bias: &[f32], input: &[f32]) -> Vec<f32> {
    let n_in = input.len();
    debug_assert_eq!(weight.len(), bias.len() * n_in);
    bias.iter()
        .zip(weight.chunks_exact(n_in))
        .map(|(b, row)| b + dot(row, input))
        .collect()
}

pub fn relu_in_place(v: &mut [f32]) {
    for x in v {
        *x = x.max(0.0);
    }
}

/// Non-negative ELU: `ELU(x) + 1`, i.e. `x + 1` for `x >= 0` and `exp(x)` below.
pub fn nnelu(x: f64) -> f64 {
    if x >= 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mirror index without repeating the edge: `-1 → 1`, `n → n - 2`.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Output size of a convolution; the window count is floored.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize, MdnError> {
    if stride == 0 {
        return Err(MdnError::Config("stride must be >= 1".into()));
    }
    if pad >= input {
        return Err(MdnError::Config(format!(
            "reflect padding {pad} needs an input larger than {pad}, got {input}"
        )));
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(MdnError::Config(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Reflect-padded 2D cross-correlation.
///
/// `kernel` is `[out][in][kh][kw]`; `bias` has one entry per output channel.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_reflect(
    input: &Planes,
    kernel: &[f32],
    out_channels: usize,
    kh: usize,
    kw: usize,
    bias: &[f32],
    stride: usize,
    pad: usize,
) -> Result<Planes, MdnError> {
    conv2d_reflect_view(input.view(), kernel, out_channels, kh, kw, bias, stride, pad)
}

/// [`conv2d_reflect`] on borrowed input.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_reflect_view(
    input: PlaneView<'_>,
    kernel: &[f32],
    out_channels: usize,
    kh: usize,
    kw: usize,
    bias: &[f32],
    stride: usize,
    pad: usize,
) -> Result<Planes, MdnError> {
    let ic = input.channels;
    if kernel.len() != out_channels * ic * kh * kw || bias.len() != out_channels {
        return Err(MdnError::Config(format!(
            "kernel of {} values / bias of {} do not match {out_channels}x{ic}x{kh}x{kw}",
            kernel.len(),
            bias.len()
        )));
    }
    let oh = conv_output_dim(input.height, kh, stride, pad)?;
    let ow = conv_output_dim(input.width, kw, stride, pad)?;
    let plane = oh * ow;
    let rows = ic * kh * kw;

    // Unrolled patches: one row per (in-channel, ky, kx), one column per output pixel.
    // The buffer is kept per thread so repeated calls reuse mapped pages.
    thread_local! {
        static COLS: std::cell::RefCell<Vec<f32>> = const { std::cell::RefCell::new(Vec::new()) };
    }
    let mut cols = COLS.take();
    cols.clear();
    cols.resize(rows * plane, 0.0);
    for c in 0..ic {
        let src = &input.data[c * input.height * input.width..(c + 1) * input.height * input.width];
        for ky in 0..kh {
            for kx in 0..kw {
                let r = (c * kh + ky) * kw + kx;
                let dst = &mut cols[r * plane..(r + 1) * plane];
                // Columns whose source index needs no mirroring.
                let lo = (pad.saturating_sub(kx)).div_ceil(stride).min(ow);
                let hi = ((input.width + pad).saturating_sub(kx)).div_ceil(stride).clamp(lo, ow);
                for oy in 0..oh {
                    let sy = reflect_index((oy * stride + ky) as isize - pad as isize, input.height);
                    let row = &src[sy * input.width..(sy + 1) * input.width];
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    let src_x = |ox: usize| reflect_index((ox * stride + kx) as isize - pad as isize, input.width);
                    for ox in (0..lo).chain(hi..ow) {
                        out_row[ox] = row[src_x(ox)];
                    }
                    if hi > lo {
                        let first = lo * stride + kx - pad;
                        if stride == 1 {
                            out_row[lo..hi].copy_from_slice(&row[first..first + (hi - lo)]);
                        } else {
                            for (o, sx) in out_row[lo..hi].iter_mut().zip((first..).step_by(stride)) {
                                *o = row[sx];
                            }
                        }
                    }
                }
            }
        }
    }

    let mut out = vec![0.0f32; out_channels * plane];
    gemm_bias(kernel, &cols, bias, rows, plane, &mut out);
    COLS.set(cols);
    Ok(Planes::new(out_channels, oh, ow, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nnelu_examples() {
        assert_eq!(nnelu(0.0), 1.0);
        assert_eq!(nnelu(2.0), 3.0);
        let tiny = nnelu(-20.0);
        assert!(tiny > 0.0);
        assert!((tiny - 2.061_153_622e-9).abs() < 1e-17);
    }

    #[test]
    fn reflect_row_example() {
        // [a, b, c] padded by one on each side reads [b, a, b, c, b].
        let row = ['a', 'b', 'c'];
        let padded: String = (-1..4).map(|i| row[reflect_index(i, 3)]).collect();
        assert_eq!(padded, "babcb");
    }

    #[test]
    fn default_conv1_shape() {
        assert_eq!(conv_output_dim(256, 7, 4, 3).unwrap(), 64);
        assert_eq!(conv_output_dim(128, 7, 4, 3).unwrap(), 32);
        let input = Planes::zeros(2, 256, 128);
        let out = conv2d_reflect(&input, &vec![0.0; 16 * 2 * 49], 16, 7, 7, &[0.0; 16], 4, 3).unwrap();
        assert_eq!((out.channels, out.height, out.width), (16, 64, 32));
    }

    #[test]
    fn identity_kernel_is_identity() {
        let data: Vec<f32> = (0..2 * 5 * 4).map(|i| i as f32 * 0.37 - 3.0).collect();
        let input = Planes::new(2, 5, 4, data);
        let kernel = [1.0, 0.0, 0.0, 1.0];
        let out = conv2d_reflect(&input, &kernel, 2, 1, 1, &[0.0, 0.0], 1, 0).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn padding_must_be_smaller_than_input() {
        let input = Planes::zeros(1, 2, 2);
        assert!(matches!(
            conv2d_reflect(&input, &[0.0; 25], 1, 5, 5, &[0.0], 1, 2),
            Err(MdnError::Config(_))
        ));
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f32> = (0..37).map(|i| (i as f32).sin()).collect();
        let b: Vec<f32> = (0..37).map(|i| (i as f32 * 0.3).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| *x as f64 * *y as f64).sum();
        assert!((dot(&a, &b) as f64 - naive).abs() < 1e-5);
        assert_eq!(dot(&a, &b), dot_portable(&a, &b));
    }

    #[test]
    fn tiled_gemm_matches_portable_bit_for_bit() {
        let (oc, rows, plane) = (7, 13, 37);
        let w: Vec<f32> = (0..oc * rows).map(|i| ((i * 7919) % 23) as f32 * 0.13 - 1.4).collect();
        let x: Vec<f32> = (0..rows * plane).map(|i| ((i * 104729) % 31) as f32 * 0.07 - 1.0).collect();
        let b: Vec<f32> = (0..oc).map(|i| i as f32 * 0.5 - 1.0).collect();
        let mut fast = vec![0.0; oc * plane];
        let mut slow = vec![0.0; oc * plane];
        gemm_bias(&w, &x, &b, rows, plane, &mut fast);
        gemm_bias_portable(&w, &x, &b, rows, plane, &mut slow);
        assert_eq!(fast, slow);
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 999.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1] && p[1] > p[2]);
    }
}
