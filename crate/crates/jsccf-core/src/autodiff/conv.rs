//! Strided 2D cross-correlation on NHWC feature maps with "same" zero
//! padding, plus the gradient routines. The transposed convolution is the
//! exact adjoint of the forward convolution, so it reuses the same routines
//! with the roles of input and output gradient swapped.

use rayon::prelude::*;

use super::tensor::Scalar;
use super::AutodiffError;

/// Resolved geometry of one convolution: shapes, padding, and output extents.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn div_ceil(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

impl ConvGeometry {
    /// Geometry for "same" padding: output spatial extents are
    /// `ceil(in/stride)`; total padding `max((out-1)*stride + k - in, 0)`
    /// split with the smaller half on the top/left.
    pub(crate) fn same(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: usize,
    ) -> Result<Self, AutodiffError> {
        if input_shape.len() != 4 {
            return Err(AutodiffError::BadRank {
                context: "conv input must be N x H x W x C".into(),
                shape: input_shape.to_vec(),
            });
        }
        if kernel_shape.len() != 4 {
            return Err(AutodiffError::BadRank {
                context: "conv kernel must be kh x kw x c_in x c_out".into(),
                shape: kernel_shape.to_vec(),
            });
        }
        if stride == 0 {
            return Err(AutodiffError::InvalidParameter {
                op: "conv2d",
                reason: "stride must be positive".into(),
            });
        }
        let (n, in_h, in_w, c_in) = (
            input_shape[0],
            input_shape[1],
            input_shape[2],
            input_shape[3],
        );
        let (k_h, k_w, kc_in, c_out) = (
            kernel_shape[0],
            kernel_shape[1],
            kernel_shape[2],
            kernel_shape[3],
        );
        if kc_in != c_in {
            return Err(super::shape_mismatch(
                "conv2d channel mismatch between input and kernel",
                &[k_h, k_w, c_in, c_out],
                kernel_shape,
            ));
        }
        if in_h == 0 || in_w == 0 || c_in == 0 || c_out == 0 || k_h == 0 || k_w == 0 {
            return Err(AutodiffError::InvalidParameter {
                op: "conv2d",
                reason: "zero-sized extents".into(),
            });
        }
        let out_h = div_ceil(in_h, stride);
        let out_w = div_ceil(in_w, stride);
        let pad_h = ((out_h - 1) * stride + k_h).saturating_sub(in_h);
        let pad_w = ((out_w - 1) * stride + k_w).saturating_sub(in_w);
        if k_h > in_h + pad_h || k_w > in_w + pad_w {
            return Err(AutodiffError::InvalidParameter {
                op: "conv2d",
                reason: format!(
                    "kernel {}x{} exceeds padded input {}x{}",
                    k_h,
                    k_w,
                    in_h + pad_h,
                    in_w + pad_w
                ),
            });
        }
        Ok(Self {
            n,
            in_h,
            in_w,
            c_in,
            c_out,
            k_h,
            k_w,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
            out_h,
            out_w,
        })
    }

    pub(crate) fn output_shape(&self) -> Vec<usize> {
        vec![self.n, self.out_h, self.out_w, self.c_out]
    }

    fn per_sample_in(&self) -> usize {
        self.in_h * self.in_w * self.c_in
    }

    fn per_sample_out(&self) -> usize {
        self.out_h * self.out_w * self.c_out
    }

    /// Multiply-accumulate count per sample; drives the parallelism gate.
    fn work_per_sample(&self) -> usize {
        self.out_h * self.out_w * self.k_h * self.k_w * self.c_in * self.c_out
    }
}

const PAR_WORK_THRESHOLD: usize = 50_000;

/// out[n, oy, ox, :] = bias + sum_{ky,kx,ci} in[n, oy*s+ky-pt, ox*s+kx-pl, ci] * K[ky,kx,ci,:]
pub(crate) fn conv_forward<S: Scalar>(
    geo: &ConvGeometry,
    input: &[S],
    kernel: &[S],
    bias: &[S],
    out: &mut [S],
) {
    let in_stride = geo.per_sample_in();
    let out_stride = geo.per_sample_out();
    let run = |n_idx: usize, out_n: &mut [S]| {
        let in_n = &input[n_idx * in_stride..(n_idx + 1) * in_stride];
        forward_one(geo, in_n, kernel, bias, out_n);
    };
    if geo.n >= 2 && geo.work_per_sample() >= PAR_WORK_THRESHOLD {
        out.par_chunks_mut(out_stride)
            .enumerate()
            .for_each(|(n_idx, out_n)| run(n_idx, out_n));
    } else {
        for (n_idx, out_n) in out.chunks_mut(out_stride).enumerate() {
            run(n_idx, out_n);
        }
    }
}

fn forward_one<S: Scalar>(geo: &ConvGeometry, input: &[S], kernel: &[S], bias: &[S], out: &mut [S]) {
    let mut acc = vec![S::zero(); geo.c_out];
    for oy in 0..geo.out_h {
        for ox in 0..geo.out_w {
            acc.copy_from_slice(bias);
            for ky in 0..geo.k_h {
                let iy = (oy * geo.stride + ky) as isize - geo.pad_top as isize;
                if iy < 0 || iy as usize >= geo.in_h {
                    continue;
                }
                for kx in 0..geo.k_w {
                    let ix = (ox * geo.stride + kx) as isize - geo.pad_left as isize;
                    if ix < 0 || ix as usize >= geo.in_w {
                        continue;
                    }
                    let x_off = (iy as usize * geo.in_w + ix as usize) * geo.c_in;
                    let k_off = (ky * geo.k_w + kx) * geo.c_in * geo.c_out;
                    for ci in 0..geo.c_in {
                        let xv = input[x_off + ci];
                        let krow = &kernel[k_off + ci * geo.c_out..k_off + (ci + 1) * geo.c_out];
                        for (a, k) in acc.iter_mut().zip(krow) {
                            *a = *a + xv * *k;
                        }
                    }
                }
            }
            let o_off = (oy * geo.out_w + ox) * geo.c_out;
            out[o_off..o_off + geo.c_out].copy_from_slice(&acc);
        }
    }
}

/// Accumulates into `grad_in` the adjoint of the forward map applied to
/// `grad_out`: grad_in[n,iy,ix,ci] += sum grad_out[n,oy,ox,co] * K[ky,kx,ci,co].
pub(crate) fn conv_input_grad<S: Scalar>(
    geo: &ConvGeometry,
    grad_out: &[S],
    kernel: &[S],
    grad_in: &mut [S],
) {
    let in_stride = geo.per_sample_in();
    let out_stride = geo.per_sample_out();
    let run = |n_idx: usize, gin_n: &mut [S]| {
        let gout_n = &grad_out[n_idx * out_stride..(n_idx + 1) * out_stride];
        input_grad_one(geo, gout_n, kernel, gin_n);
    };
    if geo.n >= 2 && geo.work_per_sample() >= PAR_WORK_THRESHOLD {
        grad_in
            .par_chunks_mut(in_stride)
            .enumerate()
            .for_each(|(n_idx, gin_n)| run(n_idx, gin_n));
    } else {
        for (n_idx, gin_n) in grad_in.chunks_mut(in_stride).enumerate() {
            run(n_idx, gin_n);
        }
    }
}

fn input_grad_one<S: Scalar>(geo: &ConvGeometry, grad_out: &[S], kernel: &[S], grad_in: &mut [S]) {
    for oy in 0..geo.out_h {
        for ox in 0..geo.out_w {
            let g = &grad_out[(oy * geo.out_w + ox) * geo.c_out..][..geo.c_out];
            for ky in 0..geo.k_h {
                let iy = (oy * geo.stride + ky) as isize - geo.pad_top as isize;
                if iy < 0 || iy as usize >= geo.in_h {
                    continue;
                }
                for kx in 0..geo.k_w {
                    let ix = (ox * geo.stride + kx) as isize - geo.pad_left as isize;
                    if ix < 0 || ix as usize >= geo.in_w {
                        continue;
                    }
                    let x_off = (iy as usize * geo.in_w + ix as usize) * geo.c_in;
                    let k_off = (ky * geo.k_w + kx) * geo.c_in * geo.c_out;
                    for ci in 0..geo.c_in {
                        let krow = &kernel[k_off + ci * geo.c_out..k_off + (ci + 1) * geo.c_out];
                        let mut s = S::zero();
                        for (gv, kv) in g.iter().zip(krow) {
                            s = s + *gv * *kv;
                        }
                        grad_in[x_off + ci] = grad_in[x_off + ci] + s;
                    }
                }
            }
        }
    }
}

/// Accumulates the kernel gradient:
/// grad_k[ky,kx,ci,co] += sum_{n,oy,ox} in[n,iy,ix,ci] * grad_out[n,oy,ox,co].
///
/// Runs sequentially over the batch so accumulation order is fixed.
pub(crate) fn conv_kernel_grad<S: Scalar>(
    geo: &ConvGeometry,
    input: &[S],
    grad_out: &[S],
    grad_k: &mut [S],
) {
    let in_stride = geo.per_sample_in();
    let out_stride = geo.per_sample_out();
    for n_idx in 0..geo.n {
        let in_n = &input[n_idx * in_stride..(n_idx + 1) * in_stride];
        let gout_n = &grad_out[n_idx * out_stride..(n_idx + 1) * out_stride];
        for oy in 0..geo.out_h {
            for ox in 0..geo.out_w {
                let g = &gout_n[(oy * geo.out_w + ox) * geo.c_out..][..geo.c_out];
                for ky in 0..geo.k_h {
                    let iy = (oy * geo.stride + ky) as isize - geo.pad_top as isize;
                    if iy < 0 || iy as usize >= geo.in_h {
                        continue;
                    }
                    for kx in 0..geo.k_w {
                        let ix = (ox * geo.stride + kx) as isize - geo.pad_left as isize;
                        if ix < 0 || ix as usize >= geo.in_w {
                            continue;
                        }
                        let x_off = (iy as usize * geo.in_w + ix as usize) * geo.c_in;
                        let k_off = (ky * geo.k_w + kx) * geo.c_in * geo.c_out;
                        for ci in 0..geo.c_in {
                            let xv = in_n[x_off + ci];
                            let krow = &mut grad_k[k_off + ci * geo.c_out..][..geo.c_out];
                            for (kg, gv) in krow.iter_mut().zip(g) {
                                *kg = *kg + xv * *gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// acc[c] += sum over all positions of data[..., c] for a last-axis channel
/// count of `channels`; used for bias gradients of both conv directions.
pub(crate) fn channel_sum<S: Scalar>(data: &[S], channels: usize, acc: &mut [S]) {
    for pos in data.chunks(channels) {
        for (b, g) in acc.iter_mut().zip(pos) {
            *b = *b + *g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-summation convolution oracle: walks every output element the
    /// slow way, independent of the production loop structure.
    pub(crate) fn conv_oracle(
        geo: &ConvGeometry,
        input: &[f64],
        kernel: &[f64],
        bias: &[f64],
    ) -> Vec<f64> {
        let mut out = vec![0.0; geo.n * geo.out_h * geo.out_w * geo.c_out];
        for n in 0..geo.n {
            for oy in 0..geo.out_h {
                for ox in 0..geo.out_w {
                    for co in 0..geo.c_out {
                        let mut acc = bias[co];
                        for ky in 0..geo.k_h {
                            for kx in 0..geo.k_w {
                                let iy = (oy * geo.stride + ky) as isize - geo.pad_top as isize;
                                let ix = (ox * geo.stride + kx) as isize - geo.pad_left as isize;
                                if iy < 0
                                    || ix < 0
                                    || iy as usize >= geo.in_h
                                    || ix as usize >= geo.in_w
                                {
                                    continue;
                                }
                                for ci in 0..geo.c_in {
                                    let x = input[((n * geo.in_h + iy as usize) * geo.in_w
                                        + ix as usize)
                                        * geo.c_in
                                        + ci];
                                    let k = kernel
                                        [((ky * geo.k_w + kx) * geo.c_in + ci) * geo.c_out + co];
                                    acc += x * k;
                                }
                            }
                        }
                        out[((n * geo.out_h + oy) * geo.out_w + ox) * geo.c_out + co] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn scalar_product_case() {
        let geo = ConvGeometry::same(&[1, 1, 1, 1], &[1, 1, 1, 1], 1).unwrap();
        let mut out = vec![0.0f64];
        conv_forward(&geo, &[2.0], &[3.0], &[0.0], &mut out);
        assert_eq!(out, vec![6.0]);
    }

    #[test]
    fn stride_two_sums_whole_window() {
        // 2x2 input [[1,2],[3,4]], all-ones 2x2 kernel, stride 2: one output, 10.
        let geo = ConvGeometry::same(&[1, 2, 2, 1], &[2, 2, 1, 1], 2).unwrap();
        assert_eq!(geo.output_shape(), vec![1, 1, 1, 1]);
        let input = [1.0f64, 2.0, 3.0, 4.0];
        let kernel = [1.0f64; 4];
        let mut out = vec![0.0f64];
        conv_forward(&geo, &input, &kernel, &[0.0], &mut out);
        assert_eq!(out, vec![10.0]);
        assert_eq!(conv_oracle(&geo, &input, &kernel, &[0.0]), out);
    }

    #[test]
    fn centered_identity_kernel_is_identity() {
        let geo = ConvGeometry::same(&[1, 4, 4, 1], &[3, 3, 1, 1], 1).unwrap();
        let input: Vec<f64> = (0..16).map(|i| i as f64 * 0.5 - 3.0).collect();
        let mut kernel = vec![0.0f64; 9];
        kernel[4] = 1.0; // center tap
        let mut out = vec![0.0f64; 16];
        conv_forward(&geo, &input, &kernel, &[0.0], &mut out);
        assert_eq!(out, input);
    }

    #[test]
    fn matches_oracle_on_random_shapes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for &(n, h, w, ci, co, k, s) in &[
            (1usize, 4usize, 4usize, 2usize, 3usize, 3usize, 1usize),
            (2, 5, 6, 1, 2, 5, 2),
            (1, 8, 8, 3, 4, 5, 2),
            (3, 4, 4, 2, 2, 2, 2),
        ] {
            let geo = ConvGeometry::same(&[n, h, w, ci], &[k, k, ci, co], s).unwrap();
            let input: Vec<f64> = (0..n * h * w * ci).map(|_| rng.random_range(-1.0..1.0)).collect();
            let kernel: Vec<f64> = (0..k * k * ci * co).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bias: Vec<f64> = (0..co).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut out = vec![0.0f64; n * geo.out_h * geo.out_w * co];
            conv_forward(&geo, &input, &kernel, &bias, &mut out);
            let oracle = conv_oracle(&geo, &input, &kernel, &bias);
            for (a, b) in out.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let err = ConvGeometry::same(&[1, 4, 4, 3], &[3, 3, 2, 4], 1).unwrap_err();
        assert!(matches!(err, AutodiffError::ShapeMismatch { .. }));
    }

    #[test]
    fn adjoint_identity_forward_vs_input_grad() {
        // <conv(A), B> == <A, adjoint(B)> for random A, B at 64-bit.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for &(n, h, w, ci, co, k, s) in &[
            (1usize, 4usize, 4usize, 2usize, 3usize, 3usize, 1usize),
            (2, 6, 6, 2, 2, 5, 2),
            (1, 8, 4, 1, 4, 2, 2),
        ] {
            let geo = ConvGeometry::same(&[n, h, w, ci], &[k, k, ci, co], s).unwrap();
            let a: Vec<f64> = (0..n * h * w * ci).map(|_| rng.random_range(-1.0..1.0)).collect();
            let kernel: Vec<f64> = (0..k * k * ci * co).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n * geo.out_h * geo.out_w * co)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let mut conv_a = vec![0.0; b.len()];
            conv_forward(&geo, &a, &kernel, &vec![0.0; co], &mut conv_a);
            let mut adj_b = vec![0.0; a.len()];
            conv_input_grad(&geo, &b, &kernel, &mut adj_b);
            let lhs: f64 = conv_a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let rhs: f64 = a.iter().zip(&adj_b).map(|(x, y)| x * y).sum();
            assert!(
                (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0),
                "adjoint identity violated: {lhs} vs {rhs}"
            );
        }
    }
}
