//! The recording tape. Every operation validates its operands, computes the
//! forward value eagerly, and appends one node; [`Graph::backward`] walks the
//! nodes in exact reverse recording order, so gradient accumulation order is
//! deterministic. Nodes whose inputs do not require gradients are excluded
//! from the tape walk entirely (frozen parameters stay detached, their grad
//! slot remains `None`).

use rayon::prelude::*;

use super::conv::{
    channel_sum, conv_forward, conv_input_grad, conv_kernel_grad, ConvGeometry,
};
use super::tensor::{Scalar, Tensor};
use super::{shape_mismatch, AutodiffError, GDN_BETA_MIN};

/// Handle to a node of a [`Graph`]. Only valid for the graph that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op<S: Scalar> {
    Leaf,
    Conv2d {
        input: usize,
        kernel: usize,
        bias: usize,
        geo: ConvGeometry,
    },
    /// Transposed convolution; `geo` describes the underlying forward
    /// convolution this op is the adjoint of.
    Conv2dUp {
        input: usize,
        kernel: usize,
        bias: usize,
        geo: ConvGeometry,
    },
    Gdn {
        input: usize,
        beta: usize,
        gamma: usize,
        inverse: bool,
        denom: Vec<S>,
    },
    Prelu {
        input: usize,
        slope: usize,
    },
    Sigmoid {
        input: usize,
    },
    Mse {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Scale {
        input: usize,
        factor: S,
    },
    ConcatChannels {
        inputs: Vec<usize>,
    },
    Reshape {
        input: usize,
    },
    PowerNormalizeRows {
        input: usize,
        norms: Vec<S>,
    },
    ComplexScaleRows {
        input: usize,
        gains: Vec<(S, S)>,
    },
}

pub struct Graph<S: Scalar> {
    ops: Vec<Op<S>>,
    values: Vec<Tensor<S>>,
    grads: Vec<Option<Tensor<S>>>,
    needs: Vec<bool>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            ops: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            needs: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs: bool) -> Var {
        self.ops.push(op);
        self.values.push(value);
        self.grads.push(None);
        self.needs.push(needs);
        Var(self.ops.len() - 1)
    }

    /// Inserts a leaf that participates in differentiation.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Inserts a leaf excluded from differentiation (inputs, noise, frozen
    /// parameters).
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.values[v.0]
    }

    /// Gradient accumulated on `v`, or `None` when the node is detached from
    /// the tape or no backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads[v.0].as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs[v.0]
    }

    pub fn node_count(&self) -> usize {
        self.ops.len()
    }

    /// Clears all accumulated gradients, keeping recorded values.
    pub fn reset_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn any_needs(&self, vars: &[usize]) -> bool {
        vars.iter().any(|&v| self.needs[v])
    }

    /// Strided cross-correlation with "same" zero padding.
    ///
    /// input `N x H x W x Cin`, kernel `kh x kw x Cin x Cout`, bias `Cout`;
    /// output `N x ceil(H/s) x ceil(W/s) x Cout`.
    pub fn conv2d_down(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
    ) -> Result<Var, AutodiffError> {
        let geo = ConvGeometry::same(
            self.values[input.0].shape(),
            self.values[kernel.0].shape(),
            stride,
        )?;
        if self.values[bias.0].shape() != [geo.c_out] {
            return Err(shape_mismatch(
                "conv2d_down bias",
                &[geo.c_out],
                self.values[bias.0].shape(),
            ));
        }
        let mut out = Tensor::zeros(geo.output_shape());
        conv_forward(
            &geo,
            self.values[input.0].data(),
            self.values[kernel.0].data(),
            self.values[bias.0].data(),
            out.data_mut(),
        );
        let needs = self.any_needs(&[input.0, kernel.0, bias.0]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input: input.0,
                kernel: kernel.0,
                bias: bias.0,
                geo,
            },
            needs,
        ))
    }

    /// Transposed convolution: the exact adjoint of [`Graph::conv2d_down`]
    /// with the same kernel.
    ///
    /// input `N x H x W x Cin`, kernel `kh x kw x Cout x Cin`, bias `Cout`;
    /// output `N x sH x sW x Cout`.
    pub fn conv2d_up(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
    ) -> Result<Var, AutodiffError> {
        let in_shape = self.values[input.0].shape().to_vec();
        let k_shape = self.values[kernel.0].shape().to_vec();
        if in_shape.len() != 4 {
            return Err(AutodiffError::BadRank {
                context: "conv2d_up input must be N x H x W x C".into(),
                shape: in_shape,
            });
        }
        if k_shape.len() != 4 {
            return Err(AutodiffError::BadRank {
                context: "conv2d_up kernel must be kh x kw x c_out x c_in".into(),
                shape: k_shape,
            });
        }
        let (n, h, w, c_in) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        let c_out = k_shape[2];
        if k_shape[3] != c_in {
            return Err(shape_mismatch(
                "conv2d_up channel mismatch between input and kernel",
                &[k_shape[0], k_shape[1], c_out, c_in],
                &k_shape,
            ));
        }
        // Geometry of the forward convolution this op is the adjoint of:
        // [N, sH, sW, c_out] -> [N, H, W, c_in].
        let geo = ConvGeometry::same(
            &[n, h * stride, w * stride, c_out],
            &[k_shape[0], k_shape[1], c_out, c_in],
            stride,
        )?;
        debug_assert_eq!(geo.out_h, h);
        debug_assert_eq!(geo.out_w, w);
        if self.values[bias.0].shape() != [c_out] {
            return Err(shape_mismatch(
                "conv2d_up bias",
                &[c_out],
                self.values[bias.0].shape(),
            ));
        }
        let mut out = Tensor::zeros(vec![n, h * stride, w * stride, c_out]);
        conv_input_grad(
            &geo,
            self.values[input.0].data(),
            self.values[kernel.0].data(),
            out.data_mut(),
        );
        let bias_data = self.values[bias.0].data();
        for pos in out.data_mut().chunks_mut(c_out) {
            for (o, b) in pos.iter_mut().zip(bias_data) {
                *o = *o + *b;
            }
        }
        let needs = self.any_needs(&[input.0, kernel.0, bias.0]);
        Ok(self.push(
            out,
            Op::Conv2dUp {
                input: input.0,
                kernel: kernel.0,
                bias: bias.0,
                geo,
            },
            needs,
        ))
    }

    /// Generalized divisive normalization across the last (channel) axis:
    /// `y_i = x_i / sqrt(beta_i + sum_j gamma_ji x_j^2)` per location, or the
    /// multiplicative inverse form when `inverse` is set.
    pub fn gdn(
        &mut self,
        input: Var,
        beta: Var,
        gamma: Var,
        inverse: bool,
    ) -> Result<Var, AutodiffError> {
        let shape = self.values[input.0].shape().to_vec();
        let c = *shape.last().ok_or_else(|| AutodiffError::BadRank {
            context: "gdn input needs a channel axis".into(),
            shape: shape.clone(),
        })?;
        if self.values[beta.0].shape() != [c] {
            return Err(shape_mismatch("gdn beta", &[c], self.values[beta.0].shape()));
        }
        if self.values[gamma.0].shape() != [c, c] {
            return Err(shape_mismatch(
                "gdn gamma",
                &[c, c],
                self.values[gamma.0].shape(),
            ));
        }
        let beta_min = S::from_f64(GDN_BETA_MIN);
        if self.values[beta.0].data().iter().any(|&b| b < beta_min) {
            return Err(AutodiffError::InvalidParameter {
                op: "gdn",
                reason: format!("beta entries must be >= {GDN_BETA_MIN}"),
            });
        }
        if self.values[gamma.0].data().iter().any(|&g| g < S::zero()) {
            return Err(AutodiffError::InvalidParameter {
                op: "gdn",
                reason: "gamma entries must be non-negative".into(),
            });
        }

        let x = self.values[input.0].data();
        let beta_d = self.values[beta.0].data();
        let gamma_d = self.values[gamma.0].data();
        let mut out = vec![S::zero(); x.len()];
        let mut denom = vec![S::zero(); x.len()];

        let per_outer = if shape.len() >= 2 {
            x.len() / shape[0]
        } else {
            x.len()
        };
        let work = |x_n: &[S], out_n: &mut [S], den_n: &mut [S]| {
            let mut acc = vec![S::zero(); c];
            for loc in 0..x_n.len() / c {
                let xs = &x_n[loc * c..(loc + 1) * c];
                acc.copy_from_slice(beta_d);
                for (j, &xj) in xs.iter().enumerate() {
                    let xj2 = xj * xj;
                    let row = &gamma_d[j * c..(j + 1) * c];
                    for (a, g) in acc.iter_mut().zip(row) {
                        *a = *a + xj2 * *g;
                    }
                }
                for i in 0..c {
                    let d = acc[i].sqrt();
                    den_n[loc * c + i] = d;
                    out_n[loc * c + i] = if inverse { xs[i] * d } else { xs[i] / d };
                }
            }
        };
        if shape.len() >= 2 && shape[0] >= 2 && per_outer * c >= 4096 {
            out.par_chunks_mut(per_outer)
                .zip(denom.par_chunks_mut(per_outer))
                .zip(x.par_chunks(per_outer))
                .for_each(|((out_n, den_n), x_n)| work(x_n, out_n, den_n));
        } else {
            work(x, &mut out, &mut denom);
        }

        let value = Tensor::new(shape, out)?;
        let needs = self.any_needs(&[input.0, beta.0, gamma.0]);
        Ok(self.push(
            value,
            Op::Gdn {
                input: input.0,
                beta: beta.0,
                gamma: gamma.0,
                inverse,
                denom,
            },
            needs,
        ))
    }

    /// Parametric ReLU with one slope per channel (last axis). The kink at
    /// zero takes the positive branch.
    pub fn prelu(&mut self, input: Var, slope: Var) -> Result<Var, AutodiffError> {
        let shape = self.values[input.0].shape().to_vec();
        let c = *shape.last().ok_or_else(|| AutodiffError::BadRank {
            context: "prelu input needs a channel axis".into(),
            shape: shape.clone(),
        })?;
        if self.values[slope.0].shape() != [c] {
            return Err(shape_mismatch(
                "prelu slope",
                &[c],
                self.values[slope.0].shape(),
            ));
        }
        let slopes = self.values[slope.0].data();
        let data: Vec<S> = self.values[input.0]
            .data()
            .chunks(c)
            .flat_map(|xs| {
                xs.iter()
                    .zip(slopes)
                    .map(|(&x, &a)| if x >= S::zero() { x } else { a * x })
                    .collect::<Vec<_>>()
            })
            .collect();
        let value = Tensor::new(shape, data)?;
        let needs = self.any_needs(&[input.0, slope.0]);
        Ok(self.push(
            value,
            Op::Prelu {
                input: input.0,
                slope: slope.0,
            },
            needs,
        ))
    }

    /// Logistic sigmoid, saturating without overflow for large |x|.
    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = Tensor::new(
            self.values[input.0].shape().to_vec(),
            self.values[input.0]
                .data()
                .iter()
                .map(|&x| sigmoid_stable(x))
                .collect(),
        )
        .expect("sigmoid preserves shape");
        let needs = self.needs[input.0];
        self.push(value, Op::Sigmoid { input: input.0 }, needs)
    }

    /// Mean over all elements of the squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        if self.values[a.0].shape() != self.values[b.0].shape() {
            return Err(shape_mismatch(
                "mse operands",
                self.values[a.0].shape(),
                self.values[b.0].shape(),
            ));
        }
        let n = self.values[a.0].len();
        let mut total = S::zero();
        for (&x, &y) in self.values[a.0].data().iter().zip(self.values[b.0].data()) {
            let d = x - y;
            total = total + d * d;
        }
        let value = Tensor::scalar(total / S::from_f64(n as f64));
        let needs = self.any_needs(&[a.0, b.0]);
        Ok(self.push(value, Op::Mse { a: a.0, b: b.0 }, needs))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        if self.values[a.0].shape() != self.values[b.0].shape() {
            return Err(shape_mismatch(
                "add operands",
                self.values[a.0].shape(),
                self.values[b.0].shape(),
            ));
        }
        let data: Vec<S> = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.values[a.0].shape().to_vec(), data)?;
        let needs = self.any_needs(&[a.0, b.0]);
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }, needs))
    }

    /// Multiplication by a compile-time constant factor.
    pub fn scale(&mut self, input: Var, factor: S) -> Var {
        let value = Tensor::new(
            self.values[input.0].shape().to_vec(),
            self.values[input.0].data().iter().map(|&x| x * factor).collect(),
        )
        .expect("scale preserves shape");
        let needs = self.needs[input.0];
        self.push(
            value,
            Op::Scale {
                input: input.0,
                factor,
            },
            needs,
        )
    }

    /// Concatenation along the last (channel) axis; all leading extents must
    /// agree.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var, AutodiffError> {
        if inputs.is_empty() {
            return Err(AutodiffError::InvalidParameter {
                op: "concat_channels",
                reason: "no inputs".into(),
            });
        }
        let lead = {
            let s = self.values[inputs[0].0].shape();
            s[..s.len() - 1].to_vec()
        };
        let mut c_total = 0usize;
        for v in inputs {
            let s = self.values[v.0].shape();
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(shape_mismatch(
                    "concat_channels leading extents",
                    self.values[inputs[0].0].shape(),
                    s,
                ));
            }
            c_total += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut data = vec![S::zero(); rows * c_total];
        let mut offset = 0usize;
        for v in inputs {
            let s = self.values[v.0].shape();
            let c = s[s.len() - 1];
            let src = self.values[v.0].data();
            for r in 0..rows {
                data[r * c_total + offset..r * c_total + offset + c]
                    .copy_from_slice(&src[r * c..(r + 1) * c]);
            }
            offset += c;
        }
        let mut shape = lead;
        shape.push(c_total);
        let value = Tensor::new(shape, data)?;
        let idx: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        let needs = self.any_needs(&idx);
        Ok(self.push(value, Op::ConcatChannels { inputs: idx }, needs))
    }

    /// Same data, new shape (element count preserved).
    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let value = self.values[input.0].reshaped(shape)?;
        let needs = self.needs[input.0];
        Ok(self.push(value, Op::Reshape { input: input.0 }, needs))
    }

    /// Per-row power normalization of interleaved (re, im) vectors: each row
    /// `r` of a `[rows, 2k]` tensor becomes `sqrt(k) * r / ||r||`, so the
    /// average complex-symbol power of every row is one.
    pub fn power_normalize_rows(&mut self, input: Var) -> Result<Var, AutodiffError> {
        let shape = self.values[input.0].shape().to_vec();
        if shape.len() < 2 {
            return Err(AutodiffError::BadRank {
                context: "power_normalize_rows input must have a row axis".into(),
                shape,
            });
        }
        let rows = shape[0];
        let m = self.values[input.0].len() / rows;
        if m == 0 || m % 2 != 0 {
            return Err(AutodiffError::InvalidParameter {
                op: "power_normalize_rows",
                reason: format!("row length {m} must be even and non-zero"),
            });
        }
        let scale = S::from_f64((m as f64 / 2.0).sqrt());
        let x = self.values[input.0].data();
        let mut out = vec![S::zero(); x.len()];
        let mut norms = vec![S::zero(); rows];
        for r in 0..rows {
            let row = &x[r * m..(r + 1) * m];
            let mut sq = S::zero();
            for &v in row {
                sq = sq + v * v;
            }
            let norm = sq.sqrt();
            if norm == S::zero() {
                return Err(AutodiffError::DegenerateInput {
                    op: "power_normalize_rows",
                    reason: format!("row {r} is all-zero"),
                });
            }
            norms[r] = norm;
            let f = scale / norm;
            for (o, &v) in out[r * m..(r + 1) * m].iter_mut().zip(row) {
                *o = v * f;
            }
        }
        let value = Tensor::new(shape, out)?;
        let needs = self.needs[input.0];
        Ok(self.push(
            value,
            Op::PowerNormalizeRows {
                input: input.0,
                norms,
            },
            needs,
        ))
    }

    /// Multiplies each row of interleaved (re, im) pairs by a constant
    /// complex gain; used for fading channels inside the training graph.
    pub fn complex_scale_rows(
        &mut self,
        input: Var,
        gains: &[(S, S)],
    ) -> Result<Var, AutodiffError> {
        let shape = self.values[input.0].shape().to_vec();
        if shape.len() < 2 || shape[0] != gains.len() {
            return Err(AutodiffError::InvalidParameter {
                op: "complex_scale_rows",
                reason: format!(
                    "expected one gain per row ({} rows, {} gains)",
                    shape.first().copied().unwrap_or(0),
                    gains.len()
                ),
            });
        }
        let rows = shape[0];
        let m = self.values[input.0].len() / rows;
        if m % 2 != 0 {
            return Err(AutodiffError::InvalidParameter {
                op: "complex_scale_rows",
                reason: format!("row length {m} must be even"),
            });
        }
        let x = self.values[input.0].data();
        let mut out = vec![S::zero(); x.len()];
        for r in 0..rows {
            let (a, b) = gains[r];
            for p in 0..m / 2 {
                let re = x[r * m + 2 * p];
                let im = x[r * m + 2 * p + 1];
                out[r * m + 2 * p] = a * re - b * im;
                out[r * m + 2 * p + 1] = b * re + a * im;
            }
        }
        let value = Tensor::new(shape, out)?;
        let needs = self.needs[input.0];
        Ok(self.push(
            value,
            Op::ComplexScaleRows {
                input: input.0,
                gains: gains.to_vec(),
            },
            needs,
        ))
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate across
    /// repeated calls until [`Graph::reset_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.values[loss.0].len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: self.values[loss.0].shape().to_vec(),
            });
        }
        if !self.needs[loss.0] {
            // Loss does not depend on any differentiable leaf; nothing to do.
            return Ok(());
        }
        // Leaf gradients accumulate across calls; intermediate gradients are
        // per-sweep scratch and must start clean.
        for id in 0..self.ops.len() {
            if !matches!(self.ops[id], Op::Leaf) {
                self.grads[id] = None;
            }
        }
        ensure_grad(&mut self.grads, &self.values, loss.0);
        {
            let g = self.grads[loss.0].as_mut().expect("just allocated");
            let one = S::one();
            g.data_mut()[0] = g.data_mut()[0] + one;
        }

        for id in (0..=loss.0).rev() {
            if !self.needs[id] {
                continue;
            }
            let Some(gout) = self.grads[id].take() else {
                continue;
            };
            match &self.ops[id] {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    geo,
                } => {
                    if self.needs[*input] {
                        ensure_grad(&mut self.grads, &self.values, *input);
                        conv_input_grad(
                            geo,
                            gout.data(),
                            self.values[*kernel].data(),
                            self.grads[*input].as_mut().unwrap().data_mut(),
                        );
                    }
                    if self.needs[*kernel] {
                        ensure_grad(&mut self.grads, &self.values, *kernel);
                        conv_kernel_grad(
                            geo,
                            self.values[*input].data(),
                            gout.data(),
                            self.grads[*kernel].as_mut().unwrap().data_mut(),
                        );
                    }
                    if self.needs[*bias] {
                        ensure_grad(&mut self.grads, &self.values, *bias);
                        channel_sum(
                            gout.data(),
                            geo.c_out,
                            self.grads[*bias].as_mut().unwrap().data_mut(),
                        );
                    }
                }
                Op::Conv2dUp {
                    input,
                    kernel,
                    bias,
                    geo,
                } => {
                    // Adjoint pair: d(input) runs the forward convolution on
                    // the incoming gradient; d(kernel) swaps the roles of the
                    // convolution operands.
                    if self.needs[*input] {
                        ensure_grad(&mut self.grads, &self.values, *input);
                        let zero_bias = vec![S::zero(); geo.c_out];
                        let mut buf = vec![S::zero(); self.values[*input].len()];
                        conv_forward(
                            geo,
                            gout.data(),
                            self.values[*kernel].data(),
                            &zero_bias,
                            &mut buf,
                        );
                        let gin = self.grads[*input].as_mut().unwrap().data_mut();
                        for (g, d) in gin.iter_mut().zip(&buf) {
                            *g = *g + *d;
                        }
                    }
                    if self.needs[*kernel] {
                        ensure_grad(&mut self.grads, &self.values, *kernel);
                        conv_kernel_grad(
                            geo,
                            gout.data(),
                            self.values[*input].data(),
                            self.grads[*kernel].as_mut().unwrap().data_mut(),
                        );
                    }
                    if self.needs[*bias] {
                        ensure_grad(&mut self.grads, &self.values, *bias);
                        channel_sum(
                            gout.data(),
                            geo.c_in,
                            self.grads[*bias].as_mut().unwrap().data_mut(),
                        );
                    }
                }
                Op::Gdn {
                    input,
                    beta,
                    gamma,
                    inverse,
                    denom,
                } => {
                    gdn_backward(
                        &mut self.grads,
                        &self.values,
                        &self.needs,
                        *input,
                        *beta,
                        *gamma,
                        *inverse,
                        denom,
                        gout.data(),
                    );
                }
                Op::Prelu { input, slope } => {
                    let c = self.values[*slope].len();
                    let x = self.values[*input].data();
                    let slopes = self.values[*slope].data();
                    if self.needs[*input] {
                        ensure_grad(&mut self.grads, &self.values, *input);
                        let gin = self.grads[*input].as_mut().unwrap().data_mut();
                        for (i, (&xv, &gv)) in x.iter().zip(gout.data()).enumerate() {
                            let f = if xv >= S::zero() { S::one() } else { slopes[i % c] };
                            gin[i] = gin[i] + gv * f;
                        }
                    }
                    if self.needs[*slope] {
                        ensure_grad(&mut self.grads, &self.values, *slope);
                        let gs = self.grads[*slope].as_mut().unwrap().data_mut();
                        for (i, (&xv, &gv)) in x.iter().zip(gout.data()).enumerate() {
                            if xv < S::zero() {
                                gs[i % c] = gs[i % c] + gv * xv;
                            }
                        }
                    }
                }
                Op::Sigmoid { input } => {
                    if self.needs[*input] {
                        ensure_grad(&mut self.grads, &self.values, *input);
                        let y = self.values[id].data();
                        let gin = self.grads[*input].as_mut().unwrap().data_mut();
                        for (i, (&yv, &gv)) in y.iter().zip(gout.data()).enumerate() {
                            gin[i] = gin[i] + gv * yv * (S::one() - yv);
                        }
                    }
                }
                Op::Mse { a, b } => {
                    let n = S::from_f64(self.values[*a].len() as f64);
                    let g = gout.data()[0];
                    let two = S::from_f64(2.0);
                    if self.needs[*a] {
                        ensure_grad(&mut self.grads, &self.values, *a);
                        let (av, bv) = (self.values[*a].data(), self.values[*b].data());
                        let ga = self.grads[*a].as_mut().unwrap().data_mut();
                        for (i, (&x, &y)) in av.iter().zip(bv).enumerate() {
                            ga[i] = ga[i] + g * two * (x - y) / n;
                        }
                    }
                    if self.needs[*b] {
                        ensure_grad(&mut self.grads, &self.values, *b);
                        let (av, bv) = (self.values[*a].data(), self.values[*b].data());
                        let gb = self.grads[*b].as_mut().unwrap().data_mut();
                        for (i, (&x, &y)) in av.iter().zip(bv).enumerate() {
                            gb[i] = gb[i] - g * two * (x - y) / n;
                        }
                    }
                }
                Op::Add { a, b } => {
                    for &t in &[*a, *b] {
                        if self.needs[t] {
                            ensure_grad(&mut self.grads, &self.values, t);
                            let gt = self.grads[t].as_mut().unwrap().data_mut();
                            for (g, d) in gt.iter_mut().zip(gout.data()) {
                                *g = *g + *d;
                            }
                        }
                    }
                }
                Op::Scale { input, factor } => {
                    if self.needs[*input] {
                        ensure_grad(&mut self.grads, &self.values, *input);
                        let f = *factor;
                        let gin = self.grads[*input].as_mut().unwrap().data_mut();
                        for (g, d) in gin.iter_mut().zip(gout.data()) {
                            *g = *g + *d * f;
                        }
                    }
                }
                Op::ConcatChannels { inputs } => {
                    let c_total = *self.values[id].shape().last().unwrap();
                    let rows = self.values[id].len() / c_total;
                    let mut offset = 0usize;
                    let inputs = inputs.clone();
                    for t in inputs {
                        let s = self.values[t].shape();
                        let c = s[s.len() - 1];
                        if self.needs[t] {
                            ensure_grad(&mut self.grads, &self.values, t);
                            let gt = self.grads[t].as_mut().unwrap().data_mut();
                            for r in 0..rows {
                                let src = &gout.data()[r * c_total + offset..][..c];
                                for (g, d) in gt[r * c..(r + 1) * c].iter_mut().zip(src) {
                                    *g = *g + *d;
                                }
                            }
                        }
                        offset += c;
                    }
                }
                Op::Reshape { input } => {
                    if self.needs[*input] {
                        ensure_grad(&mut self.grads, &self.values, *input);
                        let gin = self.grads[*input].as_mut().unwrap().data_mut();
                        for (g, d) in gin.iter_mut().zip(gout.data()) {
                            *g = *g + *d;
                        }
                    }
                }
                Op::PowerNormalizeRows { input, norms } => {
                    if self.needs[*input] {
                        ensure_grad(&mut self.grads, &self.values, *input);
                        let rows = norms.len();
                        let m = self.values[*input].len() / rows;
                        let scale = S::from_f64((m as f64 / 2.0).sqrt());
                        let x = self.values[*input].data();
                        let gin = self.grads[*input].as_mut().unwrap().data_mut();
                        for r in 0..rows {
                            let norm = norms[r];
                            let row = &x[r * m..(r + 1) * m];
                            let gr = &gout.data()[r * m..(r + 1) * m];
                            let mut dot = S::zero();
                            for (&g, &v) in gr.iter().zip(row) {
                                dot = dot + g * v;
                            }
                            let f1 = scale / norm;
                            let f2 = scale * dot / (norm * norm * norm);
                            for i in 0..m {
                                gin[r * m + i] = gin[r * m + i] + f1 * gr[i] - f2 * row[i];
                            }
                        }
                    }
                }
                Op::ComplexScaleRows { input, gains } => {
                    if self.needs[*input] {
                        ensure_grad(&mut self.grads, &self.values, *input);
                        let rows = gains.len();
                        let m = self.values[*input].len() / rows;
                        let gin = self.grads[*input].as_mut().unwrap().data_mut();
                        for r in 0..rows {
                            let (a, b) = gains[r];
                            for p in 0..m / 2 {
                                let gre = gout.data()[r * m + 2 * p];
                                let gim = gout.data()[r * m + 2 * p + 1];
                                gin[r * m + 2 * p] = gin[r * m + 2 * p] + a * gre + b * gim;
                                gin[r * m + 2 * p + 1] =
                                    gin[r * m + 2 * p + 1] - b * gre + a * gim;
                            }
                        }
                    }
                }
            }
            self.grads[id] = Some(gout);
        }
        Ok(())
    }
}

fn ensure_grad<S: Scalar>(grads: &mut [Option<Tensor<S>>], values: &[Tensor<S>], idx: usize) {
    if grads[idx].is_none() {
        grads[idx] = Some(Tensor::zeros(values[idx].shape().to_vec()));
    }
}

fn sigmoid_stable<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[allow(clippy::too_many_arguments)]
fn gdn_backward<S: Scalar>(
    grads: &mut [Option<Tensor<S>>],
    values: &[Tensor<S>],
    needs: &[bool],
    input: usize,
    beta: usize,
    gamma: usize,
    inverse: bool,
    denom: &[S],
    gout: &[S],
) {
    let c = values[beta].len();
    let x = values[input].data();
    let gamma_d = values[gamma].data();
    let locations = x.len() / c;

    let need_in = needs[input];
    let need_beta = needs[beta];
    let need_gamma = needs[gamma];
    if need_in {
        ensure_grad(grads, values, input);
    }
    if need_beta {
        ensure_grad(grads, values, beta);
    }
    if need_gamma {
        ensure_grad(grads, values, gamma);
    }

    // t_i = g_i x_i / denom_i^3 (forward) or g_i x_i / denom_i (inverse);
    // these drive all three partial derivatives.
    let mut t = vec![S::zero(); c];
    let half = S::from_f64(0.5);
    for loc in 0..locations {
        let xs = &x[loc * c..(loc + 1) * c];
        let ds = &denom[loc * c..(loc + 1) * c];
        let gs = &gout[loc * c..(loc + 1) * c];
        for i in 0..c {
            t[i] = if inverse {
                gs[i] * xs[i] / ds[i]
            } else {
                gs[i] * xs[i] / (ds[i] * ds[i] * ds[i])
            };
        }
        if need_beta {
            let gb = grads[beta].as_mut().unwrap().data_mut();
            for i in 0..c {
                let d = half * t[i];
                gb[i] = if inverse { gb[i] + d } else { gb[i] - d };
            }
        }
        if need_gamma {
            let gg = grads[gamma].as_mut().unwrap().data_mut();
            for m in 0..c {
                let xm2 = xs[m] * xs[m];
                let row = &mut gg[m * c..(m + 1) * c];
                for (g, &ti) in row.iter_mut().zip(&t) {
                    let d = half * ti * xm2;
                    *g = if inverse { *g + d } else { *g - d };
                }
            }
        }
        if need_in {
            let gi = grads[input].as_mut().unwrap().data_mut();
            for m in 0..c {
                let row = &gamma_d[m * c..(m + 1) * c];
                let mut pooled = S::zero();
                for (&g, &ti) in row.iter().zip(&t) {
                    pooled = pooled + g * ti;
                }
                let direct = if inverse {
                    gs[m] * ds[m]
                } else {
                    gs[m] / ds[m]
                };
                let cross = xs[m] * pooled;
                gi[loc * c + m] = if inverse {
                    gi[loc * c + m] + direct + cross
                } else {
                    gi[loc * c + m] + direct - cross
                };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn gdn_unit_examples() {
        // x=1, beta=1, gamma=0 -> 1
        let mut g = Graph::new();
        let x = g.constant(t64(&[1, 1], &[1.0]));
        let beta = g.constant(t64(&[1], &[1.0]));
        let gamma = g.constant(t64(&[1, 1], &[0.0]));
        let y = g.gdn(x, beta, gamma, false).unwrap();
        assert!((g.value(y).data()[0] - 1.0).abs() < 1e-12);

        // x=2, beta=0 (floored), gamma=1 -> 2/sqrt(4) = 1
        let mut g = Graph::new();
        let x = g.constant(t64(&[1, 1], &[2.0]));
        let beta = g.constant(t64(&[1], &[GDN_BETA_MIN]));
        let gamma = g.constant(t64(&[1, 1], &[1.0]));
        let y = g.gdn(x, beta, gamma, false).unwrap();
        assert!((g.value(y).data()[0] - 1.0).abs() < 1e-6);

        // inverse: x=1, beta=3, gamma=1 -> sqrt(4) = 2
        let mut g = Graph::new();
        let x = g.constant(t64(&[1, 1], &[1.0]));
        let beta = g.constant(t64(&[1], &[3.0]));
        let gamma = g.constant(t64(&[1, 1], &[1.0]));
        let y = g.gdn(x, beta, gamma, true).unwrap();
        assert!((g.value(y).data()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gdn_rejects_negative_parameters() {
        let mut g = Graph::new();
        let x = g.constant(t64(&[1, 1], &[1.0]));
        let beta = g.constant(t64(&[1], &[-0.5]));
        let gamma = g.constant(t64(&[1, 1], &[0.1]));
        assert!(matches!(
            g.gdn(x, beta, gamma, false),
            Err(AutodiffError::InvalidParameter { .. })
        ));

        let mut g = Graph::new();
        let x = g.constant(t64(&[1, 1], &[1.0]));
        let beta = g.constant(t64(&[1], &[1.0]));
        let gamma = g.constant(t64(&[1, 1], &[-0.1]));
        assert!(matches!(
            g.gdn(x, beta, gamma, false),
            Err(AutodiffError::InvalidParameter { .. })
        ));
    }

    #[test]
    fn prelu_examples() {
        let mut g = Graph::new();
        let x = g.constant(t64(&[3, 1], &[5.0, -2.0, 0.0]));
        let a = g.constant(t64(&[1], &[0.1]));
        let y = g.prelu(x, a).unwrap();
        assert_eq!(g.value(y).data(), &[5.0, -0.2, 0.0]);

        // slope 1 is the identity
        let mut g = Graph::new();
        let x = g.constant(t64(&[4, 1], &[-3.0, -0.5, 0.5, 3.0]));
        let a = g.constant(t64(&[1], &[1.0]));
        let y = g.prelu(x, a).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn sigmoid_examples() {
        let mut g = Graph::new();
        let x = g.constant(t64(&[3], &[0.0, 800.0, -800.0]));
        let y = g.sigmoid(x);
        let d = g.value(y).data();
        assert_eq!(d[0], 0.5);
        assert!(d[1] <= 1.0 && d[1] > 0.999999);
        assert!(d[2] >= 0.0 && d[2] < 1e-6);
        assert!(d.iter().all(|v| v.is_finite()));

        // symmetry: sigmoid(-x) = 1 - sigmoid(x)
        let mut g = Graph::new();
        let x = g.constant(t64(&[2], &[1.7, -1.7]));
        let y = g.sigmoid(x);
        let d = g.value(y).data();
        assert!((d[0] + d[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mse_examples() {
        let mut g = Graph::new();
        let a = g.constant(t64(&[2], &[1.0, 2.0]));
        let y = g.mse(a, a).unwrap();
        assert_eq!(g.value(y).item(), 0.0);

        let mut g = Graph::new();
        let a = g.constant(t64(&[1], &[0.0]));
        let b = g.constant(t64(&[1], &[2.0]));
        let y = g.mse(a, b).unwrap();
        assert_eq!(g.value(y).item(), 4.0);

        let mut g = Graph::new();
        let a = g.constant(t64(&[1], &[0.0]));
        let b = g.constant(t64(&[2], &[0.0, 0.0]));
        assert!(g.mse(a, b).is_err());
    }

    #[test]
    fn batch_loss_is_mean_of_per_image_squared_norms() {
        // Two "images" of two elements with squared error norms 2 and 4:
        // scaling the elementwise mean by the per-image element count gives
        // the mean over samples of the per-image squared norms, here 3.
        let mut g = Graph::new();
        let x = g.constant(t64(&[2, 2], &[0.0, 0.0, 0.0, 0.0]));
        let xhat = g.constant(t64(&[2, 2], &[1.0, 1.0, 2f64.sqrt(), 2f64.sqrt()]));
        let mse = g.mse(x, xhat).unwrap();
        let batch_loss = g.scale(mse, 2.0);
        assert!((g.value(batch_loss).item() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mse_backward_matches_analytic_formula() {
        let mut g = Graph::new();
        let x = g.constant(t64(&[4], &[0.1, 0.4, -0.3, 0.9]));
        let xhat = g.param(t64(&[4], &[0.0, 0.5, 0.5, 0.5]));
        let loss = g.mse(x, xhat).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(xhat).unwrap();
        for i in 0..4 {
            let expect = 2.0 * (g.value(xhat).data()[i] - g.value(x).data()[i]) / 4.0;
            assert!((grad.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn disconnected_tensor_gets_no_gradient() {
        let mut g = Graph::new();
        let x = g.constant(t64(&[2], &[1.0, 2.0]));
        let y = g.param(t64(&[2], &[3.0, 4.0]));
        let lonely = g.param(t64(&[2], &[5.0, 6.0]));
        let loss = g.mse(x, y).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(y).is_some());
        assert!(g.grad(lonely).is_none());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.constant(t64(&[1], &[0.0]));
        let y = g.param(t64(&[1], &[3.0]));
        let loss = g.mse(x, y).unwrap();
        g.backward(loss).unwrap();
        let g1 = g.grad(y).unwrap().data()[0];
        g.backward(loss).unwrap();
        let g2 = g.grad(y).unwrap().data()[0];
        assert!((g2 - 2.0 * g1).abs() < 1e-12);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::new();
        let x = g.param(t64(&[2], &[1.0, 2.0]));
        assert!(matches!(
            g.backward(x),
            Err(AutodiffError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn frozen_leaves_stay_detached() {
        // Both leaves feed the loss, but only the trainable one accumulates.
        let mut g = Graph::new();
        let frozen = g.constant(t64(&[2], &[1.0, -1.0]));
        let live = g.param(t64(&[2], &[0.5, 0.5]));
        let s = g.add(frozen, live).unwrap();
        let target = g.constant(t64(&[2], &[0.0, 0.0]));
        let loss = g.mse(s, target).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(frozen).is_none());
        assert!(g.grad(live).is_some());
    }

    #[test]
    fn conv_up_examples() {
        // zero input -> zero output (bias zero)
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 2, 2, 1]));
        let k = g.constant(t64(&[2, 2, 1, 1], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(Tensor::zeros(vec![1]));
        let y = g.conv2d_up(x, k, b, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 4, 4, 1]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        // single 1 through an all-ones 2x2 kernel, stride 2 -> 2x2 of ones
        let mut g = Graph::new();
        let x = g.constant(t64(&[1, 1, 1, 1], &[1.0]));
        let k = g.constant(t64(&[2, 2, 1, 1], &[1.0; 4]));
        let b = g.constant(Tensor::zeros(vec![1]));
        let y = g.conv2d_up(x, k, b, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2, 2, 1]);
        assert_eq!(g.value(y).data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn conv_pair_adjoint_identity_through_graph() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (n, h, w, ci, co, k, s) = (2usize, 4usize, 4usize, 2usize, 3usize, 3usize, 2usize);
        let a: Vec<f64> = (0..n * h * w * ci).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kernel: Vec<f64> = (0..k * k * ci * co).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (oh, ow) = (h / s, w / s);
        let b: Vec<f64> = (0..n * oh * ow * co).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut g = Graph::new();
        let av = g.constant(t64(&[n, h, w, ci], &a));
        let kv = g.constant(t64(&[k, k, ci, co], &kernel));
        let zb_out = g.constant(Tensor::zeros(vec![co]));
        let down = g.conv2d_down(av, kv, zb_out, s).unwrap();

        let bv = g.constant(t64(&[n, oh, ow, co], &b));
        let zb_in = g.constant(Tensor::zeros(vec![ci]));
        let up = g.conv2d_up(bv, kv, zb_in, s).unwrap();

        let lhs: f64 = g
            .value(down)
            .data()
            .iter()
            .zip(&b)
            .map(|(x, y)| x * y)
            .sum();
        let rhs: f64 = g.value(up).data().iter().zip(&a).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn concat_and_split_gradients() {
        let mut g = Graph::new();
        let a = g.param(t64(&[2, 1], &[1.0, 2.0]));
        let b = g.param(t64(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let cat = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.value(cat).shape(), &[2, 3]);
        assert_eq!(g.value(cat).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let target = g.constant(Tensor::zeros(vec![2, 3]));
        let loss = g.mse(cat, target).unwrap();
        g.backward(loss).unwrap();
        let ga = g.grad(a).unwrap();
        let gb = g.grad(b).unwrap();
        // d mse / d cat_i = 2 cat_i / 6
        assert!((ga.data()[0] - 2.0 * 1.0 / 6.0).abs() < 1e-12);
        assert!((gb.data()[3] - 2.0 * 6.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn power_normalize_rows_unit_power() {
        let mut g = Graph::new();
        let x = g.constant(t64(&[2, 4], &[1.0, 1.0, 1.0, 1.0, 3.0, 0.0, 0.0, 4.0]));
        let y = g.power_normalize_rows(x).unwrap();
        for r in 0..2 {
            let row = &g.value(y).data()[r * 4..(r + 1) * 4];
            let p: f64 = row.iter().map(|v| v * v).sum::<f64>() / 2.0; // k = 2 symbols
            assert!((p - 1.0).abs() < 1e-12);
        }
        // zero row errors
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![1, 4]));
        assert!(matches!(
            g.power_normalize_rows(x),
            Err(AutodiffError::DegenerateInput { .. })
        ));
    }

    #[test]
    fn complex_scale_rows_rotates_pairs() {
        let mut g = Graph::new();
        // multiply (1 + 2i) by i: expect (-2 + 1i)
        let x = g.constant(t64(&[1, 2], &[1.0, 2.0]));
        let y = g.complex_scale_rows(x, &[(0.0, 1.0)]).unwrap();
        assert_eq!(g.value(y).data(), &[-2.0, 1.0]);
    }

    #[test]
    fn forward_and_backward_are_bit_deterministic() {
        use rand::{Rng, SeedableRng};
        let run = || {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
            let x: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k: Vec<f64> = (0..3 * 3 * 2 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut g = Graph::new();
            let xv = g.constant(t64(&[1, 4, 4, 2], &x));
            let kv = g.param(t64(&[3, 3, 2, 2], &k));
            let bv = g.param(Tensor::zeros(vec![2]));
            let c = g.conv2d_down(xv, kv, bv, 1).unwrap();
            let sg = g.sigmoid(c);
            let target = g.constant(Tensor::zeros(vec![1, 4, 4, 2]));
            let loss = g.mse(sg, target).unwrap();
            g.backward(loss).unwrap();
            (
                g.value(loss).item(),
                g.grad(kv).unwrap().data().to_vec(),
            )
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(
            g1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            g2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
