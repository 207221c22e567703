//! The L-layer coding pipeline: per-layer encoders, decoders and combiners,
//! the transmitter-side estimate computed from feedback with the shared
//! decoder/combiner weights, end-to-end transmission traces, and binary
//! checkpoints.
//!
//! Layer `j` maps the image (and, for `j >= 2`, the transmitter's estimate
//! of the receiver's current reconstruction) to `k_j` power-normalized
//! complex symbols. The receiver decodes from all channel outputs received
//! so far and recursively combines the result with its previous
//! reconstruction. Encoders downsample twice by stride 2, so a latent block
//! holds `2 k_j = (H/4) * (W/4) * c_j` real values.

mod checkpoint;

pub use checkpoint::{
    load_model, load_model_bytes, model_to_bytes, save_model, CheckpointError, CHECKPOINT_VERSION,
};

use rand::Rng;

use crate::autodiff::{AutodiffError, Graph, Scalar, Tensor, Var, GDN_BETA_MIN};
use crate::channel::{
    awgn_transmit, feedback_transmit, pack_complex, power_normalize, rayleigh_transmit,
    unpack_complex, ChannelConfig, ChannelDraw, ChannelError, ComplexSignal, ForwardKind,
};
use crate::seeds::{init_rng, trace_rng, Link};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// How encoders for layers `j >= 2` obtain the receiver-state input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxEstimate {
    /// Decode the feedback signal with the shared decoder/combiner weights.
    Decoded,
    /// Feed an all-zero estimate (feedback ablation).
    Zeroed,
}

/// Architecture description: layer count, per-layer channel uses, image
/// dimensions, and per-network block widths.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub layers: usize,
    pub total_channel_uses: usize,
    /// Channel uses `k_j` per layer; sums to `total_channel_uses`.
    pub channel_uses: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Interior encoder widths; the final encoder block always emits `c_j`.
    pub encoder_widths: Vec<usize>,
    /// Interior decoder widths; the final decoder block always emits `C`.
    pub decoder_widths: Vec<usize>,
    /// Interior combiner widths; the final combiner block always emits `C`.
    pub combiner_widths: Vec<usize>,
    /// Square filter extent of every convolution.
    pub kernel: usize,
    pub tx_estimate: TxEstimate,
}

impl ArchSpec {
    /// Spec with the default widths (32/32/32 encoder and decoder, 32/32
    /// combiner, 5x5 filters).
    pub fn new(
        layers: usize,
        channel_uses: Vec<usize>,
        height: usize,
        width: usize,
        channels: usize,
    ) -> Self {
        Self {
            layers,
            total_channel_uses: channel_uses.iter().sum(),
            channel_uses,
            height,
            width,
            channels,
            encoder_widths: vec![32, 32, 32],
            decoder_widths: vec![32, 32, 32],
            combiner_widths: vec![32, 32],
            kernel: 5,
            tx_estimate: TxEstimate::Decoded,
        }
    }

    /// Equal split of `total` channel uses over `layers` layers.
    pub fn with_equal_layers(
        layers: usize,
        total: usize,
        height: usize,
        width: usize,
        channels: usize,
    ) -> Result<Self, ModelError> {
        if layers == 0 || total % layers != 0 {
            return Err(ModelError::Config(format!(
                "cannot split {total} channel uses evenly over {layers} layers"
            )));
        }
        Ok(Self::new(
            layers,
            vec![total / layers; layers],
            height,
            width,
            channels,
        ))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers == 0 {
            return Err(ModelError::Config("layer count must be >= 1".into()));
        }
        if self.channel_uses.len() != self.layers {
            return Err(ModelError::Config(format!(
                "expected {} per-layer channel-use entries, got {}",
                self.layers,
                self.channel_uses.len()
            )));
        }
        let sum: usize = self.channel_uses.iter().sum();
        if sum != self.total_channel_uses {
            return Err(ModelError::Config(format!(
                "per-layer channel uses sum to {sum}, expected total {}",
                self.total_channel_uses
            )));
        }
        if self.height == 0 || self.width == 0 || self.height % 4 != 0 || self.width % 4 != 0 {
            return Err(ModelError::Config(format!(
                "image dimensions {}x{} must be positive and divisible by 4",
                self.height, self.width
            )));
        }
        if self.channels == 0 {
            return Err(ModelError::Config("channel count must be >= 1".into()));
        }
        if self.encoder_widths.len() < 2 {
            return Err(ModelError::Config(
                "encoder needs at least two interior blocks (two stride-2 stages)".into(),
            ));
        }
        if self.decoder_widths.is_empty() || self.combiner_widths.is_empty() {
            return Err(ModelError::Config(
                "decoder and combiner need at least one interior block".into(),
            ));
        }
        if self.kernel == 0 {
            return Err(ModelError::Config("kernel extent must be >= 1".into()));
        }
        for j in 1..=self.layers {
            self.latent_channels(j)?;
        }
        Ok(())
    }

    /// Latent channel count `c_j = 2 k_j / ((H/4)(W/4))` for 1-based layer
    /// `j`; errors unless it is a positive integer.
    pub fn latent_channels(&self, layer: usize) -> Result<usize, ModelError> {
        let spatial = (self.height / 4) * (self.width / 4);
        let k = self.channel_uses[layer - 1];
        if spatial == 0 || k == 0 || (2 * k) % spatial != 0 {
            return Err(ModelError::Config(format!(
                "layer {layer}: 2*k_j = {} is not a positive multiple of (H/4)(W/4) = {spatial}",
                2 * k
            )));
        }
        Ok(2 * k / spatial)
    }

    /// Channel uses of 1-based layer `j` when the model runs fully
    /// convolutionally on an `h x w` input.
    pub fn channel_uses_for_dims(
        &self,
        layer: usize,
        h: usize,
        w: usize,
    ) -> Result<usize, ModelError> {
        let c = self.latent_channels(layer)?;
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(ModelError::Usage(format!(
                "input dimensions {h}x{w} must be positive and divisible by 4"
            )));
        }
        let reals = c * (h / 4) * (w / 4);
        if reals % 2 != 0 {
            return Err(ModelError::Usage(format!(
                "layer {layer} at {h}x{w} yields an odd latent length {reals}, which cannot pack into complex symbols"
            )));
        }
        Ok(reals / 2)
    }
}

pub(crate) struct GdnParams {
    pub beta: Tensor<f32>,
    pub gamma: Tensor<f32>,
    pub inverse: bool,
}

pub(crate) struct ConvBlock {
    pub up: bool,
    pub stride: usize,
    pub kernel: Tensor<f32>,
    pub bias: Tensor<f32>,
    pub gdn: Option<GdnParams>,
    pub prelu: Option<Tensor<f32>>,
    pub sigmoid: bool,
}

pub(crate) struct LayerNets {
    pub encoder: Vec<ConvBlock>,
    pub decoder: Vec<ConvBlock>,
    /// Only layers `j >= 2` carry a combiner.
    pub combiner: Option<Vec<ConvBlock>>,
}

/// Trained parameter bundle plus architecture metadata.
pub struct JsccModel {
    spec: ArchSpec,
    pub(crate) layers: Vec<LayerNets>,
    trained: Vec<bool>,
}

/// Identity and projection floor of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamMeta {
    pub name: String,
    /// Lower bound enforced after each optimizer step, when present.
    pub floor: Option<f32>,
}

enum BlockRole {
    Interior,
    LinearOut,
    SigmoidOut,
}

fn init_kernel<R: Rng>(rng: &mut R, shape: [usize; 4], fan_in: usize) -> Tensor<f32> {
    let limit = (3.0 / fan_in as f64).sqrt();
    let data: Vec<f32> = (0..shape.iter().product())
        .map(|_| rng.random_range(-limit..limit) as f32)
        .collect();
    Tensor::new(shape.to_vec(), data).expect("kernel shape matches data")
}

fn make_block<R: Rng>(
    rng: &mut R,
    up: bool,
    stride: usize,
    kernel: usize,
    c_in: usize,
    c_out: usize,
    role: BlockRole,
    inverse_gdn: bool,
) -> ConvBlock {
    let fan_in = kernel * kernel * c_in;
    let kernel_t = if up {
        init_kernel(rng, [kernel, kernel, c_out, c_in], fan_in)
    } else {
        init_kernel(rng, [kernel, kernel, c_in, c_out], fan_in)
    };
    let (gdn, prelu, sigmoid) = match role {
        BlockRole::Interior => {
            let mut gamma = Tensor::zeros(vec![c_out, c_out]);
            for i in 0..c_out {
                gamma.data_mut()[i * c_out + i] = 0.1;
            }
            (
                Some(GdnParams {
                    beta: Tensor::full(vec![c_out], 1.0),
                    gamma,
                    inverse: inverse_gdn,
                }),
                Some(Tensor::full(vec![c_out], 0.25)),
                false,
            )
        }
        BlockRole::LinearOut => (None, None, false),
        BlockRole::SigmoidOut => (None, None, true),
    };
    ConvBlock {
        up,
        stride,
        kernel: kernel_t,
        bias: Tensor::zeros(vec![c_out]),
        gdn,
        prelu,
        sigmoid,
    }
}

/// Builds a freshly initialized model: kernels from a symmetric uniform
/// distribution scaled by fan-in, PReLU slopes 0.25, GDN beta 1 and
/// gamma 0.1*I, biases zero.
pub fn build_model(spec: ArchSpec, seed: u64) -> Result<JsccModel, ModelError> {
    spec.validate()?;
    let mut rng = init_rng(seed);
    let k = spec.kernel;
    let c_img = spec.channels;
    let mut layers = Vec::with_capacity(spec.layers);
    for j in 1..=spec.layers {
        let c_latent = spec.latent_channels(j)?;

        // Encoder: first two interior blocks downsample by 2, the rest are
        // stride 1, final block emits the latent linearly.
        let enc_in = if j == 1 { c_img } else { 2 * c_img };
        let mut encoder = Vec::new();
        let mut prev = enc_in;
        for (i, &w) in spec.encoder_widths.iter().enumerate() {
            let stride = if i < 2 { 2 } else { 1 };
            encoder.push(make_block(
                &mut rng,
                false,
                stride,
                k,
                prev,
                w,
                BlockRole::Interior,
                false,
            ));
            prev = w;
        }
        encoder.push(make_block(
            &mut rng,
            false,
            1,
            k,
            prev,
            c_latent,
            BlockRole::LinearOut,
            false,
        ));

        // Decoder: transposed convolutions mirroring the encoder; the last
        // interior block and the output block upsample by 2, IGDN between.
        let dec_in: usize = (1..=j)
            .map(|i| spec.latent_channels(i))
            .sum::<Result<usize, _>>()?;
        let mut decoder = Vec::new();
        let mut prev = dec_in;
        let n_dec = spec.decoder_widths.len();
        for (i, &w) in spec.decoder_widths.iter().enumerate() {
            let stride = if i + 1 == n_dec { 2 } else { 1 };
            decoder.push(make_block(
                &mut rng,
                true,
                stride,
                k,
                prev,
                w,
                BlockRole::Interior,
                true,
            ));
            prev = w;
        }
        decoder.push(make_block(
            &mut rng,
            true,
            2,
            k,
            prev,
            c_img,
            BlockRole::SigmoidOut,
            true,
        ));

        // Combiner (layers >= 2): full-resolution refinement of
        // (previous reconstruction, current decoder output).
        let combiner = if j >= 2 {
            let mut blocks = Vec::new();
            let mut prev = 2 * c_img;
            for &w in &spec.combiner_widths {
                blocks.push(make_block(
                    &mut rng,
                    false,
                    1,
                    k,
                    prev,
                    w,
                    BlockRole::Interior,
                    false,
                ));
                prev = w;
            }
            blocks.push(make_block(
                &mut rng,
                false,
                1,
                k,
                prev,
                c_img,
                BlockRole::SigmoidOut,
                false,
            ));
            Some(blocks)
        } else {
            None
        };

        layers.push(LayerNets {
            encoder,
            decoder,
            combiner,
        });
    }
    let trained = vec![false; spec.layers];
    Ok(JsccModel {
        spec,
        layers,
        trained,
    })
}

fn block_param_names(prefix: &str, block: &ConvBlock) -> Vec<(String, Option<f32>)> {
    let mut names = vec![
        (format!("{prefix}.kernel"), None),
        (format!("{prefix}.bias"), None),
    ];
    if block.gdn.is_some() {
        names.push((format!("{prefix}.gdn_beta"), Some(GDN_BETA_MIN as f32)));
        names.push((format!("{prefix}.gdn_gamma"), Some(0.0)));
    }
    if block.prelu.is_some() {
        names.push((format!("{prefix}.prelu"), None));
    }
    names
}

impl JsccModel {
    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn trained_layers(&self) -> &[bool] {
        &self.trained
    }

    pub(crate) fn set_trained(&mut self, layer: usize, value: bool) {
        self.trained[layer - 1] = value;
    }

    pub(crate) fn set_trained_flags(&mut self, flags: Vec<bool>) {
        self.trained = flags;
    }

    /// All parameters in a fixed deterministic order.
    pub fn named_params(&self) -> Vec<(ParamMeta, &Tensor<f32>)> {
        let mut out = Vec::new();
        for (j0, nets) in self.layers.iter().enumerate() {
            let j = j0 + 1;
            let mut comps: Vec<(String, &Vec<ConvBlock>)> = vec![
                (format!("layer{j}.enc"), &nets.encoder),
                (format!("layer{j}.dec"), &nets.decoder),
            ];
            if let Some(comb) = &nets.combiner {
                comps.push((format!("layer{j}.comb"), comb));
            }
            for (comp, blocks) in comps {
                for (i, b) in blocks.iter().enumerate() {
                    let prefix = format!("{comp}.b{i}");
                    let names = block_param_names(&prefix, b);
                    let mut fields: Vec<&Tensor<f32>> = vec![&b.kernel, &b.bias];
                    if let Some(g) = &b.gdn {
                        fields.push(&g.beta);
                        fields.push(&g.gamma);
                    }
                    if let Some(p) = &b.prelu {
                        fields.push(p);
                    }
                    for ((name, floor), t) in names.into_iter().zip(fields) {
                        out.push((ParamMeta { name, floor }, t));
                    }
                }
            }
        }
        out
    }

    /// Mutable view of all parameters, same order as
    /// [`JsccModel::named_params`].
    pub fn named_params_mut(&mut self) -> Vec<(ParamMeta, &mut Tensor<f32>)> {
        let mut out = Vec::new();
        for (j0, nets) in self.layers.iter_mut().enumerate() {
            let j = j0 + 1;
            let mut comps: Vec<(String, &mut Vec<ConvBlock>)> = vec![
                (format!("layer{j}.enc"), &mut nets.encoder),
                (format!("layer{j}.dec"), &mut nets.decoder),
            ];
            if let Some(comb) = nets.combiner.as_mut() {
                comps.push((format!("layer{j}.comb"), comb));
            }
            for (comp, blocks) in comps {
                for (i, b) in blocks.iter_mut().enumerate() {
                    let prefix = format!("{comp}.b{i}");
                    let mut names = block_param_names(&prefix, b).into_iter();
                    let mut meta = move || {
                        let (name, floor) = names.next().expect("one name per field");
                        ParamMeta { name, floor }
                    };
                    out.push((meta(), &mut b.kernel));
                    out.push((meta(), &mut b.bias));
                    if let Some(g) = &mut b.gdn {
                        out.push((meta(), &mut g.beta));
                        out.push((meta(), &mut g.gamma));
                    }
                    if let Some(p) = &mut b.prelu {
                        out.push((meta(), p));
                    }
                }
            }
        }
        out
    }

    /// Parameter-name prefix of 1-based layer `j`.
    pub fn layer_prefix(layer: usize) -> String {
        format!("layer{layer}.")
    }
}

// ---------------------------------------------------------------------------
// Graph insertion and forward passes, generic over the scalar type so the
// same pipeline code serves f32 training/inference and f64 gradient checks.
// ---------------------------------------------------------------------------

pub(crate) struct BlockVars {
    up: bool,
    stride: usize,
    kernel: Var,
    bias: Var,
    gdn: Option<(Var, Var, bool)>,
    prelu: Option<Var>,
    sigmoid: bool,
}

pub(crate) fn insert_block<S: Scalar>(
    g: &mut Graph<S>,
    block: &ConvBlock,
    trainable: bool,
    prefix: &str,
    bind: &mut Vec<(String, Var)>,
) -> BlockVars {
    let mut leaf = |g: &mut Graph<S>, t: &Tensor<f32>, name: String| {
        let v = if trainable {
            g.param(t.cast::<S>())
        } else {
            g.constant(t.cast::<S>())
        };
        bind.push((name, v));
        v
    };
    let kernel = leaf(g, &block.kernel, format!("{prefix}.kernel"));
    let bias = leaf(g, &block.bias, format!("{prefix}.bias"));
    let gdn = block.gdn.as_ref().map(|p| {
        let beta = leaf(g, &p.beta, format!("{prefix}.gdn_beta"));
        let gamma = leaf(g, &p.gamma, format!("{prefix}.gdn_gamma"));
        (beta, gamma, p.inverse)
    });
    let prelu = block
        .prelu
        .as_ref()
        .map(|p| leaf(g, p, format!("{prefix}.prelu")));
    BlockVars {
        up: block.up,
        stride: block.stride,
        kernel,
        bias,
        gdn,
        prelu,
        sigmoid: block.sigmoid,
    }
}

pub(crate) fn insert_net<S: Scalar>(
    g: &mut Graph<S>,
    blocks: &[ConvBlock],
    trainable: bool,
    comp_prefix: &str,
    bind: &mut Vec<(String, Var)>,
) -> Vec<BlockVars> {
    blocks
        .iter()
        .enumerate()
        .map(|(i, b)| insert_block(g, b, trainable, &format!("{comp_prefix}.b{i}"), bind))
        .collect()
}

pub(crate) fn net_forward<S: Scalar>(
    g: &mut Graph<S>,
    blocks: &[BlockVars],
    input: Var,
) -> Result<Var, AutodiffError> {
    let mut x = input;
    for b in blocks {
        x = if b.up {
            g.conv2d_up(x, b.kernel, b.bias, b.stride)?
        } else {
            g.conv2d_down(x, b.kernel, b.bias, b.stride)?
        };
        if let Some((beta, gamma, inverse)) = b.gdn {
            x = g.gdn(x, beta, gamma, inverse)?;
        }
        if let Some(slope) = b.prelu {
            x = g.prelu(x, slope)?;
        }
        if b.sigmoid {
            x = g.sigmoid(x);
        }
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Per-image operations (trace path): encoding runs the f32 forward graph,
// the channel domain runs at f64 with exact power normalization.
// ---------------------------------------------------------------------------

fn expect_image(x: &Tensor<f32>, channels: usize) -> Result<(usize, usize), ModelError> {
    let s = x.shape();
    if s.len() != 3 || s[2] != channels {
        return Err(ModelError::Autodiff(AutodiffError::ShapeMismatch {
            context: "image must be H x W x C".into(),
            expected: vec![0, 0, channels],
            got: s.to_vec(),
        }));
    }
    if s[0] == 0 || s[1] == 0 || s[0] % 4 != 0 || s[1] % 4 != 0 {
        return Err(ModelError::Usage(format!(
            "image dimensions {}x{} must be positive and divisible by 4",
            s[0], s[1]
        )));
    }
    Ok((s[0], s[1]))
}

impl JsccModel {
    fn check_layer(&self, layer: usize) -> Result<(), ModelError> {
        if layer == 0 || layer > self.spec.layers {
            return Err(ModelError::Usage(format!(
                "layer {layer} out of range 1..={}",
                self.spec.layers
            )));
        }
        Ok(())
    }

    /// Runs the layer-`j` encoder on an `H x W x C` image (plus the
    /// transmitter-side estimate for `j >= 2`) and returns the
    /// power-normalized channel input of `k_j` complex symbols.
    pub fn encode_layer(
        &self,
        layer: usize,
        x: &Tensor<f32>,
        estimate_prev: Option<&Tensor<f32>>,
    ) -> Result<ComplexSignal, ModelError> {
        self.check_layer(layer)?;
        let (h, w) = expect_image(x, self.spec.channels)?;
        let needs_estimate = layer >= 2 && self.spec.tx_estimate == TxEstimate::Decoded;
        if needs_estimate && estimate_prev.is_none() {
            return Err(ModelError::Usage(format!(
                "layer {layer} encoder requires the previous transmitter-side estimate"
            )));
        }
        if !needs_estimate && estimate_prev.is_some() {
            return Err(ModelError::Usage(format!(
                "layer {layer} encoder takes no estimate input"
            )));
        }
        if let Some(e) = estimate_prev {
            if e.shape() != x.shape() {
                return Err(ModelError::Autodiff(AutodiffError::ShapeMismatch {
                    context: "transmitter-side estimate".into(),
                    expected: x.shape().to_vec(),
                    got: e.shape().to_vec(),
                }));
            }
        }

        let mut g: Graph<f32> = Graph::new();
        let mut bind = Vec::new();
        let x_var = g.constant(x.reshaped(vec![1, h, w, self.spec.channels])?);
        let enc_in = if layer == 1 {
            x_var
        } else {
            let est = match self.spec.tx_estimate {
                TxEstimate::Decoded => {
                    let e = estimate_prev.expect("checked above");
                    g.constant(e.reshaped(vec![1, h, w, self.spec.channels])?)
                }
                TxEstimate::Zeroed => g.constant(Tensor::zeros(vec![1, h, w, self.spec.channels])),
            };
            g.concat_channels(&[x_var, est])?
        };
        let blocks = insert_net(&mut g, &self.layers[layer - 1].encoder, false, "enc", &mut bind);
        let latent = net_forward(&mut g, &blocks, enc_in)?;

        let reals: Vec<f64> = g.value(latent).data().iter().map(|&v| v as f64).collect();
        let packed = pack_complex(&reals)?;
        Ok(power_normalize(&packed)?)
    }

    /// Decodes the layer-`j` reconstruction contribution from all channel
    /// outputs received so far, at the model's native image dimensions.
    pub fn decode_layer(
        &self,
        layer: usize,
        received: &[ComplexSignal],
    ) -> Result<Tensor<f32>, ModelError> {
        self.decode_layer_dims(layer, received, self.spec.height, self.spec.width)
    }

    /// [`JsccModel::decode_layer`] at an arbitrary input size the fully
    /// convolutional model is being run at.
    pub fn decode_layer_dims(
        &self,
        layer: usize,
        received: &[ComplexSignal],
        h: usize,
        w: usize,
    ) -> Result<Tensor<f32>, ModelError> {
        self.check_layer(layer)?;
        if received.len() != layer {
            return Err(ModelError::Usage(format!(
                "layer {layer} decoder needs all {layer} channel outputs so far, got {}",
                received.len()
            )));
        }
        let mut g: Graph<f32> = Graph::new();
        let mut maps = Vec::with_capacity(layer);
        for (i, z) in received.iter().enumerate() {
            let expect = self.spec.channel_uses_for_dims(i + 1, h, w)?;
            if z.len() != expect {
                return Err(ModelError::Usage(format!(
                    "layer {} channel output has {} symbols, expected {expect}",
                    i + 1,
                    z.len()
                )));
            }
            let c_i = self.spec.latent_channels(i + 1)?;
            let reals: Vec<f32> = unpack_complex(z).iter().map(|&v| v as f32).collect();
            let t = Tensor::new(vec![1, h / 4, w / 4, c_i], reals)?;
            maps.push(g.constant(t));
        }
        let fused = g.concat_channels(&maps)?;
        let mut bind = Vec::new();
        let blocks = insert_net(&mut g, &self.layers[layer - 1].decoder, false, "dec", &mut bind);
        let out = net_forward(&mut g, &blocks, fused)?;
        Ok(g.value(out).reshaped(vec![h, w, self.spec.channels])?)
    }

    /// Recursively merges the previous reconstruction with the current
    /// decoder output; only defined for layers `j >= 2` (`x_hat_1 = u_1`).
    pub fn combine_layer(
        &self,
        layer: usize,
        reconstruction_prev: &Tensor<f32>,
        decoded: &Tensor<f32>,
    ) -> Result<Tensor<f32>, ModelError> {
        self.check_layer(layer)?;
        if layer < 2 {
            return Err(ModelError::Usage(
                "layer 1 has no combiner; its reconstruction is the decoder output".into(),
            ));
        }
        let (h, w) = expect_image(decoded, self.spec.channels)?;
        if reconstruction_prev.shape() != decoded.shape() {
            return Err(ModelError::Autodiff(AutodiffError::ShapeMismatch {
                context: "combiner inputs".into(),
                expected: decoded.shape().to_vec(),
                got: reconstruction_prev.shape().to_vec(),
            }));
        }
        let combiner = self.layers[layer - 1]
            .combiner
            .as_ref()
            .expect("layers >= 2 carry a combiner");
        let mut g: Graph<f32> = Graph::new();
        let prev = g.constant(reconstruction_prev.reshaped(vec![1, h, w, self.spec.channels])?);
        let cur = g.constant(decoded.reshaped(vec![1, h, w, self.spec.channels])?);
        let cat = g.concat_channels(&[prev, cur])?;
        let mut bind = Vec::new();
        let blocks = insert_net(&mut g, combiner, false, "comb", &mut bind);
        let out = net_forward(&mut g, &blocks, cat)?;
        Ok(g.value(out).reshaped(vec![h, w, self.spec.channels])?)
    }

    /// Transmitter-side estimate of the receiver's reconstruction after
    /// layer `j`, computed by applying the shared decoder and combiner
    /// weights to the feedback signals exactly as the receiver applies them
    /// to its channel outputs.
    pub fn tx_estimate(
        &self,
        layer: usize,
        feedback: &[ComplexSignal],
    ) -> Result<Tensor<f32>, ModelError> {
        self.tx_estimate_dims(layer, feedback, self.spec.height, self.spec.width)
    }

    pub fn tx_estimate_dims(
        &self,
        layer: usize,
        feedback: &[ComplexSignal],
        h: usize,
        w: usize,
    ) -> Result<Tensor<f32>, ModelError> {
        self.check_layer(layer)?;
        if feedback.len() != layer {
            return Err(ModelError::Usage(format!(
                "transmitter estimate after layer {layer} needs {layer} feedback signals, got {}",
                feedback.len()
            )));
        }
        let mut estimate: Option<Tensor<f32>> = None;
        for j in 1..=layer {
            let decoded = self.decode_layer_dims(j, &feedback[..j], h, w)?;
            estimate = Some(match estimate {
                None => decoded,
                Some(prev) => self.combine_layer(j, &prev, &decoded)?,
            });
        }
        Ok(estimate.expect("layer >= 1"))
    }

    /// Full end-to-end transmission of one image: encode, forward channel,
    /// decode/combine, feedback channel, transmitter estimate, layer by
    /// layer. The fading gain is drawn once per call and reused by every
    /// layer; feedback ops run only when a later layer will consume them.
    pub fn transmit_trace(
        &self,
        x: &Tensor<f32>,
        channel: &ChannelConfig,
        image_index: u64,
        realization: u64,
    ) -> Result<TransmissionTrace, ModelError> {
        let (h, w) = expect_image(x, self.spec.channels)?;
        let draw = match channel.forward_kind {
            ForwardKind::Awgn => ChannelDraw::unit(),
            ForwardKind::RayleighSlow => {
                let mut rng = trace_rng(channel.seed, image_index, realization, 0, Link::Fading);
                ChannelDraw::rayleigh(&mut rng, channel.fading_variance)
            }
        };

        let follow_feedback = self.spec.tx_estimate == TxEstimate::Decoded;
        let mut layers = Vec::with_capacity(self.spec.layers);
        let mut received = Vec::with_capacity(self.spec.layers);
        let mut fed_back: Vec<ComplexSignal> = Vec::with_capacity(self.spec.layers);
        let mut reconstruction_prev: Option<Tensor<f32>> = None;
        let mut estimate_prev: Option<Tensor<f32>> = None;
        let mut cumulative = 0usize;

        for j in 1..=self.spec.layers {
            let estimate_in: Option<&Tensor<f32>> = if follow_feedback && j >= 2 {
                estimate_prev.as_ref()
            } else {
                None
            };
            let sent = self.encode_layer(j, x, estimate_in)?;
            let mut fwd_rng =
                trace_rng(channel.seed, image_index, realization, j as u64, Link::Forward);
            let z = match channel.forward_kind {
                ForwardKind::Awgn => awgn_transmit(&sent, channel.forward_snr_db, &mut fwd_rng)?,
                ForwardKind::RayleighSlow => {
                    rayleigh_transmit(&sent, &draw, channel.forward_snr_db, &mut fwd_rng)?
                }
            };
            received.push(z.clone());

            let decoded = self.decode_layer_dims(j, &received, h, w)?;
            let reconstruction = match &reconstruction_prev {
                None => decoded.clone(),
                Some(prev) => self.combine_layer(j, prev, &decoded)?,
            };

            let wants_feedback = follow_feedback && j < self.spec.layers;
            let (feedback, estimate) = if wants_feedback {
                let mut fb_rng = trace_rng(
                    channel.seed,
                    image_index,
                    realization,
                    j as u64,
                    Link::Feedback,
                );
                let wj = feedback_transmit(&z, channel.feedback, &mut fb_rng);
                fed_back.push(wj.clone());
                let decoded_fb = self.decode_layer_dims(j, &fed_back, h, w)?;
                let est = match &estimate_prev {
                    None => decoded_fb,
                    Some(prev) => self.combine_layer(j, prev, &decoded_fb)?,
                };
                (Some(wj), Some(est))
            } else {
                (None, None)
            };

            cumulative += sent.len();
            layers.push(LayerTrace {
                sent,
                received: z,
                feedback,
                decoded,
                reconstruction: reconstruction.clone(),
                tx_estimate: estimate.clone(),
                cumulative_channel_uses: cumulative,
            });
            reconstruction_prev = Some(reconstruction);
            estimate_prev = estimate;
        }

        Ok(TransmissionTrace {
            layers,
            draw,
            total_channel_uses: cumulative,
        })
    }
}

/// Record of one layer of a transmission trace.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Power-normalized channel input `y_j`.
    pub sent: ComplexSignal,
    /// Forward channel output `z_j`.
    pub received: ComplexSignal,
    /// Feedback observation `w_j`; absent for the last layer and whenever
    /// the pipeline runs without feedback.
    pub feedback: Option<ComplexSignal>,
    /// Decoder output `u_j`.
    pub decoded: Tensor<f32>,
    /// Receiver reconstruction `x_hat_j`.
    pub reconstruction: Tensor<f32>,
    /// Transmitter-side estimate `x_tilde_j`, when feedback was consumed.
    pub tx_estimate: Option<Tensor<f32>>,
    pub cumulative_channel_uses: usize,
}

/// End-to-end record of one image transmission.
#[derive(Clone, Debug)]
pub struct TransmissionTrace {
    pub layers: Vec<LayerTrace>,
    pub draw: ChannelDraw,
    pub total_channel_uses: usize,
}
