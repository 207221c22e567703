//! Reconstruction metrics and experiment protocols: PSNR, multi-realization
//! evaluation, SNR-mismatch sweeps, variable-length transmission, and
//! per-image gap distributions.
//!
//! PSNR is measured on the 0-255 pixel scale (images are denormalized by
//! 255 before the squared error, without integer rounding). A perfect
//! reconstruction is reported as `f64::INFINITY`; infinite values are
//! excluded from means and counted separately.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::channel::{
    awgn_transmit, feedback_transmit, rayleigh_transmit, ChannelConfig, ChannelDraw, FeedbackKind,
    ForwardKind,
};
use crate::data::Dataset;
use crate::model::{JsccModel, ModelError, TxEstimate};
use crate::seeds::{trace_rng, Link};

/// Channel realizations averaged per image unless a caller overrides it.
pub const DEFAULT_REALIZATIONS: u32 = 10;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape(Vec<usize>, Vec<usize>),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("records do not cover the same images: {0}")]
    KeyMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Peak signal-to-noise ratio in dB between two `[0,1]`-scaled images of
/// identical shape; infinite for a perfect reconstruction.
pub fn psnr(x: &Tensor<f32>, xhat: &Tensor<f32>) -> Result<f64, EvalError> {
    if x.shape() != xhat.shape() {
        return Err(EvalError::Shape(x.shape().to_vec(), xhat.shape().to_vec()));
    }
    let mut sum = 0.0f64;
    for (&a, &b) in x.data().iter().zip(xhat.data()) {
        let d = (a as f64 - b as f64) * 255.0;
        sum += d * d;
    }
    let mse = sum / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

/// Per-(image, realization) evaluation record.
#[derive(Clone, Debug)]
pub struct EvalRecord {
    pub image_index: usize,
    pub image_id: String,
    pub realization: u32,
    /// PSNR of `x_hat_j` for j = 1..L.
    pub layer_psnr_db: Vec<f64>,
    /// Cumulative channel uses after each layer.
    pub layer_channel_uses: Vec<usize>,
    /// Fading gain of the draw (1 for AWGN).
    pub fading_gain: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    /// Mean PSNR per layer over all records (arithmetic mean of PSNRs,
    /// finite values only).
    pub per_layer_mean_psnr_db: Vec<f64>,
    pub records: Vec<EvalRecord>,
    /// Number of infinite (perfect-reconstruction) PSNR entries excluded
    /// from the means.
    pub infinite_count: usize,
}

/// Mean of the finite entries; infinite entries are counted separately.
fn finite_mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut inf = 0usize;
    for v in values {
        if v.is_finite() {
            sum += v;
            n += 1;
        } else {
            inf += 1;
        }
    }
    let mean = if n > 0 { sum / n as f64 } else { f64::INFINITY };
    (mean, inf)
}

/// Runs `realizations` independent traces per image and aggregates per-layer
/// PSNR. Work is parallel over (image, realization) pairs; records come back
/// in deterministic (image-major) order.
pub fn evaluate_model(
    model: &JsccModel,
    dataset: &Dataset,
    channel: &ChannelConfig,
    realizations: u32,
) -> Result<EvalSummary, EvalError> {
    if realizations == 0 {
        return Err(EvalError::Usage("realizations must be >= 1".into()));
    }
    let pairs: Vec<(usize, u32)> = (0..dataset.len())
        .flat_map(|i| (0..realizations).map(move |r| (i, r)))
        .collect();
    let records: Vec<EvalRecord> = pairs
        .par_iter()
        .map(|&(i, r)| evaluate_one(model, dataset, channel, i, r))
        .collect::<Result<_, _>>()?;

    let layers = model.spec().layers;
    let mut per_layer = Vec::with_capacity(layers);
    let mut infinite_count = 0usize;
    for j in 0..layers {
        let (mean, inf) = finite_mean(records.iter().map(|rec| rec.layer_psnr_db[j]));
        per_layer.push(mean);
        infinite_count += inf;
    }
    Ok(EvalSummary {
        per_layer_mean_psnr_db: per_layer,
        records,
        infinite_count,
    })
}

fn evaluate_one(
    model: &JsccModel,
    dataset: &Dataset,
    channel: &ChannelConfig,
    image_index: usize,
    realization: u32,
) -> Result<EvalRecord, EvalError> {
    let x = dataset.image(image_index);
    let trace = model.transmit_trace(x, channel, image_index as u64, realization as u64)?;
    let mut layer_psnr = Vec::with_capacity(trace.layers.len());
    let mut layer_uses = Vec::with_capacity(trace.layers.len());
    for layer in &trace.layers {
        layer_psnr.push(psnr(x, &layer.reconstruction)?);
        layer_uses.push(layer.cumulative_channel_uses);
    }
    Ok(EvalRecord {
        image_index,
        image_id: dataset.id(image_index).to_string(),
        realization,
        layer_psnr_db: layer_psnr,
        layer_channel_uses: layer_uses,
        fading_gain: (trace.draw.h.re, trace.draw.h.im),
    })
}

/// One grid point of a sweep.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub snr_test_db: f64,
    pub feedback: FeedbackKind,
    pub per_layer_mean_psnr_db: Vec<f64>,
}

/// Evaluates one trained model over a grid of test SNRs and feedback
/// settings, reusing the base config's seed so shared grid points are
/// bit-identical with [`evaluate_model`].
pub fn sweep(
    model: &JsccModel,
    dataset: &Dataset,
    base: &ChannelConfig,
    test_snrs: &[f64],
    feedback_settings: &[FeedbackKind],
    realizations: u32,
) -> Result<Vec<SweepPoint>, EvalError> {
    let mut points = Vec::with_capacity(test_snrs.len() * feedback_settings.len());
    for &snr in test_snrs {
        for &fb in feedback_settings {
            let mut cfg = base.clone();
            cfg.forward_snr_db = snr;
            cfg.feedback = fb;
            let summary = evaluate_model(model, dataset, &cfg, realizations)?;
            points.push(SweepPoint {
                snr_test_db: snr,
                feedback: fb,
                per_layer_mean_psnr_db: summary.per_layer_mean_psnr_db,
            });
        }
    }
    Ok(points)
}

/// SNR-mismatch protocol: the model (trained at one SNR) evaluated across
/// `test_snrs` with its configured feedback setting.
pub fn snr_mismatch_sweep(
    model: &JsccModel,
    dataset: &Dataset,
    base: &ChannelConfig,
    test_snrs: &[f64],
    realizations: u32,
) -> Result<Vec<SweepPoint>, EvalError> {
    sweep(model, dataset, base, test_snrs, &[base.feedback], realizations)
}

/// Outcome of one variable-length transmission.
#[derive(Clone, Debug)]
pub struct VarlenOutcome {
    pub image_index: usize,
    pub layers_used: usize,
    pub channel_uses: usize,
    /// Receiver-side PSNR at the stopping layer.
    pub achieved_psnr_db: f64,
    /// Transmitter-side PSNR (of the feedback estimate) at the stopping
    /// layer; drives the stop decision.
    pub transmitter_psnr_db: f64,
    pub met: bool,
    /// True when the transmitter and receiver stopping decisions agreed at
    /// every layer.
    pub decisions_agree: bool,
}

/// Sends layers until the transmitter's estimate of the reconstruction
/// meets `target_psnr_db`, or all layers are spent (`met = false`).
///
/// Requires noiseless feedback: the transmitter then tracks the receiver
/// bit-exactly and both sides stop at the same layer. Noisy feedback is an
/// unsupported mode for this protocol.
pub fn variable_length_transmit(
    model: &JsccModel,
    x: &Tensor<f32>,
    image_index: u64,
    target_psnr_db: f64,
    channel: &ChannelConfig,
    realization: u64,
) -> Result<VarlenOutcome, EvalError> {
    if channel.feedback != FeedbackKind::Noiseless {
        return Err(EvalError::Usage(
            "variable-length transmission requires noiseless feedback".into(),
        ));
    }
    if model.spec().tx_estimate != TxEstimate::Decoded {
        return Err(EvalError::Usage(
            "variable-length transmission requires the decoded transmitter estimate".into(),
        ));
    }
    let s = x.shape();
    let (h, w) = (s[0], s[1]);
    let draw = match channel.forward_kind {
        ForwardKind::Awgn => ChannelDraw::unit(),
        ForwardKind::RayleighSlow => {
            let mut rng = trace_rng(channel.seed, image_index, realization, 0, Link::Fading);
            ChannelDraw::rayleigh(&mut rng, channel.fading_variance)
        }
    };

    let layers = model.spec().layers;
    let mut received = Vec::with_capacity(layers);
    let mut fed_back = Vec::with_capacity(layers);
    let mut reconstruction_prev: Option<Tensor<f32>> = None;
    let mut estimate_prev: Option<Tensor<f32>> = None;
    let mut uses = 0usize;
    let mut agree = true;

    for j in 1..=layers {
        let sent = model.encode_layer(j, x, estimate_prev.as_ref())?;
        let mut fwd_rng = trace_rng(channel.seed, image_index, realization, j as u64, Link::Forward);
        let z = match channel.forward_kind {
            ForwardKind::Awgn => awgn_transmit(&sent, channel.forward_snr_db, &mut fwd_rng)
                .map_err(ModelError::from)?,
            ForwardKind::RayleighSlow => {
                rayleigh_transmit(&sent, &draw, channel.forward_snr_db, &mut fwd_rng)
                    .map_err(ModelError::from)?
            }
        };
        uses += sent.len();
        received.push(z.clone());
        let decoded = model.decode_layer_dims(j, &received, h, w)?;
        let reconstruction = match &reconstruction_prev {
            None => decoded,
            Some(prev) => model.combine_layer(j, prev, &decoded)?,
        };

        // The transmitter needs w_j (feedback) after every layer to take the
        // stopping decision, including the last.
        let mut fb_rng = trace_rng(channel.seed, image_index, realization, j as u64, Link::Feedback);
        let wj = feedback_transmit(&z, channel.feedback, &mut fb_rng);
        fed_back.push(wj);
        let decoded_fb = model.decode_layer_dims(j, &fed_back, h, w)?;
        let estimate = match &estimate_prev {
            None => decoded_fb,
            Some(prev) => model.combine_layer(j, prev, &decoded_fb)?,
        };

        let rx_psnr = psnr(x, &reconstruction)?;
        let tx_psnr = psnr(x, &estimate)?;
        let tx_stop = tx_psnr >= target_psnr_db;
        let rx_stop = rx_psnr >= target_psnr_db;
        agree &= tx_stop == rx_stop;

        if tx_stop || j == layers {
            return Ok(VarlenOutcome {
                image_index: image_index as usize,
                layers_used: j,
                channel_uses: uses,
                achieved_psnr_db: rx_psnr,
                transmitter_psnr_db: tx_psnr,
                met: tx_stop,
                decisions_agree: agree,
            });
        }
        reconstruction_prev = Some(reconstruction);
        estimate_prev = Some(estimate);
    }
    unreachable!("loop returns at j == layers");
}

/// Per-image PSNR differences between two record sets (A minus B), after
/// averaging each image over its realizations at the given 0-based layer.
#[derive(Clone, Debug)]
pub struct GapDistribution {
    /// (image id, PSNR difference in dB), ordered by image id.
    pub diffs: Vec<(String, f64)>,
    pub fraction_positive: f64,
}

pub fn gap_distribution(
    records_a: &[EvalRecord],
    records_b: &[EvalRecord],
    layer_index: usize,
) -> Result<GapDistribution, EvalError> {
    let collect = |records: &[EvalRecord]| -> Result<BTreeMap<String, f64>, EvalError> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in records {
            let v = *r.layer_psnr_db.get(layer_index).ok_or_else(|| {
                EvalError::Usage(format!("record lacks layer index {layer_index}"))
            })?;
            let e = acc.entry(r.image_id.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
        Ok(acc
            .into_iter()
            .map(|(k, (sum, n))| (k, sum / n as f64))
            .collect())
    };
    let a = collect(records_a)?;
    let b = collect(records_b)?;
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(EvalError::KeyMismatch(format!(
            "{} ids vs {} ids",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<(String, f64)> = a
        .into_iter()
        .map(|(k, va)| {
            let vb = b[&k];
            (k, va - vb)
        })
        .collect();
    let positive = diffs.iter().filter(|(_, d)| *d > 0.0).count();
    let fraction_positive = positive as f64 / diffs.len() as f64;
    Ok(GapDistribution {
        diffs,
        fraction_positive,
    })
}
