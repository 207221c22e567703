//! Layer-wise sequential optimization.
//!
//! Layers are trained one at a time: when layer `j` trains, layers
//! `1..j-1` run in the forward pass with frozen parameters (inserted as
//! tape constants, so they are excluded from differentiation rather than
//! zeroed) and only the layer-`j` encoder, decoder, and combiner receive
//! gradients. Every batch draws fresh channel noise for all layers;
//! validation batches reuse a fixed noise seed so the metric is comparable
//! across evaluations.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamState, AutodiffError, Graph, Tensor, Var};
use crate::channel::{ChannelConfig, FeedbackKind, ForwardKind};
use crate::data::Dataset;
use crate::model::{insert_net, net_forward, JsccModel, ModelError, TxEstimate};
use crate::seeds::{shuffle_rng, split_rng, standard_normal_pair, train_rng, validation_rng, Link};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("training diverged: non-finite loss at step {step}")]
    NonFinite { step: usize },
}

/// Hyperparameters of one layer's training run.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f32,
    pub max_steps: usize,
    /// Consecutive validation evaluations without improvement before stop.
    pub patience: usize,
    /// Minimum decrease of the best validation loss that counts as an
    /// improvement.
    pub tol_improve: f64,
    /// Fraction of the dataset held out for validation (disjoint from the
    /// training split).
    pub validation_fraction: f64,
    /// Steps between validation evaluations.
    pub eval_interval: usize,
    pub seed: u64,
    pub channel: ChannelConfig,
}

impl TrainConfig {
    pub fn new(max_steps: usize, seed: u64, channel: ChannelConfig) -> Self {
        Self {
            batch_size: 128,
            learning_rate: 1e-4,
            max_steps,
            patience: 10,
            tol_improve: 1e-5,
            validation_fraction: 0.1,
            eval_interval: 100,
            seed,
            channel,
        }
    }
}

/// Loss curves and stopping bookkeeping of one layer's run.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub layer: usize,
    /// Per-step training loss (mean over the batch of per-image squared
    /// error norms).
    pub train_loss: Vec<f64>,
    /// (step, validation loss) at each evaluation.
    pub val_loss: Vec<(usize, f64)>,
    /// Step count actually executed.
    pub stopped_step: usize,
    /// Index into `val_loss` of the restored best parameters, when
    /// validation ran.
    pub best_eval: Option<usize>,
    pub best_val_loss: f64,
}

/// Early-stopping rule: stop once `patience` consecutive evaluations fail to
/// improve the best seen loss by more than `tol_improve`. Returns the stop
/// decision and the index of the best evaluation.
pub fn early_stop(history: &[f64], patience: usize, tol_improve: f64) -> (bool, usize) {
    let mut best = f64::INFINITY;
    let mut best_idx = 0usize;
    let mut since_best = 0usize;
    for (i, &v) in history.iter().enumerate() {
        if v < best - tol_improve || i == 0 {
            best = v;
            best_idx = i;
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    (since_best >= patience, best_idx)
}

/// Noise provider for one forward pass; training uses per-step streams,
/// validation reuses fixed per-batch streams.
#[derive(Clone, Copy)]
enum NoiseCtx {
    Train { step: u64 },
    Validation { batch: u64 },
}

impl NoiseCtx {
    fn rng(&self, seed: u64, layer: u64, link: Link) -> ChaCha8Rng {
        match *self {
            NoiseCtx::Train { step } => train_rng(seed, step, layer, link),
            NoiseCtx::Validation { batch } => validation_rng(seed, batch, layer, link),
        }
    }
}

fn noise_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, sigma2: f64) -> Tensor<f32> {
    let per_component = (sigma2 / 2.0).sqrt();
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    while data.len() < len {
        let (a, b) = standard_normal_pair(rng);
        data.push((a * per_component) as f32);
        if data.len() < len {
            data.push((b * per_component) as f32);
        }
    }
    Tensor::new(shape, data).expect("sampled length matches shape")
}

/// Records the full pipeline for layers `1..=depth` of `model` on `batch`
/// and returns the scalar loss node (mean over the batch of per-image
/// squared error norms against `x_hat_depth`). With `trainable` set, the
/// parameters of layer `depth` are inserted as differentiable leaves and
/// reported in `bindings`.
fn build_pipeline(
    model: &JsccModel,
    batch: &Tensor<f32>,
    depth: usize,
    trainable: bool,
    channel: &ChannelConfig,
    ctx: NoiseCtx,
    graph: &mut Graph<f32>,
    bindings: &mut Vec<(String, Var)>,
) -> Result<Var, TrainError> {
    let shape = batch.shape().to_vec();
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let per_image = (h * w * c) as f32;
    let x = graph.constant(batch.clone());

    // One fading gain per batch element, shared by all layers of the pass.
    let gains: Option<Vec<(f32, f32)>> = match channel.forward_kind {
        ForwardKind::Awgn => None,
        ForwardKind::RayleighSlow => {
            let mut rng = ctx.rng(channel.seed, 0, Link::Fading);
            let sigma = (channel.fading_variance / 2.0).sqrt();
            Some(
                (0..n)
                    .map(|_| {
                        let (a, b) = standard_normal_pair(&mut rng);
                        ((a * sigma) as f32, (b * sigma) as f32)
                    })
                    .collect(),
            )
        }
    };

    let zeroed = model.spec().tx_estimate == TxEstimate::Zeroed;
    let noiseless_feedback = matches!(channel.feedback, FeedbackKind::Noiseless);
    let fwd_sigma2 = crate::channel::snr_to_sigma2(channel.forward_snr_db);
    let fwd_noiseless = channel.forward_snr_db.is_infinite() && channel.forward_snr_db > 0.0;

    let mut z_maps: Vec<Var> = Vec::with_capacity(depth);
    let mut w_maps: Vec<Var> = Vec::with_capacity(depth);
    let mut reconstruction_prev: Option<Var> = None;
    let mut estimate_prev: Option<Var> = None;
    let mut reconstruction = None;

    for j in 1..=depth {
        let layer_trainable = trainable && j == depth;
        let nets = &model.layers[j - 1];
        let prefix = JsccModel::layer_prefix(j);

        // Encoder input: the image alone for layer 1, otherwise the image
        // concatenated with the transmitter-side estimate on the channel
        // axis (never a precomputed residual).
        let enc_in = if j == 1 {
            x
        } else {
            let est = if zeroed {
                graph.constant(Tensor::zeros(vec![n, h, w, c]))
            } else {
                estimate_prev.ok_or_else(|| {
                    TrainError::Usage("missing transmitter estimate for layer >= 2".into())
                })?
            };
            graph.concat_channels(&[x, est])?
        };
        let enc_vars = insert_net(
            graph,
            &nets.encoder,
            layer_trainable,
            &format!("{prefix}enc"),
            bindings,
        );
        let latent = net_forward(graph, &enc_vars, enc_in)?;
        let c_j = model.spec().latent_channels(j)?;
        let two_k = (h / 4) * (w / 4) * c_j;
        let flat = graph.reshape(latent, vec![n, two_k])?;
        let mut y = graph.power_normalize_rows(flat)?;
        if let Some(g) = &gains {
            y = graph.complex_scale_rows(y, g)?;
        }
        let z = if fwd_noiseless {
            y
        } else {
            let mut rng = ctx.rng(channel.seed, j as u64, Link::Forward);
            let noise = graph.constant(noise_tensor(&mut rng, vec![n, two_k], fwd_sigma2));
            graph.add(y, noise)?
        };
        let z_map = graph.reshape(z, vec![n, h / 4, w / 4, c_j])?;
        z_maps.push(z_map);

        let dec_vars = insert_net(
            graph,
            &nets.decoder,
            layer_trainable,
            &format!("{prefix}dec"),
            bindings,
        );
        let fused = graph.concat_channels(&z_maps)?;
        let decoded = net_forward(graph, &dec_vars, fused)?;
        let xhat = match reconstruction_prev {
            None => decoded,
            Some(prev) => {
                let comb = nets.combiner.as_ref().expect("layer >= 2 has a combiner");
                let comb_vars = insert_net(
                    graph,
                    comb,
                    layer_trainable,
                    &format!("{prefix}comb"),
                    bindings,
                );
                let cat = graph.concat_channels(&[prev, decoded])?;
                net_forward(graph, &comb_vars, cat)?
            }
        };

        // Transmitter-side estimate, needed only while a later layer will
        // consume it. Noiseless feedback reuses the receiver nodes (the
        // arithmetic is identical); a noisy link decodes its own copy with
        // the same (frozen or trainable) weights.
        if j < depth && !zeroed {
            if noiseless_feedback {
                estimate_prev = Some(xhat);
            } else {
                let fb_sigma2 = match channel.feedback {
                    FeedbackKind::Noiseless => unreachable!(),
                    FeedbackKind::Awgn { snr_db } => crate::channel::snr_to_sigma2(snr_db),
                };
                let z_flat = graph.reshape(z_maps[j - 1], vec![n, two_k])?;
                let mut rng = ctx.rng(channel.seed, j as u64, Link::Feedback);
                let fb_noise = graph.constant(noise_tensor(&mut rng, vec![n, two_k], fb_sigma2));
                let w_flat = graph.add(z_flat, fb_noise)?;
                let w_map = graph.reshape(w_flat, vec![n, h / 4, w / 4, c_j])?;
                w_maps.push(w_map);

                let fused_w = graph.concat_channels(&w_maps)?;
                let decoded_w = net_forward(graph, &dec_vars, fused_w)?;
                let est = match estimate_prev {
                    None => decoded_w,
                    Some(prev) => {
                        // This branch only runs for j < depth, so the layer-j
                        // combiner is frozen; fresh constant leaves carry the
                        // same tensors.
                        let comb = nets.combiner.as_ref().expect("layer >= 2 has a combiner");
                        let comb_vars = insert_net(
                            graph,
                            comb,
                            false,
                            &format!("{prefix}comb_fb"),
                            &mut Vec::new(),
                        );
                        let cat = graph.concat_channels(&[prev, decoded_w])?;
                        net_forward(graph, &comb_vars, cat)?
                    }
                };
                estimate_prev = Some(est);
            }
        }
        reconstruction_prev = Some(xhat);
        reconstruction = Some(xhat);
    }

    let xhat = reconstruction.expect("depth >= 1");
    let mse = graph.mse(x, xhat)?;
    Ok(graph.scale(mse, per_image))
}

fn layer_param_count(model: &JsccModel, layer: usize) -> usize {
    let prefix = JsccModel::layer_prefix(layer);
    model
        .named_params()
        .iter()
        .filter(|(m, _)| m.name.starts_with(&prefix))
        .count()
}

/// Records one forward/loss graph exactly as a training step would (fresh
/// per-step noise for every layer), returning every inserted parameter leaf
/// by name. Frozen parameters come back as non-differentiable leaves; used
/// for tape-level diagnostics and tests.
pub fn training_graph(
    model: &JsccModel,
    batch: &Tensor<f32>,
    layer: usize,
    channel: &ChannelConfig,
    step: u64,
) -> Result<(Graph<f32>, Vec<(String, Var)>, Var), TrainError> {
    let mut graph = Graph::new();
    let mut bindings = Vec::new();
    let loss = build_pipeline(
        model,
        batch,
        layer,
        true,
        channel,
        NoiseCtx::Train { step },
        &mut graph,
        &mut bindings,
    )?;
    Ok((graph, bindings, loss))
}

/// Trains the 1-based `layer` of `model` on `dataset`. Layers `1..layer-1`
/// must already be trained; their parameters are bit-unchanged by this call.
pub fn train_layer(
    model: &mut JsccModel,
    layer: usize,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    if layer == 0 || layer > model.spec().layers {
        return Err(TrainError::Usage(format!(
            "layer {layer} out of range 1..={}",
            model.spec().layers
        )));
    }
    for earlier in 1..layer {
        if !model.trained_layers()[earlier - 1] {
            return Err(TrainError::Usage(format!(
                "layer {earlier} must be trained before layer {layer}"
            )));
        }
    }
    if cfg.batch_size == 0 {
        return Err(TrainError::Usage("batch size must be >= 1".into()));
    }
    if cfg.patience == 0 {
        return Err(TrainError::Usage("patience must be >= 1".into()));
    }
    let (h, w, c) = dataset.dims();
    if (h, w, c) != (model.spec().height, model.spec().width, model.spec().channels) {
        return Err(TrainError::Usage(format!(
            "dataset images are {h}x{w}x{c}, model was built for {}x{}x{}",
            model.spec().height,
            model.spec().width,
            model.spec().channels
        )));
    }

    // Disjoint train/validation split, seeded.
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = split_rng(cfg.seed);
    fisher_yates(&mut order, &mut rng);
    let val_count = ((dataset.len() as f64 * cfg.validation_fraction).round() as usize)
        .min(dataset.len().saturating_sub(1));
    let (val_idx, train_idx) = order.split_at(val_count);
    let val_idx = val_idx.to_vec();
    let train_idx = train_idx.to_vec();
    if train_idx.is_empty() {
        return Err(TrainError::Usage(
            "validation fraction leaves no training images".into(),
        ));
    }

    let expected_params = layer_param_count(model, layer);
    let mut adam: Option<AdamState<f32>> = None;
    let mut report = TrainReport {
        layer,
        train_loss: Vec::with_capacity(cfg.max_steps),
        val_loss: Vec::new(),
        stopped_step: 0,
        best_eval: None,
        best_val_loss: f64::INFINITY,
    };
    let mut best_snapshot: Option<Vec<Tensor<f32>>> = None;

    let mut epoch = 0u64;
    let mut cursor = 0usize;
    let mut perm = train_idx.clone();
    fisher_yates(&mut perm, &mut shuffle_rng(cfg.seed, epoch));

    for step in 0..cfg.max_steps {
        if cursor >= perm.len() {
            epoch += 1;
            cursor = 0;
            fisher_yates(&mut perm, &mut shuffle_rng(cfg.seed, epoch));
        }
        let end = (cursor + cfg.batch_size).min(perm.len());
        let batch_idx = &perm[cursor..end];
        cursor = end;

        let batch = dataset.batch(batch_idx);
        let mut graph = Graph::new();
        let mut all_bindings = Vec::new();
        let loss = build_pipeline(
            model,
            &batch,
            layer,
            true,
            &cfg.channel,
            NoiseCtx::Train { step: step as u64 },
            &mut graph,
            &mut all_bindings,
        )?;
        let bindings: Vec<(String, Var)> = all_bindings
            .into_iter()
            .filter(|&(_, v)| graph.requires_grad(v))
            .collect();
        debug_assert_eq!(bindings.len(), expected_params);
        let loss_value = graph.value(loss).item() as f64;
        if !loss_value.is_finite() {
            return Err(TrainError::NonFinite { step });
        }
        report.train_loss.push(loss_value);
        graph.backward(loss)?;

        // Route gradients into the model parameters in binding order.
        let adam = adam.get_or_insert_with(|| {
            AdamState::new(
                cfg.learning_rate,
                &bindings
                    .iter()
                    .map(|(_, v)| graph.value(*v).shape().to_vec())
                    .collect::<Vec<_>>(),
            )
        });
        let grads: Vec<Option<Tensor<f32>>> =
            bindings.iter().map(|(_, v)| graph.grad(*v).cloned()).collect();
        {
            let mut params = model.named_params_mut();
            let mut floors = Vec::with_capacity(bindings.len());
            let mut refs: Vec<&mut Tensor<f32>> = Vec::with_capacity(bindings.len());
            for (name, _) in &bindings {
                let pos = params
                    .iter()
                    .position(|(m, _)| &m.name == name)
                    .expect("binding name exists in model");
                let (meta, tensor) = params.swap_remove(pos);
                floors.push(meta.floor);
                refs.push(tensor);
            }
            let grad_refs: Vec<Option<&Tensor<f32>>> = grads.iter().map(|g| g.as_ref()).collect();
            adam.step(&mut refs, &grad_refs, &floors)?;
        }
        report.stopped_step = step + 1;

        // Periodic validation with fixed noise.
        if !val_idx.is_empty() && (step + 1) % cfg.eval_interval == 0 {
            let vloss = validation_loss(model, dataset, &val_idx, layer, cfg)?;
            report.val_loss.push((step + 1, vloss));
            let history: Vec<f64> = report.val_loss.iter().map(|&(_, v)| v).collect();
            let (stop, best_idx) = early_stop(&history, cfg.patience, cfg.tol_improve);
            if best_idx + 1 == history.len() {
                // new best: snapshot the trainable parameters
                let prefix = JsccModel::layer_prefix(layer);
                best_snapshot = Some(
                    model
                        .named_params()
                        .into_iter()
                        .filter(|(m, _)| m.name.starts_with(&prefix))
                        .map(|(_, t)| t.clone())
                        .collect(),
                );
                report.best_eval = Some(best_idx);
                report.best_val_loss = history[best_idx];
            }
            if stop {
                break;
            }
        }
    }

    // Restore the best validation checkpoint, when one was taken.
    if let Some(snapshot) = best_snapshot {
        let prefix = JsccModel::layer_prefix(layer);
        let mut params = model.named_params_mut();
        let mut it = snapshot.into_iter();
        for (meta, tensor) in params.iter_mut() {
            if meta.name.starts_with(&prefix) {
                **tensor = it.next().expect("snapshot covers every layer parameter");
            }
        }
    }
    model.set_trained(layer, true);
    Ok(report)
}

fn validation_loss(
    model: &JsccModel,
    dataset: &Dataset,
    val_idx: &[usize],
    layer: usize,
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (b, chunk) in val_idx.chunks(cfg.batch_size).enumerate() {
        let batch = dataset.batch(chunk);
        let mut graph = Graph::new();
        let mut bindings = Vec::new();
        let loss = build_pipeline(
            model,
            &batch,
            layer,
            false,
            &cfg.channel,
            NoiseCtx::Validation { batch: b as u64 },
            &mut graph,
            &mut bindings,
        )?;
        total += graph.value(loss).item() as f64 * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

/// Trains all layers in sequence with one config per layer.
pub fn train_model(
    model: &mut JsccModel,
    dataset: &Dataset,
    cfgs: &[TrainConfig],
) -> Result<Vec<TrainReport>, TrainError> {
    if cfgs.len() != model.spec().layers {
        return Err(TrainError::Usage(format!(
            "expected one config per layer ({}), got {}",
            model.spec().layers,
            cfgs.len()
        )));
    }
    let mut reports = Vec::with_capacity(cfgs.len());
    for (j0, cfg) in cfgs.iter().enumerate() {
        reports.push(train_layer(model, j0 + 1, dataset, cfg)?);
    }
    Ok(reports)
}

fn fisher_yates<R: Rng>(items: &mut [usize], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_never_fires_on_improving_history() {
        let history: Vec<f64> = (0..20).map(|i| 1.0 - 0.01 * i as f64).collect();
        let (stop, best) = early_stop(&history, 10, 1e-5);
        assert!(!stop);
        assert_eq!(best, 19);
    }

    #[test]
    fn early_stop_fires_on_flat_history() {
        let history = vec![0.5; 11];
        let (stop, best) = early_stop(&history, 10, 1e-5);
        assert!(stop);
        assert_eq!(best, 0);
    }

    #[test]
    fn improvement_at_the_last_slot_resets_the_counter() {
        let mut history = vec![0.5; 10];
        history.push(0.4);
        let (stop, best) = early_stop(&history, 10, 1e-5);
        assert!(!stop);
        assert_eq!(best, 10);
    }

    #[test]
    fn sub_tolerance_improvements_do_not_reset() {
        let history: Vec<f64> = (0..12).map(|i| 0.5 - 1e-7 * i as f64).collect();
        let (stop, best) = early_stop(&history, 10, 1e-5);
        assert!(stop);
        assert_eq!(best, 0);
    }
}
