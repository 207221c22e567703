//! Experiment runner: dispatches the train / eval / sweep / varlen /
//! baseline / gradcheck subcommands over a flat key-value configuration and
//! emits deterministic CSV artifacts and checkpoints.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub use config::{parse_config, ConfigError, DatasetFormat, ExperimentConfig, Subcommand};

use jsccf_core::baseline::{
    capacity_bound_psnr, capacity_bound_psnr_fading, digital_scheme_psnr, envelope, parse_fer_csv,
    varlen_separation_bandwidth, BaselineError, FallbackPsnrs, RdCurve,
};
use jsccf_core::channel::{FeedbackKind, ForwardKind};
use jsccf_core::data::{load_cifar10_bin, load_ppm, synthetic_dataset, DataError, Dataset};
use jsccf_core::eval::{
    evaluate_model, sweep, variable_length_transmit, EvalError, EvalSummary,
};
use jsccf_core::gradsuite::standard_suite;
use jsccf_core::model::{
    build_model, load_model, save_model, ArchSpec, CheckpointError, JsccModel, ModelError,
};
use jsccf_core::training::{train_model, TrainConfig, TrainError, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("dataset: {0}")]
    Data(#[from] DataError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("training: {0}")]
    Train(#[from] TrainError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("baseline: {0}")]
    Baseline(#[from] BaselineError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("gradient check: {0}")]
    Autodiff(#[from] jsccf_core::autodiff::AutodiffError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{failed} of {total} gradient checks failed")]
    GradCheckFailed { failed: usize, total: usize },
    #[error("{0}")]
    Usage(String),
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

fn fmt_grid(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

/// Loads the configured dataset.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    Ok(match cfg.dataset_format {
        DatasetFormat::Synthetic => synthetic_dataset(
            cfg.synth_seed,
            cfg.synth_count,
            cfg.synth_size,
            cfg.synth_size,
            cfg.synth_channels,
        )?,
        DatasetFormat::Cifar10Bin => {
            load_cifar10_bin(cfg.dataset.as_ref().expect("validated by parse_config"))?
        }
        DatasetFormat::Ppm => load_ppm(cfg.dataset.as_ref().expect("validated by parse_config"))?,
    })
}

/// Runs one subcommand from a config file, applying the command-line seed
/// and output-directory overrides. Returns the lines it printed.
pub fn run(
    subcommand: Subcommand,
    config_path: &Path,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(config_path).map_err(|source| CliError::Io {
        path: config_path.display().to_string(),
        source,
    })?;
    let mut cfg = parse_config(subcommand, &text)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    if let Some(out) = out_override {
        cfg.out_dir = out;
    }
    run_config(&cfg)
}

/// Runs one fully parsed configuration.
pub fn run_config(cfg: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|source| CliError::Io {
        path: cfg.out_dir.display().to_string(),
        source,
    })?;
    write_file(&cfg.out_dir.join("config.resolved"), &cfg.echo())?;

    let mut lines = Vec::new();
    match cfg.subcommand {
        Subcommand::Train => cmd_train(cfg, &mut lines)?,
        Subcommand::Eval => cmd_eval(cfg, &mut lines)?,
        Subcommand::Sweep => cmd_sweep(cfg, &mut lines)?,
        Subcommand::Varlen => cmd_varlen(cfg, &mut lines)?,
        Subcommand::Baseline => cmd_baseline(cfg, &mut lines)?,
        Subcommand::Gradcheck => cmd_gradcheck(cfg, &mut lines)?,
    }
    for line in &lines {
        println!("{line}");
    }
    Ok(lines)
}

fn arch_from_config(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<ArchSpec, CliError> {
    let (h, w, c) = dataset.dims();
    let mut spec = ArchSpec::new(cfg.layers, cfg.channel_uses.clone(), h, w, c);
    spec.encoder_widths = cfg.enc_widths.clone();
    spec.decoder_widths = cfg.dec_widths.clone();
    spec.combiner_widths = cfg.comb_widths.clone();
    spec.kernel = cfg.kernel;
    spec.tx_estimate = cfg.tx_estimate;
    spec.validate()?;
    Ok(spec)
}

fn train_report_csv(report: &TrainReport) -> String {
    let mut out = String::from("step,train_loss,val_loss\n");
    let vals: std::collections::BTreeMap<usize, f64> = report.val_loss.iter().copied().collect();
    for (i, loss) in report.train_loss.iter().enumerate() {
        let step = i + 1;
        let val = vals
            .get(&step)
            .map_or_else(String::new, |v| format!("{v:.9e}"));
        writeln!(out, "{step},{loss:.9e},{val}").expect("writing to String cannot fail");
    }
    out
}

fn cmd_train(cfg: &ExperimentConfig, lines: &mut Vec<String>) -> Result<(), CliError> {
    let dataset = load_dataset(cfg)?;
    let spec = arch_from_config(cfg, &dataset)?;
    let mut model = build_model(spec, cfg.seed)?;

    let mut train_cfg = TrainConfig::new(cfg.steps, cfg.seed, cfg.channel_config());
    train_cfg.batch_size = cfg.batch;
    train_cfg.learning_rate = cfg.learning_rate as f32;
    train_cfg.patience = cfg.patience;
    train_cfg.tol_improve = cfg.tol_improve;
    train_cfg.validation_fraction = cfg.val_fraction;
    train_cfg.eval_interval = cfg.eval_every;
    let cfgs = vec![train_cfg; cfg.layers];

    let reports = train_model(&mut model, &dataset, &cfgs)?;
    for report in &reports {
        let path = cfg.out_dir.join(format!("train_layer{}.csv", report.layer));
        write_file(&path, &train_report_csv(report))?;
        let last = report.train_loss.last().copied().unwrap_or(f64::NAN);
        lines.push(format!(
            "train layer {}: {} steps, final loss {:.6e}, best val {}",
            report.layer,
            report.stopped_step,
            last,
            if report.best_val_loss.is_finite() {
                format!("{:.6e}", report.best_val_loss)
            } else {
                "n/a".to_string()
            }
        ));
    }
    let ckpt = cfg.out_dir.join("model.jscf");
    save_model(&model, &ckpt)?;
    lines.push(format!("checkpoint written to {}", ckpt.display()));
    Ok(())
}

fn eval_csv(summary: &EvalSummary) -> String {
    let mut out = String::from("image_id,realization,layer,psnr_db,channel_uses\n");
    for rec in &summary.records {
        for (j, (psnr, uses)) in rec
            .layer_psnr_db
            .iter()
            .zip(&rec.layer_channel_uses)
            .enumerate()
        {
            writeln!(
                out,
                "{},{},{},{},{}",
                rec.image_id,
                rec.realization,
                j + 1,
                fmt_db(*psnr),
                uses
            )
            .expect("writing to String cannot fail");
        }
    }
    out
}

fn load_checkpoint(cfg: &ExperimentConfig) -> Result<JsccModel, CliError> {
    let path = cfg.checkpoint.as_ref().expect("validated by parse_config");
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    Ok(load_model(path)?)
}

fn cmd_eval(cfg: &ExperimentConfig, lines: &mut Vec<String>) -> Result<(), CliError> {
    let dataset = load_dataset(cfg)?;
    let model = load_checkpoint(cfg)?;
    let summary = evaluate_model(&model, &dataset, &cfg.channel_config(), cfg.realizations)?;
    write_file(&cfg.out_dir.join("eval.csv"), &eval_csv(&summary))?;
    for (j, mean) in summary.per_layer_mean_psnr_db.iter().enumerate() {
        lines.push(format!(
            "eval layer {}: mean psnr {} dB over {} records",
            j + 1,
            fmt_db(*mean),
            summary.records.len()
        ));
    }
    if summary.infinite_count > 0 {
        lines.push(format!(
            "eval: {} perfect reconstructions excluded from means",
            summary.infinite_count
        ));
    }
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, lines: &mut Vec<String>) -> Result<(), CliError> {
    let dataset = load_dataset(cfg)?;
    let model = load_checkpoint(cfg)?;
    let base = cfg.channel_config();
    let feedback_settings: Vec<FeedbackKind> = match &cfg.feedback_snrs {
        None => vec![base.feedback],
        Some(list) => list
            .iter()
            .map(|&snr| {
                if snr.is_infinite() {
                    FeedbackKind::Noiseless
                } else {
                    FeedbackKind::Awgn { snr_db: snr }
                }
            })
            .collect(),
    };
    let points = sweep(
        &model,
        &dataset,
        &base,
        &cfg.test_snrs,
        &feedback_settings,
        cfg.realizations,
    )?;
    let mut out = String::from("snr_test_db,snr_fb_db,layer,mean_psnr_db\n");
    for p in &points {
        let fb = match p.feedback {
            FeedbackKind::Noiseless => "inf".to_string(),
            FeedbackKind::Awgn { snr_db } => fmt_grid(snr_db),
        };
        for (j, mean) in p.per_layer_mean_psnr_db.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                fmt_grid(p.snr_test_db),
                fb,
                j + 1,
                fmt_db(*mean)
            )
            .expect("writing to String cannot fail");
        }
    }
    write_file(&cfg.out_dir.join("sweep.csv"), &out)?;
    lines.push(format!(
        "sweep: {} grid points over {} images x {} realizations",
        points.len(),
        dataset.len(),
        cfg.realizations
    ));
    Ok(())
}

fn cmd_varlen(cfg: &ExperimentConfig, lines: &mut Vec<String>) -> Result<(), CliError> {
    let dataset = load_dataset(cfg)?;
    let model = load_checkpoint(cfg)?;
    let channel = cfg.channel_config();
    let mut out = String::from("image_id,target_db,layers_used,channel_uses,met\n");
    let mut met_count = 0usize;
    let mut total = 0usize;
    for &target in &cfg.targets {
        for i in 0..dataset.len() {
            let outcome =
                variable_length_transmit(&model, dataset.image(i), i as u64, target, &channel, 0)?;
            if !outcome.decisions_agree {
                return Err(CliError::Usage(format!(
                    "transmitter and receiver stopping decisions diverged on image {}",
                    dataset.id(i)
                )));
            }
            met_count += usize::from(outcome.met);
            total += 1;
            writeln!(
                out,
                "{},{},{},{},{}",
                dataset.id(i),
                fmt_grid(target),
                outcome.layers_used,
                outcome.channel_uses,
                outcome.met
            )
            .expect("writing to String cannot fail");
        }
    }
    write_file(&cfg.out_dir.join("varlen.csv"), &out)?;
    lines.push(format!(
        "varlen: {met_count}/{total} transmissions met their target"
    ));

    // Optional separation-side accounting over the same targets.
    if let Some(rd_path) = &cfg.rd_csv {
        let rd = RdCurve::from_csv_path(rd_path, cfg.codec_name.clone())?;
        let (h, w, c) = dataset.dims();
        let n = h * w * c;
        let mut out = String::from("image_id,target_db,rate_bpp,channel_uses,reachable\n");
        for &target in &cfg.targets {
            for rec in varlen_separation_bandwidth(target, cfg.snr_db, &rd, n)? {
                writeln!(
                    out,
                    "{},{},{},{:.6},{}",
                    rec.image_id,
                    fmt_grid(target),
                    rec.rate_bpp,
                    rec.channel_uses,
                    rec.reachable
                )
                .expect("writing to String cannot fail");
            }
        }
        write_file(&cfg.out_dir.join("varlen_separation.csv"), &out)?;
        lines.push("varlen: separation bandwidth written".to_string());
    }
    Ok(())
}

fn cmd_baseline(cfg: &ExperimentConfig, lines: &mut Vec<String>) -> Result<(), CliError> {
    let dataset = load_dataset(cfg)?;
    let rd = RdCurve::from_csv_path(
        cfg.rd_csv.as_ref().expect("validated by parse_config"),
        cfg.codec_name.clone(),
    )?;
    let fallback = FallbackPsnrs::from_dataset(&dataset);
    let (h, w, c) = dataset.dims();
    let n = h * w * c;
    let k = cfg.baseline_k;

    let mut out = String::from("snr_db,scheme,mean_psnr_db\n");
    let mut rows: Vec<(f64, String, f64)> = Vec::new();
    for &snr in &cfg.baseline_snrs {
        let bound = match cfg.forward {
            ForwardKind::Awgn => capacity_bound_psnr(snr, k, n, &rd, &fallback)?,
            ForwardKind::RayleighSlow => capacity_bound_psnr_fading(
                snr,
                k,
                n,
                &rd,
                &fallback,
                cfg.fading_variance,
                cfg.seed,
                cfg.realizations,
            )?,
        };
        rows.push((snr, format!("capacity-{}", rd.codec), bound));
    }

    if let Some(fer_path) = &cfg.fer_csv {
        let text = std::fs::read_to_string(fer_path).map_err(|source| CliError::Io {
            path: fer_path.display().to_string(),
            source,
        })?;
        let configs = parse_fer_csv(&text, &fer_path.display().to_string())?;
        let mut per_config: Vec<Vec<f64>> = Vec::new();
        for config in &configs {
            let mut values = Vec::new();
            for &snr in &cfg.baseline_snrs {
                let v = digital_scheme_psnr(config, snr, k, n, &rd, &fallback)?;
                values.push(v);
                rows.push((
                    snr,
                    format!("digital-{}-{}", config.label(), rd.codec),
                    v,
                ));
            }
            per_config.push(values);
        }
        let env = envelope(&per_config)?;
        for (i, &snr) in cfg.baseline_snrs.iter().enumerate() {
            rows.push((snr, format!("envelope-{}", rd.codec), env[i].0));
        }
    }

    for (snr, scheme, value) in &rows {
        writeln!(out, "{},{},{}", fmt_grid(*snr), scheme, fmt_db(*value))
            .expect("writing to String cannot fail");
    }
    write_file(&cfg.out_dir.join("baseline.csv"), &out)?;
    lines.push(format!(
        "baseline: {} rows over {} SNR points",
        rows.len(),
        cfg.baseline_snrs.len()
    ));
    Ok(())
}

fn cmd_gradcheck(cfg: &ExperimentConfig, lines: &mut Vec<String>) -> Result<(), CliError> {
    let entries = standard_suite(cfg.seed)?;
    let mut out = String::from("op,max_rel_error,pass\n");
    let mut failed = 0usize;
    for e in &entries {
        let pass = e.report.pass();
        failed += usize::from(!pass);
        writeln!(out, "{},{:.3e},{}", e.name, e.report.max_rel_error, pass)
            .expect("writing to String cannot fail");
        lines.push(format!(
            "gradcheck {}: max rel error {:.3e} [{}]",
            e.name,
            e.report.max_rel_error,
            if pass { "pass" } else { "FAIL" }
        ));
    }
    write_file(&cfg.out_dir.join("gradcheck.csv"), &out)?;
    if failed > 0 {
        return Err(CliError::GradCheckFailed {
            failed,
            total: entries.len(),
        });
    }
    Ok(())
}
