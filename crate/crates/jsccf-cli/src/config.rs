//! Flat `key = value` experiment configuration.
//!
//! One assignment per line, `#` starts a comment, keys may appear once.
//! Every key is registered with the subcommands it applies to; unknown keys
//! and keys outside the active subcommand are rejected with their line
//! number. The fully resolved configuration (defaults included) is echoed
//! to the output directory for exact replay.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use jsccf_core::channel::{ChannelConfig, FeedbackKind, ForwardKind};
use jsccf_core::model::TxEstimate;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got {got:?}")]
    Syntax { line: usize, got: String },
    #[error("duplicate key {key:?} on lines {first} and {second}")]
    Duplicate {
        key: String,
        first: usize,
        second: usize,
    },
    #[error("line {line}: unknown key {key:?}")]
    Unknown { key: String, line: usize },
    #[error("line {line}: key {key:?} does not apply to subcommand {subcommand}")]
    NotApplicable {
        key: String,
        line: usize,
        subcommand: Subcommand,
    },
    #[error("missing required key {key:?} for subcommand {subcommand}")]
    Missing {
        key: String,
        subcommand: Subcommand,
    },
    #[error("line {line}: key {key:?}: expected {expected}, got {got:?}")]
    Type {
        key: String,
        line: usize,
        expected: &'static str,
        got: String,
    },
    #[error("line {line}: key {key:?}: {what}")]
    Invalid {
        key: String,
        line: usize,
        what: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Train,
    Eval,
    Sweep,
    Varlen,
    Baseline,
    Gradcheck,
}

impl std::fmt::Display for Subcommand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Subcommand::Train => "train",
            Subcommand::Eval => "eval",
            Subcommand::Sweep => "sweep",
            Subcommand::Varlen => "varlen",
            Subcommand::Baseline => "baseline",
            Subcommand::Gradcheck => "gradcheck",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    Synthetic,
    Cifar10Bin,
    Ppm,
}

/// Typed, validated experiment configuration with defaults applied.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub subcommand: Subcommand,
    pub seed: u64,
    pub out_dir: PathBuf,

    // dataset
    pub dataset: Option<PathBuf>,
    pub dataset_format: DatasetFormat,
    pub synth_count: usize,
    pub synth_size: usize,
    pub synth_channels: usize,
    pub synth_seed: u64,

    // architecture (train only)
    pub layers: usize,
    pub channel_uses: Vec<usize>,
    pub enc_widths: Vec<usize>,
    pub dec_widths: Vec<usize>,
    pub comb_widths: Vec<usize>,
    pub kernel: usize,
    pub tx_estimate: TxEstimate,

    // training
    pub batch: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub patience: usize,
    pub tol_improve: f64,
    pub val_fraction: f64,
    pub eval_every: usize,

    // channel
    pub forward: ForwardKind,
    pub snr_db: f64,
    pub feedback: FeedbackKind,
    pub fading_variance: f64,

    // evaluation
    pub checkpoint: Option<PathBuf>,
    pub realizations: u32,
    pub test_snrs: Vec<f64>,
    pub feedback_snrs: Option<Vec<f64>>,
    pub targets: Vec<f64>,

    // separation baseline
    pub rd_csv: Option<PathBuf>,
    pub codec_name: String,
    pub fer_csv: Option<PathBuf>,
    pub baseline_snrs: Vec<f64>,
    pub baseline_k: usize,
}

struct Entry {
    value: String,
    line: usize,
}

struct Reader {
    entries: BTreeMap<String, Entry>,
}

const ALL: &[Subcommand] = &[
    Subcommand::Train,
    Subcommand::Eval,
    Subcommand::Sweep,
    Subcommand::Varlen,
    Subcommand::Baseline,
    Subcommand::Gradcheck,
];
const DATA: &[Subcommand] = &[
    Subcommand::Train,
    Subcommand::Eval,
    Subcommand::Sweep,
    Subcommand::Varlen,
    Subcommand::Baseline,
];
const TRAIN: &[Subcommand] = &[Subcommand::Train];
const CHANNEL: &[Subcommand] = &[
    Subcommand::Train,
    Subcommand::Eval,
    Subcommand::Sweep,
    Subcommand::Varlen,
    Subcommand::Baseline,
];
const WITH_CHECKPOINT: &[Subcommand] = &[Subcommand::Eval, Subcommand::Sweep, Subcommand::Varlen];
const REALIZE: &[Subcommand] = &[Subcommand::Eval, Subcommand::Sweep];
const BASELINE: &[Subcommand] = &[Subcommand::Baseline];
const VARLEN_OR_BASELINE: &[Subcommand] = &[Subcommand::Varlen, Subcommand::Baseline];

/// (key, applicable subcommands) registry; parsing rejects anything else.
const KEYS: &[(&str, &[Subcommand])] = &[
    ("seed", ALL),
    ("out", ALL),
    ("dataset", DATA),
    ("dataset_format", DATA),
    ("synth_count", DATA),
    ("synth_size", DATA),
    ("synth_channels", DATA),
    ("synth_seed", DATA),
    ("layers", TRAIN),
    ("channel_uses", TRAIN),
    ("enc_widths", TRAIN),
    ("dec_widths", TRAIN),
    ("comb_widths", TRAIN),
    ("kernel", TRAIN),
    ("tx_estimate", TRAIN),
    ("batch", TRAIN),
    ("lr", TRAIN),
    ("steps", TRAIN),
    ("patience", TRAIN),
    ("tol_improve", TRAIN),
    ("val_fraction", TRAIN),
    ("eval_every", TRAIN),
    ("forward", CHANNEL),
    ("snr_db", CHANNEL),
    ("feedback", CHANNEL),
    ("feedback_snr_db", CHANNEL),
    ("fading_variance", CHANNEL),
    ("checkpoint", WITH_CHECKPOINT),
    ("realizations", REALIZE),
    ("test_snrs", &[Subcommand::Sweep]),
    ("feedback_snrs", &[Subcommand::Sweep]),
    ("targets", &[Subcommand::Varlen]),
    ("rd_csv", VARLEN_OR_BASELINE),
    ("codec_name", VARLEN_OR_BASELINE),
    ("fer_csv", BASELINE),
    ("baseline_snrs", BASELINE),
    ("baseline_k", BASELINE),
];

impl Reader {
    fn parse(subcommand: Subcommand, text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: lineno,
                    got: line.to_string(),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let Some((_, scope)) = KEYS.iter().find(|(k, _)| *k == key) else {
                return Err(ConfigError::Unknown { key, line: lineno });
            };
            if !scope.contains(&subcommand) {
                return Err(ConfigError::NotApplicable {
                    key,
                    line: lineno,
                    subcommand,
                });
            }
            if let Some(prev) = entries.get(&key) {
                return Err(ConfigError::Duplicate {
                    key,
                    first: prev.line,
                    second: lineno,
                });
            }
            entries.insert(key, Entry { value, line: lineno });
        }
        Ok(Self { entries })
    }

    fn raw(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    fn string(&self, key: &str, default: &str) -> String {
        self.raw(key).map_or_else(|| default.to_string(), |e| e.value.clone())
    }

    fn path_opt(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|e| PathBuf::from(&e.value))
    }

    fn parse_num<T: std::str::FromStr>(
        &self,
        key: &str,
        expected: &'static str,
    ) -> Result<Option<(T, usize)>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => match e.value.parse::<T>() {
                Ok(v) => Ok(Some((v, e.line))),
                Err(_) => Err(ConfigError::Type {
                    key: key.to_string(),
                    line: e.line,
                    expected,
                    got: e.value.clone(),
                }),
            },
        }
    }

    fn usize_def(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(self
            .parse_num::<usize>(key, "a non-negative integer")?
            .map_or(default, |(v, _)| v))
    }

    fn u64_def(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        Ok(self
            .parse_num::<u64>(key, "a non-negative integer")?
            .map_or(default, |(v, _)| v))
    }

    fn f64_def(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self
            .parse_num::<f64>(key, "a real number")?
            .map_or(default, |(v, _)| v))
    }

    fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .split(',')
                .map(|s| {
                    let t = s.trim();
                    if t.eq_ignore_ascii_case("inf") {
                        Ok(f64::INFINITY)
                    } else {
                        t.parse::<f64>().map_err(|_| ConfigError::Type {
                            key: key.to_string(),
                            line: e.line,
                            expected: "a comma-separated list of numbers",
                            got: t.to_string(),
                        })
                    }
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }

    fn usize_list_def(&self, key: &str, default: &[usize]) -> Result<Vec<usize>, ConfigError> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(e) => e
                .value
                .split(',')
                .map(|s| {
                    s.trim().parse::<usize>().map_err(|_| ConfigError::Type {
                        key: key.to_string(),
                        line: e.line,
                        expected: "a comma-separated list of integers",
                        got: s.trim().to_string(),
                    })
                })
                .collect(),
        }
    }

    fn invalid(&self, key: &str, what: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            key: key.to_string(),
            line: self.raw(key).map_or(0, |e| e.line),
            what: what.into(),
        }
    }
}

/// Parses and validates configuration text for one subcommand.
pub fn parse_config(subcommand: Subcommand, text: &str) -> Result<ExperimentConfig, ConfigError> {
    let r = Reader::parse(subcommand, text)?;

    let dataset = r.path_opt("dataset").filter(|p| p.as_os_str() != "synthetic");
    let dataset_format = match r.string("dataset_format", "").as_str() {
        "" => {
            if dataset.is_some() {
                return Err(r.invalid(
                    "dataset_format",
                    "required when `dataset` names a file (cifar10-bin or ppm)",
                ));
            }
            DatasetFormat::Synthetic
        }
        "synthetic" => DatasetFormat::Synthetic,
        "cifar10-bin" => DatasetFormat::Cifar10Bin,
        "ppm" => DatasetFormat::Ppm,
        other => {
            return Err(r.invalid(
                "dataset_format",
                format!("unknown format {other:?}, expected synthetic | cifar10-bin | ppm"),
            ))
        }
    };
    if matches!(dataset_format, DatasetFormat::Cifar10Bin | DatasetFormat::Ppm)
        && dataset.is_none()
    {
        return Err(ConfigError::Missing {
            key: "dataset".into(),
            subcommand,
        });
    }

    let batch = r.usize_def("batch", 128)?;
    if batch == 0 && subcommand == Subcommand::Train {
        return Err(r.invalid("batch", "batch size must be >= 1"));
    }
    let patience = r.usize_def("patience", 10)?;
    if patience == 0 && subcommand == Subcommand::Train {
        return Err(r.invalid("patience", "patience must be >= 1"));
    }
    let layers = r.usize_def("layers", 2)?;
    if layers == 0 {
        return Err(r.invalid("layers", "layer count must be >= 1"));
    }
    let channel_uses = r.usize_list_def("channel_uses", &vec![256; layers])?;
    if subcommand == Subcommand::Train && channel_uses.len() != layers {
        return Err(r.invalid(
            "channel_uses",
            format!("expected {layers} entries, got {}", channel_uses.len()),
        ));
    }
    let val_fraction = r.f64_def("val_fraction", 0.1)?;
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(r.invalid("val_fraction", "must lie in [0, 1)"));
    }
    let eval_every = r.usize_def("eval_every", 100)?;
    if eval_every == 0 {
        return Err(r.invalid("eval_every", "must be >= 1"));
    }

    let forward = match r.string("forward", "awgn").as_str() {
        "awgn" => ForwardKind::Awgn,
        "rayleigh" => ForwardKind::RayleighSlow,
        other => {
            return Err(r.invalid(
                "forward",
                format!("unknown channel {other:?}, expected awgn | rayleigh"),
            ))
        }
    };
    let feedback = match r.string("feedback", "noiseless").as_str() {
        "noiseless" => FeedbackKind::Noiseless,
        "awgn" => {
            let Some((snr, _)) = r.parse_num::<f64>("feedback_snr_db", "a real number")? else {
                return Err(ConfigError::Missing {
                    key: "feedback_snr_db".into(),
                    subcommand,
                });
            };
            FeedbackKind::Awgn { snr_db: snr }
        }
        other => {
            return Err(r.invalid(
                "feedback",
                format!("unknown feedback {other:?}, expected noiseless | awgn"),
            ))
        }
    };
    let fading_variance = r.f64_def("fading_variance", 1.0)?;
    if fading_variance <= 0.0 {
        return Err(r.invalid("fading_variance", "must be positive"));
    }

    let tx_estimate = match r.string("tx_estimate", "decoded").as_str() {
        "decoded" => TxEstimate::Decoded,
        "zeroed" => TxEstimate::Zeroed,
        other => {
            return Err(r.invalid(
                "tx_estimate",
                format!("unknown mode {other:?}, expected decoded | zeroed"),
            ))
        }
    };

    let realizations =
        r.usize_def("realizations", jsccf_core::eval::DEFAULT_REALIZATIONS as usize)? as u32;
    if realizations == 0 {
        return Err(r.invalid("realizations", "must be >= 1"));
    }

    let checkpoint = r.path_opt("checkpoint");
    if subcommand != Subcommand::Train && WITH_CHECKPOINT.contains(&subcommand) && checkpoint.is_none()
    {
        return Err(ConfigError::Missing {
            key: "checkpoint".into(),
            subcommand,
        });
    }

    let test_snrs = r.f64_list("test_snrs")?.unwrap_or_default();
    if subcommand == Subcommand::Sweep && test_snrs.is_empty() {
        return Err(ConfigError::Missing {
            key: "test_snrs".into(),
            subcommand,
        });
    }
    let baseline_snrs = r.f64_list("baseline_snrs")?.unwrap_or_default();
    if subcommand == Subcommand::Baseline && baseline_snrs.is_empty() {
        return Err(ConfigError::Missing {
            key: "baseline_snrs".into(),
            subcommand,
        });
    }
    let rd_csv = r.path_opt("rd_csv");
    if subcommand == Subcommand::Baseline && rd_csv.is_none() {
        return Err(ConfigError::Missing {
            key: "rd_csv".into(),
            subcommand,
        });
    }
    let baseline_k = r.usize_def("baseline_k", 512)?;
    if baseline_k == 0 {
        return Err(r.invalid("baseline_k", "must be >= 1"));
    }

    let synth_size = r.usize_def("synth_size", 32)?;
    let synth_count = r.usize_def("synth_count", 64)?;
    let synth_channels = r.usize_def("synth_channels", 3)?;

    Ok(ExperimentConfig {
        subcommand,
        seed: r.u64_def("seed", 0)?,
        out_dir: PathBuf::from(r.string("out", "out")),
        dataset,
        dataset_format,
        synth_count,
        synth_size,
        synth_channels,
        synth_seed: r.u64_def("synth_seed", 1000)?,
        layers,
        channel_uses,
        enc_widths: r.usize_list_def("enc_widths", &[32, 32, 32])?,
        dec_widths: r.usize_list_def("dec_widths", &[32, 32, 32])?,
        comb_widths: r.usize_list_def("comb_widths", &[32, 32])?,
        kernel: r.usize_def("kernel", 5)?,
        tx_estimate,
        batch,
        learning_rate: r.f64_def("lr", 1e-4)?,
        steps: r.usize_def("steps", 10_000)?,
        patience,
        tol_improve: r.f64_def("tol_improve", 1e-5)?,
        val_fraction,
        eval_every,
        forward,
        snr_db: r.f64_def("snr_db", 1.0)?,
        feedback,
        fading_variance,
        checkpoint,
        realizations,
        test_snrs,
        feedback_snrs: r.f64_list("feedback_snrs")?,
        targets: r.f64_list("targets")?.unwrap_or_else(|| vec![20.0, 25.0, 30.0]),
        rd_csv,
        codec_name: r.string("codec_name", "codec"),
        fer_csv: r.path_opt("fer_csv"),
        baseline_snrs,
        baseline_k,
    })
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

impl ExperimentConfig {
    pub fn channel_config(&self) -> ChannelConfig {
        ChannelConfig {
            forward_kind: self.forward,
            forward_snr_db: self.snr_db,
            feedback: self.feedback,
            fading_variance: self.fading_variance,
            seed: self.seed,
        }
    }

    /// Fully resolved `key = value` lines (defaults included), sorted by
    /// key; written next to the artifacts for exact replay.
    pub fn echo(&self) -> String {
        // `out` is deliberately not echoed: the file already lives in the
        // output directory, and artifacts stay byte-identical across
        // different --out targets.
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        map.insert("subcommand", self.subcommand.to_string());
        map.insert("seed", self.seed.to_string());
        map.insert(
            "dataset",
            self.dataset
                .as_ref()
                .map_or_else(|| "synthetic".into(), |p| p.display().to_string()),
        );
        map.insert(
            "dataset_format",
            match self.dataset_format {
                DatasetFormat::Synthetic => "synthetic".into(),
                DatasetFormat::Cifar10Bin => "cifar10-bin".into(),
                DatasetFormat::Ppm => "ppm".into(),
            },
        );
        map.insert("synth_count", self.synth_count.to_string());
        map.insert("synth_size", self.synth_size.to_string());
        map.insert("synth_channels", self.synth_channels.to_string());
        map.insert("synth_seed", self.synth_seed.to_string());
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let flist = |v: &[f64]| v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(",");
        if self.subcommand == Subcommand::Train {
            map.insert("layers", self.layers.to_string());
            map.insert("channel_uses", list(&self.channel_uses));
            map.insert("enc_widths", list(&self.enc_widths));
            map.insert("dec_widths", list(&self.dec_widths));
            map.insert("comb_widths", list(&self.comb_widths));
            map.insert("kernel", self.kernel.to_string());
            map.insert(
                "tx_estimate",
                match self.tx_estimate {
                    TxEstimate::Decoded => "decoded".into(),
                    TxEstimate::Zeroed => "zeroed".into(),
                },
            );
            map.insert("batch", self.batch.to_string());
            map.insert("lr", fmt_f64(self.learning_rate));
            map.insert("steps", self.steps.to_string());
            map.insert("patience", self.patience.to_string());
            map.insert("tol_improve", fmt_f64(self.tol_improve));
            map.insert("val_fraction", fmt_f64(self.val_fraction));
            map.insert("eval_every", self.eval_every.to_string());
        }
        if self.subcommand != Subcommand::Gradcheck {
            map.insert(
                "forward",
                match self.forward {
                    ForwardKind::Awgn => "awgn".into(),
                    ForwardKind::RayleighSlow => "rayleigh".into(),
                },
            );
            map.insert("snr_db", fmt_f64(self.snr_db));
            match self.feedback {
                FeedbackKind::Noiseless => {
                    map.insert("feedback", "noiseless".into());
                }
                FeedbackKind::Awgn { snr_db } => {
                    map.insert("feedback", "awgn".into());
                    map.insert("feedback_snr_db", fmt_f64(snr_db));
                }
            }
            map.insert("fading_variance", fmt_f64(self.fading_variance));
        }
        if let Some(cp) = &self.checkpoint {
            map.insert("checkpoint", cp.display().to_string());
        }
        match self.subcommand {
            Subcommand::Eval | Subcommand::Sweep => {
                map.insert("realizations", self.realizations.to_string());
            }
            _ => {}
        }
        if self.subcommand == Subcommand::Sweep {
            map.insert("test_snrs", flist(&self.test_snrs));
            if let Some(fb) = &self.feedback_snrs {
                map.insert("feedback_snrs", flist(fb));
            }
        }
        if self.subcommand == Subcommand::Varlen {
            map.insert("targets", flist(&self.targets));
        }
        if let Some(rd) = &self.rd_csv {
            map.insert("rd_csv", rd.display().to_string());
            map.insert("codec_name", self.codec_name.clone());
        }
        if self.subcommand == Subcommand::Baseline {
            if let Some(fer) = &self.fer_csv {
                map.insert("fer_csv", fer.display().to_string());
            }
            map.insert("baseline_snrs", flist(&self.baseline_snrs));
            map.insert("baseline_k", self.baseline_k.to_string());
        }

        let mut out = String::new();
        for (k, v) in map {
            writeln!(out, "{k} = {v}").expect("writing to String cannot fail");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_key_parses_scientific_notation() {
        let cfg = parse_config(Subcommand::Train, "lr = 1e-4\n").unwrap();
        assert_eq!(cfg.learning_rate, 1e-4);
    }

    #[test]
    fn zero_batch_is_a_validation_error() {
        let err = parse_config(Subcommand::Train, "batch = 0\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key == "batch"));
    }

    #[test]
    fn duplicate_keys_name_both_lines() {
        let err = parse_config(Subcommand::Train, "batch = 4\nlr = 1e-4\nbatch = 8\n").unwrap_err();
        match err {
            ConfigError::Duplicate { key, first, second } => {
                assert_eq!(key, "batch");
                assert_eq!(first, 1);
                assert_eq!(second, 3);
            }
            other => panic!("expected duplicate error, got {other}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let err = parse_config(Subcommand::Train, "\n# c\nbogus = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::Unknown { line: 3, .. }));
    }

    #[test]
    fn keys_outside_the_subcommand_are_rejected() {
        let err = parse_config(Subcommand::Eval, "steps = 5\ncheckpoint = m.jscf\n").unwrap_err();
        assert!(matches!(err, ConfigError::NotApplicable { .. }));
    }

    #[test]
    fn missing_required_key_is_reported() {
        let err = parse_config(Subcommand::Eval, "realizations = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::Missing { ref key, .. } if key == "checkpoint"));
    }

    #[test]
    fn defaults_match_the_protocol() {
        let cfg = parse_config(Subcommand::Train, "").unwrap();
        assert_eq!(cfg.batch, 128);
        assert_eq!(cfg.learning_rate, 1e-4);
        assert_eq!(cfg.patience, 10);
        assert_eq!(cfg.eval_every, 100);
        assert_eq!(cfg.val_fraction, 0.1);
        assert_eq!(cfg.realizations, 10);
    }

    #[test]
    fn echo_is_sorted_and_complete() {
        let cfg = parse_config(Subcommand::Train, "seed = 7\nsteps = 12\n").unwrap();
        let echo = cfg.echo();
        assert!(echo.contains("seed = 7\n"));
        assert!(echo.contains("steps = 12\n"));
        assert!(echo.contains("batch = 128\n"));
        let keys: Vec<&str> = echo.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn feedback_awgn_requires_snr() {
        let err = parse_config(Subcommand::Train, "feedback = awgn\n").unwrap_err();
        assert!(matches!(err, ConfigError::Missing { ref key, .. } if key == "feedback_snr_db"));
        let cfg =
            parse_config(Subcommand::Train, "feedback = awgn\nfeedback_snr_db = 10\n").unwrap();
        assert_eq!(cfg.feedback, FeedbackKind::Awgn { snr_db: 10.0 });
    }
}
