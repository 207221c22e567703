//! Separation-based comparison machinery: the Shannon capacity bound over
//! ingested rate-distortion curves, abstract digital schemes reduced to
//! their frame error rate, best-configuration envelopes, and
//! variable-length bandwidth accounting.
//!
//! Channel codes are never simulated here; a digital configuration is a
//! (code rate, modulation order) pair with a supplied frame error rate per
//! SNR. A failed frame falls back to the per-channel mean-image
//! reconstruction. Capacity is the complex AWGN formula
//! `log2(1 + SNR)` bits per channel use (unit-power symbols, total noise
//! variance `sigma^2`).

use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::channel::ChannelDraw;
use crate::data::Dataset;
use crate::eval::psnr;
use crate::seeds::{trace_rng, Link};

/// Key used for aggregate (whole-dataset) rate-distortion curves.
pub const AGGREGATE_ID: &str = "*";

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{source_name} line {line}: {what}")]
    Parse {
        source_name: String,
        line: usize,
        what: String,
    },
    #[error("rate-distortion curve is empty")]
    EmptyCurve,
    #[error("curve for {image_id:?}: {what}")]
    BadCurve { image_id: String, what: String },
    #[error("no frame error rate supplied for rate {code_rate} x {bits_per_symbol} bits/symbol at {snr_db} dB")]
    MissingFer {
        code_rate: f64,
        bits_per_symbol: u32,
        snr_db: f64,
    },
    #[error("no fallback PSNR for image {0:?}")]
    MissingFallback(String),
    #[error("usage error: {0}")]
    Usage(String),
}

/// One (rate, quality) knot of a rate-distortion curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    pub rate_bpp: f64,
    pub psnr_db: f64,
}

/// Per-image (or aggregate, keyed `"*"`) rate-distortion curves of one
/// codec. Rates are strictly increasing and PSNR non-decreasing per image.
#[derive(Clone, Debug)]
pub struct RdCurve {
    pub codec: String,
    curves: BTreeMap<String, Vec<RdPoint>>,
}

impl RdCurve {
    pub fn new(
        codec: impl Into<String>,
        curves: BTreeMap<String, Vec<RdPoint>>,
    ) -> Result<Self, BaselineError> {
        if curves.is_empty() || curves.values().any(|v| v.is_empty()) {
            return Err(BaselineError::EmptyCurve);
        }
        for (id, points) in &curves {
            for pair in points.windows(2) {
                if pair[1].rate_bpp <= pair[0].rate_bpp {
                    return Err(BaselineError::BadCurve {
                        image_id: id.clone(),
                        what: format!(
                            "rates must be strictly increasing ({} then {})",
                            pair[0].rate_bpp, pair[1].rate_bpp
                        ),
                    });
                }
                if pair[1].psnr_db < pair[0].psnr_db {
                    return Err(BaselineError::BadCurve {
                        image_id: id.clone(),
                        what: format!(
                            "psnr must be non-decreasing in rate ({} then {})",
                            pair[0].psnr_db, pair[1].psnr_db
                        ),
                    });
                }
            }
        }
        Ok(Self {
            codec: codec.into(),
            curves,
        })
    }

    /// Parses `image_id, rate_bpp, psnr_db` CSV text. `#` lines and an
    /// optional literal header are skipped; points per image may arrive in
    /// any order and are sorted by rate.
    pub fn parse_csv(text: &str, codec: impl Into<String>, source_name: &str) -> Result<Self, BaselineError> {
        let mut curves: BTreeMap<String, Vec<RdPoint>> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if lineno == 0 && fields.first() == Some(&"image_id") {
                continue;
            }
            if fields.len() != 3 {
                return Err(BaselineError::Parse {
                    source_name: source_name.into(),
                    line: lineno + 1,
                    what: format!("expected 3 fields, got {}", fields.len()),
                });
            }
            let parse = |s: &str, what: &str| -> Result<f64, BaselineError> {
                s.parse().map_err(|_| BaselineError::Parse {
                    source_name: source_name.into(),
                    line: lineno + 1,
                    what: format!("{what} {s:?} is not a number"),
                })
            };
            let rate = parse(fields[1], "rate_bpp")?;
            let quality = parse(fields[2], "psnr_db")?;
            curves.entry(fields[0].to_string()).or_default().push(RdPoint {
                rate_bpp: rate,
                psnr_db: quality,
            });
        }
        for points in curves.values_mut() {
            points.sort_by(|a, b| a.rate_bpp.partial_cmp(&b.rate_bpp).expect("finite rates"));
        }
        Self::new(codec, curves)
    }

    pub fn from_csv_path(path: &Path, codec: impl Into<String>) -> Result<Self, BaselineError> {
        let text = std::fs::read_to_string(path).map_err(|source| BaselineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_csv(&text, codec, &path.display().to_string())
    }

    /// Image ids covered (the aggregate id when the curve is aggregate).
    pub fn image_ids(&self) -> Vec<&str> {
        self.curves.keys().map(String::as_str).collect()
    }

    fn curve_for(&self, image_id: &str) -> Option<&[RdPoint]> {
        self.curves
            .get(image_id)
            .or_else(|| self.curves.get(AGGREGATE_ID))
            .map(Vec::as_slice)
    }

    /// Knot at the largest rate `<= bpp`, or `None` when `bpp` is below the
    /// curve's minimum rate.
    pub fn at_most(&self, image_id: &str, bpp: f64) -> Result<Option<RdPoint>, BaselineError> {
        let points = self
            .curve_for(image_id)
            .ok_or_else(|| BaselineError::BadCurve {
                image_id: image_id.into(),
                what: "no curve for this image".into(),
            })?;
        Ok(points
            .iter()
            .rev()
            .find(|p| p.rate_bpp <= bpp)
            .copied())
    }

    /// Minimum-rate knot reaching `target_psnr_db`, or `None` when even the
    /// maximum rate falls short.
    pub fn min_rate_reaching(
        &self,
        image_id: &str,
        target_psnr_db: f64,
    ) -> Result<Option<RdPoint>, BaselineError> {
        let points = self
            .curve_for(image_id)
            .ok_or_else(|| BaselineError::BadCurve {
                image_id: image_id.into(),
                what: "no curve for this image".into(),
            })?;
        Ok(points.iter().find(|p| p.psnr_db >= target_psnr_db).copied())
    }

    pub fn min_rate(&self, image_id: &str) -> Result<RdPoint, BaselineError> {
        let points = self
            .curve_for(image_id)
            .ok_or_else(|| BaselineError::BadCurve {
                image_id: image_id.into(),
                what: "no curve for this image".into(),
            })?;
        Ok(points[0])
    }

    pub fn max_rate(&self, image_id: &str) -> Result<RdPoint, BaselineError> {
        let points = self
            .curve_for(image_id)
            .ok_or_else(|| BaselineError::BadCurve {
                image_id: image_id.into(),
                what: "no curve for this image".into(),
            })?;
        Ok(*points.last().expect("curves are non-empty"))
    }
}

/// Bits a capacity-achieving code delivers over `k` complex channel uses:
/// `k * log2(1 + 10^(snr/10))`.
pub fn capacity_bits(snr_db: f64, k: f64) -> f64 {
    k * (1.0 + 10f64.powf(snr_db / 10.0)).log2()
}

/// Per-channel mean reconstruction: every pixel of channel `c` becomes the
/// mean of channel `c`.
pub fn mean_image_reconstruction(img: &Tensor<f32>) -> Tensor<f32> {
    let s = img.shape();
    let c = *s.last().expect("image has a channel axis");
    let mut sums = vec![0.0f64; c];
    let pixels = img.len() / c;
    for px in img.data().chunks(c) {
        for (acc, &v) in sums.iter_mut().zip(px) {
            *acc += v as f64;
        }
    }
    let means: Vec<f32> = sums.iter().map(|&v| (v / pixels as f64) as f32).collect();
    let mut out = Tensor::zeros(s.to_vec());
    for px in out.data_mut().chunks_mut(c) {
        px.copy_from_slice(&means);
    }
    out
}

/// PSNR of the mean-image fallback reconstruction of `img`.
pub fn fallback_psnr(img: &Tensor<f32>) -> f64 {
    psnr(img, &mean_image_reconstruction(img)).expect("shapes match by construction")
}

/// Fallback PSNR per image id, plus the aggregate mean under
/// [`AGGREGATE_ID`].
#[derive(Clone, Debug)]
pub struct FallbackPsnrs {
    map: BTreeMap<String, f64>,
}

impl FallbackPsnrs {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let mut map = BTreeMap::new();
        let mut sum = 0.0;
        for i in 0..dataset.len() {
            let v = fallback_psnr(dataset.image(i));
            sum += v;
            map.insert(dataset.id(i).to_string(), v);
        }
        map.insert(AGGREGATE_ID.to_string(), sum / dataset.len() as f64);
        Self { map }
    }

    pub fn get(&self, image_id: &str) -> Result<f64, BaselineError> {
        self.map
            .get(image_id)
            .or_else(|| self.map.get(AGGREGATE_ID))
            .copied()
            .ok_or_else(|| BaselineError::MissingFallback(image_id.into()))
    }
}

fn mean_over_curve_images<F>(rd: &RdCurve, mut per_image: F) -> Result<f64, BaselineError>
where
    F: FnMut(&str) -> Result<f64, BaselineError>,
{
    let ids = rd.image_ids();
    let mut sum = 0.0;
    for id in &ids {
        sum += per_image(id)?;
    }
    Ok(sum / ids.len() as f64)
}

/// Mean PSNR a separation scheme with a capacity-achieving code attains:
/// compress each image at the largest curve rate not exceeding
/// `capacity_bits / n` bpp, with the mean-image fallback below the minimum
/// rate.
pub fn capacity_bound_psnr(
    snr_db: f64,
    k: usize,
    n: usize,
    rd: &RdCurve,
    fallback: &FallbackPsnrs,
) -> Result<f64, BaselineError> {
    let bpp = capacity_bits(snr_db, k as f64) / n as f64;
    mean_over_curve_images(rd, |id| match rd.at_most(id, bpp)? {
        Some(point) => Ok(point.psnr_db),
        None => fallback.get(id),
    })
}

/// Capacity bound over a slow-fading channel: the rate is dictated by the
/// instantaneous capacity `log2(1 + |h|^2 snr)` with `h` drawn per image
/// and realization (transmitter CSI via the feedback link).
pub fn capacity_bound_psnr_fading(
    snr_db: f64,
    k: usize,
    n: usize,
    rd: &RdCurve,
    fallback: &FallbackPsnrs,
    fading_variance: f64,
    seed: u64,
    realizations: u32,
) -> Result<f64, BaselineError> {
    if realizations == 0 {
        return Err(BaselineError::Usage("realizations must be >= 1".into()));
    }
    let snr_lin = 10f64.powf(snr_db / 10.0);
    let ids = rd.image_ids();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, id) in ids.iter().enumerate() {
        for r in 0..realizations {
            let mut rng = trace_rng(seed, i as u64, r as u64, 0, Link::Fading);
            let h = ChannelDraw::rayleigh(&mut rng, fading_variance).h;
            let inst_bits = k as f64 * (1.0 + h.norm_sqr() * snr_lin).log2();
            let bpp = inst_bits / n as f64;
            let v = match rd.at_most(id, bpp)? {
                Some(point) => point.psnr_db,
                None => fallback.get(id)?,
            };
            sum += v;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// An abstract digital configuration: channel code rate (information bits
/// per channel bit), modulation order (bits per symbol), and its measured
/// frame error rate per SNR.
#[derive(Clone, Debug)]
pub struct DigitalConfig {
    pub code_rate: f64,
    pub bits_per_symbol: u32,
    /// (snr_db, frame error rate) pairs.
    pub fer: Vec<(f64, f64)>,
}

impl DigitalConfig {
    pub fn label(&self) -> String {
        format!("r{:.3}-m{}", self.code_rate, self.bits_per_symbol)
    }

    pub fn fer_at(&self, snr_db: f64) -> Option<f64> {
        self.fer
            .iter()
            .find(|(s, _)| (s - snr_db).abs() < 1e-9)
            .map(|&(_, e)| e)
    }
}

/// Parses `code_rate, bits_per_symbol, snr_db, fer` CSV text into one
/// config per (code rate, modulation) pair, in first-appearance order.
pub fn parse_fer_csv(text: &str, source_name: &str) -> Result<Vec<DigitalConfig>, BaselineError> {
    let mut configs: Vec<DigitalConfig> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if lineno == 0 && fields.first() == Some(&"code_rate") {
            continue;
        }
        if fields.len() != 4 {
            return Err(BaselineError::Parse {
                source_name: source_name.into(),
                line: lineno + 1,
                what: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let num = |s: &str, what: &str| -> Result<f64, BaselineError> {
            s.parse().map_err(|_| BaselineError::Parse {
                source_name: source_name.into(),
                line: lineno + 1,
                what: format!("{what} {s:?} is not a number"),
            })
        };
        let code_rate = num(fields[0], "code_rate")?;
        let bits_num = num(fields[1], "bits_per_symbol")?;
        let snr_db = num(fields[2], "snr_db")?;
        let fer = num(fields[3], "fer")?;
        if !(0.0..=1.0).contains(&fer) {
            return Err(BaselineError::Parse {
                source_name: source_name.into(),
                line: lineno + 1,
                what: format!("fer {fer} outside [0, 1]"),
            });
        }
        let bits_per_symbol = bits_num as u32;
        match configs
            .iter_mut()
            .find(|c| (c.code_rate - code_rate).abs() < 1e-12 && c.bits_per_symbol == bits_per_symbol)
        {
            Some(c) => c.fer.push((snr_db, fer)),
            None => configs.push(DigitalConfig {
                code_rate,
                bits_per_symbol,
                fer: vec![(snr_db, fer)],
            }),
        }
    }
    if configs.is_empty() {
        return Err(BaselineError::EmptyCurve);
    }
    Ok(configs)
}

/// Expected PSNR of a digital configuration at one SNR: compress at the
/// largest curve rate below `R_max = k * code_rate * bits_per_symbol / n`
/// bpp, succeed with probability `1 - fer`, fall back to the mean image
/// otherwise; mean over the dataset.
pub fn digital_scheme_psnr(
    config: &DigitalConfig,
    snr_db: f64,
    k: usize,
    n: usize,
    rd: &RdCurve,
    fallback: &FallbackPsnrs,
) -> Result<f64, BaselineError> {
    let eps = config.fer_at(snr_db).ok_or(BaselineError::MissingFer {
        code_rate: config.code_rate,
        bits_per_symbol: config.bits_per_symbol,
        snr_db,
    })?;
    let r_max = k as f64 * config.code_rate * config.bits_per_symbol as f64 / n as f64;
    mean_over_curve_images(rd, |id| {
        let success = match rd.at_most(id, r_max)? {
            Some(point) => point.psnr_db,
            // Even the smallest compressed representation does not fit.
            None => fallback.get(id)?,
        };
        let fail = fallback.get(id)?;
        Ok((1.0 - eps) * success + eps * fail)
    })
}

/// Pointwise best PSNR across configurations per grid point; ties keep the
/// first configuration in input order. Input: one PSNR-per-grid-point row
/// per configuration.
pub fn envelope(curves: &[Vec<f64>]) -> Result<Vec<(f64, usize)>, BaselineError> {
    if curves.is_empty() {
        return Err(BaselineError::Usage("envelope of zero configurations".into()));
    }
    let len = curves[0].len();
    if curves.iter().any(|c| c.len() != len) {
        return Err(BaselineError::Usage(
            "envelope inputs must share the grid length".into(),
        ));
    }
    Ok((0..len)
        .map(|i| {
            let mut best = (curves[0][i], 0usize);
            for (ci, curve) in curves.iter().enumerate().skip(1) {
                if curve[i] > best.0 {
                    best = (curve[i], ci);
                }
            }
            best
        })
        .collect())
}

/// Channel uses a capacity-achieving separation scheme needs per image to
/// reach `target_psnr_db`.
#[derive(Clone, Debug)]
pub struct VarlenSeparation {
    pub image_id: String,
    pub rate_bpp: f64,
    pub bits: f64,
    pub channel_uses: f64,
    /// False when even the curve's maximum rate misses the target (the
    /// maximum-rate point is used in that case).
    pub reachable: bool,
}

pub fn varlen_separation_bandwidth(
    target_psnr_db: f64,
    snr_db: f64,
    rd: &RdCurve,
    n: usize,
) -> Result<Vec<VarlenSeparation>, BaselineError> {
    let per_use = (1.0 + 10f64.powf(snr_db / 10.0)).log2();
    rd.image_ids()
        .iter()
        .map(|id| {
            let (point, reachable) = match rd.min_rate_reaching(id, target_psnr_db)? {
                Some(p) => (p, true),
                None => (rd.max_rate(id)?, false),
            };
            let bits = n as f64 * point.rate_bpp;
            Ok(VarlenSeparation {
                image_id: id.to_string(),
                rate_bpp: point.rate_bpp,
                bits,
                channel_uses: bits / per_use,
                reachable,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(points: &[(f64, f64)]) -> RdCurve {
        let mut map = BTreeMap::new();
        map.insert(
            AGGREGATE_ID.to_string(),
            points
                .iter()
                .map(|&(r, p)| RdPoint {
                    rate_bpp: r,
                    psnr_db: p,
                })
                .collect(),
        );
        RdCurve::new("test", map).unwrap()
    }

    fn flat_fallback(v: f64) -> FallbackPsnrs {
        let mut map = BTreeMap::new();
        map.insert(AGGREGATE_ID.to_string(), v);
        FallbackPsnrs { map }
    }

    #[test]
    fn capacity_bits_examples() {
        assert_eq!(capacity_bits(0.0, 512.0), 512.0);
        let bits = capacity_bits(10.0, 307.0);
        // hand-computed: log2(11) = 3.4594316186..., x307 = 1062.0455069...
        assert!((bits - 1062.0455069).abs() < 1e-6, "{bits}");
        let expect = 307.0 * (11.0f64).log2();
        assert!((bits - expect).abs() < 1e-9, "{bits} vs {expect}");
        // 307 uses over n = 3072 pixels is a bandwidth ratio of ~0.1
        assert!((307.0f64 / 3072.0 - 0.1).abs() < 0.0005);
    }

    #[test]
    fn capacity_bound_knot_lookup_and_fallback() {
        let rd = curve(&[(0.5, 20.0), (1.0, 25.0), (2.0, 30.0)]);
        let fb = flat_fallback(6.0);
        // 0 dB, k = n: capacity 1 bpp lands exactly on the 1.0 knot
        let v = capacity_bound_psnr(0.0, 3072, 3072, &rd, &fb).unwrap();
        assert_eq!(v, 25.0);
        // far below the minimum rate -> fallback value
        let v = capacity_bound_psnr(-20.0, 307, 3072, &rd, &fb).unwrap();
        assert_eq!(v, 6.0);
    }

    #[test]
    fn capacity_bound_is_monotone_in_snr() {
        let rd = curve(&[(0.2, 18.0), (0.5, 22.0), (1.0, 26.0), (2.0, 31.0)]);
        let fb = flat_fallback(6.0);
        let mut prev = f64::NEG_INFINITY;
        for snr in [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0] {
            let v = capacity_bound_psnr(snr, 512, 3072, &rd, &fb).unwrap();
            assert!(v >= prev, "non-monotone at {snr}: {v} < {prev}");
            prev = v;
        }
    }

    #[test]
    fn mean_image_fallback_oracle() {
        // uniform mid-gray image: fallback reconstruction is exact
        let gray = Tensor::full(vec![4, 4, 3], 0.5f32);
        assert_eq!(fallback_psnr(&gray), f64::INFINITY);
        let rec = mean_image_reconstruction(&gray);
        assert_eq!(rec.data(), gray.data());

        // checkerboard of 0/255: mean 127.5, error 127.5 everywhere,
        // PSNR = 10 log10(255^2 / 127.5^2) = 10 log10(4)
        let mut data = vec![0f32; 4 * 4];
        for y in 0..4 {
            for x in 0..4 {
                data[y * 4 + x] = ((x + y) % 2) as f32;
            }
        }
        let checker = Tensor::new(vec![4, 4, 1], data).unwrap();
        let got = fallback_psnr(&checker);
        let expect = 10.0 * 4.0f64.log10();
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
        assert!((expect - 6.0206).abs() < 1e-3);
    }

    #[test]
    fn digital_scheme_edge_epsilons() {
        let rd = curve(&[(0.1, 15.0), (1.0 / 9.0, 18.0), (0.5, 24.0)]);
        let fb = flat_fallback(6.0);
        let mk = |fer: f64| DigitalConfig {
            code_rate: 1.0 / 3.0,
            bits_per_symbol: 2,
            fer: vec![(1.0, fer)],
        };
        // R_max = 512 * (1/3) * 2 / 3072 = 1/9 bpp, landing on the 1/9 knot
        let v0 = digital_scheme_psnr(&mk(0.0), 1.0, 512, 3072, &rd, &fb).unwrap();
        assert!((v0 - 18.0).abs() < 1e-12);
        let v1 = digital_scheme_psnr(&mk(1.0), 1.0, 512, 3072, &rd, &fb).unwrap();
        assert!((v1 - 6.0).abs() < 1e-12);
        let vhalf = digital_scheme_psnr(&mk(0.5), 1.0, 512, 3072, &rd, &fb).unwrap();
        assert!((vhalf - 12.0).abs() < 1e-12);
    }

    #[test]
    fn missing_fer_is_a_configuration_error() {
        let rd = curve(&[(0.5, 20.0)]);
        let fb = flat_fallback(6.0);
        let cfg = DigitalConfig {
            code_rate: 0.5,
            bits_per_symbol: 2,
            fer: vec![(0.0, 0.1)],
        };
        assert!(matches!(
            digital_scheme_psnr(&cfg, 3.0, 512, 3072, &rd, &fb),
            Err(BaselineError::MissingFer { .. })
        ));
    }

    #[test]
    fn envelope_examples() {
        // single config -> identity
        let single = vec![vec![10.0, 12.0, 14.0]];
        let env = envelope(&single).unwrap();
        assert_eq!(env, vec![(10.0, 0), (12.0, 0), (14.0, 0)]);

        // dominant curve wins everywhere
        let curves = vec![vec![10.0, 12.0], vec![11.0, 13.0]];
        let env = envelope(&curves).unwrap();
        assert_eq!(env, vec![(11.0, 1), (13.0, 1)]);

        // tie keeps the first configuration
        let curves = vec![vec![10.0], vec![10.0]];
        assert_eq!(envelope(&curves).unwrap(), vec![(10.0, 0)]);

        // envelope dominates every member pointwise
        let curves = vec![vec![10.0, 15.0, 12.0], vec![11.0, 14.0, 12.5]];
        let env = envelope(&curves).unwrap();
        for c in &curves {
            for (i, &(best, _)) in env.iter().enumerate() {
                assert!(best >= c[i]);
            }
        }
    }

    #[test]
    fn varlen_separation_examples() {
        let rd = curve(&[(0.25, 20.0), (0.5, 25.0), (1.0, 30.0)]);
        // target below the curve's minimum PSNR -> minimum-rate bits
        let rec = &varlen_separation_bandwidth(10.0, 0.0, &rd, 3072).unwrap()[0];
        assert_eq!(rec.rate_bpp, 0.25);
        assert!(rec.reachable);
        // snr 0 dB -> channel uses equal bits exactly (capacity 1 bit/use)
        assert_eq!(rec.channel_uses, rec.bits);
        assert_eq!(rec.bits, 3072.0 * 0.25);

        // unreachable target flags and uses the max rate
        let rec = &varlen_separation_bandwidth(40.0, 0.0, &rd, 3072).unwrap()[0];
        assert!(!rec.reachable);
        assert_eq!(rec.rate_bpp, 1.0);
    }

    #[test]
    fn rd_curve_validation_and_parsing() {
        let text = "image_id,rate_bpp,psnr_db\n*,0.5,20\n*,0.25,15\n# comment\n*,1.0,28\n";
        let rd = RdCurve::parse_csv(text, "bpg", "test.csv").unwrap();
        assert_eq!(rd.at_most(AGGREGATE_ID, 0.6).unwrap().unwrap().psnr_db, 20.0);
        assert!(rd.at_most(AGGREGATE_ID, 0.1).unwrap().is_none());

        let bad = "a,0.5,20\na,0.5,21\n";
        assert!(matches!(
            RdCurve::parse_csv(bad, "x", "bad.csv"),
            Err(BaselineError::BadCurve { .. })
        ));
        let nonmono = "a,0.5,20\na,0.6,19\n";
        assert!(matches!(
            RdCurve::parse_csv(nonmono, "x", "bad.csv"),
            Err(BaselineError::BadCurve { .. })
        ));
    }

    #[test]
    fn fer_parsing_groups_configs() {
        let text = "code_rate,bits_per_symbol,snr_db,fer\n0.5,2,0,0.9\n0.5,2,5,0.1\n0.333,4,0,1.0\n";
        let configs = parse_fer_csv(text, "fer.csv").unwrap();
        assert_eq!(configs.len(), 2);
        assert_eq!(configs[0].fer.len(), 2);
        assert_eq!(configs[0].fer_at(5.0), Some(0.1));
        assert_eq!(configs[1].bits_per_symbol, 4);
        assert!(configs[0].fer_at(3.0).is_none());
    }
}
