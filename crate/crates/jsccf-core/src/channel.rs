//! Complex-baseband forward and feedback channel simulation.
//!
//! Signals are unit-average-power complex vectors; the forward channel is
//! AWGN (`z = y + n`) or slow Rayleigh fading (`z = h y + n` with one gain
//! per image), the feedback channel returns the receiver's observation
//! either bit-exactly (noiseless) or through an independent AWGN link.
//!
//! Noise convention: a channel at SNR `s` dB adds circularly symmetric
//! complex Gaussian noise of total variance `sigma^2 = 10^(-s/10)` per
//! complex symbol, i.e. `sigma^2 / 2` per real component. `f64::INFINITY`
//! is the noiseless sentinel and bypasses sampling entirely.

use num_complex::Complex64;
use rand::Rng;

use crate::seeds::standard_normal_pair;

/// Tolerance on the unit average-power invariant of transmitted signals.
pub const POWER_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ChannelError {
    #[error("pack_complex requires an even-length real vector, got {0}")]
    OddLength(usize),
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),
    #[error("signal violates the unit average-power constraint: |power - 1| = {deviation:e}")]
    PowerViolation { deviation: f64 },
}

/// A vector of complex channel symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSignal {
    symbols: Vec<Complex64>,
}

impl ComplexSignal {
    pub fn from_symbols(symbols: Vec<Complex64>) -> Self {
        Self { symbols }
    }

    /// Number of channel uses.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[Complex64] {
        &self.symbols
    }

    /// Average power per symbol, `(1/k) sum |y_i|^2`.
    pub fn average_power(&self) -> f64 {
        if self.symbols.is_empty() {
            return 0.0;
        }
        self.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.symbols.len() as f64
    }
}

/// Forward channel family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardKind {
    Awgn,
    RayleighSlow,
}

/// Feedback channel family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FeedbackKind {
    /// Exact bypass: the transmitter observes the channel output bit-exactly.
    Noiseless,
    /// Independent AWGN link at the given SNR (dB, channel-input referred).
    Awgn { snr_db: f64 },
}

/// Full channel description for a run.
#[derive(Clone, Debug)]
pub struct ChannelConfig {
    pub forward_kind: ForwardKind,
    pub forward_snr_db: f64,
    pub feedback: FeedbackKind,
    /// Variance of the complex fading gain (Rayleigh only).
    pub fading_variance: f64,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn awgn(snr_db: f64, seed: u64) -> Self {
        Self {
            forward_kind: ForwardKind::Awgn,
            forward_snr_db: snr_db,
            feedback: FeedbackKind::Noiseless,
            fading_variance: 1.0,
            seed,
        }
    }

    pub fn with_feedback(mut self, feedback: FeedbackKind) -> Self {
        self.feedback = feedback;
        self
    }

    pub fn rayleigh(snr_db: f64, fading_variance: f64, seed: u64) -> Self {
        Self {
            forward_kind: ForwardKind::RayleighSlow,
            forward_snr_db: snr_db,
            feedback: FeedbackKind::Noiseless,
            fading_variance,
            seed,
        }
    }
}

/// Per-image channel realization. Under slow fading the gain is drawn once
/// and reused for every layer of that image.
#[derive(Clone, Copy, Debug)]
pub struct ChannelDraw {
    pub h: Complex64,
}

impl ChannelDraw {
    pub fn unit() -> Self {
        Self {
            h: Complex64::new(1.0, 0.0),
        }
    }

    /// Draws `h ~ CN(0, variance)`.
    pub fn rayleigh<R: Rng>(rng: &mut R, variance: f64) -> Self {
        let sigma = (variance / 2.0).sqrt();
        let (a, b) = standard_normal_pair(rng);
        Self {
            h: Complex64::new(a * sigma, b * sigma),
        }
    }
}

/// Noise variance per complex symbol for an SNR in dB (unit signal power).
pub fn snr_to_sigma2(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Packs an even-length real vector into complex symbols: consecutive pairs
/// `(r[2i], r[2i+1])` become `r[2i] + j r[2i+1]`.
pub fn pack_complex(reals: &[f64]) -> Result<ComplexSignal, ChannelError> {
    if reals.len() % 2 != 0 {
        return Err(ChannelError::OddLength(reals.len()));
    }
    Ok(ComplexSignal {
        symbols: reals
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect(),
    })
}

/// Exact inverse of [`pack_complex`].
pub fn unpack_complex(signal: &ComplexSignal) -> Vec<f64> {
    let mut out = Vec::with_capacity(signal.len() * 2);
    for s in &signal.symbols {
        out.push(s.re);
        out.push(s.im);
    }
    out
}

/// Scales a signal to exact unit average symbol power:
/// `y = sqrt(k) * y_tilde / ||y_tilde||`.
pub fn power_normalize(signal: &ComplexSignal) -> Result<ComplexSignal, ChannelError> {
    let k = signal.len();
    let norm_sq: f64 = signal.symbols.iter().map(|s| s.norm_sqr()).sum();
    if k == 0 || norm_sq == 0.0 {
        return Err(ChannelError::DegenerateSignal(
            "cannot normalize an all-zero signal".into(),
        ));
    }
    let factor = (k as f64 / norm_sq).sqrt();
    Ok(ComplexSignal {
        symbols: signal.symbols.iter().map(|s| s * factor).collect(),
    })
}

fn check_power(signal: &ComplexSignal) -> Result<(), ChannelError> {
    let deviation = (signal.average_power() - 1.0).abs();
    if deviation > POWER_TOLERANCE {
        return Err(ChannelError::PowerViolation { deviation });
    }
    Ok(())
}

fn add_noise<R: Rng>(signal: &ComplexSignal, sigma2: f64, rng: &mut R) -> ComplexSignal {
    let sigma = (sigma2 / 2.0).sqrt();
    ComplexSignal {
        symbols: signal
            .symbols
            .iter()
            .map(|s| {
                let (a, b) = standard_normal_pair(rng);
                s + Complex64::new(a * sigma, b * sigma)
            })
            .collect(),
    }
}

/// AWGN forward transmission `z = y + n`. The input must satisfy the unit
/// average-power constraint; `snr_db = inf` bypasses sampling and returns
/// the input bit-exactly.
pub fn awgn_transmit<R: Rng>(
    y: &ComplexSignal,
    snr_db: f64,
    rng: &mut R,
) -> Result<ComplexSignal, ChannelError> {
    check_power(y)?;
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(y.clone());
    }
    Ok(add_noise(y, snr_to_sigma2(snr_db), rng))
}

/// Slow-fading forward transmission `z = h y + n` with the gain from a
/// per-image [`ChannelDraw`]. The receiver is never given `h`.
pub fn rayleigh_transmit<R: Rng>(
    y: &ComplexSignal,
    draw: &ChannelDraw,
    snr_db: f64,
    rng: &mut R,
) -> Result<ComplexSignal, ChannelError> {
    check_power(y)?;
    let faded = ComplexSignal {
        symbols: y.symbols.iter().map(|s| s * draw.h).collect(),
    };
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(faded);
    }
    Ok(add_noise(&faded, snr_to_sigma2(snr_db), rng))
}

/// Feedback transmission. Noiseless feedback is an exact bypass (no
/// zero-variance sampling), otherwise `w = z + n_f` over an independent
/// AWGN link.
pub fn feedback_transmit<R: Rng>(
    z: &ComplexSignal,
    feedback: FeedbackKind,
    rng: &mut R,
) -> ComplexSignal {
    match feedback {
        FeedbackKind::Noiseless => z.clone(),
        FeedbackKind::Awgn { snr_db } => {
            if snr_db.is_infinite() && snr_db > 0.0 {
                z.clone()
            } else {
                add_noise(z, snr_to_sigma2(snr_db), rng)
            }
        }
    }
}
