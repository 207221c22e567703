//! The standard gradient-check suite: every differentiable operation the
//! pipeline uses, plus a full encoder-channel-decoder composite with frozen
//! noise, verified against central finite differences at 64-bit precision
//! over seeded random points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, sample_off_kink, AutodiffError, GradCheckReport, Tensor, FD_STEP};

/// Default probe count per operation.
pub const DEFAULT_POINTS: usize = 20;
/// Pass tolerance on the max relative error.
pub const TOLERANCE: f64 = 1e-4;

/// Worst-case report of one operation over all probe points.
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn merge(worst: Option<GradCheckReport>, next: GradCheckReport) -> GradCheckReport {
    match worst {
        None => next,
        Some(prev) if next.max_rel_error > prev.max_rel_error => next,
        Some(prev) => prev,
    }
}

fn positive_sample(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let len = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("sampled length matches shape")
}

fn check_conv_down(seed: u64, stride: usize) -> Result<GradCheckReport, AutodiffError> {
    let mut worst = None;
    for point in 0..DEFAULT_POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ point as u64);
        let x = sample_off_kink(&mut rng, vec![1, 4, 4, 2], -1.0, 1.0);
        let k = sample_off_kink(&mut rng, vec![3, 3, 2, 2], -1.0, 1.0);
        let b = sample_off_kink(&mut rng, vec![2], -0.5, 0.5);
        let shape = vec![1, 4usize.div_ceil(stride), 4usize.div_ceil(stride), 2];
        let t = sample_off_kink(&mut rng, shape, -1.0, 1.0);
        let report = grad_check(
            |g, v| {
                let y = g.conv2d_down(v[0], v[1], v[2], stride)?;
                g.mse(y, v[3])
            },
            &[x, k, b, t],
            TOLERANCE,
            FD_STEP,
        )?;
        worst = Some(merge(worst, report));
    }
    Ok(worst.expect("at least one point"))
}

fn check_conv_up(seed: u64) -> Result<GradCheckReport, AutodiffError> {
    let mut worst = None;
    for point in 0..DEFAULT_POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ point as u64);
        let x = sample_off_kink(&mut rng, vec![1, 2, 2, 2], -1.0, 1.0);
        let k = sample_off_kink(&mut rng, vec![3, 3, 3, 2], -1.0, 1.0);
        let b = sample_off_kink(&mut rng, vec![3], -0.5, 0.5);
        let t = sample_off_kink(&mut rng, vec![1, 4, 4, 3], -1.0, 1.0);
        let report = grad_check(
            |g, v| {
                let y = g.conv2d_up(v[0], v[1], v[2], 2)?;
                g.mse(y, v[3])
            },
            &[x, k, b, t],
            TOLERANCE,
            FD_STEP,
        )?;
        worst = Some(merge(worst, report));
    }
    Ok(worst.expect("at least one point"))
}

fn check_gdn(seed: u64, inverse: bool) -> Result<GradCheckReport, AutodiffError> {
    let mut worst = None;
    for point in 0..DEFAULT_POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ point as u64);
        let x = sample_off_kink(&mut rng, vec![3, 4], -0.9, 0.9);
        let beta = positive_sample(&mut rng, vec![4], 0.4, 1.5);
        let gamma = positive_sample(&mut rng, vec![4, 4], 0.01, 0.3);
        let t = sample_off_kink(&mut rng, vec![3, 4], -1.0, 1.0);
        let report = grad_check(
            |g, v| {
                let y = g.gdn(v[0], v[1], v[2], inverse)?;
                g.mse(y, v[3])
            },
            &[x, beta, gamma, t],
            TOLERANCE,
            FD_STEP,
        )?;
        worst = Some(merge(worst, report));
    }
    Ok(worst.expect("at least one point"))
}

fn check_prelu(seed: u64) -> Result<GradCheckReport, AutodiffError> {
    let mut worst = None;
    for point in 0..DEFAULT_POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ point as u64);
        // off-kink sampling keeps probes away from |x| < 1e-3
        let x = sample_off_kink(&mut rng, vec![6, 3], -1.0, 1.0);
        let slope = positive_sample(&mut rng, vec![3], 0.05, 0.6);
        let t = sample_off_kink(&mut rng, vec![6, 3], -1.0, 1.0);
        let report = grad_check(
            |g, v| {
                let y = g.prelu(v[0], v[1])?;
                g.mse(y, v[2])
            },
            &[x, slope, t],
            TOLERANCE,
            FD_STEP,
        )?;
        worst = Some(merge(worst, report));
    }
    Ok(worst.expect("at least one point"))
}

fn check_sigmoid(seed: u64) -> Result<GradCheckReport, AutodiffError> {
    let mut worst = None;
    for point in 0..DEFAULT_POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ point as u64);
        let x = sample_off_kink(&mut rng, vec![10], -3.0, 3.0);
        let t = sample_off_kink(&mut rng, vec![10], -1.0, 1.0);
        let report = grad_check(
            |g, v| {
                let y = g.sigmoid(v[0]);
                g.mse(y, v[1])
            },
            &[x, t],
            TOLERANCE,
            FD_STEP,
        )?;
        worst = Some(merge(worst, report));
    }
    Ok(worst.expect("at least one point"))
}

fn check_mse(seed: u64) -> Result<GradCheckReport, AutodiffError> {
    let mut worst = None;
    for point in 0..DEFAULT_POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ point as u64);
        let a = sample_off_kink(&mut rng, vec![7], -2.0, 2.0);
        let b = sample_off_kink(&mut rng, vec![7], -2.0, 2.0);
        let report = grad_check(|g, v| g.mse(v[0], v[1]), &[a, b], TOLERANCE, FD_STEP)?;
        worst = Some(merge(worst, report));
    }
    Ok(worst.expect("at least one point"))
}

/// Encoder -> power normalization -> frozen channel noise -> decoder -> MSE,
/// with every encoder/decoder parameter and the input image as
/// differentiable leaves. Mirrors one pipeline layer at toy size.
fn check_composite(seed: u64) -> Result<GradCheckReport, AutodiffError> {
    let mut worst = None;
    for point in 0..DEFAULT_POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ point as u64);
        let c_img = 2usize;
        let width = 3usize;
        let c_latent = 2usize;
        let x = positive_sample(&mut rng, vec![1, 8, 8, c_img], 0.05, 0.95);

        let ek1 = sample_off_kink(&mut rng, vec![3, 3, c_img, width], -0.5, 0.5);
        let eb1 = sample_off_kink(&mut rng, vec![width], -0.2, 0.2);
        let ebeta = positive_sample(&mut rng, vec![width], 0.5, 1.2);
        let egamma = positive_sample(&mut rng, vec![width, width], 0.01, 0.2);
        let eslope = positive_sample(&mut rng, vec![width], 0.1, 0.4);
        let ek2 = sample_off_kink(&mut rng, vec![3, 3, width, c_latent], -0.5, 0.5);
        let eb2 = sample_off_kink(&mut rng, vec![c_latent], -0.2, 0.2);

        let dk1 = sample_off_kink(&mut rng, vec![3, 3, width, c_latent], -0.5, 0.5);
        let db1 = sample_off_kink(&mut rng, vec![width], -0.2, 0.2);
        let dbeta = positive_sample(&mut rng, vec![width], 0.5, 1.2);
        let dgamma = positive_sample(&mut rng, vec![width, width], 0.01, 0.2);
        let dslope = positive_sample(&mut rng, vec![width], 0.1, 0.4);
        let dk2 = sample_off_kink(&mut rng, vec![3, 3, c_img, width], -0.5, 0.5);
        let db2 = sample_off_kink(&mut rng, vec![c_img], -0.2, 0.2);

        // Frozen noise: same realization for analytic and numeric passes.
        let two_k = 2 * 2 * c_latent;
        let noise = sample_off_kink(&mut rng, vec![1, two_k], -0.3, 0.3);

        let report = grad_check(
            |g, v| {
                let x = v[0];
                // encoder: conv s2 + GDN + PReLU, conv s2 linear
                let h = g.conv2d_down(x, v[1], v[2], 2)?;
                let h = g.gdn(h, v[3], v[4], false)?;
                let h = g.prelu(h, v[5])?;
                let latent = g.conv2d_down(h, v[6], v[7], 2)?;
                // channel: normalize rows, add the frozen noise
                let flat = g.reshape(latent, vec![1, two_k])?;
                let y = g.power_normalize_rows(flat)?;
                let nz = g.constant(noise.clone());
                let z = g.add(y, nz)?;
                let z_map = g.reshape(z, vec![1, 2, 2, c_latent])?;
                // decoder: conv up s2 + IGDN + PReLU, conv up s2 + sigmoid
                let d = g.conv2d_up(z_map, v[8], v[9], 2)?;
                let d = g.gdn(d, v[10], v[11], true)?;
                let d = g.prelu(d, v[12])?;
                let out = g.conv2d_up(d, v[13], v[14], 2)?;
                let out = g.sigmoid(out);
                g.mse(x, out)
            },
            &[
                x, ek1, eb1, ebeta, egamma, eslope, ek2, eb2, dk1, db1, dbeta, dgamma, dslope,
                dk2, db2,
            ],
            TOLERANCE,
            FD_STEP,
        )?;
        worst = Some(merge(worst, report));
    }
    Ok(worst.expect("at least one point"))
}

/// Runs every check of the suite at the default 20 points per operation.
pub fn standard_suite(seed: u64) -> Result<Vec<SuiteEntry>, AutodiffError> {
    Ok(vec![
        SuiteEntry {
            name: "conv2d_down_s1",
            report: check_conv_down(seed.wrapping_add(1), 1)?,
        },
        SuiteEntry {
            name: "conv2d_down_s2",
            report: check_conv_down(seed.wrapping_add(2), 2)?,
        },
        SuiteEntry {
            name: "conv2d_up_s2",
            report: check_conv_up(seed.wrapping_add(3))?,
        },
        SuiteEntry {
            name: "gdn",
            report: check_gdn(seed.wrapping_add(4), false)?,
        },
        SuiteEntry {
            name: "igdn",
            report: check_gdn(seed.wrapping_add(5), true)?,
        },
        SuiteEntry {
            name: "prelu",
            report: check_prelu(seed.wrapping_add(6))?,
        },
        SuiteEntry {
            name: "sigmoid",
            report: check_sigmoid(seed.wrapping_add(7))?,
        },
        SuiteEntry {
            name: "mse",
            report: check_mse(seed.wrapping_add(8))?,
        },
        SuiteEntry {
            name: "encoder_channel_decoder",
            report: check_composite(seed.wrapping_add(9))?,
        },
    ])
}
