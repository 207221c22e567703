//! Finite-difference verification of reverse-mode gradients.
//!
//! The checker rebuilds the graph for every probe, so the function under test
//! must be a pure closure over its leaf tensors. Comparisons run at 64-bit
//! with central differences.

use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use super::AutodiffError;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, element index) of the worst component.
    pub worst: (usize, usize),
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Relative error with a small absolute floor so that near-zero gradient
/// pairs do not blow up on finite-difference noise.
fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares the reverse-mode gradient of a scalar-valued function against
/// central finite differences, component by component over every input.
///
/// `build` receives one leaf [`Var`] per entry of `inputs` and must return a
/// scalar loss.
pub fn grad_check<F>(
    build: F,
    inputs: &[Tensor<f64>],
    tolerance: f64,
    fd_step: f64,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |points: &[Tensor<f64>], with_grad: bool| -> Result<
        (f64, Vec<Option<Tensor<f64>>>),
        AutodiffError,
    > {
        let mut graph = Graph::new();
        let vars: Vec<Var> = points
            .iter()
            .map(|t| {
                if with_grad {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        let loss = build(&mut graph, &vars)?;
        if graph.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: graph.value(loss).shape().to_vec(),
            });
        }
        let value = graph.value(loss).item();
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite {
                context: "grad_check loss".into(),
            });
        }
        let grads = if with_grad {
            graph.backward(loss)?;
            vars.iter().map(|&v| graph.grad(v).cloned()).collect()
        } else {
            Vec::new()
        };
        Ok((value, grads))
    };

    let (_, grads) = eval(inputs, true)?;
    for g in grads.iter().flatten() {
        if !g.all_finite() {
            return Err(AutodiffError::NonFinite {
                context: "grad_check analytic gradient".into(),
            });
        }
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        tolerance,
    };

    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.len() {
            let base = input.data()[e];
            probe[i].data_mut()[e] = base + fd_step;
            let (plus, _) = eval(&probe, false)?;
            probe[i].data_mut()[e] = base - fd_step;
            let (minus, _) = eval(&probe, false)?;
            probe[i].data_mut()[e] = base;

            let numeric = (plus - minus) / (2.0 * fd_step);
            let analytic = grads[i].as_ref().map_or(0.0, |g| g.data()[e]);
            let err = rel_error(analytic, numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (i, e);
                report.analytic_at_worst = analytic;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

/// Uniform sample in `(lo, hi)` that resamples any component with magnitude
/// below 1e-3, keeping probes away from the PReLU kink.
pub fn sample_off_kink<R: Rng>(rng: &mut R, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len)
        .map(|_| loop {
            let v = rng.random_range(lo..hi);
            if v.abs() >= 1e-3 {
                break v;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("sampled length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_op_checks_at_machine_precision_scale() {
        let x = Tensor::new(vec![3], vec![0.3, -0.8, 1.4]).unwrap();
        let report = grad_check(
            |g, vars| {
                let scaled = g.scale(vars[0], 2.5);
                let target = g.constant(Tensor::zeros(vec![3]));
                g.mse(scaled, target)
            },
            &[x],
            1e-4,
            FD_STEP,
        )
        .unwrap();
        assert!(report.pass());
        assert!(report.max_rel_error < 1e-7, "{}", report.max_rel_error);
    }

    #[test]
    fn conv_down_random_4x4_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = sample_off_kink(&mut rng, vec![1, 4, 4, 2], -1.0, 1.0);
        let k = sample_off_kink(&mut rng, vec![3, 3, 2, 2], -1.0, 1.0);
        let b = sample_off_kink(&mut rng, vec![2], -0.5, 0.5);
        let t = sample_off_kink(&mut rng, vec![1, 4, 4, 2], -1.0, 1.0);
        let report = grad_check(
            |g, vars| {
                let y = g.conv2d_down(vars[0], vars[1], vars[2], 1)?;
                g.mse(y, vars[3])
            },
            &[x, k, b, t],
            1e-4,
            FD_STEP,
        )
        .unwrap();
        assert!(report.pass(), "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn sigmoid_mse_composite_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = sample_off_kink(&mut rng, vec![8], -2.0, 2.0);
        let t = sample_off_kink(&mut rng, vec![8], -1.0, 1.0);
        let report = grad_check(
            |g, vars| {
                let s = g.sigmoid(vars[0]);
                g.mse(s, vars[1])
            },
            &[x, t],
            1e-4,
            FD_STEP,
        )
        .unwrap();
        assert!(report.pass(), "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn gdn_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = sample_off_kink(&mut rng, vec![3, 4], -0.8, 0.8);
        let beta = Tensor::new(vec![4], vec![0.7, 1.1, 0.9, 1.3]).unwrap();
        let gamma = sample_off_kink(&mut rng, vec![4, 4], 0.01, 0.3);
        let t = sample_off_kink(&mut rng, vec![3, 4], -1.0, 1.0);
        for inverse in [false, true] {
            let report = grad_check(
                |g, vars| {
                    let y = g.gdn(vars[0], vars[1], vars[2], inverse)?;
                    g.mse(y, vars[3])
                },
                &[x.clone(), beta.clone(), gamma.clone(), t.clone()],
                1e-4,
                FD_STEP,
            )
            .unwrap();
            assert!(
                report.pass(),
                "inverse={inverse} max rel error {}",
                report.max_rel_error
            );
        }
    }

    #[test]
    fn non_finite_inputs_fail_with_diagnostic() {
        let x = Tensor::new(vec![1], vec![f64::NAN]).unwrap();
        let err = grad_check(
            |g, vars| {
                let t = g.constant(Tensor::zeros(vec![1]));
                g.mse(vars[0], t)
            },
            &[x],
            1e-4,
            FD_STEP,
        )
        .unwrap_err();
        assert!(matches!(err, AutodiffError::NonFinite { .. }));
    }
}
