//! Central finite-difference check of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DifferentiablePolicy, GrpoError};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Perturbation applied to each parameter in turn.
    pub step: f64,
    /// Check a seeded random subset when the policy has more parameters.
    pub max_coords: usize,
    pub seed: u64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is numerically zero are judged on absolute error.
    pub rel_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, max_coords: 10_000, seed: 0, rel_floor: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_param: Option<usize>,
    pub coords_checked: usize,
}

/// Compare `loss_and_grad`'s analytic gradient with central differences
/// `(f(x + h) - f(x - h)) / 2h` coordinate by coordinate.
pub fn finite_diff_check<P, F>(
    policy: &P,
    loss_and_grad: F,
    config: &GradCheckConfig,
) -> Result<GradCheckReport, GrpoError>
where
    P: DifferentiablePolicy,
    F: Fn(&P) -> Result<(f64, Vec<f64>), GrpoError>,
{
    let (_, analytic) = loss_and_grad(policy)?;
    let n = policy.params().len();
    let coords: Vec<usize> = if n <= config.max_coords {
        (0..n).collect()
    } else {
        let mut picked = sample(&mut ChaCha8Rng::seed_from_u64(config.seed), n, config.max_coords).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut probe = policy.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, worst_param: None, coords_checked: 0 };
    for &i in &coords {
        let x = policy.params()[i];
        probe.params_mut()[i] = x + config.step;
        let (plus, _) = loss_and_grad(&probe)?;
        probe.params_mut()[i] = x - config.step;
        let (minus, _) = loss_and_grad(&probe)?;
        probe.params_mut()[i] = x;

        let numeric = (plus - minus) / (2.0 * config.step);
        let abs = (analytic[i] - numeric).abs();
        let rel = abs / analytic[i].abs().max(numeric.abs()).max(config.rel_floor);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error || report.worst_param.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst_param = Some(i);
        }
        report.coords_checked += 1;
    }
    Ok(report)
}
