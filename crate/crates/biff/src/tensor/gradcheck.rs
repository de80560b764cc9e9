//! Central finite-difference verification of tape gradients.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamSet, Tape, TensorError, TensorId};

/// Outcome of one finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} ({} elements, max rel err {:.3e}, tol {:.0e}{})",
            if self.passed() { "ok" } else { "FAIL" },
            self.checked,
            self.max_rel_err,
            self.tol,
            if self.passed() {
                String::new()
            } else {
                format!(", worst {}[{}]", self.worst_param, self.worst_index)
            }
        )
    }
}

/// Compare analytic parameter gradients of a scalar loss against central
/// finite differences with step `h`.
///
/// `build` must construct the loss deterministically from the current
/// parameter values. When `max_elems_per_param` is set, a seeded subsample of
/// each parameter's elements is perturbed instead of all of them.
pub fn check_backward_vs_fd<F>(
    set: &mut ParamSet,
    mut build: F,
    h: f64,
    tol: f64,
    max_elems_per_param: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&ParamSet, &mut Tape) -> Result<TensorId, TensorError>,
{
    let analytic = {
        let mut tape = Tape::new();
        let loss = build(set, &mut tape)?;
        tape.param_grads(loss, set)?
    };

    let eval = |set: &ParamSet, build: &mut F| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let loss = build(set, &mut tape)?;
        Ok(tape.data(loss)[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        checked: 0,
        failures: 0,
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        tol,
    };

    for idx in 0..set.len() {
        let pid = super::ParamId(idx);
        let n = set.get(pid).numel();
        let elems: Vec<usize> = match max_elems_per_param {
            Some(m) if m < n => {
                let mut picks: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n)).collect();
                picks.sort_unstable();
                picks.dedup();
                picks
            }
            _ => (0..n).collect(),
        };
        for i in elems {
            let orig = set.get(pid).value.data()[i];
            set.value_data_mut(pid)[i] = orig + h;
            let lp = eval(set, &mut build)?;
            set.value_data_mut(pid)[i] = orig - h;
            let lm = eval(set, &mut build)?;
            set.value_data_mut(pid)[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic.get(pid)[i];
            let diff = (a - numeric).abs();
            // absolute floor covers finite-difference roundoff near zero
            let rel = if diff <= 1e-8 { 0.0 } else { diff / a.abs().max(numeric.abs()) };
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = set.get(pid).name.clone();
                report.worst_index = i;
            }
            if rel >= tol {
                report.failures += 1;
            }
        }
    }
    Ok(report)
}

/// Fill a tensor-shaped buffer with uniform values in [-scale, scale].
pub fn random_data(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}
