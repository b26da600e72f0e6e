use super::{Gradients, NumericsError, ParamStore};

/// Relative errors are measured against `max(|analytic|, |numeric|, FLOOR)`
/// so that coordinates with vanishing gradient are compared absolutely.
const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Largest relative error per parameter, in store order.
    pub per_param: Vec<(String, f64)>,
    pub checked: usize,
    pub failures: Vec<CoordinateFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compare the tape gradient of `f` with central finite differences over
/// every coordinate of every trainable parameter.
///
/// `f` must be deterministic: dropout off, fixed seed.
pub fn grad_check<F>(
    params: &ParamStore,
    f: F,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&ParamStore) -> Result<(f64, Gradients), NumericsError>,
{
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(NumericsError::InvalidArgument(format!(
            "epsilon {epsilon} outside [1e-6, 1e-3]"
        )));
    }
    let (loss, grads) = f(params)?;
    if !loss.is_finite() {
        return Err(NumericsError::NonFinite(format!("loss at base point: {loss}")));
    }

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_param: Vec::new(),
        checked: 0,
        failures: Vec::new(),
    };
    for (id, param) in params.iter() {
        if !param.trainable {
            continue;
        }
        let len = param.tensor.len();
        let cols = param.tensor.shape().last().copied().unwrap_or(1);
        let analytic = grads.dense(id, len, cols);
        let mut worst = 0.0f64;
        for k in 0..len {
            let original = param.tensor.values()[k];
            probe.get_mut(id).tensor.values_mut()[k] = original + epsilon;
            let (up, _) = f(&probe)?;
            probe.get_mut(id).tensor.values_mut()[k] = original - epsilon;
            let (down, _) = f(&probe)?;
            probe.get_mut(id).tensor.values_mut()[k] = original;
            if !up.is_finite() || !down.is_finite() {
                return Err(NumericsError::NonFinite(format!(
                    "loss while perturbing {}[{k}]",
                    param.name
                )));
            }
            let numeric = (up - down) / (2.0 * epsilon);
            let denom = analytic[k].abs().max(numeric.abs()).max(FLOOR);
            let rel = (analytic[k] - numeric).abs() / denom;
            worst = worst.max(rel);
            report.checked += 1;
            if rel > tolerance {
                report.failures.push(CoordinateFailure {
                    param: param.name.clone(),
                    index: k,
                    analytic: analytic[k],
                    numeric,
                    rel_error: rel,
                });
            }
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_param.push((param.name.clone(), worst));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Tape, Tensor};

    fn quadratic(store: &ParamStore) -> Result<(f64, Gradients), NumericsError> {
        let mut tape = Tape::new(store);
        let w = tape.param(store.id("w").unwrap())?;
        let sq = tape.matmul_nt(w, w)?;
        Ok((tape.scalar(sq), tape.backward(sq)?))
    }

    #[test]
    fn quadratic_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row(vec![1.0, 2.0]));
        let (_, g) = quadratic(&store).unwrap();
        assert_eq!(g.dense(w, 2, 2), vec![2.0, 4.0]);
        let report = grad_check(&store, quadratic, 1e-5, 1e-8).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.max_rel_error < 1e-8);
        assert_eq!(report.checked, 2);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row(vec![0.3, -0.7, 1.1]));
        let f = |s: &ParamStore| {
            let mut tape = Tape::new(s);
            let w = tape.param(s.id("w").unwrap())?;
            let zero = tape.constant_row(vec![0.0; 3]);
            let z = tape.matmul_nt(w, zero)?;
            let c = tape.constant_row(vec![4.0]);
            let out = tape.add(z, c)?;
            Ok((tape.scalar(out), tape.backward(out)?))
        };
        let report = grad_check(&store, f, 1e-4, 1e-8).unwrap();
        assert!(report.passed());
        assert!(report.max_rel_error <= 1e-8 / FLOOR);
    }

    #[test]
    fn rejects_bad_epsilon_and_non_finite() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row(vec![1.0]));
        assert!(grad_check(&store, quadratic, 1e-2, 1e-6).is_err());
        let bad = |_: &ParamStore| Ok((f64::NAN, Gradients::new(1)));
        assert!(matches!(
            grad_check(&store, bad, 1e-5, 1e-6),
            Err(NumericsError::NonFinite(_))
        ));
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row(vec![1.0, 2.0]));
        let wrong = |s: &ParamStore| {
            let (l, _) = quadratic(s)?;
            let mut g = Gradients::new(1);
            g.add_dense(w, &[1.0, 1.0]);
            Ok((l, g))
        };
        let report = grad_check(&store, wrong, 1e-5, 1e-6).unwrap();
        assert_eq!(report.failures.len(), 2);
    }
}
