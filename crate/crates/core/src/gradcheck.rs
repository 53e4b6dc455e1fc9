//! Central finite-difference verification of analytic gradients.

use crate::error::{FnrError, Result};
use crate::tensor::Tensor2;

/// Floor on the relative-error denominator.
const REL_FLOOR: f64 = 1e-12;

/// Worst-case comparison for one named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub step: f64,
    pub tol: f64,
    pub max_rel_error: f64,
    /// Name and flat index of the worst entry overall.
    pub worst: Option<(String, usize)>,
    pub per_param: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }

    /// Parameters whose worst entry is at or above the tolerance.
    pub fn flagged(&self) -> Vec<&str> {
        self.per_param
            .iter()
            .filter(|p| !(p.max_rel_error < self.tol))
            .map(|p| p.name.as_str())
            .collect()
    }
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against `(f(θ+h) − f(θ−h)) / 2h` for every entry of
/// every parameter.
///
/// `loss_fn` must be deterministic; it is evaluated twice at the unperturbed
/// point first and any difference is reported as a contract error.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &[(String, Tensor2<f64>)],
    analytic: &[Tensor2<f64>],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor2<f64>]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(FnrError::Contract(format!(
            "{} parameters but {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(analytic) {
        if p.shape() != g.shape() {
            return Err(FnrError::Contract(format!(
                "gradient shape mismatch for {name}"
            )));
        }
    }
    if !(step > 0.0) {
        return Err(FnrError::Contract(format!(
            "finite-difference step {step} must be positive"
        )));
    }

    let mut work: Vec<Tensor2<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    let first = loss_fn(&work)?;
    let second = loss_fn(&work)?;
    if first.to_bits() != second.to_bits() {
        return Err(FnrError::Contract(format!(
            "loss function is not deterministic ({first} vs {second})"
        )));
    }

    let mut per_param = Vec::with_capacity(params.len());
    let mut max_rel_error = 0.0f64;
    let mut worst = None;
    for (pi, (name, _)) in params.iter().enumerate() {
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for idx in 0..work[pi].len() {
            let original = work[pi].data()[idx];
            work[pi].data_mut()[idx] = original + step;
            let plus = loss_fn(&work)?;
            work[pi].data_mut()[idx] = original - step;
            let minus = loss_fn(&work)?;
            work[pi].data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pi].data()[idx];
            let err = relative_error(a, numeric);
            if !(err <= check.max_rel_error) {
                check = ParamCheck {
                    name: name.clone(),
                    max_rel_error: err,
                    worst_index: idx,
                    analytic: a,
                    numeric,
                };
            }
        }
        if worst.is_none() || !(check.max_rel_error <= max_rel_error) {
            max_rel_error = check.max_rel_error;
            worst = Some((name.clone(), check.worst_index));
        }
        per_param.push(check);
    }

    Ok(GradCheckReport {
        step,
        tol,
        max_rel_error,
        worst,
        per_param,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(params: &[Tensor2<f64>]) -> Result<f64> {
        // 0.5 * sum(c_i * x_i^2) + sum(x_i)
        Ok(params[0]
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| 0.5 * (i as f64 + 1.0) * x * x + x)
            .sum())
    }

    fn quadratic_grad(x: &Tensor2<f64>) -> Tensor2<f64> {
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as f64 + 1.0) * v + 1.0)
            .collect();
        Tensor2::new(x.rows(), x.cols(), data).unwrap()
    }

    #[test]
    fn quadratic_is_exact_up_to_roundoff() {
        let x = Tensor2::from_rows(&[&[0.3, -1.2, 2.5], &[0.7, 0.1, -0.4]]);
        let params = vec![("x".to_string(), x.clone())];
        let report =
            finite_diff_check(quadratic, &params, &[quadratic_grad(&x)], 1e-6, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-9, "{}", report.max_rel_error);
        assert!(report.passed());
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let x = Tensor2::from_rows(&[&[0.3, -1.2]]);
        let y = Tensor2::from_rows(&[&[1.0]]);
        let params = vec![("x".to_string(), x.clone()), ("y".to_string(), y.clone())];
        let loss = |p: &[Tensor2<f64>]| Ok(quadratic(&p[..1])? + p[1].data()[0].powi(2));
        let mut bad = quadratic_grad(&x);
        bad.data_mut()[1] *= 1.1;
        let report = finite_diff_check(
            loss,
            &params,
            &[bad, Tensor2::filled(1, 1, 2.0)],
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.flagged(), vec!["x"]);
        assert_eq!(report.worst, Some(("x".to_string(), 1)));
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        let params = vec![("x".to_string(), Tensor2::zeros(1, 1))];
        let mut calls = 0.0;
        let loss = |_: &[Tensor2<f64>]| {
            calls += 1.0;
            Ok(calls)
        };
        let err =
            finite_diff_check(loss, &params, &[Tensor2::zeros(1, 1)], 1e-6, 1e-5).unwrap_err();
        assert!(matches!(err, FnrError::Contract(_)));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
