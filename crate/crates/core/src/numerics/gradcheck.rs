//! Central finite-difference verification of analytic gradients.

use rand::Rng;

use super::graph::{Graph, Var};
use super::matrix::Matrix;
use super::param::Parameters;
use crate::error::{Error, Result};

/// Denominator floor for relative errors, so entries whose true gradient is
/// ~0 are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    pub max_relative_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, rtol: f64) -> bool {
        self.max_relative_error < rtol
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Full central-difference gradient of `f` at `at`.
pub fn finite_difference(f: &dyn Fn(&Matrix) -> f64, at: &Matrix, eps: f64) -> Matrix {
    let mut x = at.clone();
    let mut out = Matrix::zeros(at.rows(), at.cols());
    for i in 0..at.len() {
        let orig = x.as_slice()[i];
        x.as_mut_slice()[i] = orig + eps;
        let plus = f(&x);
        x.as_mut_slice()[i] = orig - eps;
        let minus = f(&x);
        x.as_mut_slice()[i] = orig;
        out.as_mut_slice()[i] = (plus - minus) / (2.0 * eps);
    }
    out
}

/// Compares analytic gradients of `loss_fn` against central differences on
/// `probe_count` randomly chosen scalar parameters of `model`.
///
/// `loss_fn` must be deterministic: any randomness it uses (dropout, noise)
/// has to be reseeded on every call. A loss that evaluates differently twice
/// at the same point is rejected.
pub fn grad_check<M, F, R>(
    model: &mut M,
    mut loss_fn: F,
    probe_count: usize,
    eps: f64,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    M: Parameters,
    F: FnMut(&M, &mut Graph) -> Result<Var>,
    R: Rng + ?Sized,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::param(format!("finite-difference eps must lie in [1e-6, 1e-3], got {eps}")));
    }
    fn eval<M, F: FnMut(&M, &mut Graph) -> Result<Var>>(f: &mut F, m: &M) -> Result<f64> {
        let mut g = Graph::new();
        let loss = f(m, &mut g)?;
        Ok(g.scalar(loss))
    }

    let base = eval(&mut loss_fn, model)?;
    let again = eval(&mut loss_fn, model)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Verification(format!(
            "loss is not deterministic: {base} then {again}"
        )));
    }

    model.zero_grad();
    {
        let mut g = Graph::new();
        let loss = loss_fn(model, &mut g)?;
        g.backward(loss)?;
        g.accumulate_into(model.params_mut());
    }
    let analytic: Vec<Matrix> = model.params().iter().map(|p| p.grad_or_zeros()).collect();
    model.zero_grad();

    let sizes: Vec<usize> = model.params().iter().map(|p| p.value.len()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Ok(GradCheckReport::default());
    }

    let mut report = GradCheckReport::default();
    for _ in 0..probe_count {
        let mut flat = rng.random_range(0..total);
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let orig = model.params()[which].value.as_slice()[flat];
        model.params_mut()[which].value.as_mut_slice()[flat] = orig + eps;
        let plus = eval(&mut loss_fn, model)?;
        model.params_mut()[which].value.as_mut_slice()[flat] = orig - eps;
        let minus = eval(&mut loss_fn, model)?;
        model.params_mut()[which].value.as_mut_slice()[flat] = orig;

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[which].as_slice()[flat];
        let rel = relative_error(a, numeric);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.probes.push(Probe {
            param: model.params()[which].name().to_owned(),
            index: flat,
            analytic: a,
            numeric,
            relative_error: rel,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::param::Param;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_loss_gradient_is_the_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = vec![Param::new("w", Matrix::randn(3, 4, 1.0, &mut rng))];
        let report = grad_check(
            &mut params,
            |p, g| {
                let w = g.param(&p[0]);
                let sq = g.hadamard(w, w)?;
                let s = g.sum(sq);
                Ok(g.scale(s, 0.5))
            },
            12,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(report.passes(1e-6), "{:?}", report.worst());
        for probe in &report.probes {
            let w = params[0].value.as_slice()[probe.index];
            assert!((probe.analytic - w).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = vec![Param::new("w", Matrix::randn(2, 2, 1.0, &mut rng))];
        let report = grad_check(
            &mut params,
            |_, g| Ok(g.constant(Matrix::scalar(3.5))),
            8,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(report.probes.iter().all(|p| p.analytic == 0.0 && p.numeric == 0.0));
    }

    #[test]
    fn nondeterministic_loss_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = vec![Param::new("w", Matrix::zeros(1, 1))];
        let mut calls = 0.0;
        let err = grad_check(
            &mut params,
            |_, g| {
                calls += 1.0;
                Ok(g.constant(Matrix::scalar(calls)))
            },
            1,
            1e-5,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Verification(_)));
    }

    #[test]
    fn eps_out_of_range_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = vec![Param::new("w", Matrix::zeros(1, 1))];
        let r = grad_check(&mut params, |p, g| Ok(g.param(&p[0])), 1, 1e-2, &mut rng);
        assert!(matches!(r, Err(Error::Parameter(_))));
    }
}
