//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::array::Array;
use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Denominator floor of the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Combine steps `h` and `h/2` (Richardson), cancelling the `h^2` truncation term.
    pub richardson: bool,
    /// Coordinates sampled per parameter tensor; tensors at or below this size are checked fully.
    pub coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-3, richardson: true, coords_per_param: 32, seed: 0 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// (parameter index, flat coordinate, analytic, numeric) at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares tape gradients of `f` against central differences.
///
/// `f` builds a scalar loss from parameter leaves on a fresh graph; it is
/// evaluated once with backward, then repeatedly (forward only) at perturbed points.
pub fn finite_difference_check<T, F>(f: F, params: &[Array<T>], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Array<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let root = f(&mut g, &vars)?;
        let v = g.value(root).item().ok_or_else(|| Error::NonScalarRoot(g.value(root).shape().to_vec()))?;
        let v = v.to_f64_lossy();
        if !v.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let root = f(&mut g, &vars)?;
    if !g.value(root).item().is_some_and(|v| v.is_finite()) {
        return Err(Error::NonFiniteObjective);
    }
    g.backward(root)?;
    let analytic: Vec<Array<T>> = vars.iter().map(|&v| g.grad_array(v)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let mut work: Vec<Array<T>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let coords: Vec<usize> = if p.len() <= opts.coords_per_param {
            (0..p.len()).collect()
        } else {
            let mut c = sample(&mut rng, p.len(), opts.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for c in coords {
            let orig = p.data()[c];
            let mut central = |h: f64| -> Result<f64> {
                work[pi].data_mut()[c] = orig + T::of(h);
                let up = eval(&work)?;
                work[pi].data_mut()[c] = orig - T::of(h);
                let down = eval(&work)?;
                work[pi].data_mut()[c] = orig;
                Ok((up - down) / (2.0 * h))
            };
            let numeric = if opts.richardson {
                let coarse = central(opts.step)?;
                let fine = central(opts.step / 2.0)?;
                (4.0 * fine - coarse) / 3.0
            } else {
                central(opts.step)?
            };
            let a = analytic[pi].data()[c].to_f64_lossy();
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((pi, c, a, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let params = vec![Array::from_vec(vec![3.0f64])];
        let rep = finite_difference_check(
            |g, v| {
                let sq = g.mul(v[0], v[0]);
                Ok(g.sum(sq))
            },
            &params,
            &GradCheckOptions { richardson: false, ..Default::default() },
        )
        .unwrap();
        let (_, _, a, n) = rep.worst.unwrap();
        assert_eq!(a, 6.0);
        assert!((n - 6.0).abs() < 1e-6);
        assert!(rep.max_rel_error < 1e-4);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let params = vec![Array::from_vec(vec![1.0f64])];
        let r = finite_difference_check(|g, v| Ok(g.scale(v[0], f64::INFINITY)), &params, &Default::default());
        assert!(r.is_err());
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-7, 0.0) - 0.1).abs() < 1e-12);
    }
}
