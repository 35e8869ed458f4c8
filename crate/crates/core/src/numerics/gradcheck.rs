//! Central-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Additive term in the relative-error denominator `|g| + eps`.
pub const REL_EPS: f64 = 1e-3;

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub h: f64,
    pub eps: f64,
    /// Probe at most this many coordinates of each input (all when `None`).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            h: 1e-5,
            eps: REL_EPS,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckReport {
    pub max_rel_error: f64,
    pub coords: usize,
}

/// Largest `|numeric - autodiff| / (|autodiff| + eps)` over all coordinates
/// of `point`, for a scalar function built on a 64-bit tape.
pub fn finite_difference_check<Fun>(f: Fun, point: &Tensor<f64>, h: f64) -> Result<f64>
where
    Fun: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let opts = CheckOptions {
        h,
        ..CheckOptions::default()
    };
    let report = check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(point), opts)?;
    Ok(report.max_rel_error)
}

/// Multi-input version of [`finite_difference_check`].
pub fn check_many<Fun>(f: Fun, points: &[Tensor<f64>], opts: CheckOptions) -> Result<CheckReport>
where
    Fun: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(opts.h > 0.0) {
        return Err(Error::Argument(format!("step size must be positive, got {}", opts.h)));
    }
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).data()[0];
        if !v.is_finite() {
            return Err(Error::Divergence(format!("function value {v} at probe point")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).data()[0].is_finite() {
        return Err(Error::Divergence("non-finite function value".into()));
    }
    let grads = tape.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor<f64>> = points.to_vec();
    let mut worst = 0.0f64;
    let mut coords = 0;
    for (i, var) in vars.iter().enumerate() {
        let n = points[i].len();
        let zero = Tensor::zeros(points[i].shape());
        let analytic = grads.get(*var).unwrap_or(&zero);
        let idx: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for j in idx {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + opts.h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - opts.h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * opts.h);
            let g = analytic.data()[j];
            let rel = (numeric - g).abs() / (g.abs() + opts.eps);
            worst = worst.max(rel);
            coords += 1;
        }
    }
    Ok(CheckReport {
        max_rel_error: worst,
        coords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn sum_of_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f64>::uniform(&[8], -2.0, 2.0, &mut rng);
        let err = finite_difference_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                Ok(t.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_f64(&[3], &[1., 2., 3.]).unwrap());
        let c = tape.constant(Tensor::from_f64(&[3], &[4., 5., 6.]).unwrap());
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).is_none_or(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn divergent_function_is_reported() {
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let r = finite_difference_check(
            |t, x| {
                let s = t.sum(x);
                Ok(t.scale(s, f64::INFINITY))
            },
            &x,
            1e-5,
        );
        assert!(matches!(r, Err(Error::Divergence(_))));
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::from_f64(&[1], &[1.0]).unwrap();
        assert!(finite_difference_check(|t, x| Ok(t.sum(x)), &x, 0.0).is_err());
    }
}
