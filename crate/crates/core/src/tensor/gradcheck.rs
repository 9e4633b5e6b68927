//! Central-difference verification of taped gradients (64-bit only).

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Which coordinates to probe.
#[derive(Clone, Debug)]
pub enum Coordinates {
    All,
    /// About `count` coordinates drawn without replacement, spread over the
    /// inputs in proportion to their size (at least two per input).
    Sample {
        count: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub coordinates: Coordinates,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            coordinates: Coordinates::All,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct InputReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a relu kink.
    pub kinks: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub per_input: Vec<InputReport>,
}

impl GradCheckReport {
    pub fn excluded(&self) -> usize {
        self.per_input.iter().map(|r| r.kinks.len()).sum()
    }
}

struct Eval {
    loss: f64,
    relu: Vec<i8>,
}

fn evaluate<Fun>(inputs: &[Tensor<f64>], f: &Fun) -> Result<Eval>
where
    Fun: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t)).collect();
    let out = f(&mut tape, &vars)?;
    Ok(Eval {
        loss: tape.item(out),
        relu: tape.relu_pattern(),
    })
}

/// Compares the taped gradient of the scalar `f(inputs)` against central
/// differences `(f(x+eps·e_i) - f(x-eps·e_i)) / (2·eps)`.
///
/// The per-coordinate error is `|a - b| / max(|a|, |b|, 1e-8)`. Coordinates
/// whose perturbation changes the sign of any relu input (including moving an
/// input off exactly zero) are reported as kinks and left out of the maximum.
pub fn grad_check<Fun>(inputs: &[Tensor<f64>], f: Fun, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    Fun: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let loss = f(&mut tape, &vars)?;
    let base_loss = tape.item(loss);
    let base_relu = tape.relu_pattern();
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("parameters receive gradients"))
        .collect();

    let again = evaluate(inputs, &f)?;
    if again.loss.to_bits() != base_loss.to_bits() || again.relu != base_relu {
        return Err(Error::UnreliableCheck(format!(
            "function is not deterministic: {base_loss} then {}",
            again.loss
        )));
    }

    let picks = pick_coordinates(inputs, &opts.coordinates);
    let mut per_input = vec![InputReport::default(); inputs.len()];
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, coords) in picks.iter().enumerate() {
        let report = &mut per_input[which];
        for &i in coords {
            let orig = work[which].data()[i];
            work[which].data_mut()[i] = orig + opts.eps;
            let plus = evaluate(&work, &f)?;
            work[which].data_mut()[i] = orig - opts.eps;
            let minus = evaluate(&work, &f)?;
            work[which].data_mut()[i] = orig;

            if plus.relu != base_relu || minus.relu != base_relu {
                report.kinks.push(i);
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * opts.eps);
            let a = analytic[which].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }

    Ok(GradCheckReport {
        max_rel_error: per_input.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
        checked: per_input.iter().map(|r| r.checked).sum(),
        per_input,
    })
}

fn pick_coordinates(inputs: &[Tensor<f64>], how: &Coordinates) -> Vec<Vec<usize>> {
    match *how {
        Coordinates::All => inputs.iter().map(|t| (0..t.len()).collect()).collect(),
        Coordinates::Sample { count, seed } => {
            let total: usize = inputs.iter().map(Tensor::len).sum();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            inputs
                .iter()
                .map(|t| {
                    let share = (count as f64 * t.len() as f64 / total as f64).ceil() as usize;
                    let take = share.max(2).min(t.len());
                    let mut idx = index::sample(&mut rng, t.len(), take).into_vec();
                    idx.sort_unstable();
                    idx
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Tensor::from_f64(&[5], &[0.3, -1.2, 2.5, 0.0, 7.0]).unwrap();
        let report = grad_check(
            &[x],
            |tape, v| {
                let sq = tape.mul(v[0], v[0])?;
                Ok(tape.sum(sq))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.checked, 5);
        assert!(report.max_rel_error < 1e-8, "{}", report.max_rel_error);
    }

    #[test]
    fn relu_kink_is_excluded() {
        let x = Tensor::from_f64(&[3], &[1.0, 0.0, -2.0]).unwrap();
        let report = grad_check(
            &[x],
            |tape, v| {
                let r = tape.relu(v[0]);
                Ok(tape.sum(r))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.per_input[0].kinks, vec![1]);
        assert_eq!(report.checked, 2);
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        let calls = Cell::new(0u32);
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let err = grad_check(
            &[x],
            |tape, v| {
                calls.set(calls.get() + 1);
                let s = tape.sum(v[0]);
                let c = f64::from(calls.get());
                Ok(tape.scale(s, c))
            },
            &GradCheckOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnreliableCheck(_)));
    }

    #[test]
    fn sampling_is_deterministic_and_covers_every_input() {
        let inputs = vec![Tensor::<f64>::zeros(&[100]), Tensor::zeros(&[3])];
        let how = Coordinates::Sample { count: 20, seed: 9 };
        let a = pick_coordinates(&inputs, &how);
        assert_eq!(a, pick_coordinates(&inputs, &how));
        assert!(a[0].len() >= 19);
        assert_eq!(a[1].len(), 2);
    }

    #[test]
    fn composite_ops_pass() {
        // softmax -> layer_norm -> tanh -> sigmoid -> mean over a broadcast product.
        let x = Tensor::from_f64(&[2, 3, 4], &(0..24).map(|i| (i as f64 * 0.7).sin()).collect::<Vec<_>>()).unwrap();
        let g = Tensor::from_f64(&[4], &[1.1, 0.9, -0.5, 2.0]).unwrap();
        let b = Tensor::from_f64(&[4], &[0.1, 0.2, 0.3, -0.4]).unwrap();
        let w = Tensor::from_f64(&[2, 1, 4], &[0.5, -1.0, 2.0, 0.3, 1.5, 0.2, -0.7, 0.9]).unwrap();
        let m = Tensor::from_f64(&[4, 2], &[0.3, -0.1, 0.8, 0.5, -0.6, 0.2, 0.1, 0.9]).unwrap();
        let report = grad_check(
            &[x, g, b, w, m],
            |tape, v| {
                let s = tape.softmax(v[0], 1)?;
                let n = tape.layer_norm(s, v[1], v[2], 1e-5)?;
                let p = tape.mul(n, v[3])?;
                let t = tape.tanh(p);
                let q = tape.matmul(t, v[4])?;
                let k = tape.permute(q, &[1, 0, 2])?;
                let r = tape.reshape(k, &[3, 4])?;
                let h = tape.sigmoid(r);
                let qt = tape.bmm_t(v[0], v[0])?;
                let qs = tape.sum(qt);
                let mu = tape.reduce_mean(h, 0)?;
                let su = tape.sum(mu);
                tape.add(su, qs)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}
