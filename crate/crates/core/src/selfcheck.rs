//! Quick numerical self-checks: simulator invariants and analytic gradients
//! against central differences, on seeded random cases.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{build_model, ModelConfig, Preset};
use crate::qsim::{self, filter_gradients, run_filter, FilterCircuit, StateVector};
use crate::tensor::Tensor;

const FD_STEP: f64 = 1e-5;
const FD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub cases: usize,
    /// Worst error observed, in the check's own measure.
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

fn central_difference(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            if x.abs().max(y.abs()) <= FD_FLOOR {
                0.0
            } else {
                (x - y).abs() / x.abs().max(y.abs())
            }
        })
        .fold(0.0, f64::max)
}

fn unit(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Norm drift and expectation-range violations after random gates.
pub fn simulator_invariants(cases: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.gen_range(1..=6);
        let amps: Vec<Complex64> = unit(2 << n, &mut rng)
            .chunks(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect();
        let mut s = StateVector::from_amplitudes(amps)?;
        for _ in 0..rng.gen_range(1..=12) {
            let q = rng.gen_range(0..n);
            s.apply_single_qubit_unitary(q, rng.gen_range(-2.0..2.0), rng.gen_range(0.0..7.0), rng.gen_range(-4.0..4.0))?;
        }
        worst = worst.max((s.norm_sqr() - 1.0).abs());
        for e in s.z_expectations().values {
            worst = worst.max(e.abs() - 1.0);
        }
    }
    Ok(CheckOutcome {
        name: "simulator norm and expectation bounds",
        cases,
        worst,
        tolerance: qsim::NORM_TOLERANCE,
    })
}

/// Adjoint filter gradients against central differences.
pub fn filter_gradient_check(cases: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.gen_range(1..=4);
        let depth = rng.gen_range(1..=3);
        let circuit = FilterCircuit::random(n, depth, &mut rng)?;
        let features = unit(rng.gen_range(1..=1 << n), &mut rng);
        let upstream: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = filter_gradients(&features, &circuit, &upstream)?;
        let objective = |c: &FilterCircuit| -> f64 {
            let e = run_filter(&features, c).expect("valid circuit").values;
            e.iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let fd_theta = central_difference(&circuit.theta, |t| {
            let mut c = circuit.clone();
            c.theta.copy_from_slice(t);
            objective(&c)
        });
        let fd_lambda = central_difference(&circuit.lambda, |l| {
            let mut c = circuit.clone();
            c.lambda.copy_from_slice(l);
            objective(&c)
        });
        worst = worst
            .max(relative_error(&g.theta, &fd_theta))
            .max(relative_error(&g.lambda, &fd_lambda));
    }
    Ok(CheckOutcome {
        name: "filter gradients vs central differences",
        cases,
        worst,
        tolerance: 1e-4,
    })
}

/// Full backward pass of a small model against central differences of the
/// loss.
pub fn model_gradient_check(cases: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut config = ModelConfig::preset(Preset::Dataset2).with_input(2, 32);
    config.embedding_kernel = 4;
    config.embedding_stride = 4;
    config.projection_kernel = 4;
    config.projection_stride = 4;
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let model = build_model(config.clone(), rng.gen())?;
        let x = Tensor::from_vec(2, 32, (0..64).map(|_| rng.gen_range(-1.5..1.5)).collect())?;
        let label = case % 2;
        let (_, grad) = model.loss_and_gradient(&x, label)?;
        let fd = central_difference(&model.params(), |p| {
            let mut m = model.clone();
            m.set_params(p).expect("same length");
            m.loss_and_gradient(&x, label).expect("valid input").0
        });
        worst = worst.max(relative_error(&grad, &fd));
    }
    Ok(CheckOutcome {
        name: "model backward vs central differences",
        cases,
        worst,
        tolerance: 1e-3,
    })
}

/// Every check with its default case count.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        simulator_invariants(1000, seed)?,
        filter_gradient_check(100, seed.wrapping_add(1))?,
        model_gradient_check(2, seed.wrapping_add(2))?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_runs_pass() {
        assert!(simulator_invariants(50, 1).unwrap().passed());
        assert!(filter_gradient_check(10, 2).unwrap().passed());
    }
}
