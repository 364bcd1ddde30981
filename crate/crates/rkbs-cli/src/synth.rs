//! Synthetic teacher-student data: a random finite network labels uniform
//! inputs, optionally with additive Gaussian noise.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use rkbs_core::network::FiniteNetwork;
use rkbs_core::Result;

use crate::config::GeneratorSpec;

/// A seeded random teacher with the requested widths.
pub fn random_teacher(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<FiniteNetwork> {
    let mut dims = Vec::with_capacity(spec.teacher_widths.len() + 2);
    dims.push(spec.d);
    dims.extend_from_slice(&spec.teacher_widths);
    dims.push(spec.p);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..dims.len() - 1 {
        let scale = 1.0 / (dims[l].max(1) as f64).sqrt();
        weights.push(DMatrix::from_fn(dims[l + 1], dims[l], |_, _| {
            rng.gen_range(-1.0..1.0) * scale
        }));
        biases.push(DVector::from_fn(dims[l + 1], |_, _| {
            rng.gen_range(-0.5..0.5)
        }));
    }
    FiniteNetwork::new(weights, biases, spec.activation.to_core())
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on two uniforms
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draws `n` samples `x ~ U(-1,1)^d`, `y = teacher(x) + noise * N(0, I)`.
pub fn generate(spec: &GeneratorSpec) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let teacher = random_teacher(spec, &mut rng)?;
    let mut rows = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x = DVector::from_fn(spec.d, |_, _| rng.gen_range(-1.0..1.0));
        let mut y = teacher.forward(&x)?;
        if spec.noise > 0.0 {
            for j in 0..y.len() {
                y[j] += spec.noise * standard_normal(&mut rng);
            }
        }
        rows.push((x, y));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rkbs_core::model::ActivationDto;

    fn spec(seed: u64, noise: f64) -> GeneratorSpec {
        GeneratorSpec {
            teacher_widths: vec![3],
            noise,
            n: 5,
            d: 2,
            p: 1,
            seed,
            activation: ActivationDto::Relu,
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = generate(&spec(7, 0.1)).unwrap();
        let b = generate(&spec(7, 0.1)).unwrap();
        assert_eq!(a, b);
        let c = generate(&spec(8, 0.1)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_weight_teacher_labels_with_bias() {
        let mut s = spec(3, 0.0);
        s.teacher_widths = vec![];
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let teacher = random_teacher(&s, &mut rng).unwrap();
        // single affine layer: y = W x + b; replace W by zero and check labels
        let zeroed = FiniteNetwork::new(
            vec![DMatrix::zeros(1, 2)],
            vec![teacher.biases()[0].clone()],
            teacher.activation().clone(),
        )
        .unwrap();
        let x = DVector::from_column_slice(&[0.3, -0.8]);
        assert_eq!(zeroed.forward(&x).unwrap(), teacher.biases()[0]);
    }
}
