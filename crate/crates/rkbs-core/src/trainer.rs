//! Regularized empirical risk minimization over discrete measure networks:
//! proximal gradient on atom weights with the group-sparse TV penalty.
//! Atom locations stay fixed; support can only shrink as weights hit zero.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::basis::{Activation, BasisFunction, WindowSequence};
use crate::error::{Error, Result};
use crate::measure::{Atom, AtomicVectorMeasure, ParameterPoint};
use crate::network::{DeepMeasureNetwork, LayerMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossFunction {
    /// `1/2 |y_hat - y|^2`
    Squared,
    /// `sum_j ln(1 + exp(-y_j yhat_j))` for labels in {-1, 1}
    Logistic,
}

impl LossFunction {
    pub fn value(&self, pred: &DVector<f64>, target: &DVector<f64>) -> f64 {
        match self {
            LossFunction::Squared => 0.5 * (pred - target).norm_squared(),
            LossFunction::Logistic => pred
                .iter()
                .zip(target.iter())
                .map(|(&p, &y)| {
                    let z = y * p;
                    // ln(1 + e^{-z}) computed stably
                    (-z).max(0.0) + (-(z.abs())).exp().ln_1p()
                })
                .sum(),
        }
    }

    pub fn gradient(&self, pred: &DVector<f64>, target: &DVector<f64>) -> DVector<f64> {
        match self {
            LossFunction::Squared => pred - target,
            LossFunction::Logistic => DVector::from_fn(pred.len(), |j, _| {
                let y = target[j];
                -y / (1.0 + (y * pred[j]).exp())
            }),
        }
    }
}

/// Training samples `(x_i, y_i)` with consistent dimensions.
#[derive(Debug, Clone)]
pub struct Dataset {
    inputs: Vec<DVector<f64>>,
    targets: Vec<DVector<f64>>,
}

impl Dataset {
    pub fn new(inputs: Vec<DVector<f64>>, targets: Vec<DVector<f64>>) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::Invalid {
                context: "dataset",
                message: format!("{} inputs vs {} targets", inputs.len(), targets.len()),
            });
        }
        let d = inputs[0].len();
        let p = targets[0].len();
        if inputs.iter().any(|x| x.len() != d) || targets.iter().any(|y| y.len() != p) {
            return Err(Error::Invalid {
                context: "dataset",
                message: "inconsistent sample dimensions".to_string(),
            });
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.targets[0].len()
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[DVector<f64>] {
        &self.targets
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Hidden widths; the network has `init_widths.len()` hidden layers.
    pub init_widths: Vec<usize>,
    pub lambda: f64,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Uniform initialization half-width; defaults to `1/sqrt(fan_in)`.
    pub init_scale: Option<f64>,
    pub activation: Activation,
    pub window: WindowSequence,
    pub bias_atom: bool,
    /// Bias atoms carry the TV penalty too unless exempted.
    pub penalize_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            init_widths: vec![32],
            lambda: 1.0,
            steps: 200,
            step_size: 0.1,
            seed: 0,
            init_scale: None,
            activation: Activation::relu(),
            window: WindowSequence::default(),
            bias_atom: true,
            penalize_bias: true,
        }
    }
}

/// One accepted proximal step, for the objective trace CSV.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub step: usize,
    pub risk: f64,
    pub tv_total: f64,
    pub objective: f64,
    pub atoms_alive: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: DeepMeasureNetwork,
    pub trace: Vec<TraceRow>,
}

/// Per-atom weight gradients, aligned with each layer's atom order.
#[derive(Debug, Clone)]
pub struct WeightGradients {
    pub layers: Vec<Vec<DVector<f64>>>,
}

/// Empirical risk `1/N sum_i loss(f(x_i), y_i)`.
pub fn risk(net: &DeepMeasureNetwork, data: &Dataset, loss: LossFunction) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        total += loss.value(&net.forward(x)?, y);
    }
    Ok(total / data.len() as f64)
}

/// Regularized objective: risk plus `lambda` times the sum of layer TV norms.
pub fn objective(
    net: &DeepMeasureNetwork,
    data: &Dataset,
    loss: LossFunction,
    lambda: f64,
) -> Result<f64> {
    Ok(risk(net, data, loss)? + lambda * net.complexity_upper_bound())
}

fn atom_count(net: &DeepMeasureNetwork) -> usize {
    net.layers()
        .iter()
        .map(|l| l.measure().support_size())
        .sum()
}

/// Reverse-mode gradients of the smooth risk term with respect to every atom
/// weight vector, locations held fixed.
pub fn grad_weights(
    net: &DeepMeasureNetwork,
    data: &Dataset,
    loss: LossFunction,
) -> Result<WeightGradients> {
    let mut grads: Vec<Vec<DVector<f64>>> = net
        .layers()
        .iter()
        .map(|l| {
            l.measure()
                .atoms()
                .iter()
                .map(|_| DVector::zeros(l.output_dim()))
                .collect()
        })
        .collect();
    let inv_n = 1.0 / data.len() as f64;

    for (x, y) in data.inputs.iter().zip(&data.targets) {
        let trace = net.forward_trace(x)?;
        let mut upstream = loss.gradient(trace.last().unwrap(), y) * inv_n;
        for (l, layer) in net.layers().iter().enumerate().rev() {
            let z = &trace[l];
            for (k, atom) in layer.measure().atoms().iter().enumerate() {
                let v = layer.basis().evaluate(z, &atom.location)?;
                grads[l][k].axpy(v, &upstream, 1.0);
            }
            if l == 0 {
                break;
            }
            let mut down = DVector::zeros(z.len());
            match layer.basis() {
                BasisFunction::DiscreteNeural {
                    activation, window, ..
                } => {
                    for atom in layer.measure().atoms() {
                        if let ParameterPoint::Discrete(n) = atom.location {
                            if n >= 1 {
                                let c = n - 1;
                                if c < z.len() {
                                    down[c] += atom.weight.dot(&upstream)
                                        * activation.derivative(z[c])
                                        * window.value(c);
                                }
                            }
                        }
                    }
                }
                BasisFunction::ContinuousNeural {
                    activation,
                    window_scale,
                    offset,
                } => {
                    for atom in layer.measure().atoms() {
                        if let ParameterPoint::Euclidean(theta) = &atom.location {
                            let pre = z.dot(theta) + offset;
                            let win = (-theta.norm_squared()
                                / (2.0 * window_scale * window_scale))
                                .exp();
                            let scale =
                                atom.weight.dot(&upstream) * activation.derivative(pre) * win;
                            down.axpy(scale, theta, 1.0);
                        }
                    }
                }
                BasisFunction::InputAffine { .. } => unreachable!("layer 0 handled above"),
            }
            upstream = down;
        }
    }
    Ok(WeightGradients { layers: grads })
}

/// Builds the initial over-parameterized discrete network: layer 0 affine on
/// all input coordinates, hidden layers with atoms at `0..=width`, weights
/// uniform in `(-scale, scale)`.
pub fn init_network(
    config: &TrainConfig,
    input_dim: usize,
    output_dim: usize,
) -> Result<DeepMeasureNetwork> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dims = Vec::with_capacity(config.init_widths.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(&config.init_widths);
    dims.push(output_dim);

    let mut layers = Vec::new();
    for l in 0..dims.len() - 1 {
        let fan_in = dims[l].max(1);
        let scale = config
            .init_scale
            .unwrap_or_else(|| 1.0 / (fan_in as f64).sqrt());
        let target = dims[l + 1];
        let first_index = if l == 0 || config.bias_atom { 0 } else { 1 };
        let atoms: Vec<Atom> = (first_index..=dims[l])
            .map(|j| {
                let w = DVector::from_fn(target, |_, _| {
                    if scale > 0.0 {
                        rng.gen_range(-scale..scale)
                    } else {
                        0.0
                    }
                });
                Atom::new(ParameterPoint::Discrete(j), w)
            })
            .collect();
        let basis = if l == 0 {
            BasisFunction::InputAffine {
                input_dim: dims[0],
            }
        } else {
            BasisFunction::DiscreteNeural {
                activation: config.activation.clone(),
                window: config.window.clone(),
                bias_atom: config.bias_atom,
            }
        };
        layers.push(LayerMeasure::new(
            basis,
            AtomicVectorMeasure::new(target, atoms)?,
            dims[l],
        )?);
    }
    DeepMeasureNetwork::new(layers)
}

fn proximal_step(
    net: &DeepMeasureNetwork,
    grads: &WeightGradients,
    step: f64,
    lambda: f64,
    penalize_bias: bool,
) -> Result<DeepMeasureNetwork> {
    let mut layers = Vec::with_capacity(net.layers().len());
    for (l, layer) in net.layers().iter().enumerate() {
        let mut atoms = Vec::with_capacity(layer.measure().support_size());
        for (k, atom) in layer.measure().atoms().iter().enumerate() {
            let moved = &atom.weight - &grads.layers[l][k] * step;
            let is_bias = matches!(atom.location, ParameterPoint::Discrete(0));
            let tau = if is_bias && !penalize_bias {
                0.0
            } else {
                step * lambda
            };
            let updated = crate::solver::prox_group(&moved, tau);
            atoms.push(Atom::new(atom.location.clone(), updated));
        }
        layers.push(LayerMeasure::new(
            layer.basis().clone(),
            AtomicVectorMeasure::new(layer.output_dim(), atoms)?,
            layer.input_dim(),
        )?);
    }
    DeepMeasureNetwork::new(layers)
}

/// Full-batch proximal gradient training with backtracking. The trace records
/// one row per accepted step; the objective is non-increasing along it.
pub fn train_prox(
    config: &TrainConfig,
    data: &Dataset,
    loss: LossFunction,
) -> Result<TrainOutcome> {
    if config.step_size <= 0.0 {
        return Err(Error::Invalid {
            context: "train config",
            message: "step_size must be positive".to_string(),
        });
    }
    let mut net = init_network(config, data.input_dim(), data.output_dim())?;
    let mut current = objective(&net, data, loss, config.lambda)?;
    let initial = current;
    let mut step_size = config.step_size;
    let mut trace = vec![TraceRow {
        step: 0,
        risk: risk(&net, data, loss)?,
        tv_total: net.complexity_upper_bound(),
        objective: current,
        atoms_alive: atom_count(&net),
    }];

    for step in 1..=config.steps {
        let grads = grad_weights(&net, data, loss)?;
        let mut accepted = None;
        while step_size >= 1e-18 {
            let candidate =
                proximal_step(&net, &grads, step_size, config.lambda, config.penalize_bias)?;
            let cand_obj = objective(&candidate, data, loss, config.lambda)?;
            if cand_obj <= current + 1e-12 * (1.0 + current.abs()) {
                accepted = Some((candidate, cand_obj));
                break;
            }
            step_size *= 0.5;
        }
        let Some((candidate, cand_obj)) = accepted else {
            log::warn!("step size underflow at step {step}; stopping early");
            break;
        };
        net = candidate;
        current = cand_obj;
        if current > 10.0 * initial.abs() + 1e-12 {
            return Err(Error::DivergenceDetected {
                objective: current,
                initial,
            });
        }
        trace.push(TraceRow {
            step,
            risk: risk(&net, data, loss)?,
            tv_total: net.complexity_upper_bound(),
            objective: current,
            atoms_alive: atom_count(&net),
        });
    }

    Ok(TrainOutcome {
        network: net,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecd(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn toy_data() -> Dataset {
        Dataset::new(
            vec![vecd(&[0.5, -0.2]), vecd(&[-1.0, 0.3]), vecd(&[0.8, 0.9])],
            vec![vecd(&[1.0]), vecd(&[-0.5]), vecd(&[0.2])],
        )
        .unwrap()
    }

    #[test]
    fn objective_of_zero_predictor() {
        let data = toy_data();
        let cfg = TrainConfig {
            init_widths: vec![4],
            init_scale: Some(0.0),
            ..TrainConfig::default()
        };
        let net = init_network(&cfg, 2, 1).unwrap();
        // zero init drops every atom, so the network is the zero predictor
        assert_eq!(net.complexity_upper_bound(), 0.0);
        let expected: f64 = data
            .targets()
            .iter()
            .map(|y| 0.5 * y.norm_squared())
            .sum::<f64>()
            / data.len() as f64;
        let got = objective(&net, &data, LossFunction::Squared, 3.0).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn objective_decomposes_into_risk_and_tv() {
        let data = toy_data();
        let cfg = TrainConfig {
            init_widths: vec![5],
            seed: 3,
            ..TrainConfig::default()
        };
        let net = init_network(&cfg, 2, 1).unwrap();
        let r = risk(&net, &data, LossFunction::Squared).unwrap();
        let lambda = 0.7;
        let obj = objective(&net, &data, LossFunction::Squared, lambda).unwrap();
        assert!((obj - (r + lambda * net.complexity_upper_bound())).abs() < 1e-15);
        // lambda = 0 gives the pure empirical risk
        let obj0 = objective(&net, &data, LossFunction::Squared, 0.0).unwrap();
        assert_eq!(obj0, r);
    }

    #[test]
    fn gradients_vanish_at_perfect_fit() {
        // Teacher equals student: residuals are zero, so all gradients vanish.
        let cfg = TrainConfig {
            init_widths: vec![3],
            seed: 9,
            ..TrainConfig::default()
        };
        let net = init_network(&cfg, 2, 1).unwrap();
        let xs = vec![vecd(&[0.1, 0.4]), vecd(&[-0.7, 0.2])];
        let ys: Vec<DVector<f64>> = xs.iter().map(|x| net.forward(x).unwrap()).collect();
        let data = Dataset::new(xs, ys).unwrap();
        let grads = grad_weights(&net, &data, LossFunction::Squared).unwrap();
        for layer in &grads.layers {
            for g in layer {
                assert!(g.norm() < 1e-14);
            }
        }
    }

    #[test]
    fn linear_layer_gradient_is_design_times_residual() {
        // Single affine layer: f(x) = w0 + sum_j w_j x_j; squared loss.
        let atoms = vec![
            Atom::discrete(0, &[0.3]),
            Atom::discrete(1, &[-0.2]),
            Atom::discrete(2, &[0.5]),
        ];
        let layer = LayerMeasure::new(
            BasisFunction::InputAffine { input_dim: 2 },
            AtomicVectorMeasure::new(1, atoms).unwrap(),
            2,
        )
        .unwrap();
        let net = DeepMeasureNetwork::new(vec![layer]).unwrap();
        let data = toy_data();
        let grads = grad_weights(&net, &data, LossFunction::Squared).unwrap();
        let n = data.len() as f64;
        for (k, phi) in [
            |_x: &DVector<f64>| 1.0,
            |x: &DVector<f64>| x[0],
            |x: &DVector<f64>| x[1],
        ]
        .iter()
        .enumerate()
        {
            let mut expected = 0.0;
            for (x, y) in data.inputs().iter().zip(data.targets()) {
                let r = net.forward(x).unwrap()[0] - y[0];
                expected += phi(x) * r / n;
            }
            assert!((grads.layers[0][k][0] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn huge_lambda_kills_all_atoms_in_one_step() {
        let data = toy_data();
        let cfg = TrainConfig {
            init_widths: vec![6],
            lambda: 1e6,
            steps: 1,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train_prox(&cfg, &data, LossFunction::Squared).unwrap();
        assert_eq!(atom_count(&out.network), 0);
        for x in data.inputs() {
            assert_eq!(out.network.forward(x).unwrap(), vecd(&[0.0]));
        }
    }

    #[test]
    fn unregularized_linear_training_reaches_least_squares() {
        // lambda = 0, no hidden layers: plain linear least squares.
        let data = toy_data();
        let cfg = TrainConfig {
            init_widths: vec![],
            lambda: 0.0,
            steps: 4000,
            step_size: 0.5,
            seed: 2,
            ..TrainConfig::default()
        };
        let out = train_prox(&cfg, &data, LossFunction::Squared).unwrap();
        for pair in out.trace.windows(2) {
            assert!(pair[1].objective <= pair[0].objective + 1e-9);
        }
        // compare against the normal equations on the design [1 x1 x2]
        let mut ata = nalgebra::DMatrix::zeros(3, 3);
        let mut atb = DVector::zeros(3);
        for (x, y) in data.inputs().iter().zip(data.targets()) {
            let row = vecd(&[1.0, x[0], x[1]]);
            ata += &row * row.transpose();
            atb += row * y[0];
        }
        let sol = ata.lu().solve(&atb).unwrap();
        let mut best_risk = 0.0;
        for (x, y) in data.inputs().iter().zip(data.targets()) {
            let pred = sol[0] + sol[1] * x[0] + sol[2] * x[1];
            best_risk += 0.5 * (pred - y[0]).powi(2);
        }
        best_risk /= data.len() as f64;
        let final_obj = out.trace.last().unwrap().objective;
        assert!(final_obj <= best_risk + 1e-6, "{final_obj} vs {best_risk}");
    }

    #[test]
    fn seeded_training_monotone_and_deterministic() {
        let data = toy_data();
        let cfg = TrainConfig {
            init_widths: vec![8, 8],
            lambda: 0.05,
            steps: 40,
            step_size: 0.2,
            seed: 17,
            ..TrainConfig::default()
        };
        let a = train_prox(&cfg, &data, LossFunction::Squared).unwrap();
        let b = train_prox(&cfg, &data, LossFunction::Squared).unwrap();
        assert_eq!(a.network, b.network);
        assert!(a.trace.last().unwrap().objective <= a.trace[0].objective);
        for pair in a.trace.windows(2) {
            assert!(pair[1].objective <= pair[0].objective + 1e-9);
            // support never grows
            assert!(pair[1].atoms_alive <= pair[0].atoms_alive);
        }
    }

    #[test]
    fn logistic_loss_gradient_matches_finite_difference() {
        let loss = LossFunction::Logistic;
        let pred = vecd(&[0.3, -1.2]);
        let target = vecd(&[1.0, -1.0]);
        let grad = loss.gradient(&pred, &target);
        let h = 1e-6;
        for j in 0..2 {
            let mut up = pred.clone();
            let mut dn = pred.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (loss.value(&up, &target) - loss.value(&dn, &target)) / (2.0 * h);
            assert!((grad[j] - fd).abs() < 1e-8);
        }
    }
}
