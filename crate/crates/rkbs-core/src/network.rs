//! Deep measure networks (compositions of integral layers), the finite
//! weight/bias representation, export between the two, and the complexity
//! upper bound.

use nalgebra::{DMatrix, DVector};

use crate::basis::{Activation, BasisFunction, WindowSequence};
use crate::error::{Error, Result};
use crate::measure::{AtomicVectorMeasure, ParameterPoint};

/// One integral layer: a basis together with an atomic measure whose weights
/// live in the next layer space.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMeasure {
    basis: BasisFunction,
    measure: AtomicVectorMeasure,
    input_dim: usize,
}

impl LayerMeasure {
    pub fn new(
        basis: BasisFunction,
        measure: AtomicVectorMeasure,
        input_dim: usize,
    ) -> Result<Self> {
        for atom in measure.atoms() {
            if !basis.location_admissible(&atom.location, input_dim) {
                return Err(Error::Invalid {
                    context: "layer measure",
                    message: format!("atom location {:?} not admissible for basis", atom.location),
                });
            }
        }
        Ok(LayerMeasure {
            basis,
            measure,
            input_dim,
        })
    }

    pub fn basis(&self) -> &BasisFunction {
        &self.basis
    }

    pub fn measure(&self) -> &AtomicVectorMeasure {
        &self.measure
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.measure.target_dim()
    }

    /// f_mu(x) = sum_k w_k rho(x, theta_k).
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "layer input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut out = DVector::zeros(self.output_dim());
        for atom in self.measure.atoms() {
            let v = self.basis.evaluate(x, &atom.location)?;
            out.axpy(v, &atom.weight, 1.0);
        }
        Ok(out)
    }

    /// Number of atoms excluding the bias atom at index zero.
    pub fn width(&self) -> usize {
        self.measure
            .atoms()
            .iter()
            .filter(|a| !matches!(a.location, ParameterPoint::Discrete(0)))
            .count()
    }

    /// An upper bound on the Lipschitz constant of the layer map, using the
    /// per-atom window values.
    pub fn lipschitz_bound(&self) -> f64 {
        let sum0 = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0, |a, b| a + b);
        match &self.basis {
            BasisFunction::InputAffine { .. } => sum0(
                &mut self
                    .measure
                    .atoms()
                    .iter()
                    .filter(|a| !matches!(a.location, ParameterPoint::Discrete(0)))
                    .map(|a| a.weight.norm()),
            ),
            BasisFunction::DiscreteNeural {
                activation, window, ..
            } => {
                let c = activation.lipschitz_constant();
                sum0(&mut self.measure.atoms().iter().filter_map(|a| {
                    match a.location {
                        ParameterPoint::Discrete(n) if n >= 1 => {
                            Some(a.weight.norm() * window.value(n - 1))
                        }
                        _ => None,
                    }
                })) * c
            }
            BasisFunction::ContinuousNeural {
                activation,
                window_scale,
                ..
            } => {
                let c = activation.lipschitz_constant();
                sum0(&mut self.measure.atoms().iter().filter_map(|a| {
                    match &a.location {
                        ParameterPoint::Euclidean(v) => {
                            let win =
                                (-v.norm_squared() / (2.0 * window_scale * window_scale)).exp();
                            Some(a.weight.norm() * v.norm() * win)
                        }
                        _ => None,
                    }
                })) * c
            }
        }
    }
}

/// A composition of integral layers; layer 0 is input-affine.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepMeasureNetwork {
    layers: Vec<LayerMeasure>,
}

impl DeepMeasureNetwork {
    pub fn new(layers: Vec<LayerMeasure>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Invalid {
                context: "network",
                message: "at least one layer is required".to_string(),
            });
        }
        if !matches!(layers[0].basis(), BasisFunction::InputAffine { .. }) {
            return Err(Error::UnsupportedBasis("layer 0 must be input-affine"));
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::DimensionMismatch {
                    context: "layer chain",
                    expected: w[0].output_dim(),
                    got: w[1].input_dim(),
                });
            }
        }
        Ok(DeepMeasureNetwork { layers })
    }

    pub fn layers(&self) -> &[LayerMeasure] {
        &self.layers
    }

    /// Depth L: number of hidden integral layers (layers past the affine one).
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.apply(&h)?;
        }
        Ok(h)
    }

    /// All intermediate representations `x^(0), ..., x^(L+1)`.
    pub fn forward_trace(&self, x: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(x.clone());
        for layer in &self.layers {
            let next = layer.apply(trace.last().unwrap())?;
            trace.push(next);
        }
        Ok(trace)
    }

    /// Sum of layer TV norms: an upper bound on the complexity measure of the
    /// represented function (the infimum over representations is not
    /// computed).
    pub fn complexity_upper_bound(&self) -> f64 {
        self.layers.iter().map(|l| l.measure().tv_norm()).sum()
    }

    pub(crate) fn replace_layer(&mut self, idx: usize, layer: LayerMeasure) {
        self.layers[idx] = layer;
    }

    /// Rewrites the network as explicit weight matrices and bias vectors.
    ///
    /// Hidden widths equal per-layer atom counts excluding bias atoms; only
    /// the coordinates actually read by the following layer are materialized.
    pub fn export_finite(&self) -> Result<FiniteNetwork> {
        let l_total = self.layers.len();
        // Selection per hidden layer: sorted non-bias atom indices.
        let mut selections: Vec<Vec<usize>> = Vec::with_capacity(l_total);
        let mut activation: Option<Activation> = None;
        for layer in &self.layers[1..] {
            match layer.basis() {
                BasisFunction::DiscreteNeural { activation: a, .. } => match &activation {
                    None => activation = Some(a.clone()),
                    Some(prev) if prev == a => {}
                    Some(_) => {
                        return Err(Error::UnsupportedBasis(
                            "finite export needs one shared activation",
                        ))
                    }
                },
                _ => {
                    return Err(Error::UnsupportedBasis(
                        "finite export needs discrete hidden layers",
                    ))
                }
            }
        }
        for layer in self.layers.iter().skip(1) {
            let mut s: Vec<usize> = layer
                .measure()
                .atoms()
                .iter()
                .filter_map(|a| match a.location {
                    ParameterPoint::Discrete(n) if n >= 1 => Some(n),
                    _ => None,
                })
                .collect();
            s.sort_unstable();
            selections.push(s);
        }

        let mut weights = Vec::with_capacity(l_total);
        let mut biases = Vec::with_capacity(l_total);

        for (idx, layer) in self.layers.iter().enumerate() {
            // Output coordinates kept: all of them for the last layer, the
            // coordinates read by the next layer otherwise.
            let out_coords: Vec<usize> = if idx + 1 == l_total {
                (0..layer.output_dim()).collect()
            } else {
                selections[idx].iter().map(|n| n - 1).collect()
            };
            let rows = out_coords.len();

            match layer.basis() {
                BasisFunction::InputAffine { input_dim } => {
                    let mut w = DMatrix::zeros(rows, *input_dim);
                    let mut b = DVector::zeros(rows);
                    for atom in layer.measure().atoms() {
                        let j = match atom.location {
                            ParameterPoint::Discrete(j) => j,
                            _ => unreachable!("validated on construction"),
                        };
                        for (r, &c) in out_coords.iter().enumerate() {
                            let value = if c < atom.weight.len() {
                                atom.weight[c]
                            } else {
                                0.0
                            };
                            if j == 0 {
                                b[r] = value;
                            } else {
                                w[(r, j - 1)] = value;
                            }
                        }
                    }
                    weights.push(w);
                    biases.push(b);
                }
                BasisFunction::DiscreteNeural { window, .. } => {
                    let cols = &selections[idx - 1];
                    let mut w = DMatrix::zeros(rows, cols.len());
                    let mut b = DVector::zeros(rows);
                    for atom in layer.measure().atoms() {
                        let n = match atom.location {
                            ParameterPoint::Discrete(n) => n,
                            _ => unreachable!("validated on construction"),
                        };
                        if n == 0 {
                            for (r, &c) in out_coords.iter().enumerate() {
                                b[r] = if c < atom.weight.len() {
                                    atom.weight[c]
                                } else {
                                    0.0
                                };
                            }
                        } else {
                            let k = cols.binary_search(&n).expect("atom index in selection");
                            let beta = window.value(n - 1);
                            for (r, &c) in out_coords.iter().enumerate() {
                                let value = if c < atom.weight.len() {
                                    atom.weight[c]
                                } else {
                                    0.0
                                };
                                w[(r, k)] = value * beta;
                            }
                        }
                    }
                    weights.push(w);
                    biases.push(b);
                }
                BasisFunction::ContinuousNeural { .. } => {
                    return Err(Error::UnsupportedBasis(
                        "finite export needs discrete hidden layers",
                    ))
                }
            }
        }

        FiniteNetwork::new(
            weights,
            biases,
            activation.unwrap_or_else(Activation::relu),
        )
    }
}

/// A fully connected feed-forward network: `x^(1) = W^(1) x + b^(1)`,
/// `x^(l+1) = W^(l+1) sigma(x^(l)) + b^(l+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteNetwork {
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    activation: Activation,
}

impl FiniteNetwork {
    pub fn new(
        weights: Vec<DMatrix<f64>>,
        biases: Vec<DVector<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Invalid {
                context: "finite network",
                message: "weights and biases must be non-empty and aligned".to_string(),
            });
        }
        for (w, b) in weights.iter().zip(biases.iter()) {
            if w.nrows() != b.len() {
                return Err(Error::DimensionMismatch {
                    context: "finite layer bias",
                    expected: w.nrows(),
                    got: b.len(),
                });
            }
        }
        for pair in weights.windows(2) {
            if pair[1].ncols() != pair[0].nrows() {
                return Err(Error::DimensionMismatch {
                    context: "finite layer chain",
                    expected: pair[0].nrows(),
                    got: pair[1].ncols(),
                });
            }
        }
        Ok(FiniteNetwork {
            weights,
            biases,
            activation,
        })
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn activation(&self) -> &Activation {
        &self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().nrows()
    }

    /// Hidden widths `d_1, ..., d_L`.
    pub fn widths(&self) -> Vec<usize> {
        self.weights[..self.weights.len() - 1]
            .iter()
            .map(|w| w.nrows())
            .collect()
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "finite network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut h = &self.weights[0] * x + &self.biases[0];
        for (w, b) in self.weights[1..].iter().zip(&self.biases[1..]) {
            let activated = h.map(|t| self.activation.apply(t));
            h = w * activated + b;
        }
        Ok(h)
    }
}

/// The width-normalized norm bound for networks exported from discrete
/// layers with consecutive atom indices:
/// `sum_l sum_k ( sum_j |W^(l+1)_{jk} beta_k^{-1}|^2 )^{1/2}`,
/// with `beta = 1` on the affine layer. `windows[l]` is the window of hidden
/// layer `l + 1`.
pub fn discrete_corollary_bound(net: &FiniteNetwork, windows: &[WindowSequence]) -> f64 {
    let mut total = 0.0;
    for (l, w) in net.weights().iter().enumerate() {
        for k in 0..w.ncols() {
            let beta = if l == 0 {
                1.0
            } else {
                windows[l - 1].value(k)
            };
            let col_norm: f64 = w.column(k).norm();
            total += col_norm / beta;
        }
    }
    total
}
