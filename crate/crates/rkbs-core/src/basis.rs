//! Basis functions of integral layers: input-affine, discrete-neural and
//! continuous-neural families, together with activation functions and window
//! sequences. Includes a numeric Lipschitz witness used by the property
//! probes.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::measure::ParameterPoint;

/// Slack accepted by the Lipschitz witness on top of the certified bound.
pub const WITNESS_TOLERANCE: f64 = 1e-12;

/// A scalar activation with known Lipschitz constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    kind: ActivationKind,
}

#[derive(Debug, Clone)]
pub enum ActivationKind {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Custom {
        name: &'static str,
        f: fn(f64) -> f64,
        df: fn(f64) -> f64,
        lipschitz: f64,
        zero_at_zero: bool,
    },
}

impl PartialEq for ActivationKind {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ActivationKind::Relu, ActivationKind::Relu) => true,
            (ActivationKind::LeakyRelu { slope: a }, ActivationKind::LeakyRelu { slope: b }) => {
                a == b
            }
            (ActivationKind::Tanh, ActivationKind::Tanh) => true,
            // custom activations compare by name
            (ActivationKind::Custom { name: a, .. }, ActivationKind::Custom { name: b, .. }) => {
                a == b
            }
            _ => false,
        }
    }
}

impl Activation {
    pub fn relu() -> Self {
        Activation {
            kind: ActivationKind::Relu,
        }
    }

    pub fn leaky_relu(slope: f64) -> Self {
        Activation {
            kind: ActivationKind::LeakyRelu { slope },
        }
    }

    pub fn tanh() -> Self {
        Activation {
            kind: ActivationKind::Tanh,
        }
    }

    pub fn custom(
        name: &'static str,
        f: fn(f64) -> f64,
        df: fn(f64) -> f64,
        lipschitz: f64,
        zero_at_zero: bool,
    ) -> Self {
        Activation {
            kind: ActivationKind::Custom {
                name,
                f,
                df,
                lipschitz,
                zero_at_zero,
            },
        }
    }

    pub fn kind(&self) -> &ActivationKind {
        &self.kind
    }

    pub fn apply(&self, t: f64) -> f64 {
        match &self.kind {
            ActivationKind::Relu => t.max(0.0),
            ActivationKind::LeakyRelu { slope } => {
                if t >= 0.0 {
                    t
                } else {
                    slope * t
                }
            }
            ActivationKind::Tanh => t.tanh(),
            ActivationKind::Custom { f, .. } => f(t),
        }
    }

    /// Derivative used by backpropagation. The ReLU subgradient at zero is
    /// taken as zero.
    pub fn derivative(&self, t: f64) -> f64 {
        match &self.kind {
            ActivationKind::Relu => {
                if t > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu { slope } => {
                if t > 0.0 {
                    1.0
                } else {
                    *slope
                }
            }
            ActivationKind::Tanh => {
                let y = t.tanh();
                1.0 - y * y
            }
            ActivationKind::Custom { df, .. } => df(t),
        }
    }

    pub fn lipschitz_constant(&self) -> f64 {
        match &self.kind {
            ActivationKind::Relu => 1.0,
            ActivationKind::LeakyRelu { slope } => slope.abs().max(1.0),
            ActivationKind::Tanh => 1.0,
            ActivationKind::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    pub fn zero_at_zero(&self) -> bool {
        match &self.kind {
            ActivationKind::Relu | ActivationKind::LeakyRelu { .. } | ActivationKind::Tanh => true,
            ActivationKind::Custom { zero_at_zero, .. } => *zero_at_zero,
        }
    }
}

/// A positive sequence `beta_n`, converging to zero for the non-constant
/// kinds, multiplying the activation of discrete layers.
#[derive(Debug, Clone, PartialEq)]
pub enum WindowSequence {
    ConstantOne,
    Geometric { q: f64 },
    InverseSquare,
}

impl WindowSequence {
    pub fn value(&self, n: usize) -> f64 {
        match self {
            WindowSequence::ConstantOne => 1.0,
            WindowSequence::Geometric { q } => q.powi(n as i32),
            WindowSequence::InverseSquare => {
                let k = (1 + n) as f64;
                1.0 / (k * k)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            WindowSequence::Geometric { q } if !(*q > 0.0 && *q < 1.0) => Err(Error::Invalid {
                context: "window",
                message: format!("geometric ratio must lie in (0,1), got {q}"),
            }),
            _ => Ok(()),
        }
    }
}

impl Default for WindowSequence {
    fn default() -> Self {
        WindowSequence::Geometric { q: 0.9 }
    }
}

/// The basis function `rho(x, theta)` of one integral layer.
#[derive(Debug, Clone, PartialEq)]
pub enum BasisFunction {
    /// `rho(x, 0) = 1`, `rho(x, j) = x_j` for `1 <= j <= input_dim`.
    InputAffine { input_dim: usize },
    /// `rho(x, 0) = 1` when the bias atom is enabled;
    /// `rho(x, n) = sigma(x_{n-1}) beta_{n-1}` for `n >= 1`, with `x` read as
    /// an l2 sequence (coordinates beyond its length are zero).
    DiscreteNeural {
        activation: Activation,
        window: WindowSequence,
        bias_atom: bool,
    },
    /// `rho(x, theta) = sigma(<x, theta> + offset) exp(-|theta|^2 / (2 s^2))`.
    ContinuousNeural {
        activation: Activation,
        window_scale: f64,
        offset: f64,
    },
}

/// Outcome of one Lipschitz probe: `lhs = |rho(x) - rho(x')|` against the
/// certified right-hand side.
#[derive(Debug, Clone, Copy)]
pub struct LipschitzWitness {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

fn coord(x: &DVector<f64>, c: usize) -> f64 {
    if c < x.len() {
        x[c]
    } else {
        0.0
    }
}

impl BasisFunction {
    pub fn discrete_default() -> Self {
        BasisFunction::DiscreteNeural {
            activation: Activation::relu(),
            window: WindowSequence::default(),
            bias_atom: true,
        }
    }

    pub fn activation(&self) -> Option<&Activation> {
        match self {
            BasisFunction::InputAffine { .. } => None,
            BasisFunction::DiscreteNeural { activation, .. }
            | BasisFunction::ContinuousNeural { activation, .. } => Some(activation),
        }
    }

    pub fn window(&self) -> Option<&WindowSequence> {
        match self {
            BasisFunction::DiscreteNeural { window, .. } => Some(window),
            _ => None,
        }
    }

    pub fn has_bias_atom(&self) -> bool {
        match self {
            BasisFunction::InputAffine { .. } => true,
            BasisFunction::DiscreteNeural { bias_atom, .. } => *bias_atom,
            BasisFunction::ContinuousNeural { .. } => false,
        }
    }

    /// Whether `theta` is a legal atom location for this basis on inputs of
    /// dimension `input_dim`.
    pub fn location_admissible(&self, theta: &ParameterPoint, input_dim: usize) -> bool {
        match (self, theta) {
            (BasisFunction::InputAffine { input_dim: d }, ParameterPoint::Discrete(j)) => {
                *j <= *d && *d == input_dim
            }
            (BasisFunction::DiscreteNeural { bias_atom, .. }, ParameterPoint::Discrete(n)) => {
                *n >= 1 || *bias_atom
            }
            (BasisFunction::ContinuousNeural { .. }, ParameterPoint::Euclidean(v)) => {
                v.len() == input_dim
            }
            _ => false,
        }
    }

    /// Evaluates `rho(x, theta)`.
    pub fn evaluate(&self, x: &DVector<f64>, theta: &ParameterPoint) -> Result<f64> {
        match self {
            BasisFunction::InputAffine { input_dim } => {
                let j = match theta {
                    ParameterPoint::Discrete(j) => *j,
                    _ => return Err(Error::KindMismatch("input-affine basis needs an index")),
                };
                if x.len() != *input_dim {
                    return Err(Error::DimensionMismatch {
                        context: "input-affine input",
                        expected: *input_dim,
                        got: x.len(),
                    });
                }
                if j == 0 {
                    Ok(1.0)
                } else if j <= *input_dim {
                    Ok(x[j - 1])
                } else {
                    Err(Error::DimensionMismatch {
                        context: "input-affine parameter index",
                        expected: *input_dim,
                        got: j,
                    })
                }
            }
            BasisFunction::DiscreteNeural {
                activation,
                window,
                bias_atom,
            } => {
                let n = match theta {
                    ParameterPoint::Discrete(n) => *n,
                    _ => return Err(Error::KindMismatch("discrete basis needs an index")),
                };
                if n == 0 {
                    return if *bias_atom {
                        Ok(1.0)
                    } else {
                        Err(Error::NegativeIndex)
                    };
                }
                let c = n - 1;
                Ok(activation.apply(coord(x, c)) * window.value(c))
            }
            BasisFunction::ContinuousNeural {
                activation,
                window_scale,
                offset,
            } => {
                let v = match theta {
                    ParameterPoint::Euclidean(v) => v,
                    _ => return Err(Error::KindMismatch("continuous basis needs a vector")),
                };
                if v.len() != x.len() {
                    return Err(Error::DimensionMismatch {
                        context: "continuous basis input",
                        expected: v.len(),
                        got: x.len(),
                    });
                }
                let pre = x.dot(v) + offset;
                let win = (-v.norm_squared() / (2.0 * window_scale * window_scale)).exp();
                Ok(activation.apply(pre) * win)
            }
        }
    }

    /// Probes the layer Lipschitz property at `theta`:
    /// `|rho(x) - rho(x')| <= C |<x - x', g(theta)>| beta(theta)`.
    pub fn lipschitz_witness(
        &self,
        x: &DVector<f64>,
        x2: &DVector<f64>,
        theta: &ParameterPoint,
    ) -> Result<LipschitzWitness> {
        if x.len() != x2.len() {
            return Err(Error::DimensionMismatch {
                context: "lipschitz witness inputs",
                expected: x.len(),
                got: x2.len(),
            });
        }
        let lhs = (self.evaluate(x, theta)? - self.evaluate(x2, theta)?).abs();
        let rhs = match self {
            BasisFunction::InputAffine { .. } => match theta {
                ParameterPoint::Discrete(0) => 0.0,
                ParameterPoint::Discrete(j) => (coord(x, j - 1) - coord(x2, j - 1)).abs(),
                _ => return Err(Error::KindMismatch("input-affine basis needs an index")),
            },
            BasisFunction::DiscreteNeural {
                activation, window, ..
            } => match theta {
                ParameterPoint::Discrete(0) => 0.0,
                ParameterPoint::Discrete(n) => {
                    let c = n - 1;
                    activation.lipschitz_constant()
                        * (coord(x, c) - coord(x2, c)).abs()
                        * window.value(c)
                }
                _ => return Err(Error::KindMismatch("discrete basis needs an index")),
            },
            BasisFunction::ContinuousNeural {
                activation,
                window_scale,
                ..
            } => match theta {
                ParameterPoint::Euclidean(v) => {
                    let win = (-v.norm_squared() / (2.0 * window_scale * window_scale)).exp();
                    activation.lipschitz_constant() * ((x - x2).dot(v)).abs() * win
                }
                _ => return Err(Error::KindMismatch("continuous basis needs a vector")),
            },
        };
        Ok(LipschitzWitness {
            lhs,
            rhs,
            ok: lhs <= rhs + WITNESS_TOLERANCE,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecd(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn input_affine_bias_index() {
        let b = BasisFunction::InputAffine { input_dim: 2 };
        let x = vecd(&[5.0, 7.0]);
        assert_eq!(b.evaluate(&x, &ParameterPoint::Discrete(0)).unwrap(), 1.0);
        assert_eq!(b.evaluate(&x, &ParameterPoint::Discrete(1)).unwrap(), 5.0);
        assert_eq!(b.evaluate(&x, &ParameterPoint::Discrete(2)).unwrap(), 7.0);
        assert!(b.evaluate(&x, &ParameterPoint::Discrete(3)).is_err());
    }

    #[test]
    fn discrete_relu_clamps_negative() {
        let b = BasisFunction::DiscreteNeural {
            activation: Activation::relu(),
            window: WindowSequence::ConstantOne,
            bias_atom: true,
        };
        let x = vecd(&[-2.0, 3.0]);
        assert_eq!(b.evaluate(&x, &ParameterPoint::Discrete(1)).unwrap(), 0.0);
        assert_eq!(b.evaluate(&x, &ParameterPoint::Discrete(2)).unwrap(), 3.0);
        // beyond the support of x the l2 embedding reads zero
        assert_eq!(b.evaluate(&x, &ParameterPoint::Discrete(9)).unwrap(), 0.0);
    }

    #[test]
    fn discrete_without_bias_rejects_index_zero() {
        let b = BasisFunction::DiscreteNeural {
            activation: Activation::relu(),
            window: WindowSequence::ConstantOne,
            bias_atom: false,
        };
        assert!(matches!(
            b.evaluate(&vecd(&[1.0]), &ParameterPoint::Discrete(0)),
            Err(Error::NegativeIndex)
        ));
    }

    #[test]
    fn continuous_relu_at_orthogonal_pair() {
        let b = BasisFunction::ContinuousNeural {
            activation: Activation::relu(),
            window_scale: 1e12,
            offset: 0.0,
        };
        let x = vecd(&[1.0, 1.0]);
        let theta = ParameterPoint::euclidean(&[1.0, -1.0]);
        let v = b.evaluate(&x, &theta).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn witness_equal_inputs() {
        let b = BasisFunction::discrete_default();
        let x = vecd(&[0.3, -0.2]);
        let w = b
            .lipschitz_witness(&x, &x, &ParameterPoint::Discrete(2))
            .unwrap();
        assert_eq!(w.lhs, 0.0);
        assert!(w.ok);
    }

    #[test]
    fn witness_relu_kink() {
        let b = BasisFunction::DiscreteNeural {
            activation: Activation::relu(),
            window: WindowSequence::ConstantOne,
            bias_atom: true,
        };
        let w = b
            .lipschitz_witness(&vecd(&[1.0]), &vecd(&[-1.0]), &ParameterPoint::Discrete(1))
            .unwrap();
        assert_eq!(w.lhs, 1.0);
        assert_eq!(w.rhs, 2.0);
        assert!(w.ok);
    }

    #[test]
    fn window_values() {
        assert_eq!(WindowSequence::ConstantOne.value(7), 1.0);
        assert_eq!(WindowSequence::Geometric { q: 0.5 }.value(3), 0.125);
        assert_eq!(WindowSequence::InverseSquare.value(1), 0.25);
        assert!(WindowSequence::Geometric { q: 1.5 }.validate().is_err());
    }

    #[test]
    fn rho_decays_beyond_support() {
        // for zero-at-zero activations, |rho(x, n)| <= C |x|_inf beta_{n-1}
        let b = BasisFunction::DiscreteNeural {
            activation: Activation::tanh(),
            window: WindowSequence::Geometric { q: 0.9 },
            bias_atom: true,
        };
        let x = vecd(&[2.0, -1.0, 0.5]);
        for n in 1..60 {
            let v = b.evaluate(&x, &ParameterPoint::Discrete(n)).unwrap();
            let bound = 1.0 * x.norm() * WindowSequence::Geometric { q: 0.9 }.value(n - 1);
            assert!(v.abs() <= bound + 1e-12);
        }
        // far beyond the support the value is exactly zero
        assert_eq!(b.evaluate(&x, &ParameterPoint::Discrete(50)).unwrap(), 0.0);
    }

    #[test]
    fn leaky_relu_constants() {
        let a = Activation::leaky_relu(0.1);
        assert_eq!(a.lipschitz_constant(), 1.0);
        assert_eq!(a.apply(-2.0), -0.2);
        assert_eq!(a.derivative(-2.0), 0.1);
        let steep = Activation::leaky_relu(3.0);
        assert_eq!(steep.lipschitz_constant(), 3.0);
    }
}
