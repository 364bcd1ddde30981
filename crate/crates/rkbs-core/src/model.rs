//! Versioned model files and number formatting.
//!
//! Models are JSON with all floating-point numbers rendered with 17
//! significant digits so that files round-trip bit-exactly and rerunning a
//! command reproduces identical bytes.

use std::io;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{Activation, ActivationKind, BasisFunction, WindowSequence};
use crate::error::{Error, Result};
use crate::measure::{Atom, AtomicVectorMeasure, ParameterPoint};
use crate::network::{DeepMeasureNetwork, FiniteNetwork, LayerMeasure};

pub const FORMAT_VERSION: u64 = 1;

/// 17-significant-digit rendering used for every float we serialize.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

struct SigDigFormatter;

impl serde_json::ser::Formatter for SigDigFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serializes any value as JSON with 17-significant-digit floats.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigFormatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("serde_json emits utf-8"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationDto {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
}

impl ActivationDto {
    pub fn from_core(a: &Activation) -> Result<Self> {
        match a.kind() {
            ActivationKind::Relu => Ok(ActivationDto::Relu),
            ActivationKind::LeakyRelu { slope } => Ok(ActivationDto::LeakyRelu { slope: *slope }),
            ActivationKind::Tanh => Ok(ActivationDto::Tanh),
            ActivationKind::Custom { name, .. } => Err(Error::Format(format!(
                "custom activation '{name}' is not serializable"
            ))),
        }
    }

    pub fn to_core(&self) -> Activation {
        match self {
            ActivationDto::Relu => Activation::relu(),
            ActivationDto::LeakyRelu { slope } => Activation::leaky_relu(*slope),
            ActivationDto::Tanh => Activation::tanh(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowDto {
    ConstantOne,
    Geometric { q: f64 },
    InverseSquare,
}

impl WindowDto {
    pub fn from_core(w: &WindowSequence) -> Self {
        match w {
            WindowSequence::ConstantOne => WindowDto::ConstantOne,
            WindowSequence::Geometric { q } => WindowDto::Geometric { q: *q },
            WindowSequence::InverseSquare => WindowDto::InverseSquare,
        }
    }

    pub fn to_core(&self) -> Result<WindowSequence> {
        let w = match self {
            WindowDto::ConstantOne => WindowSequence::ConstantOne,
            WindowDto::Geometric { q } => WindowSequence::Geometric { q: *q },
            WindowDto::InverseSquare => WindowSequence::InverseSquare,
        };
        w.validate()?;
        Ok(w)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum BasisDto {
    InputAffine {
        input_dim: usize,
    },
    DiscreteNeural {
        activation: ActivationDto,
        window: WindowDto,
        bias_atom: bool,
    },
    ContinuousNeural {
        activation: ActivationDto,
        window_scale: f64,
        offset: f64,
    },
}

impl BasisDto {
    pub fn from_core(b: &BasisFunction) -> Result<Self> {
        Ok(match b {
            BasisFunction::InputAffine { input_dim } => BasisDto::InputAffine {
                input_dim: *input_dim,
            },
            BasisFunction::DiscreteNeural {
                activation,
                window,
                bias_atom,
            } => BasisDto::DiscreteNeural {
                activation: ActivationDto::from_core(activation)?,
                window: WindowDto::from_core(window),
                bias_atom: *bias_atom,
            },
            BasisFunction::ContinuousNeural {
                activation,
                window_scale,
                offset,
            } => BasisDto::ContinuousNeural {
                activation: ActivationDto::from_core(activation)?,
                window_scale: *window_scale,
                offset: *offset,
            },
        })
    }

    pub fn to_core(&self) -> Result<BasisFunction> {
        Ok(match self {
            BasisDto::InputAffine { input_dim } => BasisFunction::InputAffine {
                input_dim: *input_dim,
            },
            BasisDto::DiscreteNeural {
                activation,
                window,
                bias_atom,
            } => BasisFunction::DiscreteNeural {
                activation: activation.to_core(),
                window: window.to_core()?,
                bias_atom: *bias_atom,
            },
            BasisDto::ContinuousNeural {
                activation,
                window_scale,
                offset,
            } => BasisFunction::ContinuousNeural {
                activation: activation.to_core(),
                window_scale: *window_scale,
                offset: *offset,
            },
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocationDto {
    Discrete { index: usize },
    Euclidean { coords: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtomDto {
    pub location: LocationDto,
    pub weight: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureDto {
    pub target_dim: usize,
    pub atoms: Vec<AtomDto>,
}

impl MeasureDto {
    pub fn from_core(m: &AtomicVectorMeasure) -> Self {
        MeasureDto {
            target_dim: m.target_dim(),
            atoms: m
                .atoms()
                .iter()
                .map(|a| AtomDto {
                    location: match &a.location {
                        ParameterPoint::Discrete(i) => LocationDto::Discrete { index: *i },
                        ParameterPoint::Euclidean(v) => LocationDto::Euclidean {
                            coords: v.iter().cloned().collect(),
                        },
                    },
                    weight: a.weight.iter().cloned().collect(),
                })
                .collect(),
        }
    }

    pub fn to_core(&self) -> Result<AtomicVectorMeasure> {
        let atoms = self
            .atoms
            .iter()
            .map(|a| {
                let loc = match &a.location {
                    LocationDto::Discrete { index } => ParameterPoint::Discrete(*index),
                    LocationDto::Euclidean { coords } => ParameterPoint::euclidean(coords),
                };
                Atom::new(loc, DVector::from_column_slice(&a.weight))
            })
            .collect();
        AtomicVectorMeasure::new(self.target_dim, atoms)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerDto {
    pub basis: BasisDto,
    pub input_dim: usize,
    pub measure: MeasureDto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiniteLayerDto {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    DeepMeasure { layers: Vec<LayerDto> },
    Finite {
        activation: ActivationDto,
        layers: Vec<FiniteLayerDto>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u64,
    #[serde(flatten)]
    pub model: ModelKind,
}

impl ModelFile {
    pub fn from_deep(net: &DeepMeasureNetwork) -> Result<Self> {
        let layers = net
            .layers()
            .iter()
            .map(|l| {
                Ok(LayerDto {
                    basis: BasisDto::from_core(l.basis())?,
                    input_dim: l.input_dim(),
                    measure: MeasureDto::from_core(l.measure()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelFile {
            format_version: FORMAT_VERSION,
            model: ModelKind::DeepMeasure { layers },
        })
    }

    pub fn from_finite(net: &FiniteNetwork) -> Result<Self> {
        let layers = net
            .weights()
            .iter()
            .zip(net.biases())
            .map(|(w, b)| FiniteLayerDto {
                w: (0..w.nrows())
                    .map(|r| w.row(r).iter().cloned().collect())
                    .collect(),
                b: b.iter().cloned().collect(),
            })
            .collect();
        Ok(ModelFile {
            format_version: FORMAT_VERSION,
            model: ModelKind::Finite {
                activation: ActivationDto::from_core(net.activation())?,
                layers,
            },
        })
    }

    pub fn to_deep(&self) -> Result<DeepMeasureNetwork> {
        match &self.model {
            ModelKind::DeepMeasure { layers } => {
                let layers = layers
                    .iter()
                    .map(|l| {
                        LayerMeasure::new(l.basis.to_core()?, l.measure.to_core()?, l.input_dim)
                    })
                    .collect::<Result<Vec<_>>>()?;
                DeepMeasureNetwork::new(layers)
            }
            ModelKind::Finite { .. } => Err(Error::Format(
                "expected a deep_measure model, found a finite one".to_string(),
            )),
        }
    }

    pub fn to_finite(&self) -> Result<FiniteNetwork> {
        match &self.model {
            ModelKind::Finite { activation, layers } => {
                let mut weights = Vec::with_capacity(layers.len());
                let mut biases = Vec::with_capacity(layers.len());
                for l in layers {
                    let rows = l.w.len();
                    let cols = l.w.first().map_or(0, |r| r.len());
                    if l.w.iter().any(|r| r.len() != cols) {
                        return Err(Error::Format("ragged weight matrix".to_string()));
                    }
                    let mut w = DMatrix::zeros(rows, cols);
                    for (r, row) in l.w.iter().enumerate() {
                        for (c, v) in row.iter().enumerate() {
                            w[(r, c)] = *v;
                        }
                    }
                    weights.push(w);
                    biases.push(DVector::from_column_slice(&l.b));
                }
                FiniteNetwork::new(weights, biases, activation.to_core())
            }
            ModelKind::DeepMeasure { .. } => Err(Error::Format(
                "expected a finite model, found a deep_measure one".to_string(),
            )),
        }
    }
}

/// Parses a model file, rejecting unknown format versions with a clear error.
pub fn parse_model(text: &str) -> Result<ModelFile> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Format("missing format_version".to_string()))?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unknown format_version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    Ok(serde_json::from_value(value)?)
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    parse_model(&std::fs::read_to_string(path)?)
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<()> {
    std::fs::write(path, to_json_string(model)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digit_floats() {
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        let x = 0.1f64 + 0.2;
        let s = fmt_f64(x);
        assert_eq!(s.parse::<f64>().unwrap(), x);
    }

    #[test]
    fn json_floats_round_trip() {
        #[derive(Serialize)]
        struct S {
            v: Vec<f64>,
        }
        let s = S {
            v: vec![std::f64::consts::PI, -1e-300, 3.0],
        };
        let text = to_json_string(&s).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(
            parsed["v"][0].as_f64().unwrap(),
            std::f64::consts::PI
        );
        assert_eq!(parsed["v"][1].as_f64().unwrap(), -1e-300);
    }

    #[test]
    fn deep_model_round_trips() {
        use crate::trainer::{init_network, TrainConfig};
        let cfg = TrainConfig {
            init_widths: vec![4, 3],
            seed: 5,
            ..TrainConfig::default()
        };
        let net = init_network(&cfg, 2, 1).unwrap();
        let file = ModelFile::from_deep(&net).unwrap();
        let text = to_json_string(&file).unwrap();
        let back = parse_model(&text).unwrap().to_deep().unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn finite_model_round_trips() {
        let net = FiniteNetwork::new(
            vec![
                DMatrix::from_row_slice(2, 1, &[0.25, -1.5]),
                DMatrix::from_row_slice(1, 2, &[1.0 / 3.0, 2.0]),
            ],
            vec![
                DVector::from_column_slice(&[0.1, 0.2]),
                DVector::from_column_slice(&[-0.3]),
            ],
            Activation::tanh(),
        )
        .unwrap();
        let file = ModelFile::from_finite(&net).unwrap();
        let text = to_json_string(&file).unwrap();
        let back = parse_model(&text).unwrap().to_finite().unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn unknown_format_version_is_rejected() {
        let text = r#"{"format_version": 9, "kind": "finite", "activation": {"kind": "relu"}, "layers": []}"#;
        match parse_model(text) {
            Err(Error::Format(msg)) => assert!(msg.contains("format_version 9")),
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn kind_tag_is_snake_case() {
        let net = FiniteNetwork::new(
            vec![DMatrix::from_row_slice(1, 1, &[1.0])],
            vec![DVector::from_column_slice(&[0.0])],
            Activation::leaky_relu(0.1),
        )
        .unwrap();
        let text = to_json_string(&ModelFile::from_finite(&net).unwrap()).unwrap();
        assert!(text.contains("\"kind\":\"finite\""));
        assert!(text.contains("\"leaky_relu\""));
    }
}
