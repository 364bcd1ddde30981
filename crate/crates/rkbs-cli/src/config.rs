//! Run configuration: one JSON file drives data generation, training and
//! sparsification. Every field has a default so minimal configs stay small.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rkbs_core::model::{ActivationDto, WindowDto};
use rkbs_core::pipeline::PipelineConfig;
use rkbs_core::solver::{HomotopyConfig, SolverConfig};
use rkbs_core::trainer::{LossFunction, TrainConfig};
use rkbs_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub paths: PathsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSpec {
    Generator { generator: GeneratorSpec },
    Path { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    #[serde(default)]
    pub teacher_widths: Vec<usize>,
    #[serde(default)]
    pub noise: f64,
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub seed: u64,
    #[serde(default = "default_activation")]
    pub activation: ActivationDto,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Squared,
    Logistic,
}

impl LossKind {
    pub fn to_core(self) -> LossFunction {
        match self {
            LossKind::Squared => LossFunction::Squared,
            LossKind::Logistic => LossFunction::Logistic,
        }
    }
}

fn default_activation() -> ActivationDto {
    ActivationDto::Relu
}

fn default_window() -> WindowDto {
    WindowDto::Geometric { q: 0.9 }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    #[serde(default = "default_widths")]
    pub init_widths: Vec<usize>,
    #[serde(default = "default_one")]
    pub lambda: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init_scale: Option<f64>,
    #[serde(default = "default_activation")]
    pub activation: ActivationDto,
    #[serde(default = "default_window")]
    pub window: WindowDto,
    #[serde(default = "default_true")]
    pub bias_atom: bool,
    #[serde(default = "default_true")]
    pub penalize_bias: bool,
}

fn default_widths() -> Vec<usize> {
    vec![32]
}
fn default_one() -> f64 {
    1.0
}
fn default_steps() -> usize {
    200
}
fn default_step_size() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

impl Default for TrainerSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainerSection {
    pub fn to_core(&self) -> Result<TrainConfig> {
        let window = self.window.to_core()?;
        Ok(TrainConfig {
            init_widths: self.init_widths.clone(),
            lambda: self.lambda,
            steps: self.steps,
            step_size: self.step_size,
            seed: self.seed,
            init_scale: self.init_scale,
            activation: self.activation.to_core(),
            window,
            bias_atom: self.bias_atom,
            penalize_bias: self.penalize_bias,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomotopySection {
    #[serde(default)]
    pub lambda_start: Option<f64>,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_min_lambda")]
    pub min_lambda: f64,
}

fn default_decay() -> f64 {
    0.5
}
fn default_min_lambda() -> f64 {
    1e-10
}

impl Default for HomotopySection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_one")]
    pub lambda: f64,
    #[serde(default = "default_max_atoms")]
    pub max_atoms: usize,
    #[serde(default = "default_max_outer")]
    pub max_outer_iters: usize,
    #[serde(default = "default_fc_iters")]
    pub fc_inner_iters: usize,
    #[serde(default = "default_tol_residual")]
    pub tolerance_residual: f64,
    #[serde(default = "default_tol_gap")]
    pub tolerance_gap: f64,
    #[serde(default)]
    pub homotopy: HomotopySection,
}

fn default_max_atoms() -> usize {
    4096
}
fn default_max_outer() -> usize {
    400
}
fn default_fc_iters() -> usize {
    500
}
fn default_tol_residual() -> f64 {
    1e-6
}
fn default_tol_gap() -> f64 {
    1e-3
}

impl Default for SolverSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl SolverSection {
    pub fn to_core(&self) -> SolverConfig {
        SolverConfig {
            lambda: self.lambda,
            max_atoms: self.max_atoms,
            max_outer_iters: self.max_outer_iters,
            fc_inner_iters: self.fc_inner_iters,
            tolerance_residual: self.tolerance_residual,
            tolerance_gap: self.tolerance_gap,
            homotopy: HomotopyConfig {
                lambda_start: self.homotopy.lambda_start,
                decay: self.homotopy.decay,
                min_lambda: self.homotopy.min_lambda,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    #[serde(default = "default_one")]
    pub objective_lambda: f64,
    #[serde(default = "default_objective_tolerance")]
    pub objective_tolerance: f64,
    #[serde(default = "default_tv_tolerance")]
    pub tv_tolerance: f64,
    #[serde(default)]
    pub grid_counts: Option<Vec<usize>>,
}

fn default_objective_tolerance() -> f64 {
    1e-6
}
fn default_tv_tolerance() -> f64 {
    1e-9
}

impl Default for PipelineSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl PipelineSection {
    pub fn to_core(&self, solver: SolverConfig, loss: LossFunction) -> PipelineConfig {
        PipelineConfig {
            solver,
            loss,
            objective_lambda: self.objective_lambda,
            objective_tolerance: self.objective_tolerance,
            tv_tolerance: self.tv_tolerance,
            grid_counts: self.grid_counts.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    #[serde(default = "default_dataset_path")]
    pub dataset: PathBuf,
    #[serde(default = "default_model_path")]
    pub model: PathBuf,
    #[serde(default = "default_finite_path")]
    pub finite: PathBuf,
    #[serde(default = "default_train_trace_path")]
    pub train_trace: PathBuf,
    #[serde(default)]
    pub solver_trace: Option<PathBuf>,
    #[serde(default = "default_report_path")]
    pub report: PathBuf,
}

fn default_dataset_path() -> PathBuf {
    PathBuf::from("data.csv")
}
fn default_model_path() -> PathBuf {
    PathBuf::from("model.json")
}
fn default_finite_path() -> PathBuf {
    PathBuf::from("finite.json")
}
fn default_train_trace_path() -> PathBuf {
    PathBuf::from("train_trace.csv")
}
fn default_report_path() -> PathBuf {
    PathBuf::from("report.json")
}

impl Default for PathsSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Invalid {
            context: "run config",
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Paths in the config resolve relative to the config file's directory.
    pub fn resolve_paths(&mut self, config_path: &Path) {
        let base = config_path.parent().unwrap_or_else(|| Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        fix(&mut self.paths.dataset);
        fix(&mut self.paths.model);
        fix(&mut self.paths.finite);
        fix(&mut self.paths.train_trace);
        fix(&mut self.paths.report);
        if let Some(st) = self.paths.solver_trace.as_mut() {
            fix(st);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let text = r#"{"dataset": {"path": "d.csv"}}"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.trainer.init_widths, vec![32]);
        assert_eq!(cfg.solver.tolerance_residual, 1e-6);
        assert_eq!(cfg.pipeline.objective_lambda, 1.0);
        assert!(matches!(cfg.dataset, DatasetSpec::Path { .. }));
    }

    #[test]
    fn generator_config_parses() {
        let text = r#"{"dataset": {"generator": {"teacher_widths": [3], "n": 8, "d": 2, "p": 1, "seed": 42}}}"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        match cfg.dataset {
            DatasetSpec::Generator { generator } => {
                assert_eq!(generator.n, 8);
                assert_eq!(generator.noise, 0.0);
            }
            _ => panic!("expected generator spec"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"dataset": {"path": "d.csv"}, "trainer": {"typo_field": 1}}"#;
        assert!(serde_json::from_str::<RunConfig>(text).is_err());
    }
}
