//! Implementations behind the CLI subcommands. Each command is a
//! deterministic function of the config bytes and seeds.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use rkbs_core::measure::ParameterPoint;
use rkbs_core::model::{self, fmt_f64, ModelFile, ModelKind};
use rkbs_core::network::discrete_corollary_bound;
use rkbs_core::pipeline::{run_representer, PipelineOutcome};
use rkbs_core::trainer::{self, train_prox, Dataset, TraceRow};
use rkbs_core::{Error, Result};

use crate::config::{DatasetSpec, RunConfig};
use crate::dataset_io;
use crate::synth;

/// Flags shared by all subcommands.
#[derive(Debug, Clone, Default)]
pub struct GlobalFlags {
    pub seed: Option<u64>,
    pub report: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub json: bool,
}

/// Writes the dataset CSV described by the config's generator spec.
pub fn cmd_gen_data(
    cfg: &RunConfig,
    flags: &GlobalFlags,
    out_override: Option<&Path>,
) -> Result<PathBuf> {
    let DatasetSpec::Generator { generator } = &cfg.dataset else {
        return Err(Error::Invalid {
            context: "gen-data",
            message: "config has a dataset path, not a generator spec".to_string(),
        });
    };
    let mut spec = generator.clone();
    if let Some(seed) = flags.seed {
        spec.seed = seed;
    }
    let rows = synth::generate(&spec)?;
    let out = out_override.unwrap_or(&cfg.paths.dataset).to_path_buf();
    dataset_io::write_csv(&out, spec.d, spec.p, &rows)?;
    log::info!("wrote {} samples to {}", rows.len(), out.display());
    Ok(out)
}

fn load_dataset(cfg: &RunConfig, data_override: Option<&Path>) -> Result<Dataset> {
    let path = match (data_override, &cfg.dataset) {
        (Some(p), _) => p.to_path_buf(),
        (None, DatasetSpec::Path { path }) => path.clone(),
        (None, DatasetSpec::Generator { .. }) => cfg.paths.dataset.clone(),
    };
    dataset_io::read_csv(&path)
}

fn train_trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,risk,tv_total,objective,atoms_alive\n");
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.step,
            fmt_f64(row.risk),
            fmt_f64(row.tv_total),
            fmt_f64(row.objective),
            row.atoms_alive
        ));
    }
    out
}

pub struct TrainSummary {
    pub model_path: PathBuf,
    pub trace_path: PathBuf,
    pub final_objective: f64,
    pub atoms_alive: usize,
}

/// Trains the measure network and writes the model file plus objective trace.
pub fn cmd_train(
    cfg: &RunConfig,
    flags: &GlobalFlags,
    data_override: Option<&Path>,
) -> Result<TrainSummary> {
    let data = load_dataset(cfg, data_override)?;
    let mut train_cfg = cfg.trainer.to_core()?;
    if let Some(seed) = flags.seed {
        train_cfg.seed = seed;
    }
    let outcome = train_prox(&train_cfg, &data, cfg.loss.to_core())?;
    let model_path = cfg.paths.model.clone();
    model::save_model(&model_path, &ModelFile::from_deep(&outcome.network)?)?;
    let trace_path = flags
        .trace
        .clone()
        .unwrap_or_else(|| cfg.paths.train_trace.clone());
    std::fs::write(&trace_path, train_trace_csv(&outcome.trace))?;
    let last = outcome.trace.last().expect("trace has the initial row");
    Ok(TrainSummary {
        model_path,
        trace_path,
        final_objective: last.objective,
        atoms_alive: last.atoms_alive,
    })
}

pub struct SparsifySummary {
    pub outcome: PipelineOutcome,
    pub finite_path: PathBuf,
    pub report_path: PathBuf,
}

fn solver_trace_csv(rows: &[(usize, rkbs_core::solver::SolverTraceRow)]) -> String {
    let mut out = String::from("layer,iter,objective,score,atoms,residual\n");
    for (layer, row) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            layer,
            row.iter,
            fmt_f64(row.objective),
            fmt_f64(row.score),
            row.atoms,
            fmt_f64(row.residual)
        ));
    }
    out
}

/// Runs the sparsification pipeline on a trained model and writes the finite
/// network plus the report (JSON, or CSV when the path ends in `.csv`).
pub fn cmd_sparsify(
    cfg: &RunConfig,
    flags: &GlobalFlags,
    model_override: Option<&Path>,
    data_override: Option<&Path>,
    out_override: Option<&Path>,
) -> Result<SparsifySummary> {
    let model_path = model_override.unwrap_or(&cfg.paths.model);
    let net = model::load_model(model_path)?.to_deep()?;
    let data = load_dataset(cfg, data_override)?;
    let pipeline_cfg = cfg
        .pipeline
        .to_core(cfg.solver.to_core(), cfg.loss.to_core());
    let outcome = run_representer(&net, &data, &pipeline_cfg)?;

    let finite_path = out_override.unwrap_or(&cfg.paths.finite).to_path_buf();
    model::save_model(&finite_path, &ModelFile::from_finite(&outcome.finite)?)?;

    let report_path = flags
        .report
        .clone()
        .unwrap_or_else(|| cfg.paths.report.clone());
    let report_text = if report_path.extension().is_some_and(|e| e == "csv") {
        outcome.report.to_csv()
    } else {
        model::to_json_string(&outcome.report)? + "\n"
    };
    std::fs::write(&report_path, report_text)?;

    let trace_path = flags.trace.clone().or_else(|| cfg.paths.solver_trace.clone());
    if let Some(trace_path) = trace_path {
        std::fs::write(&trace_path, solver_trace_csv(&outcome.solver_trace))?;
    }

    Ok(SparsifySummary {
        outcome,
        finite_path,
        report_path,
    })
}

/// Exports a deep-measure model directly to the finite representation
/// without re-solving anything.
pub fn cmd_export(model_path: &Path, out_path: &Path) -> Result<()> {
    let net = model::load_model(model_path)?.to_deep()?;
    let finite = net.export_finite()?;
    model::save_model(out_path, &ModelFile::from_finite(&finite)?)?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct LayerProbe {
    pub layer: usize,
    pub probes: usize,
    pub all_ok: bool,
    pub max_ratio: f64,
}

#[derive(Debug, Serialize)]
pub struct VerifyOutput {
    pub kind: String,
    pub risk: f64,
    pub objective: f64,
    pub objective_lambda: f64,
    pub tv_per_layer: Vec<f64>,
    pub phi_bound: f64,
    pub widths: Vec<usize>,
    pub corollary_bound: Option<f64>,
    pub lipschitz_probes: Vec<LayerProbe>,
    pub lipschitz_all_ok: bool,
}

impl VerifyOutput {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("model kind: {}\n", self.kind));
        out.push_str(&format!("risk: {:.12e}\n", self.risk));
        out.push_str(&format!(
            "objective (lambda {}): {:.12e}\n",
            self.objective_lambda, self.objective
        ));
        if !self.tv_per_layer.is_empty() {
            out.push_str("tv per layer:");
            for tv in &self.tv_per_layer {
                out.push_str(&format!(" {tv:.6e}"));
            }
            out.push('\n');
            out.push_str(&format!("phi bound: {:.12e}\n", self.phi_bound));
        }
        if let Some(c) = self.corollary_bound {
            out.push_str(&format!("width-normalized norm bound: {c:.12e}\n"));
        }
        out.push_str(&format!("widths: {:?}\n", self.widths));
        for probe in &self.lipschitz_probes {
            out.push_str(&format!(
                "layer {} lipschitz probes: {} ({} max lhs/rhs ratio {:.3})\n",
                probe.layer,
                probe.probes,
                if probe.all_ok { "all ok" } else { "FAILED" },
                probe.max_ratio
            ));
        }
        out
    }
}

/// Recomputes risk, norms and probe checks for a model file against a
/// dataset.
pub fn cmd_verify(
    model_path: &Path,
    data_path: &Path,
    cfg: Option<&RunConfig>,
    probes: usize,
) -> Result<VerifyOutput> {
    let data = dataset_io::read_csv(data_path)?;
    let loss = cfg.map_or(rkbs_core::trainer::LossFunction::Squared, |c| {
        c.loss.to_core()
    });
    let lambda = cfg.map_or(1.0, |c| c.trainer.lambda);
    let file = model::load_model(model_path)?;
    match &file.model {
        ModelKind::DeepMeasure { .. } => {
            let net = file.to_deep()?;
            let risk = trainer::risk(&net, &data, loss)?;
            let tv_per_layer: Vec<f64> =
                net.layers().iter().map(|l| l.measure().tv_norm()).collect();
            let phi_bound = net.complexity_upper_bound();
            let objective = risk + lambda * phi_bound;
            let widths: Vec<usize> = net.layers().iter().map(|l| l.width()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            let mut lipschitz_probes = Vec::new();
            let mut all_ok = true;
            for (idx, layer) in net.layers().iter().enumerate() {
                let mut max_ratio = 0.0f64;
                let mut ok = true;
                let locations: Vec<ParameterPoint> = layer
                    .measure()
                    .atoms()
                    .iter()
                    .map(|a| a.location.clone())
                    .collect();
                if locations.is_empty() {
                    lipschitz_probes.push(LayerProbe {
                        layer: idx,
                        probes: 0,
                        all_ok: true,
                        max_ratio: 0.0,
                    });
                    continue;
                }
                for _ in 0..probes {
                    let x = DVector::from_fn(layer.input_dim(), |_, _| rng.gen_range(-2.0..2.0));
                    let x2 = DVector::from_fn(layer.input_dim(), |_, _| rng.gen_range(-2.0..2.0));
                    let theta = &locations[rng.gen_range(0..locations.len())];
                    let w = layer.basis().lipschitz_witness(&x, &x2, theta)?;
                    ok &= w.ok;
                    if w.rhs > 0.0 {
                        max_ratio = max_ratio.max(w.lhs / w.rhs);
                    }
                }
                all_ok &= ok;
                lipschitz_probes.push(LayerProbe {
                    layer: idx,
                    probes,
                    all_ok: ok,
                    max_ratio,
                });
            }
            Ok(VerifyOutput {
                kind: "deep_measure".to_string(),
                risk,
                objective,
                objective_lambda: lambda,
                tv_per_layer,
                phi_bound,
                widths,
                corollary_bound: None,
                lipschitz_probes,
                lipschitz_all_ok: all_ok,
            })
        }
        ModelKind::Finite { .. } => {
            let net = file.to_finite()?;
            let mut risk = 0.0;
            for (x, y) in data.inputs().iter().zip(data.targets()) {
                risk += loss.value(&net.forward(x)?, y);
            }
            risk /= data.len() as f64;
            // window information is not stored in finite files; report the
            // column group-norm sum with beta = 1
            let windows = vec![
                rkbs_core::basis::WindowSequence::ConstantOne;
                net.weights().len().saturating_sub(1)
            ];
            let corollary = discrete_corollary_bound(&net, &windows);
            Ok(VerifyOutput {
                kind: "finite".to_string(),
                risk,
                objective: risk,
                objective_lambda: 0.0,
                tv_per_layer: Vec::new(),
                phi_bound: 0.0,
                widths: net.widths(),
                corollary_bound: Some(corollary),
                lipschitz_probes: Vec::new(),
                lipschitz_all_ok: true,
            })
        }
    }
}

