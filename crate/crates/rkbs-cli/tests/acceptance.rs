//! Acceptance suite. Each test prints one pass line; together they cover the
//! width bound, objective non-increase, output preservation, solver-vs-oracle
//! agreement, the extreme-point characterization, export equivalence,
//! gradient checks, Lipschitz probes, the norm bound and byte determinism.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use rkbs_cli::compare;
use rkbs_cli::config::{GeneratorSpec, RunConfig};
use rkbs_cli::synth;
use rkbs_core::basis::{Activation, BasisFunction, WindowSequence};
use rkbs_core::measure::{Atom, AtomicVectorMeasure, ExtremePointCheck, ParameterPoint};
use rkbs_core::model::ActivationDto;
use rkbs_core::network::{
    discrete_corollary_bound, DeepMeasureNetwork, LayerMeasure,
};
use rkbs_core::oracle::finite_difference_gradient;
use rkbs_core::pipeline::{run_representer, PipelineConfig, PipelineOutcome};
use rkbs_core::trainer::{
    grad_weights, init_network, train_prox, Dataset, LossFunction, TrainConfig,
};

struct AcceptanceRun {
    n: usize,
    outcome: PipelineOutcome,
}

struct RunBatch {
    runs: Vec<AcceptanceRun>,
    elapsed: Duration,
}

fn teacher_student_runs() -> &'static RunBatch {
    static RUNS: OnceLock<RunBatch> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let mut runs = Vec::new();
        for seed in 0..20u64 {
            let depth = 1 + (seed % 2) as usize;
            let n = [4usize, 6, 8][(seed % 3) as usize];
            let spec = GeneratorSpec {
                teacher_widths: vec![3; depth],
                noise: 0.0,
                n,
                d: 2,
                p: 1,
                seed: 500 + seed,
                activation: ActivationDto::Relu,
            };
            let rows = synth::generate(&spec).unwrap();
            let (inputs, targets) = rows.into_iter().unzip();
            let data = Dataset::new(inputs, targets).unwrap();
            let train_cfg = TrainConfig {
                init_widths: vec![32; depth],
                lambda: 0.005,
                steps: 150,
                step_size: 0.2,
                seed: 1000 + seed,
                ..TrainConfig::default()
            };
            let trained = train_prox(&train_cfg, &data, LossFunction::Squared)
                .unwrap()
                .network;
            let cfg = PipelineConfig::default();
            let outcome = run_representer(&trained, &data, &cfg).unwrap();
            runs.push(AcceptanceRun { n, outcome });
        }
        RunBatch {
            runs,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn criterion_01_width_bound() {
    let batch = teacher_student_runs();
    for run in &batch.runs {
        let widths = run.outcome.finite.widths();
        let p = run.outcome.finite.output_dim();
        for (i, &w) in widths.iter().enumerate() {
            let next = widths.get(i + 1).copied().unwrap_or(p);
            assert!(
                w <= run.n * next,
                "width {w} at hidden layer {} exceeds {} * {next}",
                i + 1,
                run.n
            );
        }
    }
    assert!(
        batch.elapsed < Duration::from_secs(60),
        "20 runs took {:?}",
        batch.elapsed
    );
    println!(
        "criterion 1 (width bound, 20 runs in {:?}): PASS",
        batch.elapsed
    );
}

#[test]
fn criterion_02_objective_non_increase() {
    let batch = teacher_student_runs();
    for run in &batch.runs {
        let report = &run.outcome.report;
        assert_eq!(report.objective_lambda, 1.0);
        assert!(
            report.objective_after <= report.objective_before + 1e-6,
            "objective went {} -> {}",
            report.objective_before,
            report.objective_after
        );
    }
    println!("criterion 2 (objective non-increase): PASS");
}

#[test]
fn criterion_03_output_preservation() {
    let batch = teacher_student_runs();
    for run in &batch.runs {
        let report = &run.outcome.report;
        assert_eq!(report.tolerance_residual, 1e-6);
        assert!(
            report.max_output_deviation <= report.certified_output_bound,
            "deviation {} above certified bound {}",
            report.max_output_deviation,
            report.certified_output_bound
        );
        assert!(report.bounds_hold(), "violations: {:?}", report.violations);
    }
    println!("criterion 3 (output preservation): PASS");
}

#[test]
fn criterion_04_sparse_solver_correctness() {
    let start = Instant::now();
    let regularized = compare::regularized_batch(200, 9000).unwrap();
    let interpolation = compare::interpolation_batch(100, 9001).unwrap();
    assert_eq!(regularized.instances, 200);
    assert_eq!(interpolation.instances, 100);
    assert!(
        regularized.max_objective_diff < 1e-6,
        "objective diff {}",
        regularized.max_objective_diff
    );
    assert!(
        interpolation.max_tv_rel_diff < 1e-4,
        "tv rel diff {}",
        interpolation.max_tv_rel_diff
    );
    assert!(interpolation.support_bound_ok);
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    println!(
        "criterion 4 (solver vs oracle, 300 instances in {:?}): PASS",
        elapsed
    );
}

#[test]
fn criterion_05_extreme_point_characterization() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..1000 {
        let atoms = rng.gen_range(1..=6);
        let dim = rng.gen_range(1..=3);
        let mut list = Vec::with_capacity(atoms);
        for k in 0..atoms {
            let w = DVector::from_fn(dim, |_, _| loop {
                let v: f64 = rng.gen_range(-1.0..1.0);
                if v != 0.0 {
                    break v;
                }
            });
            list.push(Atom::new(ParameterPoint::Discrete(k), w));
        }
        let mu = AtomicVectorMeasure::new(dim, list).unwrap();
        let unit = mu.scale(1.0 / mu.tv_norm()).unwrap();
        match unit.extreme_point_check().unwrap() {
            ExtremePointCheck::Extreme => {
                assert_eq!(unit.support_size(), 1);
            }
            ExtremePointCheck::Decomposition { first, second, t } => {
                assert!(unit.support_size() > 1);
                assert!((first.tv_norm() - 1.0).abs() <= 1e-12);
                assert!((second.tv_norm() - 1.0).abs() <= 1e-12);
                let recon =
                    AtomicVectorMeasure::linear_combine(t, &first, 1.0 - t, &second).unwrap();
                assert_eq!(recon.support_size(), unit.support_size());
                for (a, b) in recon.atoms().iter().zip(unit.atoms()) {
                    assert!(a.location == b.location);
                    assert!((&a.weight - &b.weight).norm() <= 1e-12);
                }
            }
        }
    }
    println!("criterion 5 (extreme points, 1000 measures): PASS");
}

fn random_discrete_net(rng: &mut ChaCha8Rng) -> DeepMeasureNetwork {
    let d = rng.gen_range(1..=3);
    let depth = rng.gen_range(1..=3);
    let activation = match rng.gen_range(0..3) {
        0 => Activation::relu(),
        1 => Activation::tanh(),
        _ => Activation::leaky_relu(0.3),
    };
    let window = match rng.gen_range(0..3) {
        0 => WindowSequence::ConstantOne,
        1 => WindowSequence::Geometric { q: 0.9 },
        _ => WindowSequence::InverseSquare,
    };
    let mut dims = vec![d];
    for _ in 0..depth {
        dims.push(rng.gen_range(1..=5));
    }
    dims.push(rng.gen_range(1..=2));

    let mut layers = Vec::new();
    for l in 0..dims.len() - 1 {
        let target = dims[l + 1];
        let mut atoms = Vec::new();
        if l == 0 {
            for j in 0..=dims[0] {
                if rng.gen_bool(0.85) {
                    let w = DVector::from_fn(target, |_, _| rng.gen_range(-1.0..1.0));
                    atoms.push(Atom::new(ParameterPoint::Discrete(j), w));
                }
            }
            layers.push(
                LayerMeasure::new(
                    BasisFunction::InputAffine { input_dim: dims[0] },
                    AtomicVectorMeasure::new(target, atoms).unwrap(),
                    dims[0],
                )
                .unwrap(),
            );
        } else {
            let bias_atom = rng.gen_bool(0.7);
            // indices may exceed the ambient input width; those read zeros
            let max_index = dims[l] + 2;
            let mut indices: Vec<usize> = (1..=max_index).collect();
            indices.shuffle(rng);
            indices.truncate(rng.gen_range(1..=max_index));
            if bias_atom && rng.gen_bool(0.8) {
                indices.push(0);
            }
            for n in indices {
                let w = DVector::from_fn(target, |_, _| rng.gen_range(-1.0..1.0));
                atoms.push(Atom::new(ParameterPoint::Discrete(n), w));
            }
            layers.push(
                LayerMeasure::new(
                    BasisFunction::DiscreteNeural {
                        activation: activation.clone(),
                        window: window.clone(),
                        bias_atom,
                    },
                    AtomicVectorMeasure::new(target, atoms).unwrap(),
                    dims[l],
                )
                .unwrap(),
            );
        }
    }
    DeepMeasureNetwork::new(layers).unwrap()
}

#[test]
fn criterion_06_export_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    for _ in 0..50 {
        let net = random_discrete_net(&mut rng);
        let finite = net.export_finite().unwrap();
        // hidden widths equal non-bias atom counts
        let atom_widths: Vec<usize> = net.layers()[1..].iter().map(|l| l.width()).collect();
        assert_eq!(finite.widths(), atom_widths);
        for _ in 0..100 {
            let x = DVector::from_fn(net.input_dim(), |_, _| rng.gen_range(-2.0..2.0));
            let a = net.forward(&x).unwrap();
            let b = finite.forward(&x).unwrap();
            assert!(
                (&a - &b).norm() < 1e-10,
                "export mismatch: {:?} vs {:?}",
                a.as_slice(),
                b.as_slice()
            );
        }
    }
    println!("criterion 6 (export equivalence, 50 nets x 100 inputs): PASS");
}

#[test]
fn criterion_07_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..20u64 {
        let cfg = TrainConfig {
            init_widths: vec![4, 3],
            activation: Activation::tanh(),
            seed: 4000 + trial,
            ..TrainConfig::default()
        };
        let net = init_network(&cfg, 2, 2).unwrap();
        let n = 5;
        let inputs: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let targets: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let data = Dataset::new(inputs, targets).unwrap();
        let analytic = grad_weights(&net, &data, LossFunction::Squared).unwrap();
        let numeric =
            finite_difference_gradient(&net, &data, LossFunction::Squared, 1e-5).unwrap();
        for (la, ln) in analytic.layers.iter().zip(&numeric.layers) {
            for (ga, gn) in la.iter().zip(ln) {
                for (a, b) in ga.iter().zip(gn.iter()) {
                    let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
                    assert!(rel < 1e-5, "gradient {a} vs finite difference {b}");
                }
            }
        }
    }
    println!("criterion 7 (gradient check, 20 tanh nets): PASS");
}

#[test]
fn criterion_08_lipschitz_probes() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let variants: Vec<BasisFunction> = vec![
        BasisFunction::InputAffine { input_dim: 4 },
        BasisFunction::DiscreteNeural {
            activation: Activation::relu(),
            window: WindowSequence::Geometric { q: 0.9 },
            bias_atom: true,
        },
        BasisFunction::DiscreteNeural {
            activation: Activation::tanh(),
            window: WindowSequence::InverseSquare,
            bias_atom: true,
        },
        BasisFunction::DiscreteNeural {
            activation: Activation::leaky_relu(0.2),
            window: WindowSequence::ConstantOne,
            bias_atom: false,
        },
        BasisFunction::ContinuousNeural {
            activation: Activation::relu(),
            window_scale: 10.0,
            offset: 0.0,
        },
        BasisFunction::ContinuousNeural {
            activation: Activation::tanh(),
            window_scale: 2.0,
            offset: 0.5,
        },
    ];
    for basis in &variants {
        for _ in 0..1000 {
            let x = DVector::from_fn(4, |_, _| rng.gen_range(-3.0..3.0));
            let x2 = DVector::from_fn(4, |_, _| rng.gen_range(-3.0..3.0));
            let theta = match basis {
                BasisFunction::InputAffine { .. } => {
                    ParameterPoint::Discrete(rng.gen_range(0..=4))
                }
                BasisFunction::DiscreteNeural { bias_atom, .. } => {
                    let lo = usize::from(!bias_atom);
                    ParameterPoint::Discrete(rng.gen_range(lo..8))
                }
                BasisFunction::ContinuousNeural { .. } => ParameterPoint::Euclidean(
                    DVector::from_fn(4, |_, _| rng.gen_range(-2.0..2.0)),
                ),
            };
            let w = basis.lipschitz_witness(&x, &x2, &theta).unwrap();
            assert!(w.ok, "lhs {} > rhs {} for {:?}", w.lhs, w.rhs, basis);
        }
    }
    println!(
        "criterion 8 (lipschitz probes, {} variants x 1000): PASS",
        variants.len()
    );
}

#[test]
fn criterion_09_norm_bound() {
    let batch = teacher_student_runs();
    for run in &batch.runs {
        let report = &run.outcome.report;
        // phi bound equals the sum of weight norms of the final representation
        let direct: f64 = run
            .outcome
            .measure_net
            .layers()
            .iter()
            .flat_map(|l| l.measure().atoms())
            .map(|a| a.weight.norm())
            .fold(0.0, |a, b| a + b);
        assert_eq!(report.phi_bound, direct);
        assert_eq!(
            report.phi_bound,
            run.outcome.measure_net.complexity_upper_bound()
        );
        // and dominates the width-normalized expression on the exported net
        let windows: Vec<WindowSequence> = run
            .outcome
            .measure_net
            .layers()[1..]
            .iter()
            .map(|l| match l.basis() {
                BasisFunction::DiscreteNeural { window, .. } => window.clone(),
                _ => unreachable!(),
            })
            .collect();
        let corollary = discrete_corollary_bound(&run.outcome.finite, &windows);
        assert!((corollary - report.discrete_corollary_bound).abs() <= 1e-12);
        assert!(
            report.phi_bound + 1e-9 >= corollary,
            "phi {} below corollary {}",
            report.phi_bound,
            corollary
        );
    }
    println!("criterion 9 (norm bound): PASS");
}

fn run_cli(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rkbs"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn criterion_10_determinism() {
    let config_text = r#"{
  "dataset": {"generator": {"teacher_widths": [3], "noise": 0.01, "n": 6, "d": 2, "p": 1, "seed": 42}},
  "trainer": {"init_widths": [16], "lambda": 0.01, "steps": 80, "step_size": 0.2, "seed": 7},
  "pipeline": {"objective_lambda": 1.0}
}
"#;
    let mut artifacts: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.json"), config_text).unwrap();
        for step in [
            vec!["gen-data", "--config", "config.json", "--threads", "1"],
            vec!["train", "--config", "config.json", "--threads", "1"],
            vec!["sparsify", "--config", "config.json", "--threads", "1"],
        ] {
            let out = run_cli(dir.path(), &step);
            assert!(
                out.status.success(),
                "step {step:?} failed: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
        let mut files = Vec::new();
        for name in [
            "data.csv",
            "model.json",
            "train_trace.csv",
            "finite.json",
            "report.json",
        ] {
            files.push((
                name.to_string(),
                std::fs::read(dir.path().join(name)).unwrap(),
            ));
        }
        artifacts.push(files);
    }
    for (a, b) in artifacts[0].iter().zip(&artifacts[1]) {
        assert_eq!(a.0, b.0);
        assert!(
            a.1 == b.1,
            "file {} differs between identical runs",
            a.0
        );
    }
    println!("criterion 10 (byte determinism across reruns): PASS");
}
