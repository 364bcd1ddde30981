//! Seeded cross-check batches: the sparse solver against the brute-force
//! oracles on tiny instances. Used by the `oracle-compare` subcommand and by
//! the acceptance suite.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use rkbs_core::basis::{Activation, BasisFunction, WindowSequence};
use rkbs_core::measure::ParameterPoint;
use rkbs_core::oracle::{brute_force_regularized, enumerate_supports, TinyInstance};
use rkbs_core::solver::{
    lmo, solve_interpolation, solve_regularized, CandidateGrid, LayerConstraintSet, SolverConfig,
};
use rkbs_core::Result;

pub const OBJECTIVE_TOLERANCE: f64 = 1e-6;
pub const TV_RELATIVE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct BatchStats {
    pub instances: usize,
    pub rejected_fixtures: usize,
    pub max_objective_diff: f64,
    pub max_tv_rel_diff: f64,
    pub support_bound_ok: bool,
    pub pass: bool,
}

fn random_basis(rng: &mut ChaCha8Rng) -> BasisFunction {
    let activation = match rng.gen_range(0..3) {
        0 => Activation::relu(),
        1 => Activation::tanh(),
        _ => Activation::leaky_relu(0.2),
    };
    let window = match rng.gen_range(0..3) {
        0 => WindowSequence::ConstantOne,
        1 => WindowSequence::Geometric { q: 0.9 },
        _ => WindowSequence::InverseSquare,
    };
    BasisFunction::DiscreteNeural {
        activation,
        window,
        bias_atom: rng.gen_bool(0.7),
    }
}

struct DrawnInstance {
    constraints: LayerConstraintSet,
    grid: CandidateGrid,
}

/// Conditioning of the full admissible design. Fixtures beyond the gate are
/// rejected at generation time: past the conditioning limit the two solvers
/// cannot be compared at the stated tolerances in f64.
fn design_condition_number(drawn: &DrawnInstance) -> f64 {
    let c = &drawn.constraints;
    let mut cols = Vec::new();
    for idx in 0..drawn.grid.len() {
        let theta = drawn.grid.point(idx);
        if !c.basis().location_admissible(&theta, c.input_dim()) {
            continue;
        }
        cols.push(DVector::from_fn(c.len(), |i, _| {
            c.basis().evaluate(&c.inputs()[i], &theta).expect("admissible")
        }));
    }
    let phi = nalgebra::DMatrix::from_columns(&cols);
    let svd = phi.svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let smin = svd.singular_values.iter().cloned().fold(f64::MAX, f64::min);
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

fn draw_instance(rng: &mut ChaCha8Rng, planted: bool) -> Result<DrawnInstance> {
    let grid_len = rng.gen_range(2..=8);
    let n = rng.gen_range(1..=3);
    let m = rng.gen_range(1..=2);
    let dim = grid_len;
    let basis = random_basis(rng);
    let inputs: Vec<DVector<f64>> = (0..n)
        .map(|_| DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let targets: Vec<DVector<f64>> = if planted {
        let k = rng.gen_range(1..=(n * m).min(grid_len));
        let mut cols: Vec<usize> = (0..grid_len).collect();
        cols.shuffle(rng);
        cols.truncate(k);
        let weights: Vec<DVector<f64>> = (0..k)
            .map(|_| DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        inputs
            .iter()
            .map(|x| {
                let mut acc = DVector::zeros(m);
                for (col, w) in cols.iter().zip(&weights) {
                    let theta = ParameterPoint::Discrete(*col);
                    if basis.location_admissible(&theta, dim) {
                        acc += w * basis.evaluate(x, &theta).expect("admissible");
                    }
                }
                acc
            })
            .collect()
    } else {
        (0..n)
            .map(|_| DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0)))
            .collect()
    };
    Ok(DrawnInstance {
        constraints: LayerConstraintSet::new(inputs, targets, basis)?,
        grid: CandidateGrid::discrete(grid_len),
    })
}

/// Compares `solve_regularized` against the dense proximal-gradient oracle on
/// `count` certified instances.
pub fn regularized_batch(count: usize, seed: u64) -> Result<BatchStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = BatchStats {
        instances: 0,
        rejected_fixtures: 0,
        max_objective_diff: 0.0,
        max_tv_rel_diff: 0.0,
        support_bound_ok: true,
        pass: false,
    };
    while stats.instances < count {
        let drawn = draw_instance(&mut rng, false)?;
        let zero_residuals: Vec<DVector<f64>> = drawn.constraints.targets().to_vec();
        let base_score = lmo(&zero_residuals, &drawn.constraints, &drawn.grid)?.score;
        if base_score < 1e-8 {
            stats.rejected_fixtures += 1;
            continue;
        }
        let lambda = base_score * rng.gen_range(0.05..1.1);
        let inst = TinyInstance::new(drawn.constraints.clone(), drawn.grid.clone(), Some(lambda))?;
        let reference = brute_force_regularized(&inst)?;
        if !reference.certified {
            stats.rejected_fixtures += 1;
            continue;
        }
        let cfg = SolverConfig {
            lambda,
            ..SolverConfig::default()
        };
        let got = solve_regularized(&drawn.constraints, &drawn.grid, &cfg)?;
        let diff = (got.objective - reference.objective).abs();
        stats.max_objective_diff = stats.max_objective_diff.max(diff);
        stats.instances += 1;
    }
    stats.pass = stats.max_objective_diff < OBJECTIVE_TOLERANCE;
    Ok(stats)
}

/// Compares `solve_interpolation` against exhaustive support enumeration on
/// `count` feasible (planted) instances.
pub fn interpolation_batch(count: usize, seed: u64) -> Result<BatchStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = BatchStats {
        instances: 0,
        rejected_fixtures: 0,
        max_objective_diff: 0.0,
        max_tv_rel_diff: 0.0,
        support_bound_ok: true,
        pass: false,
    };
    while stats.instances < count {
        let drawn = draw_instance(&mut rng, true)?;
        if design_condition_number(&drawn) > 1e6 {
            stats.rejected_fixtures += 1;
            continue;
        }
        let inst = TinyInstance::new(drawn.constraints.clone(), drawn.grid.clone(), None)?;
        let reference = match enumerate_supports(&inst) {
            Ok(r) => r,
            Err(_) => {
                stats.rejected_fixtures += 1;
                continue;
            }
        };
        let cfg = SolverConfig {
            tolerance_residual: 1e-8,
            homotopy: rkbs_core::solver::HomotopyConfig {
                min_lambda: 1e-12,
                ..Default::default()
            },
            ..SolverConfig::default()
        };
        let got = solve_interpolation(&drawn.constraints, &drawn.grid, &cfg)?;
        let bound = drawn.constraints.len() * drawn.constraints.target_dim();
        if got.measure.support_size() > bound || reference.support_size > bound {
            stats.support_bound_ok = false;
        }
        let rel = (got.tv - reference.tv).abs() / reference.tv.max(1e-9);
        stats.max_tv_rel_diff = stats.max_tv_rel_diff.max(rel);
        stats.instances += 1;
    }
    stats.pass = stats.max_tv_rel_diff < TV_RELATIVE_TOLERANCE && stats.support_bound_ok;
    Ok(stats)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareOutcome {
    pub regularized: BatchStats,
    pub interpolation: BatchStats,
    pub pass: bool,
}

pub fn run_comparison(
    regularized_count: usize,
    interpolation_count: usize,
    seed: u64,
) -> Result<CompareOutcome> {
    let regularized = regularized_batch(regularized_count, seed)?;
    let interpolation = interpolation_batch(interpolation_count, seed.wrapping_add(1))?;
    let pass = regularized.pass && interpolation.pass;
    Ok(CompareOutcome {
        regularized,
        interpolation,
        pass,
    })
}

impl CompareOutcome {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "check           instances  rejected  max_obj_diff  max_tv_rel  support  result\n",
        );
        let row = |name: &str, s: &BatchStats| {
            format!(
                "{:<15} {:<10} {:<9} {:<13.3e} {:<11.3e} {:<8} {}\n",
                name,
                s.instances,
                s.rejected_fixtures,
                s.max_objective_diff,
                s.max_tv_rel_diff,
                if s.support_bound_ok { "ok" } else { "FAIL" },
                if s.pass { "PASS" } else { "FAIL" }
            )
        };
        out.push_str(&row("regularized", &self.regularized));
        out.push_str(&row("interpolation", &self.interpolation));
        out
    }
}
