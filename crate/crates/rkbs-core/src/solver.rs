//! Sparse recovery of atomic measures by fully-corrective conditional
//! gradient.
//!
//! `solve_regularized` minimizes `1/2 sum_i |f_mu(x_i) - t_i|^2 + lambda |mu|_TV`
//! over atomic measures: a linear minimization oracle over the extreme points
//! `y * delta_theta` of the unit TV ball proposes atoms, and a proximal
//! gradient pass reweights the whole active set after each insertion.
//! `solve_interpolation` drives lambda towards zero until the constraints
//! `f_mu(x_i) = t_i` hold within tolerance, then prunes the support down to
//! the dimension count of the constraint space.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::BasisFunction;
use crate::error::{Error, Result};
use crate::measure::{Atom, AtomicVectorMeasure, ParameterPoint};

/// Grid scans switch to data-parallel scoring above this candidate count.
const PARALLEL_GRID_THRESHOLD: usize = 4096;

/// Interpolation data for one layer: inputs, targets and the basis whose
/// atoms are the decision variables.
#[derive(Debug, Clone)]
pub struct LayerConstraintSet {
    inputs: Vec<DVector<f64>>,
    targets: Vec<DVector<f64>>,
    basis: BasisFunction,
}

impl LayerConstraintSet {
    pub fn new(
        inputs: Vec<DVector<f64>>,
        targets: Vec<DVector<f64>>,
        basis: BasisFunction,
    ) -> Result<Self> {
        if inputs.len() != targets.len() || inputs.is_empty() {
            return Err(Error::Invalid {
                context: "constraint set",
                message: format!(
                    "{} inputs vs {} targets",
                    inputs.len(),
                    targets.len()
                ),
            });
        }
        let din = inputs[0].len();
        let dout = targets[0].len();
        if inputs.iter().any(|x| x.len() != din) {
            return Err(Error::DimensionMismatch {
                context: "constraint inputs",
                expected: din,
                got: inputs.iter().map(|x| x.len()).find(|&l| l != din).unwrap(),
            });
        }
        if targets.iter().any(|t| t.len() != dout) {
            return Err(Error::DimensionMismatch {
                context: "constraint targets",
                expected: dout,
                got: targets.iter().map(|t| t.len()).find(|&l| l != dout).unwrap(),
            });
        }
        Ok(LayerConstraintSet {
            inputs,
            targets,
            basis,
        })
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

    pub fn target_dim(&self) -> usize {
        self.targets[0].len()
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[DVector<f64>] {
        &self.targets
    }

    pub fn basis(&self) -> &BasisFunction {
        &self.basis
    }
}

/// Refinement of euclidean grid argmaxima by shrinking coordinate search.
#[derive(Debug, Clone, Copy)]
pub struct RefineConfig {
    pub enabled: bool,
    pub steps: usize,
    pub shrink: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            enabled: true,
            steps: 8,
            shrink: 0.5,
        }
    }
}

/// Candidate atom locations for the linear minimization oracle.
#[derive(Debug, Clone)]
pub enum CandidateGrid {
    /// Indices `0..count`.
    Discrete { count: usize },
    /// An axis-aligned box sampled with `per_axis` points per axis.
    Euclidean {
        lower: DVector<f64>,
        upper: DVector<f64>,
        per_axis: Vec<usize>,
        refine: RefineConfig,
    },
}

impl CandidateGrid {
    pub fn discrete(count: usize) -> Self {
        CandidateGrid::Discrete { count }
    }

    pub fn len(&self) -> usize {
        match self {
            CandidateGrid::Discrete { count } => *count,
            CandidateGrid::Euclidean { per_axis, .. } => per_axis.iter().product(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Deterministic enumeration; euclidean points are ordered
    /// lexicographically so that smaller enumeration index means
    /// lexicographically smaller point.
    pub fn point(&self, idx: usize) -> ParameterPoint {
        match self {
            CandidateGrid::Discrete { .. } => ParameterPoint::Discrete(idx),
            CandidateGrid::Euclidean {
                lower,
                upper,
                per_axis,
                ..
            } => {
                let mut rem = idx;
                let mut strides = vec![1usize; per_axis.len()];
                for axis in (0..per_axis.len()).rev() {
                    strides[axis] = if axis + 1 < per_axis.len() {
                        strides[axis + 1] * per_axis[axis + 1]
                    } else {
                        1
                    };
                }
                let mut coords = DVector::zeros(per_axis.len());
                for axis in 0..per_axis.len() {
                    let i = rem / strides[axis];
                    rem %= strides[axis];
                    coords[axis] = axis_value(lower[axis], upper[axis], per_axis[axis], i);
                }
                ParameterPoint::Euclidean(coords)
            }
        }
    }

    fn axis_spacing(&self, axis: usize) -> f64 {
        match self {
            CandidateGrid::Discrete { .. } => 0.0,
            CandidateGrid::Euclidean {
                lower,
                upper,
                per_axis,
                ..
            } => {
                if per_axis[axis] > 1 {
                    (upper[axis] - lower[axis]) / (per_axis[axis] - 1) as f64
                } else {
                    (upper[axis] - lower[axis]) / 2.0
                }
            }
        }
    }
}

fn axis_value(lo: f64, hi: f64, count: usize, i: usize) -> f64 {
    if count <= 1 {
        0.5 * (lo + hi)
    } else {
        lo + (hi - lo) * i as f64 / (count - 1) as f64
    }
}

/// Best extreme point against the residuals: location, unit direction and
/// the score `|sum_i r_i rho(x_i, theta)|`.
#[derive(Debug, Clone)]
pub struct LmoResult {
    pub location: ParameterPoint,
    pub direction: DVector<f64>,
    pub score: f64,
}

fn lmo_vector(
    residuals: &[DVector<f64>],
    constraints: &LayerConstraintSet,
    theta: &ParameterPoint,
) -> Result<DVector<f64>> {
    let mut acc = DVector::zeros(residuals[0].len());
    for (x, r) in constraints.inputs.iter().zip(residuals) {
        let v = constraints.basis.evaluate(x, theta)?;
        acc.axpy(v, r, 1.0);
    }
    Ok(acc)
}

/// Scans the grid for the extreme point `y * delta_theta` maximizing the
/// pairing with the residuals. Ties break towards the smallest enumeration
/// index (lexicographic for euclidean grids). Inadmissible candidates (the
/// index-zero atom of a bias-free discrete basis) are skipped.
pub fn lmo(
    residuals: &[DVector<f64>],
    constraints: &LayerConstraintSet,
    grid: &CandidateGrid,
) -> Result<LmoResult> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let m = constraints.target_dim();
    if residuals.len() != constraints.len() {
        return Err(Error::DimensionMismatch {
            context: "lmo residual count",
            expected: constraints.len(),
            got: residuals.len(),
        });
    }
    for r in residuals {
        if r.len() != m {
            return Err(Error::DimensionMismatch {
                context: "lmo residual",
                expected: m,
                got: r.len(),
            });
        }
    }

    let din = constraints.input_dim();
    let score_at = |idx: usize| -> Option<(f64, usize)> {
        let theta = grid.point(idx);
        if !constraints.basis.location_admissible(&theta, din) {
            return None;
        }
        let v = lmo_vector(residuals, constraints, &theta).ok()?;
        Some((v.norm(), idx))
    };
    let better = |a: Option<(f64, usize)>, b: Option<(f64, usize)>| match (a, b) {
        (None, b) => b,
        (a, None) => a,
        (Some((sa, ia)), Some((sb, ib))) => {
            if sb > sa || (sb == sa && ib < ia) {
                Some((sb, ib))
            } else {
                Some((sa, ia))
            }
        }
    };

    let best = if grid.len() >= PARALLEL_GRID_THRESHOLD {
        (0..grid.len())
            .into_par_iter()
            .map(score_at)
            .reduce(|| None, better)
    } else {
        (0..grid.len()).map(score_at).fold(None, better)
    };

    let (mut score, best_idx) = best.ok_or(Error::EmptyGrid)?;
    let mut location = grid.point(best_idx);

    if let CandidateGrid::Euclidean {
        lower,
        upper,
        per_axis,
        refine,
    } = grid
    {
        if refine.enabled {
            let mut radii: Vec<f64> = (0..per_axis.len()).map(|a| grid.axis_spacing(a)).collect();
            for _ in 0..refine.steps {
                for axis in 0..per_axis.len() {
                    if radii[axis] == 0.0 {
                        continue;
                    }
                    for dir in [-1.0, 1.0] {
                        let mut cand = match &location {
                            ParameterPoint::Euclidean(v) => v.clone(),
                            _ => unreachable!(),
                        };
                        cand[axis] =
                            (cand[axis] + dir * radii[axis]).clamp(lower[axis], upper[axis]);
                        let theta = ParameterPoint::Euclidean(cand);
                        let s = lmo_vector(residuals, constraints, &theta)?.norm();
                        if s > score {
                            score = s;
                            location = theta;
                        }
                    }
                }
                for r in radii.iter_mut() {
                    *r *= refine.shrink;
                }
            }
        }
    }

    let v = lmo_vector(residuals, constraints, &location)?;
    let norm = v.norm();
    let direction = if norm == 0.0 {
        let mut e1 = DVector::zeros(m);
        e1[0] = 1.0;
        e1
    } else {
        v / norm
    };
    Ok(LmoResult {
        location,
        direction,
        score,
    })
}

/// Proximal operator of `tau * |.|_2`: block soft-thresholding.
pub fn prox_group(w: &DVector<f64>, tau: f64) -> DVector<f64> {
    debug_assert!(tau >= 0.0);
    let norm = w.norm();
    if norm <= tau {
        DVector::zeros(w.len())
    } else {
        w * (1.0 - tau / norm)
    }
}

/// Homotopy schedule for interpolation solves.
#[derive(Debug, Clone, Copy)]
pub struct HomotopyConfig {
    /// Starting lambda; defaults to the LMO score at the zero measure.
    pub lambda_start: Option<f64>,
    pub decay: f64,
    pub min_lambda: f64,
}

impl Default for HomotopyConfig {
    fn default() -> Self {
        HomotopyConfig {
            lambda_start: None,
            decay: 0.5,
            min_lambda: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub lambda: f64,
    pub max_atoms: usize,
    pub max_outer_iters: usize,
    pub fc_inner_iters: usize,
    pub tolerance_residual: f64,
    pub tolerance_gap: f64,
    pub homotopy: HomotopyConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 1.0,
            max_atoms: 4096,
            max_outer_iters: 400,
            fc_inner_iters: 500,
            tolerance_residual: 1e-6,
            tolerance_gap: 1e-3,
            homotopy: HomotopyConfig::default(),
        }
    }
}

/// One outer iteration of the active-set loop, for the CSV trace.
#[derive(Debug, Clone)]
pub struct SolverTraceRow {
    pub iter: usize,
    pub objective: f64,
    pub score: f64,
    pub atoms: usize,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct RegularizedSolution {
    pub measure: AtomicVectorMeasure,
    pub objective: f64,
    pub dual_gap: f64,
    pub trace: Vec<SolverTraceRow>,
}

#[derive(Debug, Clone)]
pub struct HomotopyStage {
    pub lambda: f64,
    pub residual: f64,
    pub atoms: usize,
    pub tv: f64,
}

#[derive(Debug, Clone)]
pub struct InterpolationSolution {
    pub measure: AtomicVectorMeasure,
    pub tv: f64,
    pub residual: f64,
    pub stages: Vec<HomotopyStage>,
    pub trace: Vec<SolverTraceRow>,
}

/// Active atoms with cached design matrix columns.
struct ActiveSet<'a> {
    constraints: &'a LayerConstraintSet,
    locations: Vec<ParameterPoint>,
    /// K x m weight matrix; row k is the weight of atom k.
    weights: DMatrix<f64>,
    /// N x K design; column k holds rho(x_i, theta_k).
    design: DMatrix<f64>,
}

impl<'a> ActiveSet<'a> {
    fn new(constraints: &'a LayerConstraintSet) -> Self {
        ActiveSet {
            constraints,
            locations: Vec::new(),
            weights: DMatrix::zeros(0, constraints.target_dim()),
            design: DMatrix::zeros(constraints.len(), 0),
        }
    }

    fn support(&self) -> usize {
        self.locations.len()
    }

    fn contains(&self, theta: &ParameterPoint) -> bool {
        self.locations.iter().any(|loc| loc == theta)
    }

    fn insert(&mut self, theta: ParameterPoint) -> Result<()> {
        let n = self.constraints.len();
        let mut col = DVector::zeros(n);
        for (i, x) in self.constraints.inputs.iter().enumerate() {
            col[i] = self.constraints.basis.evaluate(x, &theta)?;
        }
        let k = self.support();
        self.locations.push(theta);
        self.weights = self.weights.clone().insert_row(k, 0.0);
        self.design = self.design.clone().insert_column(k, 0.0);
        self.design.set_column(k, &col);
        Ok(())
    }

    fn remove(&mut self, k: usize) {
        self.locations.remove(k);
        self.weights = self.weights.clone().remove_row(k);
        self.design = self.design.clone().remove_column(k);
    }

    fn drop_zero_rows(&mut self) {
        let mut k = 0;
        while k < self.support() {
            if self.weights.row(k).norm() == 0.0 {
                self.remove(k);
            } else {
                k += 1;
            }
        }
    }

    /// N x m prediction matrix.
    fn predictions(&self) -> DMatrix<f64> {
        &self.design * &self.weights
    }

    fn target_matrix(&self) -> DMatrix<f64> {
        let n = self.constraints.len();
        let m = self.constraints.target_dim();
        let mut t = DMatrix::zeros(n, m);
        for (i, target) in self.constraints.targets.iter().enumerate() {
            t.row_mut(i).copy_from(&target.transpose());
        }
        t
    }

    fn residual_vectors(&self) -> Vec<DVector<f64>> {
        let pred = self.predictions();
        self.constraints
            .targets
            .iter()
            .enumerate()
            .map(|(i, t)| t - pred.row(i).transpose())
            .collect()
    }

    fn max_residual(&self) -> f64 {
        self.residual_vectors()
            .iter()
            .map(|r| r.norm())
            .fold(0.0, f64::max)
    }

    fn tv(&self) -> f64 {
        (0..self.support())
            .map(|k| self.weights.row(k).norm())
            .fold(0.0, |a, b| a + b)
    }

    fn objective(&self, lambda: f64) -> f64 {
        let diff = self.predictions() - self.target_matrix();
        0.5 * diff.norm_squared() + lambda * self.tv()
    }

    /// Largest eigenvalue of a gram matrix by power iteration. The start
    /// vector is pseudorandom: a structured start (e.g. all ones) can sit
    /// exactly on a minor eigenvector and converge to the wrong extreme.
    fn largest_eigenvalue(gram: &DMatrix<f64>) -> f64 {
        let k = gram.ncols();
        if k == 0 {
            return 0.0;
        }
        let mut seed = 0x9e3779b97f4a7c15u64;
        let mut v = DVector::from_fn(k, |_, _| {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        });
        let norm = v.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v /= norm;
        let mut eig = 0.0;
        for _ in 0..96 {
            let w = gram * &v;
            let norm = w.norm();
            if norm == 0.0 {
                return 0.0;
            }
            v = w / norm;
            eig = (gram * &v).dot(&v);
        }
        eig
    }

    /// Full-correction pass: accelerated proximal gradient (FISTA with
    /// restart) on all active weights with step 1/L from a power-iteration
    /// estimate. Columns are equilibrated to unit norm first; in the scaled
    /// variables the group thresholds become per-row `lambda / s_k`, which is
    /// an exact reparameterization that keeps the gram well conditioned under
    /// decaying windows. Returns false when the pass ran out of iterations
    /// before the iterates settled.
    fn fully_correct(&mut self, lambda: f64, iters: usize) -> bool {
        let k = self.support();
        if k == 0 {
            return true;
        }
        let scales: Vec<f64> = (0..k)
            .map(|c| {
                let s = self.design.column(c).norm();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let mut design = self.design.clone();
        for (c, s) in scales.iter().enumerate() {
            let scaled = design.column(c) / *s;
            design.set_column(c, &scaled);
        }
        let gram = design.transpose() * &design;
        let lip = Self::largest_eigenvalue(&gram) * 1.02;
        if lip == 0.0 {
            return true;
        }
        let mut step = 1.0 / lip;
        let targets = self.target_matrix();
        let objective_of = |v: &DMatrix<f64>| -> f64 {
            let diff = &design * v - &targets;
            let tv = (0..v.nrows())
                .map(|r| v.row(r).norm() * lambda / scales[r])
                .fold(0.0, |a, b| a + b);
            0.5 * diff.norm_squared() + tv
        };

        // scaled variables: v_k = s_k * w_k
        let mut x = self.weights.clone();
        for (r, s) in scales.iter().enumerate() {
            let scaled = x.row(r) * *s;
            x.row_mut(r).copy_from(&scaled);
        }
        let mut y = x.clone();
        let mut t = 1.0f64;
        let mut best = x.clone();
        let mut best_obj = objective_of(&best);
        let mut prev_obj = best_obj;
        let mut settled = false;

        for _ in 0..iters {
            let fitted = &design * &y;
            let residual_y = &fitted - &targets;
            let smooth_y = 0.5 * residual_y.norm_squared();
            let grad = design.transpose() * residual_y;
            // backtracking guards the power-iteration estimate: halve the
            // step until the quadratic upper model holds at the prox point
            let mut z;
            loop {
                let half = &y - &grad * step;
                z = half.clone();
                for r in 0..z.nrows() {
                    let row = half.row(r).transpose();
                    let updated = prox_group(&row, step * lambda / scales[r]);
                    z.row_mut(r).copy_from(&updated.transpose());
                }
                let dz = &z - &y;
                let smooth_z = 0.5 * (&design * &z - &targets).norm_squared();
                let model = smooth_y + grad.dot(&dz) + dz.norm_squared() / (2.0 * step);
                if smooth_z <= model + 1e-12 * (1.0 + model.abs()) || step <= 1e-18 {
                    break;
                }
                step *= 0.5;
            }
            let obj = objective_of(&z);
            if obj < best_obj {
                best_obj = obj;
                best.copy_from(&z);
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let momentum = (t - 1.0) / t_next;
            let change = (&z - &x).amax();
            if obj > prev_obj {
                // restart the momentum when the objective backslides
                y = z.clone();
                t = 1.0;
            } else {
                y = &z + (&z - &x) * momentum;
                t = t_next;
            }
            prev_obj = obj;
            x = z;
            if change <= 1e-15 * (1.0 + x.amax()) {
                settled = true;
                break;
            }
        }
        // The last iterate resolves the flat region around the optimum better
        // than objective comparisons can; fall back to the tracked best only
        // if the pass genuinely backslid.
        let final_obj = objective_of(&x);
        let mut chosen = if final_obj <= best_obj + 1e-12 * (1.0 + best_obj.abs()) {
            x
        } else {
            best
        };
        for (r, s) in scales.iter().enumerate() {
            let unscaled = chosen.row(r) / *s;
            chosen.row_mut(r).copy_from(&unscaled);
        }
        self.weights = chosen;
        self.drop_zero_rows();
        settled
    }

    fn to_measure(&self) -> Result<AtomicVectorMeasure> {
        let atoms = self
            .locations
            .iter()
            .enumerate()
            .map(|(k, loc)| Atom::new(loc.clone(), self.weights.row(k).transpose()))
            .collect();
        AtomicVectorMeasure::new(self.constraints.target_dim(), atoms)
    }

    fn snapshot(&self) -> (Vec<ParameterPoint>, DMatrix<f64>, DMatrix<f64>) {
        (
            self.locations.clone(),
            self.weights.clone(),
            self.design.clone(),
        )
    }

    fn restore(&mut self, snap: (Vec<ParameterPoint>, DMatrix<f64>, DMatrix<f64>)) {
        self.locations = snap.0;
        self.weights = snap.1;
        self.design = snap.2;
    }
}

/// Runs the outer insertion loop at a fixed lambda on an existing active set.
/// Returns the final LMO score.
fn run_outer_loop(
    state: &mut ActiveSet,
    grid: &CandidateGrid,
    cfg: &SolverConfig,
    lambda: f64,
    fc_iters: usize,
    trace: &mut Vec<SolverTraceRow>,
) -> Result<(f64, bool)> {
    let threshold = lambda * (1.0 + cfg.tolerance_gap);
    let mut objective = state.objective(lambda);
    let mut score = 0.0;
    let mut settled = true;
    for iter in 0..cfg.max_outer_iters {
        let residuals = state.residual_vectors();
        let pick = lmo(&residuals, state.constraints, grid)?;
        score = pick.score;
        trace.push(SolverTraceRow {
            iter,
            objective,
            score,
            atoms: state.support(),
            residual: state.max_residual(),
        });
        if score <= threshold {
            return Ok((score, settled));
        }
        if !state.contains(&pick.location) {
            if state.support() + 1 > cfg.max_atoms {
                return Err(Error::AtomBudgetExceeded {
                    budget: cfg.max_atoms,
                });
            }
            state.insert(pick.location)?;
        }
        settled = state.fully_correct(lambda, fc_iters);
        let new_objective = state.objective(lambda);
        assert!(
            new_objective <= objective + 1e-9 * (1.0 + objective.abs()),
            "objective increased within the outer loop: {objective} -> {new_objective}"
        );
        objective = new_objective;
    }
    Ok((score, settled))
}

/// Minimizes `1/2 sum_i |f_mu(x_i) - t_i|^2 + lambda |mu|_TV` over atomic
/// measures supported on the grid.
pub fn solve_regularized(
    constraints: &LayerConstraintSet,
    grid: &CandidateGrid,
    cfg: &SolverConfig,
) -> Result<RegularizedSolution> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut state = ActiveSet::new(constraints);
    let mut trace = Vec::new();
    let (score, _) = run_outer_loop(
        &mut state,
        grid,
        cfg,
        cfg.lambda,
        cfg.fc_inner_iters,
        &mut trace,
    )?;
    Ok(RegularizedSolution {
        measure: state.to_measure()?,
        objective: state.objective(cfg.lambda),
        dual_gap: (score - cfg.lambda).max(0.0),
        trace,
    })
}

/// TV-minimizing interpolation by lambda-homotopy: decrease lambda until the
/// constraints hold within `tolerance_residual`, then prune the support down
/// to `N * m`.
pub fn solve_interpolation(
    constraints: &LayerConstraintSet,
    grid: &CandidateGrid,
    cfg: &SolverConfig,
) -> Result<InterpolationSolution> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let n = constraints.len();
    let m = constraints.target_dim();
    let bound = n * m;
    let mut trace = Vec::new();
    let mut stages = Vec::new();

    if m == 0 {
        return Ok(InterpolationSolution {
            measure: AtomicVectorMeasure::empty(0),
            tv: 0.0,
            residual: 0.0,
            stages,
            trace,
        });
    }

    let mut state = ActiveSet::new(constraints);
    let zero_residuals: Vec<DVector<f64>> = constraints.targets.to_vec();
    let start_score = lmo(&zero_residuals, constraints, grid)?.score;
    let mut lambda = cfg.homotopy.lambda_start.unwrap_or(start_score);

    if lambda <= 0.0 {
        // Zero targets (or an explicit zero start): the empty measure is optimal.
        let residual = state.max_residual();
        if residual > cfg.tolerance_residual {
            return Err(Error::Infeasible { residual, lambda });
        }
        return Ok(InterpolationSolution {
            measure: state.to_measure()?,
            tv: 0.0,
            residual,
            stages,
            trace,
        });
    }

    let mut residual;
    // An unsettled correction pass means the active design is badly
    // conditioned and needs more iterations than the default budget;
    // escalate only then, and drop back once passes settle again.
    let mut boost = 1usize;
    loop {
        let (_, settled) = run_outer_loop(
            &mut state,
            grid,
            cfg,
            lambda,
            cfg.fc_inner_iters * boost,
            &mut trace,
        )?;
        residual = state.max_residual();
        stages.push(HomotopyStage {
            lambda,
            residual,
            atoms: state.support(),
            tv: state.tv(),
        });
        if residual <= cfg.tolerance_residual {
            break;
        }
        boost = if settled { 1 } else { (boost * 4).min(64) };
        lambda *= cfg.homotopy.decay;
        if lambda < cfg.homotopy.min_lambda {
            return Err(Error::Infeasible { residual, lambda });
        }
    }

    prune_support(&mut state, lambda, cfg, bound)?;

    let residual = state.max_residual();
    let measure = state.to_measure()?;
    if measure.support_size() > bound {
        return Err(Error::SupportBound {
            support: measure.support_size(),
            bound,
        });
    }
    Ok(InterpolationSolution {
        tv: measure.tv_norm(),
        residual,
        measure,
        stages,
        trace,
    })
}

/// Removes redundant atoms (ascending weight norm). A removal is kept when
/// the re-corrected active set still meets the residual tolerance; while the
/// support exceeds `bound`, removals are forced through even if they bump the
/// TV norm.
fn prune_support(
    state: &mut ActiveSet,
    lambda: f64,
    cfg: &SolverConfig,
    bound: usize,
) -> Result<()> {
    // Re-corrections after a removal start from a disturbed point and need a
    // bigger budget than the in-loop passes.
    let fc_iters = cfg.fc_inner_iters * 8;
    // Pass 1: drop atoms whose removal costs nothing (feasibility and TV
    // kept). Indices shift as atoms go, so candidates are tracked by
    // location.
    let candidates: Vec<ParameterPoint> = {
        let mut with_norms: Vec<(f64, ParameterPoint)> = (0..state.support())
            .map(|k| (state.weights.row(k).norm(), state.locations[k].clone()))
            .collect();
        with_norms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        with_norms.into_iter().map(|(_, loc)| loc).collect()
    };
    for loc in candidates {
        let Some(k) = state.locations.iter().position(|l| *l == loc) else {
            continue;
        };
        let tv_before = state.tv();
        let snap = state.snapshot();
        state.remove(k);
        state.fully_correct(lambda, fc_iters);
        let feasible = state.max_residual() <= cfg.tolerance_residual;
        let tv_ok = state.tv() <= tv_before + 1e-12;
        if !(feasible && tv_ok) {
            state.restore(snap);
        }
    }
    // Pass 2: enforce the support bound, allowing TV to move if it must.
    while state.support() > bound {
        let mut order: Vec<usize> = (0..state.support()).collect();
        order.sort_by(|&a, &b| {
            state
                .weights
                .row(a)
                .norm()
                .partial_cmp(&state.weights.row(b).norm())
                .unwrap()
        });
        let mut shrunk = false;
        for &k in &order {
            let snap = state.snapshot();
            state.remove(k);
            state.fully_correct(lambda, fc_iters);
            if state.max_residual() <= cfg.tolerance_residual {
                shrunk = true;
                break;
            }
            state.restore(snap);
        }
        if !shrunk {
            return Err(Error::SupportBound {
                support: state.support(),
                bound,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{Activation, WindowSequence};

    fn vecd(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn affine_constraints(
        inputs: &[&[f64]],
        targets: &[&[f64]],
        input_dim: usize,
    ) -> LayerConstraintSet {
        LayerConstraintSet::new(
            inputs.iter().map(|x| vecd(x)).collect(),
            targets.iter().map(|t| vecd(t)).collect(),
            BasisFunction::InputAffine { input_dim },
        )
        .unwrap()
    }

    #[test]
    fn lmo_zero_residuals() {
        let c = affine_constraints(&[&[1.0]], &[&[0.0, 0.0]], 1);
        let grid = CandidateGrid::discrete(2);
        let out = lmo(&[vecd(&[0.0, 0.0])], &c, &grid).unwrap();
        assert_eq!(out.score, 0.0);
        assert_eq!(out.direction, vecd(&[1.0, 0.0]));
    }

    #[test]
    fn lmo_prefers_larger_basis_value() {
        // rho(x, 1) = x_1 = 1, rho(x, 2) = x_2 = 3; residual (2)
        let c = affine_constraints(&[&[1.0, 3.0]], &[&[0.0]], 2);
        let grid = CandidateGrid::discrete(3);
        let out = lmo(&[vecd(&[2.0])], &c, &grid).unwrap();
        assert_eq!(out.location, ParameterPoint::Discrete(2));
        assert_eq!(out.score, 6.0);
        assert_eq!(out.direction, vecd(&[1.0]));
    }

    #[test]
    fn lmo_matches_exhaustive_scan() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let n = rng.gen_range(1..=3);
            let m = rng.gen_range(1..=2);
            let count = rng.gen_range(2..=9);
            let dim = count;
            let inputs: Vec<DVector<f64>> = (0..n)
                .map(|_| DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0)))
                .collect();
            let targets: Vec<DVector<f64>> = (0..n).map(|_| DVector::zeros(m)).collect();
            let residuals: Vec<DVector<f64>> = (0..n)
                .map(|_| DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0)))
                .collect();
            let basis = BasisFunction::DiscreteNeural {
                activation: Activation::tanh(),
                window: WindowSequence::Geometric { q: 0.9 },
                bias_atom: true,
            };
            let c = LayerConstraintSet::new(inputs.clone(), targets, basis.clone()).unwrap();
            let grid = CandidateGrid::discrete(count);
            let got = lmo(&residuals, &c, &grid).unwrap();

            // independent exhaustive scan
            let mut best = f64::NEG_INFINITY;
            let mut best_idx = 0;
            for idx in 0..count {
                let theta = ParameterPoint::Discrete(idx);
                let mut acc = DVector::zeros(m);
                for (x, r) in inputs.iter().zip(&residuals) {
                    acc += r * basis.evaluate(x, &theta).unwrap();
                }
                let s = acc.norm();
                if s > best {
                    best = s;
                    best_idx = idx;
                }
            }
            assert_eq!(got.score, best);
            assert_eq!(got.location, ParameterPoint::Discrete(best_idx));
        }
    }

    #[test]
    fn prox_group_examples() {
        assert_eq!(prox_group(&vecd(&[3.0, 4.0]), 5.0), vecd(&[0.0, 0.0]));
        assert_eq!(prox_group(&vecd(&[3.0, 4.0]), 2.5), vecd(&[1.5, 2.0]));
        assert_eq!(prox_group(&vecd(&[0.0, 0.0]), 1.0), vecd(&[0.0, 0.0]));
    }

    #[test]
    fn regularized_dominant_lambda_returns_empty() {
        let c = affine_constraints(&[&[1.0], &[2.0]], &[&[1.0], &[0.5]], 1);
        let grid = CandidateGrid::discrete(2);
        // lmo score at zero: max over theta of |sum_i t_i rho(x_i, theta)|
        let score = lmo(
            &[vecd(&[1.0]), vecd(&[0.5])],
            &c,
            &grid,
        )
        .unwrap()
        .score;
        let cfg = SolverConfig {
            lambda: score,
            ..SolverConfig::default()
        };
        let out = solve_regularized(&c, &grid, &cfg).unwrap();
        assert!(out.measure.is_empty());
        let expected = 0.5 * (1.0f64.powi(2) + 0.5f64.powi(2));
        assert!((out.objective - expected).abs() < 1e-12);
    }

    #[test]
    fn regularized_single_atom_closed_form() {
        // one grid point with rho(x_1, 0) = 1 (bias atom): w* = prox(b, lambda)
        let b = [3.0, 4.0];
        let c = LayerConstraintSet::new(
            vec![vecd(&[0.0])],
            vec![vecd(&b)],
            BasisFunction::DiscreteNeural {
                activation: Activation::relu(),
                window: WindowSequence::ConstantOne,
                bias_atom: true,
            },
        )
        .unwrap();
        let grid = CandidateGrid::discrete(1);
        let cfg = SolverConfig {
            lambda: 2.5,
            ..SolverConfig::default()
        };
        let out = solve_regularized(&c, &grid, &cfg).unwrap();
        assert_eq!(out.measure.support_size(), 1);
        let w = &out.measure.atoms()[0].weight;
        let expected = prox_group(&vecd(&b), 2.5);
        assert!((w - expected).norm() < 1e-10);
    }

    #[test]
    fn regularized_objective_is_monotone() {
        let c = affine_constraints(
            &[&[1.0, 0.2], &[0.3, -1.0], &[-0.4, 0.9]],
            &[&[1.0], &[-0.5], &[0.25]],
            2,
        );
        let grid = CandidateGrid::discrete(3);
        let cfg = SolverConfig {
            lambda: 0.05,
            ..SolverConfig::default()
        };
        let out = solve_regularized(&c, &grid, &cfg).unwrap();
        for pair in out.trace.windows(2) {
            assert!(pair[1].objective <= pair[0].objective + 1e-9 * (1.0 + pair[0].objective));
        }
        // certificate at convergence
        assert!(out.dual_gap <= cfg.lambda * 2.0 * cfg.tolerance_gap);
    }

    #[test]
    fn interpolation_zero_targets() {
        let c = affine_constraints(&[&[1.0], &[2.0]], &[&[0.0], &[0.0]], 1);
        let grid = CandidateGrid::discrete(2);
        let out = solve_interpolation(&c, &grid, &SolverConfig::default()).unwrap();
        assert!(out.measure.is_empty());
        assert_eq!(out.tv, 0.0);
        assert_eq!(out.residual, 0.0);
    }

    #[test]
    fn interpolation_single_constraint_closed_form() {
        // N = 1, m = 1: optimal tv = |t| / max_theta |rho(x_1, theta)|
        let c = affine_constraints(&[&[0.5, 2.0]], &[&[3.0]], 2);
        let grid = CandidateGrid::discrete(3);
        let out = solve_interpolation(&c, &grid, &SolverConfig::default()).unwrap();
        let expected_tv = 3.0 / 2.0;
        assert!((out.tv - expected_tv).abs() / expected_tv < 1e-4);
        assert_eq!(out.measure.support_size(), 1);
        assert!(out.residual <= 1e-6);
    }

    #[test]
    fn interpolation_respects_support_bound_and_homotopy_monotonicity() {
        let c = affine_constraints(
            &[&[1.0, 0.2, -0.3], &[0.3, -1.0, 0.8]],
            &[&[1.0, 0.5], &[-0.25, 0.1]],
            3,
        );
        let grid = CandidateGrid::discrete(4);
        let out = solve_interpolation(&c, &grid, &SolverConfig::default()).unwrap();
        assert!(out.measure.support_size() <= 2 * 2);
        assert!(out.residual <= 1e-6);
        for pair in out.stages.windows(2) {
            assert!(pair[1].residual <= pair[0].residual + 1e-9);
        }
        // tv equals the sum of weight norms by construction; regression guard
        let direct: f64 = out.measure.atoms().iter().map(|a| a.weight.norm()).sum();
        assert_eq!(out.tv, direct);
    }

    #[test]
    fn euclidean_grid_refinement_improves_score() {
        let c = LayerConstraintSet::new(
            vec![vecd(&[0.7, -0.4])],
            vec![vecd(&[1.0])],
            BasisFunction::ContinuousNeural {
                activation: Activation::tanh(),
                window_scale: 10.0,
                offset: 0.0,
            },
        )
        .unwrap();
        let coarse = CandidateGrid::Euclidean {
            lower: vecd(&[-1.0, -1.0]),
            upper: vecd(&[1.0, 1.0]),
            per_axis: vec![3, 3],
            refine: RefineConfig {
                enabled: false,
                ..RefineConfig::default()
            },
        };
        let refined = CandidateGrid::Euclidean {
            lower: vecd(&[-1.0, -1.0]),
            upper: vecd(&[1.0, 1.0]),
            per_axis: vec![3, 3],
            refine: RefineConfig::default(),
        };
        let res = vec![vecd(&[1.0])];
        let s0 = lmo(&res, &c, &coarse).unwrap().score;
        let s1 = lmo(&res, &c, &refined).unwrap().score;
        assert!(s1 >= s0);
    }

    #[test]
    fn empty_grid_is_an_error() {
        let c = affine_constraints(&[&[1.0]], &[&[1.0]], 1);
        let grid = CandidateGrid::discrete(0);
        assert!(matches!(
            solve_regularized(&c, &grid, &SolverConfig::default()),
            Err(Error::EmptyGrid)
        ));
    }
}
