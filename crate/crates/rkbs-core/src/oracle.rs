//! Brute-force verifiers for tiny instances. These deliberately share no
//! code with the sparse solver beyond basis evaluation: dense weights on the
//! whole grid, no insertion logic, and exhaustive support enumeration.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::measure::{Atom, AtomicVectorMeasure};
use crate::network::DeepMeasureNetwork;
use crate::solver::{CandidateGrid, LayerConstraintSet};
use crate::trainer::{risk, Dataset, LossFunction, WeightGradients};

pub const MAX_GRID: usize = 12;
pub const MAX_SAMPLES: usize = 4;
pub const MAX_TARGET_DIM: usize = 2;

const BRUTE_FORCE_ITERS: usize = 1_000_000;
const CERT_SLACK: f64 = 1e-8;
const IRLS_ITERS: usize = 500;
const FEASIBILITY_TOL: f64 = 1e-8;

/// A capped problem instance accepted by the oracles.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    constraints: LayerConstraintSet,
    grid: CandidateGrid,
    lambda: Option<f64>,
}

impl TinyInstance {
    pub fn new(
        constraints: LayerConstraintSet,
        grid: CandidateGrid,
        lambda: Option<f64>,
    ) -> Result<Self> {
        if grid.len() > MAX_GRID {
            return Err(Error::CapExceeded("grid larger than 12 atoms"));
        }
        if constraints.len() > MAX_SAMPLES {
            return Err(Error::CapExceeded("more than 4 samples"));
        }
        if constraints.target_dim() > MAX_TARGET_DIM {
            return Err(Error::CapExceeded("target dimension above 2"));
        }
        Ok(TinyInstance {
            constraints,
            grid,
            lambda,
        })
    }

    pub fn constraints(&self) -> &LayerConstraintSet {
        &self.constraints
    }

    pub fn grid(&self) -> &CandidateGrid {
        &self.grid
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }
}

/// Admissible grid candidates with their design columns.
fn full_design(inst: &TinyInstance) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let c = inst.constraints();
    let din = c.input_dim();
    let mut indices = Vec::new();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for idx in 0..inst.grid().len() {
        let theta = inst.grid().point(idx);
        if !c.basis().location_admissible(&theta, din) {
            continue;
        }
        let mut col = DVector::zeros(c.len());
        for (i, x) in c.inputs().iter().enumerate() {
            col[i] = c.basis().evaluate(x, &theta)?;
        }
        indices.push(idx);
        cols.push(col);
    }
    if indices.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut phi = DMatrix::zeros(c.len(), indices.len());
    for (k, col) in cols.iter().enumerate() {
        phi.set_column(k, col);
    }
    Ok((indices, phi))
}

fn target_matrix(c: &LayerConstraintSet) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(c.len(), c.target_dim());
    for (i, target) in c.targets().iter().enumerate() {
        t.row_mut(i).copy_from(&target.transpose());
    }
    t
}

fn row_group_prox(w: &mut DMatrix<f64>, tau: f64) {
    for k in 0..w.nrows() {
        let norm = w.row(k).norm();
        if norm <= tau {
            w.row_mut(k).fill(0.0);
        } else {
            let scale = 1.0 - tau / norm;
            let scaled = w.row(k) * scale;
            w.row_mut(k).copy_from(&scaled);
        }
    }
}

/// Safe overestimate of the largest gram eigenvalue: the max row sum of
/// absolute values bounds the spectral radius from above, so the derived
/// step size can never diverge.
fn gram_lipschitz_bound(phi: &DMatrix<f64>) -> f64 {
    let k = phi.ncols();
    if k == 0 {
        return 0.0;
    }
    let gram = phi.transpose() * phi;
    (0..k)
        .map(|r| gram.row(r).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct BruteForceSolution {
    pub objective: f64,
    pub measure: AtomicVectorMeasure,
    /// Whether the dual-feasibility certificate held at the returned point.
    pub certified: bool,
}

/// Proximal gradient with dense weights on every grid atom. The run stops
/// early once the certificate `max_theta |Phi^T r| <= lambda (1 + 1e-8)`
/// holds; otherwise it spends the full iteration budget and reports
/// `certified: false`.
pub fn brute_force_regularized(inst: &TinyInstance) -> Result<BruteForceSolution> {
    let lambda = inst.lambda().ok_or(Error::Invalid {
        context: "tiny instance",
        message: "brute_force_regularized needs lambda".to_string(),
    })?;
    let c = inst.constraints();
    let (indices, phi) = full_design(inst)?;
    let t = target_matrix(c);
    let m = c.target_dim();
    let k = indices.len();

    let lip = gram_lipschitz_bound(&phi).max(1e-30) * 1.01;
    let mut w = DMatrix::zeros(k, m);
    let mut certified = false;
    for it in 0..BRUTE_FORCE_ITERS {
        let step = 1.0 / (lip * (1.0 + it as f64 / BRUTE_FORCE_ITERS as f64));
        let grad = phi.transpose() * (&phi * &w - &t);
        w -= grad * step;
        row_group_prox(&mut w, step * lambda);
        if it % 128 == 0 || it + 1 == BRUTE_FORCE_ITERS {
            let corr = phi.transpose() * (&t - &phi * &w);
            let max_score = (0..k).map(|r| corr.row(r).norm()).fold(0.0, f64::max);
            if max_score <= lambda * (1.0 + CERT_SLACK) {
                certified = true;
                break;
            }
        }
    }

    let objective = 0.5 * (&phi * &w - &t).norm_squared()
        + lambda * (0..k).map(|r| w.row(r).norm()).sum::<f64>();
    let atoms = (0..k)
        .filter(|&r| w.row(r).norm() > 0.0)
        .map(|r| Atom::new(inst.grid().point(indices[r]), w.row(r).transpose()))
        .collect();
    Ok(BruteForceSolution {
        objective,
        measure: AtomicVectorMeasure::new(m, atoms)?,
        certified,
    })
}

#[derive(Debug, Clone)]
pub struct SupportSolution {
    pub tv: f64,
    pub measure: AtomicVectorMeasure,
    pub support_size: usize,
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            rec(i + 1, n, k, current, out);
            current.pop();
        }
    }
    rec(0, n, k, &mut current, &mut out);
    out
}

fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = (1e-12 * smax).max(1e-300);
    svd.pseudo_inverse(eps).expect("svd computed with u and v")
}

/// Group-norm minimization over a fixed support by iteratively reweighted
/// least squares. Returns the weights and whether the constraints are met
/// within the feasibility tolerance.
fn irls_least_group_norm(phi: &DMatrix<f64>, t: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    // Feasibility via the unweighted least-norm solution.
    let mut w = phi.transpose() * pinv(&(phi * phi.transpose())) * t;
    let feasible = (phi * &w - t).amax() <= FEASIBILITY_TOL;
    if !feasible {
        return (w, false);
    }
    let k = phi.ncols();
    for it in 0..IRLS_ITERS {
        let damp = (1e-3 * 0.7f64.powi(it as i32)).max(1e-14);
        let mut weighted = DMatrix::zeros(phi.nrows(), k);
        let mut d = DVector::zeros(k);
        for col in 0..k {
            d[col] = w.row(col).norm().max(damp);
            let scaled = phi.column(col) * d[col];
            weighted.set_column(col, &scaled);
        }
        // W = D Phi^T (Phi D Phi^T)^+ T
        let core = pinv(&(&weighted * phi.transpose()));
        let solve = phi.transpose() * core * t;
        for col in 0..k {
            let scaled = solve.row(col) * d[col];
            w.row_mut(col).copy_from(&scaled);
        }
    }
    let feasible = (phi * &w - t).amax() <= FEASIBILITY_TOL;
    (w, feasible)
}

/// Exact minimum of the TV norm subject to the interpolation constraints,
/// found by enumerating all supports of size `min(N * m, grid)`.
pub fn enumerate_supports(inst: &TinyInstance) -> Result<SupportSolution> {
    let c = inst.constraints();
    let (indices, phi) = full_design(inst)?;
    let t = target_matrix(c);
    let m = c.target_dim();
    let cap = (c.len() * m).min(indices.len());

    let mut best: Option<(f64, DMatrix<f64>, Vec<usize>)> = None;
    for subset in combinations(indices.len(), cap) {
        let mut sub = DMatrix::zeros(phi.nrows(), subset.len());
        for (j, &col) in subset.iter().enumerate() {
            sub.set_column(j, &phi.column(col));
        }
        let (w, feasible) = irls_least_group_norm(&sub, &t);
        if !feasible {
            continue;
        }
        let tv: f64 = (0..w.nrows()).map(|r| w.row(r).norm()).sum();
        if best.as_ref().map_or(true, |(b, _, _)| tv < *b) {
            best = Some((tv, w, subset));
        }
    }

    let (tv, w, subset) = best.ok_or(Error::Infeasible {
        residual: f64::INFINITY,
        lambda: 0.0,
    })?;
    let atoms = subset
        .iter()
        .enumerate()
        .filter(|(j, _)| w.row(*j).norm() > 1e-12)
        .map(|(j, &col)| Atom::new(inst.grid().point(indices[col]), w.row(j).transpose()))
        .collect();
    let measure = AtomicVectorMeasure::new(m, atoms)?;
    Ok(SupportSolution {
        tv,
        support_size: measure.support_size(),
        measure,
    })
}

/// Central finite differences of the empirical risk with respect to every
/// atom weight component.
pub fn finite_difference_gradient(
    net: &DeepMeasureNetwork,
    data: &Dataset,
    loss: LossFunction,
    h: f64,
) -> Result<WeightGradients> {
    let mut layers = Vec::with_capacity(net.layers().len());
    for (l, layer) in net.layers().iter().enumerate() {
        let mut per_atom = Vec::with_capacity(layer.measure().support_size());
        for (k, atom) in layer.measure().atoms().iter().enumerate() {
            let mut grad = DVector::zeros(atom.weight.len());
            for comp in 0..atom.weight.len() {
                let up = perturbed(net, l, k, comp, h)?;
                let dn = perturbed(net, l, k, comp, -h)?;
                grad[comp] = (risk(&up, data, loss)? - risk(&dn, data, loss)?) / (2.0 * h);
            }
            per_atom.push(grad);
        }
        layers.push(per_atom);
    }
    Ok(WeightGradients { layers })
}

fn perturbed(
    net: &DeepMeasureNetwork,
    layer: usize,
    atom: usize,
    comp: usize,
    delta: f64,
) -> Result<DeepMeasureNetwork> {
    let layers = net
        .layers()
        .iter()
        .enumerate()
        .map(|(l, lm)| {
            if l != layer {
                return Ok(lm.clone());
            }
            let atoms: Vec<Atom> = lm
                .measure()
                .atoms()
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    let mut w = a.weight.clone();
                    if k == atom {
                        w[comp] += delta;
                    }
                    Atom::new(a.location.clone(), w)
                })
                .collect();
            crate::network::LayerMeasure::new(
                lm.basis().clone(),
                AtomicVectorMeasure::new(lm.output_dim(), atoms)?,
                lm.input_dim(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    DeepMeasureNetwork::new(layers)
}
