//! Finitely-atomic vector measures with the total-variation norm.
//!
//! A measure is a finite list of atoms `(location, weight)` where locations
//! live in a discrete index set or in a Euclidean box and weights are vectors
//! in `R^m`. The TV norm of such a measure is the sum of the Euclidean norms
//! of the atom weights, which is the group-sparse norm driving width
//! sparsity downstream.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Two euclidean locations closer than this merge into one atom.
pub const MERGE_TOLERANCE: f64 = 1e-12;
/// Slack accepted by [`AtomicVectorMeasure::extreme_point_check`] around unit TV.
pub const UNIT_BALL_TOLERANCE: f64 = 1e-12;

/// A point of the parameter space: either an index (discrete layers) or a
/// vector (euclidean layers).
#[derive(Debug, Clone, PartialEq)]
pub enum ParameterPoint {
    Discrete(usize),
    Euclidean(DVector<f64>),
}

impl ParameterPoint {
    pub fn euclidean(coords: &[f64]) -> Self {
        ParameterPoint::Euclidean(DVector::from_column_slice(coords))
    }

    pub fn is_finite(&self) -> bool {
        match self {
            ParameterPoint::Discrete(_) => true,
            ParameterPoint::Euclidean(v) => v.iter().all(|c| c.is_finite()),
        }
    }

    /// Deterministic ordering: discrete by index, euclidean lexicographic.
    pub(crate) fn cmp_order(&self, other: &Self) -> Ordering {
        match (self, other) {
            (ParameterPoint::Discrete(a), ParameterPoint::Discrete(b)) => a.cmp(b),
            (ParameterPoint::Euclidean(a), ParameterPoint::Euclidean(b)) => {
                match a.len().cmp(&b.len()) {
                    Ordering::Equal => {}
                    o => return o,
                }
                for (x, y) in a.iter().zip(b.iter()) {
                    match x.partial_cmp(y).unwrap_or(Ordering::Equal) {
                        Ordering::Equal => {}
                        o => return o,
                    }
                }
                Ordering::Equal
            }
            (ParameterPoint::Discrete(_), ParameterPoint::Euclidean(_)) => Ordering::Less,
            (ParameterPoint::Euclidean(_), ParameterPoint::Discrete(_)) => Ordering::Greater,
        }
    }

    fn coincides(&self, other: &Self) -> bool {
        match (self, other) {
            (ParameterPoint::Discrete(a), ParameterPoint::Discrete(b)) => a == b,
            (ParameterPoint::Euclidean(a), ParameterPoint::Euclidean(b)) => {
                a.len() == b.len() && (a - b).norm() <= MERGE_TOLERANCE
            }
            _ => false,
        }
    }
}

/// One weighted Dirac delta: a unit of support, i.e. one neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub location: ParameterPoint,
    pub weight: DVector<f64>,
}

impl Atom {
    pub fn new(location: ParameterPoint, weight: DVector<f64>) -> Self {
        Atom { location, weight }
    }

    pub fn discrete(index: usize, weight: &[f64]) -> Self {
        Atom::new(
            ParameterPoint::Discrete(index),
            DVector::from_column_slice(weight),
        )
    }
}

/// A finitely-atomic vector measure with weights in `R^{target_dim}`.
///
/// Canonical form is maintained on construction: atoms are sorted by
/// location, coincident locations are merged by weight addition, and atoms
/// with zero weight are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicVectorMeasure {
    atoms: Vec<Atom>,
    target_dim: usize,
}

/// Result of the extreme-point test on the unit TV sphere.
#[derive(Debug, Clone)]
pub enum ExtremePointCheck {
    /// Exactly one atom with unit-norm weight: an extreme point of the ball.
    Extreme,
    /// A proper convex split `mu = t * first + (1 - t) * second` with both
    /// parts of unit TV, witnessing that the measure is not extreme.
    Decomposition {
        first: AtomicVectorMeasure,
        second: AtomicVectorMeasure,
        t: f64,
    },
}

impl AtomicVectorMeasure {
    pub fn empty(target_dim: usize) -> Self {
        AtomicVectorMeasure {
            atoms: Vec::new(),
            target_dim,
        }
    }

    /// Builds a measure in canonical form. Rejects mixed location kinds,
    /// inconsistent euclidean dimensions, weight dimension mismatches and
    /// non-finite entries.
    pub fn new(target_dim: usize, atoms: Vec<Atom>) -> Result<Self> {
        let mut euclid_dim: Option<usize> = None;
        let mut has_discrete = false;
        for atom in &atoms {
            if atom.weight.len() != target_dim {
                return Err(Error::DimensionMismatch {
                    context: "atom weight",
                    expected: target_dim,
                    got: atom.weight.len(),
                });
            }
            if !atom.weight.iter().all(|w| w.is_finite()) || !atom.location.is_finite() {
                return Err(Error::Invalid {
                    context: "atom",
                    message: "non-finite entry".to_string(),
                });
            }
            match &atom.location {
                ParameterPoint::Discrete(_) => has_discrete = true,
                ParameterPoint::Euclidean(v) => match euclid_dim {
                    None => euclid_dim = Some(v.len()),
                    Some(d) if d == v.len() => {}
                    Some(d) => {
                        return Err(Error::DimensionMismatch {
                            context: "euclidean location",
                            expected: d,
                            got: v.len(),
                        })
                    }
                },
            }
        }
        if has_discrete && euclid_dim.is_some() {
            return Err(Error::KindMismatch(
                "measure mixes discrete and euclidean locations",
            ));
        }

        let mut sorted = atoms;
        sorted.sort_by(|a, b| a.location.cmp_order(&b.location));

        let mut merged: Vec<Atom> = Vec::with_capacity(sorted.len());
        for atom in sorted {
            match merged.last_mut() {
                Some(last) if last.location.coincides(&atom.location) => {
                    last.weight += &atom.weight;
                }
                _ => merged.push(atom),
            }
        }
        merged.retain(|a| a.weight.norm() != 0.0);

        Ok(AtomicVectorMeasure {
            atoms: merged,
            target_dim,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn support_size(&self) -> usize {
        self.atoms.len()
    }

    /// Total variation norm: the sum of Euclidean norms of atom weights.
    pub fn tv_norm(&self) -> f64 {
        // fold from +0.0: the empty Sum identity is -0.0
        self.atoms.iter().map(|a| a.weight.norm()).fold(0.0, |a, b| a + b)
    }

    /// `a * self + b * other`, merging shared locations and dropping zeros.
    pub fn linear_combine(a: f64, mu: &Self, b: f64, nu: &Self) -> Result<Self> {
        if mu.target_dim != nu.target_dim {
            return Err(Error::DimensionMismatch {
                context: "linear_combine",
                expected: mu.target_dim,
                got: nu.target_dim,
            });
        }
        let mut atoms = Vec::with_capacity(mu.atoms.len() + nu.atoms.len());
        for atom in &mu.atoms {
            atoms.push(Atom::new(atom.location.clone(), &atom.weight * a));
        }
        for atom in &nu.atoms {
            atoms.push(Atom::new(atom.location.clone(), &atom.weight * b));
        }
        AtomicVectorMeasure::new(mu.target_dim, atoms)
    }

    pub fn scale(&self, a: f64) -> Result<Self> {
        Self::linear_combine(a, self, 0.0, &Self::empty(self.target_dim))
    }

    /// Applies a linear map to every weight. If the operator norm of `p` is
    /// at most one, the TV norm does not increase.
    pub fn apply_linear_to_weights(&self, p: &DMatrix<f64>) -> Result<Self> {
        if p.ncols() != self.target_dim {
            return Err(Error::DimensionMismatch {
                context: "apply_linear_to_weights",
                expected: self.target_dim,
                got: p.ncols(),
            });
        }
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom::new(a.location.clone(), p * &a.weight))
            .collect();
        AtomicVectorMeasure::new(p.nrows(), atoms)
    }

    /// Relocates every atom by `map`, merging atoms that land on the same
    /// location (pushforward measure).
    pub fn pushforward<F>(&self, map: F) -> Result<Self>
    where
        F: Fn(&ParameterPoint) -> ParameterPoint,
    {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom::new(map(&a.location), a.weight.clone()))
            .collect();
        AtomicVectorMeasure::new(self.target_dim, atoms)
    }

    /// Integrates a scalar function against the measure: `sum_k phi(theta_k) w_k`.
    pub fn integrate<F>(&self, phi: F) -> DVector<f64>
    where
        F: Fn(&ParameterPoint) -> f64,
    {
        let mut acc = DVector::zeros(self.target_dim);
        for atom in &self.atoms {
            acc.axpy(phi(&atom.location), &atom.weight, 1.0);
        }
        acc
    }

    /// Tests whether a unit-TV measure is an extreme point of the unit ball.
    ///
    /// Single atoms (whose weight then has unit Euclidean norm) are extreme;
    /// any other measure is split into two disjointly supported unit-TV parts
    /// witnessing a proper convex combination.
    pub fn extreme_point_check(&self) -> Result<ExtremePointCheck> {
        let tv = self.tv_norm();
        if (tv - 1.0).abs() > UNIT_BALL_TOLERANCE {
            return Err(Error::NotUnitBall { tv });
        }
        if self.atoms.len() == 1 {
            return Ok(ExtremePointCheck::Extreme);
        }
        let t = self.atoms[0].weight.norm();
        let first = AtomicVectorMeasure::new(
            self.target_dim,
            vec![Atom::new(
                self.atoms[0].location.clone(),
                &self.atoms[0].weight / t,
            )],
        )?;
        let rest = self.atoms[1..]
            .iter()
            .map(|a| Atom::new(a.location.clone(), &a.weight / (1.0 - t)))
            .collect();
        let second = AtomicVectorMeasure::new(self.target_dim, rest)?;
        Ok(ExtremePointCheck::Decomposition { first, second, t })
    }
}
