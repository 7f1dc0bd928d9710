//! Recovery of an unknown matrix A from its row Gram matrix A A^T, a set of
//! known entries, and optionally one linear view A w = z.
//!
//! The Gram constraint alone fixes A only up to a right orthogonal factor, so
//! the solution family has n(n-1)/2 degrees of freedom for an m x n unknown.
//! Pinning that many entries in a triangular row pattern (n-1 in one row, n-2
//! in another, down to 1) lets the rows be solved sequentially: each new row
//! satisfies one inner-product equation per already-solved row plus one
//! quadratic norm equation, leaving at most a sign choice. A linear view
//! behaves exactly like one extra fully-known row of the stacked matrix
//! [A; w^T], which drops the requirement to (n-1)(n-2)/2 entries.
//!
//! [`recover_matrix`] enumerates every surviving sign branch and returns the
//! full candidate set; [`check_recoverability`] reports whether the known
//! entries support the sequential solve before committing to it.

mod solver;

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub use solver::recover_matrix;

/// One pinned entry of the unknown matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnownEntry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl KnownEntry {
    pub fn new(row: usize, col: usize, value: f64) -> Self {
        Self { row, col, value }
    }
}

/// Linear view of the unknown: A * weights = observations.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSide {
    pub weights: Array1<f64>,
    pub observations: Array1<f64>,
}

/// The full constraint set handed to the solver.
///
/// Invariants enforced at construction: the Gram matrix is square and
/// symmetric within tolerance, its diagonal is non-negative within tolerance,
/// known entries are in range and mutually consistent, and the linear side
/// (when present) matches the declared shape.
#[derive(Debug, Clone)]
pub struct QuadraticSystem {
    gram: Array2<f64>,
    cols: usize,
    known: Vec<KnownEntry>,
    linear: Option<LinearSide>,
    tolerance: Option<f64>,
}

impl QuadraticSystem {
    pub fn new(
        gram: Array2<f64>,
        cols: usize,
        known: Vec<KnownEntry>,
        linear: Option<LinearSide>,
    ) -> Result<Self> {
        let rows = gram.nrows();
        if gram.ncols() != rows {
            return Err(Error::dim(format!(
                "gram matrix must be square, got {}x{}",
                rows,
                gram.ncols()
            )));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::arg("system needs at least one row and one column"));
        }
        let tol = symmetry_tolerance(&gram.view());
        if let Some((row, col, delta)) = linalg::symmetry_violation(&gram.view(), tol) {
            return Err(Error::Asymmetric { row, col, delta });
        }
        for i in 0..rows {
            if gram[[i, i]] < -tol {
                return Err(Error::arg(format!(
                    "gram diagonal entry {i} is negative: {}",
                    gram[[i, i]]
                )));
            }
        }
        let mut seen: Vec<(usize, usize, f64)> = Vec::with_capacity(known.len());
        for k in &known {
            if k.row >= rows || k.col >= cols {
                return Err(Error::arg(format!(
                    "known entry ({}, {}) outside a {}x{} unknown",
                    k.row, k.col, rows, cols
                )));
            }
            if !k.value.is_finite() {
                return Err(Error::arg("known entry value must be finite"));
            }
            if let Some((_, _, v)) = seen.iter().find(|(r, c, _)| *r == k.row && *c == k.col) {
                if (v - k.value).abs() > tol {
                    return Err(Error::arg(format!(
                        "conflicting known entries at ({}, {})",
                        k.row, k.col
                    )));
                }
            } else {
                seen.push((k.row, k.col, k.value));
            }
        }
        if let Some(side) = &linear {
            if side.weights.len() != cols || side.observations.len() != rows {
                return Err(Error::dim(format!(
                    "linear side shapes ({}, {}) do not match unknown {}x{}",
                    side.weights.len(),
                    side.observations.len(),
                    rows,
                    cols
                )));
            }
        }
        Ok(Self {
            gram,
            cols,
            known,
            linear,
            tolerance: None,
        })
    }

    /// Overrides the solver's noise tolerance. The default is scaled
    /// machine precision, which suits exact Gram matrices; systems built
    /// from estimated Grams should pass their measured consistency
    /// residual (with headroom) so branch pruning does not mistake
    /// estimation noise for contradictions.
    pub fn with_tolerance(mut self, tolerance: f64) -> Result<Self> {
        if !tolerance.is_finite() || tolerance <= 0.0 {
            return Err(Error::arg(format!(
                "noise tolerance must be positive and finite, got {tolerance}"
            )));
        }
        self.tolerance = Some(tolerance);
        Ok(self)
    }

    pub(crate) fn noise_tolerance(&self) -> Option<f64> {
        self.tolerance
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    pub fn rows(&self) -> usize {
        self.gram.nrows()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn known_entries(&self) -> &[KnownEntry] {
        &self.known
    }

    pub fn linear_side(&self) -> Option<&LinearSide> {
        self.linear.as_ref()
    }
}

pub(crate) fn symmetry_tolerance(gram: &ArrayView2<'_, f64>) -> f64 {
    1e-9 * linalg::max_abs(gram).max(1.0)
}

/// Sign decision taken at one quadratic step of the sequential solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignChoice {
    Plus,
    Minus,
    /// Double root: the quadratic closed with a single solution.
    Root,
}

/// Residuals achieved by one candidate against the full constraint set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateResiduals {
    /// Largest absolute Gram mismatch.
    pub gram: f64,
    /// Largest absolute linear-view mismatch, when a linear side was given.
    pub linear: Option<f64>,
}

/// Every matrix consistent with the constraints, one entry per surviving
/// sign-branch path. Candidates are pairwise distinct beyond tolerance and
/// each satisfies all residuals below the solver tolerance.
#[derive(Debug, Clone)]
pub struct SolutionSet {
    pub candidates: Vec<Array2<f64>>,
    pub branch_log: Vec<Vec<SignChoice>>,
    pub residuals: Vec<CandidateResiduals>,
}

impl SolutionSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Smallest mean-absolute relative error of any candidate against `truth`.
    pub fn best_relative_error(&self, truth: &ArrayView2<'_, f64>) -> Result<f64> {
        let mut best = f64::INFINITY;
        for cand in &self.candidates {
            best = best.min(relative_error(&cand.view(), truth)?);
        }
        if best.is_finite() {
            Ok(best)
        } else {
            Err(Error::arg("solution set is empty"))
        }
    }
}

/// Which row fills each basis slot of the sequential solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisRow {
    Data(usize),
    /// The appended weight row contributed by the linear side.
    LinearSide,
}

/// Outcome of the pre-solve feasibility analysis.
///
/// `condition_1_ok` states that the known entries can be permuted into the
/// triangular row pattern the sequential solve needs. `condition_2_ok` states
/// that each basis step's coefficient matrix had full row rank on at least
/// one surviving branch. Failures land in `failure_detail` instead of errors.
#[derive(Debug, Clone)]
pub struct RecoverabilityReport {
    pub dof: usize,
    pub basis_rows: Vec<BasisRow>,
    pub condition_1_ok: bool,
    pub condition_2_ok: bool,
    pub failure_detail: Option<String>,
}

impl RecoverabilityReport {
    pub fn ok(&self) -> bool {
        self.condition_1_ok && self.condition_2_ok
    }
}

/// Degrees of freedom left by the Gram constraint alone: n(n-1)/2, the
/// dimension of the orthogonal group acting on the right.
pub fn quadratic_dof(rows: usize, cols: usize) -> Result<usize> {
    let needed = cols.saturating_sub(1);
    if rows < needed {
        return Err(Error::InsufficientRows { rows, needed });
    }
    Ok(cols * cols.saturating_sub(1) / 2)
}

/// Degrees of freedom with one linear view attached: (n-1)(n-2)/2, because
/// the weight vector acts as a fully known extra row of the stacked system.
pub fn constrained_dof(rows: usize, cols: usize) -> Result<usize> {
    let needed = cols.saturating_sub(1);
    if rows + 1 < needed {
        return Err(Error::InsufficientRows {
            rows: rows + 1,
            needed,
        });
    }
    let a = cols.saturating_sub(1);
    let b = cols.saturating_sub(2);
    Ok(a * b / 2)
}

/// One particular solution of A A^T = C: the lower Cholesky factor.
pub fn cholesky_particular(gram: &ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let pivot_tol = 1e-9 * linalg::max_abs(gram).max(1.0);
    linalg::cholesky_lower(gram, pivot_tol)
}

/// Another member of the solution family: the particular solution times a
/// seeded random orthogonal factor. Distinct seeds give distinct members.
pub fn orthogonal_family_sample(particular: &ArrayView2<'_, f64>, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let p = linalg::random_orthogonal(particular.ncols(), &mut rng);
    particular.dot(&p)
}

/// Mean absolute error of `estimate` against `truth`, normalized by the mean
/// absolute value of `truth`. Rejects truth with (near-)zero mean magnitude.
pub fn relative_error(estimate: &ArrayView2<'_, f64>, truth: &ArrayView2<'_, f64>) -> Result<f64> {
    linalg::mean_abs_ratio(estimate, truth)
}

/// Reports whether the sequential solve can run on this system: the dof
/// count, the chosen basis ordering, and the two feasibility conditions.
pub fn check_recoverability(sys: &QuadraticSystem) -> RecoverabilityReport {
    solver::analyze(sys)
}
