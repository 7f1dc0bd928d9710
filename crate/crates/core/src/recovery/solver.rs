//! Sequential branch-enumerating solve of the constrained Gram system.
//!
//! Rows are processed in order of decreasing known-entry count. Each step
//! solves one row from the inner products against all rows solved so far plus
//! the row's own norm. A step with u unknowns and coefficient rank r behaves
//! as follows: r == u pins the row uniquely, r == u-1 closes through the norm
//! equation with at most two sign branches, anything less is structurally
//! underdetermined and aborts. Branches that violate any already-available
//! constraint are dropped immediately, so the frontier stays small.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg;

use super::{
    BasisRow, CandidateResiduals, QuadraticSystem, RecoverabilityReport, SignChoice, SolutionSet,
};

const RANK_REL_TOL: f64 = 1e-8;
const FRONTIER_CAP: usize = 512;

struct Augmented {
    gram: Array2<f64>,
    rows: usize,
    cols: usize,
    /// Per augmented row: (column, pinned value), sorted by column.
    knowns: Vec<Vec<(usize, f64)>>,
    has_linear: bool,
    tol: f64,
}

fn augment(sys: &QuadraticSystem) -> Augmented {
    let m = sys.rows();
    let n = sys.cols();
    let mut knowns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for k in sys.known_entries() {
        if !knowns[k.row].iter().any(|(c, _)| *c == k.col) {
            knowns[k.row].push((k.col, k.value));
        }
    }
    let (gram, rows) = match sys.linear_side() {
        None => (sys.gram().clone(), m),
        Some(side) => {
            // Stack the weight vector as one extra, fully known row. Its Gram
            // entries against data rows are exactly the linear observations,
            // and its self inner product is |w|^2.
            let mut g = Array2::<f64>::zeros((m + 1, m + 1));
            g.slice_mut(ndarray::s![..m, ..m]).assign(sys.gram());
            for i in 0..m {
                g[[i, m]] = side.observations[i];
                g[[m, i]] = side.observations[i];
            }
            g[[m, m]] = side.weights.dot(&side.weights);
            knowns.push((0..n).map(|c| (c, side.weights[c])).collect());
            (g, m + 1)
        }
    };
    for row in knowns.iter_mut() {
        row.sort_by_key(|(c, _)| *c);
    }
    let tol = sys
        .noise_tolerance()
        .unwrap_or_else(|| super::symmetry_tolerance(&gram.view()));
    Augmented {
        gram,
        rows,
        cols: n,
        knowns,
        has_linear: sys.linear_side().is_some(),
        tol,
    }
}

/// Rows sorted by known count descending, original index as tiebreak, so the
/// most-pinned rows form the basis slots first.
fn solve_order(aug: &Augmented) -> Vec<usize> {
    let mut order: Vec<usize> = (0..aug.rows).collect();
    order.sort_by_key(|&r| (std::cmp::Reverse(aug.knowns[r].len()), r));
    order
}

#[derive(Clone)]
struct Partial {
    /// (augmented row index, solved values) in solve order.
    rows: Vec<(usize, Array1<f64>)>,
    signs: Vec<SignChoice>,
}

enum StepResult {
    Extended(Vec<(Array1<f64>, Option<SignChoice>)>),
    Dead { residual: f64 },
}

/// Solves one row of one branch. Returns the structural error directly when
/// the step is underdetermined regardless of branch values.
fn solve_step(
    aug: &Augmented,
    solved: &[(usize, Array1<f64>)],
    row: usize,
    step: usize,
) -> Result<StepResult> {
    let n = aug.cols;
    let pinned = &aug.knowns[row];
    let unknown: Vec<usize> = (0..n)
        .filter(|c| !pinned.iter().any(|(pc, _)| pc == c))
        .collect();
    let u = unknown.len();

    let mut base = Array1::<f64>::zeros(n);
    for &(c, v) in pinned {
        base[c] = v;
    }

    // Norm equation right side after removing pinned mass.
    let quad_rhs = aug.gram[[row, row]] - pinned.iter().map(|(_, v)| v * v).sum::<f64>();

    if u == 0 {
        let mut worst = (quad_rhs).abs();
        for (s_idx, s_vec) in solved {
            worst = worst.max((s_vec.dot(&base) - aug.gram[[*s_idx, row]]).abs());
        }
        return Ok(if worst <= step_tol(aug, solved.len()) {
            StepResult::Extended(vec![(base, None)])
        } else {
            StepResult::Dead { residual: worst }
        });
    }

    // Inner-product equations against every solved row, restricted to the
    // unknown columns; pinned mass moves to the right side.
    let l = solved.len();
    let mut m_mat = Array2::<f64>::zeros((l, u));
    let mut rhs = Array1::<f64>::zeros(l);
    for (eq, (s_idx, s_vec)) in solved.iter().enumerate() {
        for (j, &c) in unknown.iter().enumerate() {
            m_mat[[eq, j]] = s_vec[c];
        }
        rhs[eq] = aug.gram[[*s_idx, row]] - pinned.iter().map(|(c, v)| s_vec[*c] * v).sum::<f64>();
    }

    if l == 0 {
        if u > 1 {
            return Err(Error::RankDeficiency {
                step,
                row: data_row_label(aug, row),
                unknowns: u,
                rank: 0,
            });
        }
        return Ok(close_with_norm(aug, base, &unknown, Array1::zeros(1), unit_vec(1), quad_rhs));
    }

    let sol = linalg::lstsq(&m_mat.view(), &rhs, RANK_REL_TOL)?;
    if u > sol.rank + 1 {
        return Err(Error::RankDeficiency {
            step,
            row: data_row_label(aug, row),
            unknowns: u,
            rank: sol.rank,
        });
    }
    if sol.residual > step_tol(aug, l) {
        return Ok(StepResult::Dead {
            residual: sol.residual,
        });
    }
    if sol.rank == u {
        // Unique fill; the norm equation becomes a consistency check.
        let mut full = base;
        for (j, &c) in unknown.iter().enumerate() {
            full[c] = sol.solution[j];
        }
        let norm_resid = (full.dot(&full) - aug.gram[[row, row]]).abs();
        return Ok(if norm_resid <= step_tol(aug, l) {
            StepResult::Extended(vec![(full, None)])
        } else {
            StepResult::Dead {
                residual: norm_resid,
            }
        });
    }
    let ns = linalg::null_space(&m_mat.view(), RANK_REL_TOL);
    debug_assert_eq!(ns.ncols(), 1, "rank u-1 must leave a line");
    let dir = ns.column(0).to_owned();
    Ok(close_with_norm(aug, base, &unknown, sol.solution, dir, quad_rhs))
}

fn unit_vec(n: usize) -> Array1<f64> {
    let mut v = Array1::<f64>::zeros(n);
    v[0] = 1.0;
    v
}

/// Closes a one-parameter family base + lambda * dir through the norm
/// equation |x|^2 = quad_rhs (all restricted to the unknown columns).
fn close_with_norm(
    aug: &Augmented,
    base: Array1<f64>,
    unknown: &[usize],
    particular: Array1<f64>,
    dir: Array1<f64>,
    quad_rhs: f64,
) -> StepResult {
    // lambda^2 + 2 b lambda + c = 0 with unit direction.
    let b = particular.dot(&dir);
    let c = particular.dot(&particular) - quad_rhs;
    let disc = b * b - c;
    let tol = aug.tol;
    let fill = |lambda: f64| {
        let mut full = base.clone();
        for (j, &col) in unknown.iter().enumerate() {
            full[col] = particular[j] + lambda * dir[j];
        }
        full
    };
    if disc < -tol {
        StepResult::Dead { residual: -disc }
    } else if disc <= tol {
        StepResult::Extended(vec![(fill(-b), Some(SignChoice::Root))])
    } else {
        let root = disc.sqrt();
        StepResult::Extended(vec![
            (fill(-b + root), Some(SignChoice::Plus)),
            (fill(-b - root), Some(SignChoice::Minus)),
        ])
    }
}

/// Residual tolerance for a step with `eqs` accumulated equations.
fn step_tol(aug: &Augmented, eqs: usize) -> f64 {
    aug.tol * (eqs.max(1) as f64).sqrt()
}

/// Maps an augmented row index back to the caller's numbering for messages.
fn data_row_label(aug: &Augmented, row: usize) -> usize {
    if aug.has_linear && row == aug.rows - 1 {
        usize::MAX // weight row; callers never see this in practice
    } else {
        row
    }
}

/// Recovers every matrix consistent with the system. See the module docs for
/// the step mechanics; errors surface underdetermined steps and constraint
/// sets that no branch can satisfy.
pub fn recover_matrix(sys: &QuadraticSystem) -> Result<SolutionSet> {
    let m = sys.rows();
    let n = sys.cols();
    let needed = n.saturating_sub(1);
    let effective_rows = m + usize::from(sys.linear_side().is_some());
    if effective_rows < needed {
        return Err(Error::InsufficientRows {
            rows: effective_rows,
            needed,
        });
    }
    let aug = augment(sys);
    let order = solve_order(&aug);

    let mut frontier = vec![Partial {
        rows: Vec::new(),
        signs: Vec::new(),
    }];
    for (step, &row) in order.iter().enumerate() {
        let mut next: Vec<Partial> = Vec::new();
        let mut worst_residual = 0.0f64;
        for cand in &frontier {
            match solve_step(&aug, &cand.rows, row, step)? {
                StepResult::Dead { residual } => worst_residual = worst_residual.max(residual),
                StepResult::Extended(exts) => {
                    for (vals, sign) in exts {
                        let mut grown = cand.clone();
                        grown.rows.push((row, vals));
                        if let Some(s) = sign {
                            grown.signs.push(s);
                        }
                        next.push(grown);
                    }
                }
            }
        }
        if next.is_empty() {
            return Err(Error::InconsistentKnowns {
                step,
                row: data_row_label(&aug, row),
                residual: worst_residual,
            });
        }
        if next.len() > FRONTIER_CAP {
            return Err(Error::BranchExplosion {
                limit: FRONTIER_CAP,
            });
        }
        frontier = next;
    }

    assemble(sys, &aug, frontier)
}

fn assemble(sys: &QuadraticSystem, aug: &Augmented, frontier: Vec<Partial>) -> Result<SolutionSet> {
    let m = sys.rows();
    let n = sys.cols();
    let mut candidates: Vec<Array2<f64>> = Vec::new();
    let mut branch_log: Vec<Vec<SignChoice>> = Vec::new();
    let mut residuals: Vec<CandidateResiduals> = Vec::new();
    let accept = aug.tol * (m as f64).sqrt().max(1.0) * 4.0;

    'branches: for partial in frontier {
        let mut mat = Array2::<f64>::zeros((m, n));
        for (row, vals) in &partial.rows {
            if aug.has_linear && *row == aug.rows - 1 {
                continue; // drop the appended weight row
            }
            mat.row_mut(*row).assign(vals);
        }
        // Verify the candidate against the original constraints.
        let gram_resid = linalg::max_abs(&(mat.dot(&mat.t()) - sys.gram()).view());
        let linear_resid = sys.linear_side().map(|side| {
            let pred = mat.dot(&side.weights);
            pred.iter()
                .zip(side.observations.iter())
                .map(|(p, z)| (p - z).abs())
                .fold(0.0f64, f64::max)
        });
        if gram_resid > accept || linear_resid.is_some_and(|r| r > accept) {
            debug_assert!(
                false,
                "assembled candidate violates constraints: gram {gram_resid:e}"
            );
            continue;
        }
        // Deduplicate double roots that converged to an existing candidate.
        let scale = linalg::max_abs(&mat.view()).max(1.0);
        for existing in &candidates {
            if linalg::max_abs(&(&mat - existing).view()) <= 1e-6 * scale {
                continue 'branches;
            }
        }
        candidates.push(mat);
        branch_log.push(partial.signs);
        residuals.push(CandidateResiduals {
            gram: gram_resid,
            linear: linear_resid,
        });
    }
    if candidates.is_empty() {
        return Err(Error::InconsistentKnowns {
            step: aug.rows,
            row: 0,
            residual: f64::NAN,
        });
    }
    Ok(SolutionSet {
        candidates,
        branch_log,
        residuals,
    })
}

/// Pre-solve feasibility analysis backing `check_recoverability`.
pub(super) fn analyze(sys: &QuadraticSystem) -> RecoverabilityReport {
    let m = sys.rows();
    let n = sys.cols();
    let dof_result = match sys.linear_side() {
        None => super::quadratic_dof(m, n),
        Some(_) => super::constrained_dof(m, n),
    };
    let dof = {
        let a = n.saturating_sub(usize::from(sys.linear_side().is_some()));
        a * a.saturating_sub(1) / 2
    };
    let mut detail: Option<String> = None;
    if let Err(e) = &dof_result {
        detail = Some(e.to_string());
    }

    let aug = augment(sys);
    let order = solve_order(&aug);
    let basis_len = n.saturating_sub(1).min(order.len());
    let basis_rows: Vec<BasisRow> = order[..basis_len]
        .iter()
        .map(|&r| {
            if aug.has_linear && r == aug.rows - 1 {
                BasisRow::LinearSide
            } else {
                BasisRow::Data(r)
            }
        })
        .collect();

    // Condition 1: the t-th basis slot (0-based) must carry at least
    // n-1-t known entries.
    let mut condition_1_ok = detail.is_none();
    if condition_1_ok {
        for (slot, &row) in order[..basis_len].iter().enumerate() {
            let have = aug.knowns[row].len();
            let need = n - 1 - slot;
            if have < need {
                condition_1_ok = false;
                detail = Some(format!(
                    "basis slot {slot} needs {need} known entries, best remaining row has {have}"
                ));
                break;
            }
        }
    }

    // Condition 2: walk the basis steps and demand full row rank on at least
    // one surviving branch at every step.
    let mut condition_2_ok = condition_1_ok;
    if condition_1_ok {
        let mut frontier = vec![Partial {
            rows: Vec::new(),
            signs: Vec::new(),
        }];
        'steps: for (step, &row) in order[..basis_len].iter().enumerate() {
            let mut next = Vec::new();
            for cand in &frontier {
                match solve_step(&aug, &cand.rows, row, step) {
                    Err(e) => {
                        condition_2_ok = false;
                        detail = Some(e.to_string());
                        break 'steps;
                    }
                    Ok(StepResult::Dead { .. }) => {}
                    Ok(StepResult::Extended(exts)) => {
                        for (vals, sign) in exts {
                            let mut grown = cand.clone();
                            grown.rows.push((row, vals));
                            if let Some(s) = sign {
                                grown.signs.push(s);
                            }
                            next.push(grown);
                        }
                    }
                }
            }
            if next.is_empty() {
                condition_2_ok = false;
                detail = Some(format!(
                    "known entries are inconsistent with the gram at basis step {step}"
                ));
                break;
            }
            if next.len() > FRONTIER_CAP {
                condition_2_ok = false;
                detail = Some(format!("basis enumeration exceeded {FRONTIER_CAP} branches"));
                break;
            }
            frontier = next;
        }
    }

    RecoverabilityReport {
        dof: dof_result.unwrap_or(dof),
        basis_rows,
        condition_1_ok,
        condition_2_ok,
        failure_detail: detail,
    }
}
