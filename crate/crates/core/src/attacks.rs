//! Transcript-level attacks against the regression protocols.
//!
//! Everything here runs from the attacker's seat: the only inputs are the
//! attacker's own transcript (plaintext events it legitimately observed),
//! its own data, shared hyperparameters, and, for the inference-time
//! weight theft, the prediction interface. No function opens an envelope.
//!
//! The vertical pipeline walks four stages. First the hidden residual
//! `d_k` falls out of the attacker's own decrypted gradient by solving
//! `X_b' d = g_b - alpha w_b`, which needs the attacker's feature block
//! to have full row rank (fake features can be injected to get there).
//! Subtracting the attacker's score share and adding the labels yields
//! the victim's score share `z_a`. Second, consecutive score shares obey
//!
//! `z_a[k+1] = (1 - eta * alpha) z_a[k] - eta * C d_k`
//!
//! with `C = X_a X_a'`, so stacking enough iterations recovers the
//! victim's sample Gram matrix. Third, probing the prediction interface
//! with basis queries reads off the victim's final weights, and the same
//! recurrence extends the score series one step to pair with them as a
//! linear view `X_a w = z`. Fourth, the quadratic solver inverts the
//! Gram constraints back to the victim's raw feature block.
//!
//! The horizontal variant differences published weight rounds instead
//! (`g_a[k+1] - g_a[k] = (X_a' X_a + alpha I)(W[k+1] - W[k])`), producing
//! the feature Gram `X_a' X_a`, and the quadratic solver runs on the
//! transposed unknown. The multi-party variant with a colluding arbiter
//! skips quadratics entirely: victim gradients arrive in plaintext and a
//! single linear solve returns the victim block.

use crate::error::{Error, Result};
use crate::linalg;
use crate::protocols::{
    poly_sigmoid_inverse, Activation, DesignMatrix, Hyperparams, PartyId, Transcript, VflRun,
};
use crate::recovery::{
    recover_matrix, relative_error, KnownEntry, LinearSide, QuadraticSystem, SolutionSet,
};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Relative singular-value cutoff shared by every rank decision in the
/// attack pipelines.
const RANK_REL_TOL: f64 = 1e-8;

/// Default gradient-norm threshold below which the final-iteration score
/// share is considered a trustworthy linear constraint.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-6;

/// Which protocol a scenario attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackSetting {
    Vertical2Party,
    VerticalMultiparty,
    Horizontal2Party,
}

/// Which model family was trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Linear,
    Logistic,
}

/// Declarative description of one attack instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackScenario {
    pub setting: AttackSetting,
    pub model: ModelKind,
    /// Victim entries the attacker already knows, in the victim's own
    /// (row, column) coordinates.
    pub known_entries: Vec<KnownEntry>,
    /// Fake columns the attacker mixed into its feature block before
    /// training to reach full row rank.
    pub fake_feature_count: usize,
    pub seed: u64,
}

/// How many scalar constraints of each kind fed the final solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSummary {
    pub quadratic: usize,
    pub linear: usize,
}

/// Outcome of a full inversion.
#[derive(Debug, Clone)]
pub struct InversionResult {
    /// Candidate with the smallest constraint residual, in the victim's
    /// own orientation.
    pub estimate: Array2<f64>,
    /// Number of distinct matrices consistent with every constraint.
    pub solution_count: usize,
    /// Fraction of the victim's entries the attacker had to know up
    /// front.
    pub kdr: f64,
    /// Best mean-absolute relative error across candidates, when ground
    /// truth was supplied.
    pub rel_error: Option<f64>,
    pub constraints_used: ConstraintSummary,
    /// Whether the linear view came from a converged model (vertical
    /// two-party setting only).
    pub converged: Option<bool>,
}

/// Gram matrix pulled out of a transcript, with diagnostics.
#[derive(Debug, Clone)]
pub struct GramExtraction {
    pub gram: Array2<f64>,
    /// Iteration pairs stacked into the solve.
    pub pairs_used: usize,
    /// Rank of the stacked right-hand vectors.
    pub rank: usize,
    /// Largest absolute mismatch when the recovered Gram is replayed
    /// against every collected pair; extra pairs beyond full rank act as
    /// consistency checks.
    pub max_residual: f64,
    /// True when every update direction was numerically zero, i.e. the
    /// run sat at a fixed point and the equations say nothing about the
    /// Gram.
    pub degenerate: bool,
}

/// Linear view of the victim block plus the convergence evidence backing
/// it.
#[derive(Debug, Clone)]
pub struct LinearConstraints {
    pub side: LinearSide,
    /// False when the gradient norm stayed above the threshold; the
    /// constraint is then approximate and downstream users should treat
    /// it as advisory.
    pub converged: bool,
    pub gradient_norm: f64,
    pub threshold: f64,
}

/// Appends `count` columns of small uniform noise (each value in
/// `[-1e-3, 1e-3]`) to the attacker's feature block so the residual
/// solve reaches full row rank without visibly changing the model.
pub fn inject_fake_features(xb: &DesignMatrix, count: usize, seed: u64) -> Result<DesignMatrix> {
    if count == 0 {
        return Ok(xb.clone());
    }
    let (m, n) = (xb.rows(), xb.cols());
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut values = Array2::zeros((m, n + count));
    values.slice_mut(ndarray::s![.., ..n]).assign(xb.values());
    for j in n..n + count {
        for i in 0..m {
            values[[i, j]] = rng.gen_range(-1e-3..1e-3);
        }
    }
    let mut names = xb.feature_names().to_vec();
    names.extend((0..count).map(|j| format!("fake{j}")));
    DesignMatrix::new(values, xb.party().clone(), names)
}

/// Solves the attacker's own gradient equation for the hidden aggregated
/// residual `d_k`.
fn solve_residual(
    transcript: &Transcript,
    xb: &DesignMatrix,
    alpha: f64,
    k: usize,
) -> Result<Array1<f64>> {
    if xb.party() != transcript.observer() {
        return Err(Error::arg(format!(
            "feature block belongs to {} but the transcript observer is {}",
            xb.party(),
            transcript.observer()
        )));
    }
    let g = transcript.gradient(transcript.observer(), k)?;
    let w = transcript.local_weights(k)?;
    if g.len() != xb.cols() || w.len() != xb.cols() {
        return Err(Error::dim(format!(
            "gradient length {} does not match {} features",
            g.len(),
            xb.cols()
        )));
    }
    let rhs = Array1::from_iter(g.iter().zip(w).map(|(gi, wi)| gi - alpha * wi));
    let xbt = xb.values().t().to_owned();
    let m = xb.rows();
    let ls = linalg::lstsq(&xbt.view(), &rhs, RANK_REL_TOL)?;
    if ls.rank < m {
        return Err(Error::NeedFakeFeatures {
            rank: ls.rank,
            needed: m,
        });
    }
    Ok(ls.solution)
}

/// Recovers the victim's hidden score share `z_a` at iteration `k` of a
/// vertical linear-regression run, using only the attacker's transcript
/// and its own feature block.
pub fn recover_intermediate_za(
    transcript: &Transcript,
    xb: &DesignMatrix,
    hp: &Hyperparams,
    k: usize,
) -> Result<Array1<f64>> {
    let d = solve_residual(transcript, xb, hp.alpha, k)?;
    let z_b = transcript.local_feature(k)?;
    let y = transcript.labels()?;
    Ok(Array1::from_iter(
        d.iter()
            .zip(z_b)
            .zip(y)
            .map(|((di, zi), yi)| di - zi + yi),
    ))
}

/// Logistic variant of [`recover_intermediate_za`]: the residual solve
/// yields the activated score, which the cubic-sigmoid inverse maps back
/// to the raw score before the attacker's share is subtracted.
pub fn recover_za_logistic(
    transcript: &Transcript,
    xb: &DesignMatrix,
    hp: &Hyperparams,
    k: usize,
) -> Result<Array1<f64>> {
    let d = solve_residual(transcript, xb, hp.alpha, k)?;
    let z_b = transcript.local_feature(k)?;
    let y = transcript.labels()?;
    let mut z_a = Array1::zeros(d.len());
    for i in 0..d.len() {
        let activated = d[i] + y[i];
        z_a[i] = poly_sigmoid_inverse(activated)? - z_b[i];
    }
    Ok(z_a)
}

fn stack_columns(series: &[Array1<f64>], take: usize) -> Array2<f64> {
    let rows = series[0].len();
    let mut out = Array2::zeros((rows, take));
    for (j, v) in series.iter().take(take).enumerate() {
        out.column_mut(j).assign(v);
    }
    out
}

/// Recovers the victim's sample Gram matrix `X_a X_a'` from the
/// recovered score-share series and the residual series.
///
/// Each consecutive pair yields one vector equation
/// `C d_k = ((1 - eta * alpha) z_a[k] - z_a[k+1]) / eta`; the pairs are
/// stacked until the residual directions span the sample space and the
/// surplus serves as a least-squares consistency check. The result is
/// symmetrized.
pub fn extract_quadratic_vfl(
    za_series: &[Array1<f64>],
    d_series: &[Array1<f64>],
    hp: &Hyperparams,
) -> Result<GramExtraction> {
    if za_series.len() < 2 {
        return Err(Error::arg(format!(
            "need at least 2 recovered score shares, got {}",
            za_series.len()
        )));
    }
    let pairs = za_series.len() - 1;
    if d_series.len() < pairs {
        return Err(Error::arg(format!(
            "{} residual vectors cannot cover {pairs} iteration pairs",
            d_series.len()
        )));
    }
    let m = za_series[0].len();
    if za_series.iter().any(|z| z.len() != m) || d_series.iter().any(|d| d.len() != m) {
        return Err(Error::dim("score and residual series disagree on length"));
    }

    let d_stack = stack_columns(d_series, pairs);
    let mut rhs = Array2::zeros((m, pairs));
    for p in 0..pairs {
        // The weight update walks the score share by minus eta times the
        // Gram-weighted residual, so the Gram image is the decayed old
        // share minus the new one.
        let u = (&(hp.decay() * &za_series[p]) - &za_series[p + 1]) / hp.eta;
        rhs.column_mut(p).assign(&u);
    }

    let rank = linalg::rank(&d_stack.view(), RANK_REL_TOL);
    if rank < m {
        return Err(Error::InsufficientResiduals {
            rank,
            needed: m,
            pairs,
        });
    }

    let (ct, _, _) = linalg::lstsq_multi(&d_stack.t().to_owned().view(), &rhs.t().to_owned().view(), RANK_REL_TOL)?;
    let c = &ct.t().to_owned() * 0.5 + &ct * 0.5;
    let replay = c.dot(&d_stack);
    let max_residual = (&replay - &rhs)
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let degenerate =
        linalg::max_abs(&rhs.view()) <= 1e-12 * linalg::max_abs(&d_stack.view()).max(1.0);

    Ok(GramExtraction {
        gram: c,
        pairs_used: pairs,
        rank,
        max_residual,
        degenerate,
    })
}

/// Steals the victim's final weight vector through the prediction
/// interface: one zero query plus one standard-basis query per victim
/// feature, read back from the score shares the interface leaks into the
/// label holder's transcript.
pub fn extract_weights_by_query(run: &mut VflRun) -> Result<Array1<f64>> {
    let n_a = run.model.w_a.len();
    let n_b = run.model.w_b.len();
    let party_b = run.party_b().clone();
    let before = run.transcripts[&party_b].test_features().len();

    let mut queries = Array2::zeros((n_a + 1, n_a));
    for j in 0..n_a {
        queries[[j + 1, j]] = 1.0;
    }
    let xb_zero = Array1::zeros(n_b);
    for row in queries.axis_iter(Axis(0)) {
        run.predict(&row.to_owned(), &xb_zero)?;
    }

    let logged = run.transcripts[&party_b].test_features();
    let responses = Array1::from_iter(logged[before..].iter().map(|v| v[0]));
    solve_weights_from_queries(&queries, &responses)
}

/// Solves `queries * w = responses` for the victim weights; works for
/// any query battery whose rows span the feature space.
pub fn solve_weights_from_queries(
    queries: &Array2<f64>,
    responses: &Array1<f64>,
) -> Result<Array1<f64>> {
    if queries.nrows() != responses.len() {
        return Err(Error::dim(format!(
            "{} queries but {} responses",
            queries.nrows(),
            responses.len()
        )));
    }
    let ls = linalg::lstsq(&queries.view(), responses, RANK_REL_TOL)?;
    if ls.rank < queries.ncols() {
        return Err(Error::arg(format!(
            "inference queries span rank {} of {}; add independent queries",
            ls.rank,
            queries.ncols()
        )));
    }
    Ok(ls.solution)
}

/// Packages the stolen weights and the extended score share as a linear
/// view `X_a w = z`, recording whether the run was converged enough to
/// trust it. A high gradient norm is a warning, not an error: the
/// constraint may still be used, just flagged.
pub fn build_linear_constraints(
    za_last: &Array1<f64>,
    w_a: &Array1<f64>,
    gradient_norm: f64,
    threshold: f64,
) -> LinearConstraints {
    LinearConstraints {
        side: LinearSide {
            weights: w_a.clone(),
            observations: za_last.clone(),
        },
        converged: gradient_norm <= threshold,
        gradient_norm,
        threshold,
    }
}

/// Recovers the other party's gradient in a two-party horizontal round
/// from the published weight averages and the attacker's own gradient:
/// `g_a = (2/eta)(W_k - W_{k+1}) - g_b`.
pub fn hfl_recover_gradient(
    transcript: &Transcript,
    hp: &Hyperparams,
    k: usize,
) -> Result<Array1<f64>> {
    let w0 = transcript.averaged_weights(k)?;
    let w1 = transcript.averaged_weights(k + 1)?;
    let g_b = transcript.gradient(transcript.observer(), k)?;
    Ok(Array1::from_iter(
        w0.iter()
            .zip(w1)
            .zip(g_b)
            .map(|((a, b), g)| 2.0 / hp.eta * (a - b) - g),
    ))
}

/// Recovers the victim's feature Gram matrix `X_a' X_a` from its
/// gradient series and the shared weight series by differencing away the
/// unknown labels: `g_a[k+1] - g_a[k] = (X_a' X_a + alpha I) dW_k`.
pub fn extract_quadratic_hfl(
    gradients: &[Array1<f64>],
    weights: &[Array1<f64>],
    alpha: f64,
) -> Result<GramExtraction> {
    if gradients.len() < 2 {
        return Err(Error::arg(format!(
            "need at least 2 recovered gradients, got {}",
            gradients.len()
        )));
    }
    let pairs = gradients.len() - 1;
    if weights.len() < gradients.len() {
        return Err(Error::arg(format!(
            "{} weight rounds cannot cover {} gradients",
            weights.len(),
            gradients.len()
        )));
    }
    let n = gradients[0].len();
    if gradients.iter().any(|g| g.len() != n) || weights.iter().any(|w| w.len() != n) {
        return Err(Error::dim("gradient and weight series disagree on length"));
    }

    let mut dw = Array2::zeros((n, pairs));
    let mut rhs = Array2::zeros((n, pairs));
    for p in 0..pairs {
        let step = &weights[p + 1] - &weights[p];
        let dg = &(&gradients[p + 1] - &gradients[p]) - &(alpha * &step);
        dw.column_mut(p).assign(&step);
        rhs.column_mut(p).assign(&dg);
    }

    let rank = linalg::rank(&dw.view(), RANK_REL_TOL);
    if rank < n {
        return Err(Error::InsufficientWeightDiffs {
            rank,
            needed: n,
            pairs,
        });
    }

    let (ct, _, _) = linalg::lstsq_multi(&dw.t().to_owned().view(), &rhs.t().to_owned().view(), RANK_REL_TOL)?;
    let c = &ct.t().to_owned() * 0.5 + &ct * 0.5;
    let replay = c.dot(&dw);
    let max_residual = (&replay - &rhs)
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));

    Ok(GramExtraction {
        gram: c,
        pairs_used: pairs,
        rank,
        max_residual,
        degenerate: false,
    })
}

/// Inverts the victim's entire feature block from a colluding observer's
/// transcript in the multi-party vertical setting. With the arbiter in
/// the coalition both the victim's gradients and the aggregated
/// residuals are plaintext, so consecutive iterations give the linear
/// system `X_a' (d_{k+1} - d_k) = g_a[k+1] - (1 - eta * alpha) g_a[k]`
/// and a single least-squares solve returns `X_a`. No known entries are
/// required.
pub fn multiparty_linear_inversion(
    transcript: &Transcript,
    victim: &PartyId,
    hp: &Hyperparams,
) -> Result<Array2<f64>> {
    let mut grads: Vec<Array1<f64>> = Vec::new();
    let mut residuals: Vec<Array1<f64>> = Vec::new();
    let first_g = transcript.gradient(victim, 0)?;
    let first_d = transcript.intermediate(0)?;
    grads.push(Array1::from_vec(first_g.to_vec()));
    residuals.push(Array1::from_vec(first_d.to_vec()));
    let mut k = 1;
    while let (Ok(g), Ok(d)) = (transcript.gradient(victim, k), transcript.intermediate(k)) {
        grads.push(Array1::from_vec(g.to_vec()));
        residuals.push(Array1::from_vec(d.to_vec()));
        k += 1;
    }
    let pairs = grads.len() - 1;
    let m = residuals[0].len();
    let n = grads[0].len();
    if pairs == 0 {
        return Err(Error::InsufficientResiduals {
            rank: 0,
            needed: m,
            pairs,
        });
    }

    let mut dd = Array2::zeros((m, pairs));
    let mut gamma = Array2::zeros((n, pairs));
    for p in 0..pairs {
        dd.column_mut(p).assign(&(&residuals[p + 1] - &residuals[p]));
        gamma
            .column_mut(p)
            .assign(&(&grads[p + 1] - &(hp.decay() * &grads[p])));
    }

    let rank = linalg::rank(&dd.view(), RANK_REL_TOL);
    if rank < m {
        return Err(Error::InsufficientResiduals {
            rank,
            needed: m,
            pairs,
        });
    }
    let (xa, _, _) = linalg::lstsq_multi(
        &dd.t().to_owned().view(),
        &gamma.t().to_owned().view(),
        RANK_REL_TOL,
    )?;
    Ok(xa)
}

/// Fraction of the victim's entries a vertical attacker must know up
/// front to pin the quadratic-plus-linear system down to finitely many
/// candidates: `(n_a - 1)(n_a - 2) / (2 m n_a)` for `n_a` victim
/// features over `m` samples.
pub fn kdr_vertical(n_a: usize, m: usize) -> f64 {
    let n = n_a as f64;
    let m = m as f64;
    ((n - 1.0) * (n - 2.0) / (2.0 * m * n)).max(0.0)
}

/// Horizontal counterpart over an `m x n` victim block: `(m-1)/(2n)`
/// while the sample count stays within the feature count, and
/// `(2m - n - 1)/(2m)` beyond it (whole rows must be known once the
/// Gram stops constraining them).
pub fn kdr_horizontal(m: usize, n: usize) -> f64 {
    let mf = m as f64;
    let nf = n as f64;
    if m <= n {
        ((mf - 1.0) / (2.0 * nf)).max(0.0)
    } else {
        ((2.0 * mf - nf - 1.0) / (2.0 * mf)).max(0.0)
    }
}

/// Inputs for [`full_inversion`], one variant per setting.
pub enum AttackInputs<'a> {
    Vertical2Party {
        /// Finished training session; mutable because the weight theft
        /// issues fresh inference queries.
        run: &'a mut VflRun,
        /// The attacker's feature block as used in training (including
        /// any fake columns).
        xb: &'a DesignMatrix,
        hp: &'a Hyperparams,
    },
    VerticalMultiparty {
        /// Transcript of a colluding observer holding plaintext victim
        /// gradients and residuals.
        transcript: &'a Transcript,
        victim: &'a PartyId,
        hp: &'a Hyperparams,
    },
    Horizontal2Party {
        /// The attacker's own transcript.
        transcript: &'a Transcript,
        /// Sample count of the victim block; part of the threat model's
        /// prior knowledge.
        victim_rows: usize,
        hp: &'a Hyperparams,
    },
}

/// Noise tolerance handed to the quadratic solver when the Gram was
/// estimated from a transcript: the extraction's own consistency
/// residual with generous headroom, floored at the exact-arithmetic
/// default. The replay residual is measured inside the span of the
/// collected pairs and so underestimates the Gram error when the pair
/// basis is ill-conditioned (fake-feature solves, nearly converged
/// trajectories); the headroom absorbs that plus the error growth of the
/// sequential solve. Genuine contradictions sit at the scale of the Gram
/// entries themselves, orders of magnitude above this floor.
fn solver_noise_floor(extraction: &GramExtraction) -> f64 {
    let base = 1e-9 * linalg::max_abs(&extraction.gram.view()).max(1.0);
    base.max(extraction.max_residual * 65536.0)
}

fn best_candidate_index(sols: &SolutionSet) -> usize {
    let mut best = 0;
    let mut best_key = (f64::INFINITY, f64::INFINITY);
    for (i, r) in sols.residuals.iter().enumerate() {
        let key = (r.linear.unwrap_or(r.gram), r.gram);
        if key < best_key {
            best_key = key;
            best = i;
        }
    }
    best
}

/// Runs the complete inversion pipeline for a scenario and reports the
/// reconstruction plus bookkeeping. When ground truth is supplied the
/// relative error of the closest candidate is included; with several
/// residual-tied candidates (mirror solutions) the reported estimate is
/// the lowest-residual one.
pub fn full_inversion(
    scenario: &AttackScenario,
    inputs: AttackInputs<'_>,
    ground_truth: Option<&Array2<f64>>,
) -> Result<InversionResult> {
    match (scenario.setting, inputs) {
        (AttackSetting::Vertical2Party, AttackInputs::Vertical2Party { run, xb, hp }) => {
            vertical_inversion(scenario, run, xb, hp, ground_truth)
        }
        (
            AttackSetting::VerticalMultiparty,
            AttackInputs::VerticalMultiparty {
                transcript,
                victim,
                hp,
            },
        ) => multiparty_inversion(scenario, transcript, victim, hp, ground_truth),
        (
            AttackSetting::Horizontal2Party,
            AttackInputs::Horizontal2Party {
                transcript,
                victim_rows,
                hp,
            },
        ) => horizontal_inversion(scenario, transcript, victim_rows, hp, ground_truth),
        _ => Err(Error::arg(
            "scenario setting does not match the supplied attack inputs",
        )),
    }
}

fn vertical_inversion(
    scenario: &AttackScenario,
    run: &mut VflRun,
    xb: &DesignMatrix,
    hp: &Hyperparams,
    ground_truth: Option<&Array2<f64>>,
) -> Result<InversionResult> {
    match (scenario.model, run.model.activation) {
        (ModelKind::Linear, Activation::Identity) => {}
        (ModelKind::Logistic, Activation::PolySigmoid) => {}
        _ => {
            return Err(Error::arg(
                "scenario model does not match the trained activation",
            ))
        }
    }
    let party_b = run.party_b().clone();
    let iterations = hp.iterations;

    let (za_series, d_series, gradient_norm) = {
        let tb = &run.transcripts[&party_b];
        let mut za = Vec::with_capacity(iterations);
        let mut d = Vec::with_capacity(iterations);
        for k in 0..iterations {
            d.push(solve_residual(tb, xb, hp.alpha, k)?);
            za.push(match scenario.model {
                ModelKind::Linear => recover_intermediate_za(tb, xb, hp, k)?,
                ModelKind::Logistic => recover_za_logistic(tb, xb, hp, k)?,
            });
        }
        let g_last = tb.gradient(&party_b, iterations - 1)?;
        let norm = g_last.iter().map(|v| v * v).sum::<f64>().sqrt();
        (za, d, norm)
    };

    let m = za_series[0].len();
    let extraction = extract_quadratic_vfl(&za_series, &d_series, hp)?;

    let w_a = extract_weights_by_query(run)?;
    let n_a = w_a.len();

    // One more recurrence step aligns the score series with the stolen
    // final weights: z_a at the post-update iteration equals X_a w_final.
    let za_final = &(hp.decay() * &za_series[iterations - 1])
        - &(hp.eta * &extraction.gram.dot(&d_series[iterations - 1]));
    let constraints = build_linear_constraints(&za_final, &w_a, gradient_norm, CONVERGENCE_THRESHOLD);

    let system = QuadraticSystem::new(
        extraction.gram.clone(),
        n_a,
        scenario.known_entries.clone(),
        Some(constraints.side.clone()),
    )?
    .with_tolerance(solver_noise_floor(&extraction))?;
    let sols = recover_matrix(&system)?;
    let best = best_candidate_index(&sols);
    let rel_error = match ground_truth {
        Some(truth) => Some(sols.best_relative_error(&truth.view())?),
        None => None,
    };

    Ok(InversionResult {
        estimate: sols.candidates[best].clone(),
        solution_count: sols.len(),
        kdr: kdr_vertical(n_a, m),
        rel_error,
        constraints_used: ConstraintSummary {
            quadratic: m * (m + 1) / 2,
            linear: m,
        },
        converged: Some(constraints.converged),
    })
}

fn multiparty_inversion(
    scenario: &AttackScenario,
    transcript: &Transcript,
    victim: &PartyId,
    hp: &Hyperparams,
    ground_truth: Option<&Array2<f64>>,
) -> Result<InversionResult> {
    if scenario.model != ModelKind::Linear {
        return Err(Error::arg(
            "the multi-party inversion is defined for linear regression",
        ));
    }
    if !scenario.known_entries.is_empty() {
        return Err(Error::arg(
            "the multi-party inversion needs no known entries; supply none",
        ));
    }
    let estimate = multiparty_linear_inversion(transcript, victim, hp)?;
    let rel_error = match ground_truth {
        Some(truth) => Some(relative_error(&estimate.view(), &truth.view())?),
        None => None,
    };
    let m = estimate.nrows();
    let n = estimate.ncols();
    Ok(InversionResult {
        estimate,
        solution_count: 1,
        kdr: 0.0,
        rel_error,
        constraints_used: ConstraintSummary {
            quadratic: 0,
            linear: m * n,
        },
        converged: None,
    })
}

fn horizontal_inversion(
    scenario: &AttackScenario,
    transcript: &Transcript,
    victim_rows: usize,
    hp: &Hyperparams,
    ground_truth: Option<&Array2<f64>>,
) -> Result<InversionResult> {
    if scenario.model != ModelKind::Linear {
        return Err(Error::arg(
            "the horizontal inversion is defined for linear regression",
        ));
    }
    let iterations = hp.iterations;
    let mut grads = Vec::with_capacity(iterations);
    for k in 0..iterations {
        grads.push(hfl_recover_gradient(transcript, hp, k)?);
    }
    let mut weights = Vec::with_capacity(iterations + 1);
    for k in 0..=iterations {
        weights.push(Array1::from_vec(transcript.averaged_weights(k)?.to_vec()));
    }
    let extraction = extract_quadratic_hfl(&grads, &weights, hp.alpha)?;
    let n = extraction.gram.nrows();

    // The Gram constrains the victim's columns, so the quadratic solver
    // runs on the transposed block; known entries arrive in victim
    // coordinates and are mirrored here.
    let mapped: Vec<KnownEntry> = scenario
        .known_entries
        .iter()
        .map(|e| KnownEntry::new(e.col, e.row, e.value))
        .collect();
    let system = QuadraticSystem::new(extraction.gram.clone(), victim_rows, mapped, None)?
        .with_tolerance(solver_noise_floor(&extraction))?;
    let sols = recover_matrix(&system)?;
    let best = best_candidate_index(&sols);
    let estimate = sols.candidates[best].t().to_owned();
    let rel_error = match ground_truth {
        Some(truth) => {
            let transposed = truth.t().to_owned();
            Some(sols.best_relative_error(&transposed.view())?)
        }
        None => None,
    };

    Ok(InversionResult {
        estimate,
        solution_count: sols.len(),
        kdr: kdr_horizontal(victim_rows, n),
        rel_error,
        constraints_used: ConstraintSummary {
            quadratic: n * (n + 1) / 2,
            linear: 0,
        },
        converged: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{
        hfl_linreg_train, multiparty_vfl_train, vfl_linreg_train, vfl_logreg_train, EventKind,
    };
    use crate::recovery::constrained_dof;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::collections::BTreeSet;

    fn seeded_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }

    fn seeded_vector(len: usize, seed: u64) -> Array1<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Array1::from_iter((0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
    }

    #[test]
    fn identity_feature_block_recovers_za_directly() {
        let xa = DesignMatrix::from_array(seeded_matrix(4, 3, 1), PartyId::new("a")).unwrap();
        let xb = DesignMatrix::from_array(Array2::eye(4), PartyId::new("b")).unwrap();
        let y = seeded_vector(4, 2);
        let hp = Hyperparams::new(0.02, 0.0, 3, Activation::Identity, 5).unwrap();
        let run = vfl_linreg_train(&xa, &xb, &y, &hp).unwrap();
        let tb = &run.transcripts[run.party_b()];
        let arbiter = PartyId::arbiter();
        for k in 0..3 {
            let za = recover_intermediate_za(tb, &xb, &hp, k).unwrap();
            // With an identity block and alpha = 0 the gradient is the
            // residual itself, so the recovery reduces to g - z_b + y.
            let g = tb.gradient(run.party_b(), k).unwrap();
            let zb = tb.local_feature(k).unwrap();
            let truth = tb.sealed("za", k).unwrap().open(&arbiter).unwrap();
            for i in 0..4 {
                assert!((za[i] - (g[i] - zb[i] + y[i])).abs() < 1e-12);
                assert!((za[i] - truth[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn recovered_score_share_matches_hidden_envelope() {
        let xa = DesignMatrix::from_array(seeded_matrix(4, 3, 11), PartyId::new("a")).unwrap();
        let xb = DesignMatrix::from_array(seeded_matrix(4, 5, 12), PartyId::new("b")).unwrap();
        let y = seeded_vector(4, 13);
        let hp = Hyperparams::new(0.03, 0.1, 6, Activation::Identity, 21).unwrap();
        let run = vfl_linreg_train(&xa, &xb, &y, &hp).unwrap();
        let tb = &run.transcripts[run.party_b()];
        let arbiter = PartyId::arbiter();
        // The attack must not depend on ciphertext contents: a redacted
        // transcript yields the identical answer.
        let redacted = tb.sealed_copy();
        for k in 0..6 {
            let za = recover_intermediate_za(tb, &xb, &hp, k).unwrap();
            let za_redacted = recover_intermediate_za(&redacted, &xb, &hp, k).unwrap();
            assert_eq!(za, za_redacted);
            let truth = tb.sealed("za", k).unwrap().open(&arbiter).unwrap();
            for i in 0..4 {
                assert!((za[i] - truth[i]).abs() < 1e-10, "iteration {k}");
            }
        }
    }

    #[test]
    fn duplicated_rows_demand_fake_features() {
        let mut xb_values = seeded_matrix(4, 5, 31);
        let row0 = xb_values.row(0).to_owned();
        xb_values.row_mut(1).assign(&row0);
        let xb = DesignMatrix::from_array(xb_values, PartyId::new("b")).unwrap();
        let xa = DesignMatrix::from_array(seeded_matrix(4, 2, 32), PartyId::new("a")).unwrap();
        let y = seeded_vector(4, 33);
        let hp = Hyperparams::new(0.02, 0.1, 3, Activation::Identity, 7).unwrap();

        let run = vfl_linreg_train(&xa, &xb, &y, &hp).unwrap();
        let err = recover_intermediate_za(&run.transcripts[run.party_b()], &xb, &hp, 0);
        match err {
            Err(Error::NeedFakeFeatures { rank, needed }) => {
                assert_eq!(rank, 3);
                assert_eq!(needed, 4);
            }
            other => panic!("expected rank error, got {other:?}"),
        }

        // Injecting fake columns breaks the duplication and the attack
        // goes through on the augmented run.
        let xb_fake = inject_fake_features(&xb, 2, 99).unwrap();
        assert_eq!(xb_fake.cols(), 7);
        let run2 = vfl_linreg_train(&xa, &xb_fake, &y, &hp).unwrap();
        let tb2 = &run2.transcripts[run2.party_b()];
        let za = recover_intermediate_za(tb2, &xb_fake, &hp, 0).unwrap();
        let truth = tb2
            .sealed("za", 0)
            .unwrap()
            .open(&PartyId::arbiter())
            .unwrap();
        for i in 0..4 {
            assert!((za[i] - truth[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn inject_fake_features_appends_without_touching_originals() {
        let xb = DesignMatrix::from_array(seeded_matrix(4, 2, 41), PartyId::new("b")).unwrap();
        let same = inject_fake_features(&xb, 0, 1).unwrap();
        assert_eq!(same.values(), xb.values());

        let grown = inject_fake_features(&xb, 3, 1).unwrap();
        assert_eq!(grown.rows(), 4);
        assert_eq!(grown.cols(), 5);
        for i in 0..4 {
            for j in 0..2 {
                assert_eq!(grown.values()[[i, j]], xb.values()[[i, j]]);
            }
            for j in 2..5 {
                assert!(grown.values()[[i, j]].abs() <= 1e-3);
            }
        }
        assert_eq!(grown.feature_names()[2], "fake0");
        assert_eq!(grown.party(), xb.party());
    }

    fn synthetic_logistic_transcript(
        activated: &Array1<f64>,
        z_b: &Array1<f64>,
        y: &Array1<f64>,
    ) -> (Transcript, DesignMatrix) {
        // Identity attacker block with zero weights and alpha = 0 makes
        // the observed gradient equal the residual d = activated - y.
        let m = activated.len();
        let mut t = Transcript::new(PartyId::new("b"));
        t.push(None, EventKind::Labels(y.to_vec()));
        t.push(Some(0), EventKind::LocalWeights(vec![0.0; m]));
        t.push(Some(0), EventKind::LocalFeature(z_b.to_vec()));
        let d = activated - y;
        t.push(
            Some(0),
            EventKind::Gradient {
                party: PartyId::new("b"),
                values: d.to_vec(),
            },
        );
        let xb = DesignMatrix::from_array(Array2::eye(m), PartyId::new("b")).unwrap();
        (t, xb)
    }

    #[test]
    fn centered_activation_means_opposite_score_shares() {
        let z_b = array![0.3, -0.7, 1.1];
        let y = array![0.2, 0.8, 0.4];
        let activated = Array1::from_elem(3, 0.5);
        let (t, xb) = synthetic_logistic_transcript(&activated, &z_b, &y);
        let hp = Hyperparams::new(0.05, 0.0, 1, Activation::PolySigmoid, 1).unwrap();
        let za = recover_za_logistic(&t, &xb, &hp, 0).unwrap();
        for i in 0..3 {
            assert!((za[i] + z_b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_activation_is_rejected() {
        let z_b = array![0.1, 0.2];
        let y = array![0.0, 1.0];
        let activated = array![1.2, 0.5];
        let (t, xb) = synthetic_logistic_transcript(&activated, &z_b, &y);
        let hp = Hyperparams::new(0.05, 0.0, 1, Activation::PolySigmoid, 1).unwrap();
        let err = recover_za_logistic(&t, &xb, &hp, 0);
        assert!(matches!(err, Err(Error::SigmoidRange { .. })));
    }

    #[test]
    fn logistic_recovery_matches_hidden_envelope() {
        let xa = DesignMatrix::from_array(seeded_matrix(4, 3, 51), PartyId::new("a")).unwrap();
        let xb = DesignMatrix::from_array(seeded_matrix(4, 5, 52), PartyId::new("b")).unwrap();
        let y = array![0.0, 1.0, 1.0, 0.0];
        let hp = Hyperparams::new(0.05, 0.1, 6, Activation::PolySigmoid, 61).unwrap();
        let run = vfl_logreg_train(&xa, &xb, &y, &hp).unwrap();
        let tb = &run.transcripts[run.party_b()];
        let arbiter = PartyId::arbiter();
        for k in 0..6 {
            let za = recover_za_logistic(tb, &xb, &hp, k).unwrap();
            let truth = tb.sealed("za", k).unwrap().open(&arbiter).unwrap();
            for i in 0..4 {
                assert!((za[i] - truth[i]).abs() < 1e-8, "iteration {k}");
            }
        }
    }

    #[test]
    fn gram_extraction_matches_true_sample_gram() {
        let xa_values = seeded_matrix(4, 3, 71);
        let xa = DesignMatrix::from_array(xa_values.clone(), PartyId::new("a")).unwrap();
        let xb = DesignMatrix::from_array(seeded_matrix(4, 5, 72), PartyId::new("b")).unwrap();
        let y = seeded_vector(4, 73);
        let hp = Hyperparams::new(0.03, 0.1, 8, Activation::Identity, 81).unwrap();
        let run = vfl_linreg_train(&xa, &xb, &y, &hp).unwrap();
        let tb = &run.transcripts[run.party_b()];

        let mut za = Vec::new();
        let mut d = Vec::new();
        for k in 0..8 {
            za.push(recover_intermediate_za(tb, &xb, &hp, k).unwrap());
            d.push(solve_residual(tb, &xb, hp.alpha, k).unwrap());
        }
        let ex = extract_quadratic_vfl(&za, &d, &hp).unwrap();
        let truth = xa_values.dot(&xa_values.t());
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (ex.gram[[i, j]] - truth[[i, j]]).abs() < 1e-8,
                    "entry ({i}, {j}): {} vs {}",
                    ex.gram[[i, j]],
                    truth[[i, j]]
                );
            }
        }
        assert!(!ex.degenerate);
        assert!(ex.max_residual < 1e-8);
        assert_eq!(ex.pairs_used, 7);
    }

    #[test]
    fn gram_extraction_handles_single_sample() {
        // One sample, hand-built series: with eta 0.1 and alpha 0 the
        // recurrence gives z1 = z0 - 0.1 * c * d0, so c = 3 produces
        // z1 = 1 - 0.1 * 3 * 2 = 0.4.
        let hp = Hyperparams::new(0.1, 0.0, 2, Activation::Identity, 1).unwrap();
        let za = vec![array![1.0], array![0.4]];
        let d = vec![array![2.0]];
        let ex = extract_quadratic_vfl(&za, &d, &hp).unwrap();
        assert!((ex.gram[[0, 0]] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gram_extraction_flags_fixed_point_runs() {
        // Score shares frozen across iterations with alpha = 0: the right
        // side vanishes and the equations no longer constrain the Gram.
        let hp = Hyperparams::new(0.1, 0.0, 3, Activation::Identity, 1).unwrap();
        let z = array![1.0, -2.0];
        let za = vec![z.clone(), z.clone(), z];
        let d = vec![array![1.0, 0.0], array![0.0, 1.0]];
        let ex = extract_quadratic_vfl(&za, &d, &hp).unwrap();
        assert!(ex.degenerate);
        assert!(linalg::max_abs(&ex.gram.view()) < 1e-10);
    }

    #[test]
    fn too_few_iteration_pairs_reported() {
        let xa = DesignMatrix::from_array(seeded_matrix(4, 3, 91), PartyId::new("a")).unwrap();
        let xb = DesignMatrix::from_array(seeded_matrix(4, 5, 92), PartyId::new("b")).unwrap();
        let y = seeded_vector(4, 93);
        let hp = Hyperparams::new(0.03, 0.1, 3, Activation::Identity, 7).unwrap();
        let run = vfl_linreg_train(&xa, &xb, &y, &hp).unwrap();
        let tb = &run.transcripts[run.party_b()];
        let mut za = Vec::new();
        let mut d = Vec::new();
        for k in 0..3 {
            za.push(recover_intermediate_za(tb, &xb, &hp, k).unwrap());
            d.push(solve_residual(tb, &xb, hp.alpha, k).unwrap());
        }
        match extract_quadratic_vfl(&za, &d, &hp) {
            Err(Error::InsufficientResiduals { rank, needed, pairs }) => {
                assert!(rank < 4);
                assert_eq!(needed, 4);
                assert_eq!(pairs, 2);
            }
            other => panic!("expected residual-rank error, got {other:?}"),
        }
    }

    #[test]
    fn weight_theft_strategies_agree() {
        let xa = DesignMatrix::from_array(seeded_matrix(5, 3, 101), PartyId::new("a")).unwrap();
        let xb = DesignMatrix::from_array(seeded_matrix(5, 2, 102), PartyId::new("b")).unwrap();
        let y = seeded_vector(5, 103);
        let hp = Hyperparams::new(0.02, 0.1, 4, Activation::Identity, 9).unwrap();
        let mut run = vfl_linreg_train(&xa, &xb, &y, &hp).unwrap();
        let stolen = extract_weights_by_query(&mut run).unwrap();
        for j in 0..3 {
            assert!((stolen[j] - run.model.w_a[j]).abs() < 1e-12);
        }

        // Random independent queries reach the same weights.
        let party_b = run.party_b().clone();
        let before = run.transcripts[&party_b].test_features().len();
        let random_q = seeded_matrix(4, 3, 104);
        for row in random_q.axis_iter(Axis(0)) {
            run.predict(&row.to_owned(), &Array1::zeros(2)).unwrap();
        }
        let logged = run.transcripts[&party_b].test_features();
        let responses = Array1::from_iter(logged[before..].iter().map(|v| v[0]));
        let stolen2 = solve_weights_from_queries(&random_q, &responses).unwrap();
        for j in 0..3 {
            assert!((stolen[j] - stolen2[j]).abs() < 1e-12);
        }

        // All-zero responses mean all-zero weights.
        let zeros = solve_weights_from_queries(&Array2::eye(3), &Array1::zeros(3)).unwrap();
        assert!(zeros.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dependent_queries_are_rejected() {
        let mut q = Array2::zeros((3, 2));
        q[[0, 0]] = 1.0;
        q[[1, 0]] = 2.0;
        q[[2, 0]] = -1.0;
        let r = array![1.0, 2.0, -1.0];
        assert!(matches!(
            solve_weights_from_queries(&q, &r),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn convergence_flag_tracks_gradient_norm() {
        let lc = build_linear_constraints(&array![1.0], &array![2.0], 1e-8, 1e-6);
        assert!(lc.converged);
        let lc = build_linear_constraints(&array![1.0], &array![2.0], 0.5, 1e-6);
        assert!(!lc.converged);
        assert_eq!(lc.gradient_norm, 0.5);
    }

    #[test]
    fn hfl_gradient_recovery_matches_victim_plaintext() {
        let xa = DesignMatrix::from_array(seeded_matrix(5, 3, 111), PartyId::new("a")).unwrap();
        let ya = seeded_vector(5, 112);
        let xb = DesignMatrix::from_array(seeded_matrix(6, 3, 113), PartyId::new("b")).unwrap();
        let yb = seeded_vector(6, 114);
        let hp = Hyperparams::new(0.01, 0.1, 5, Activation::Identity, 15).unwrap();
        let run = hfl_linreg_train(&[(xa, ya), (xb, yb)], &hp).unwrap();
        let a = PartyId::new("a");
        let b = PartyId::new("b");
        for k in 0..5 {
            let recovered = hfl_recover_gradient(&run.transcripts[&b], &hp, k).unwrap();
            let truth = run.transcripts[&a].gradient(&a, k).unwrap();
            for j in 0..3 {
                assert!((recovered[j] - truth[j]).abs() < 1e-10, "round {k}");
            }
        }
    }

    #[test]
    fn hfl_identical_parties_mirror_gradients() {
        let xa = DesignMatrix::from_array(seeded_matrix(5, 3, 121), PartyId::new("a")).unwrap();
        let ya = seeded_vector(5, 122);
        let twin = (
            DesignMatrix::from_array(xa.values().clone(), PartyId::new("b")).unwrap(),
            ya.clone(),
        );
        let hp = Hyperparams::new(0.01, 0.1, 4, Activation::Identity, 5).unwrap();
        let run = hfl_linreg_train(&[(xa, ya), twin], &hp).unwrap();
        let b = PartyId::new("b");
        for k in 0..4 {
            let recovered = hfl_recover_gradient(&run.transcripts[&b], &hp, k).unwrap();
            let own = run.transcripts[&b].gradient(&b, k).unwrap();
            for j in 0..3 {
                assert!((recovered[j] - own[j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn hfl_gram_extraction_matches_true_feature_gram() {
        let xa_values = seeded_matrix(5, 3, 131);
        let xa = DesignMatrix::from_array(xa_values.clone(), PartyId::new("a")).unwrap();
        let ya = seeded_vector(5, 132);
        let xb = DesignMatrix::from_array(seeded_matrix(6, 3, 133), PartyId::new("b")).unwrap();
        let yb = seeded_vector(6, 134);
        let hp = Hyperparams::new(0.01, 0.2, 8, Activation::Identity, 25).unwrap();
        let run = hfl_linreg_train(&[(xa, ya), (xb, yb)], &hp).unwrap();
        let b = PartyId::new("b");
        let tb = &run.transcripts[&b];
        let grads: Vec<Array1<f64>> = (0..8)
            .map(|k| hfl_recover_gradient(tb, &hp, k).unwrap())
            .collect();
        let weights: Vec<Array1<f64>> = (0..=8)
            .map(|k| Array1::from_vec(tb.averaged_weights(k).unwrap().to_vec()))
            .collect();
        let ex = extract_quadratic_hfl(&grads, &weights, hp.alpha).unwrap();
        let truth = xa_values.t().dot(&xa_values);
        for i in 0..3 {
            for j in 0..3 {
                assert!((ex.gram[[i, j]] - truth[[i, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn hfl_gram_extraction_scalar_feature() {
        let xa_values = seeded_matrix(4, 1, 141);
        let xa = DesignMatrix::from_array(xa_values.clone(), PartyId::new("a")).unwrap();
        let ya = seeded_vector(4, 142);
        let xb = DesignMatrix::from_array(seeded_matrix(5, 1, 143), PartyId::new("b")).unwrap();
        let yb = seeded_vector(5, 144);
        let hp = Hyperparams::new(0.01, 0.0, 4, Activation::Identity, 35).unwrap();
        let run = hfl_linreg_train(&[(xa, ya), (xb, yb)], &hp).unwrap();
        let b = PartyId::new("b");
        let tb = &run.transcripts[&b];
        let grads: Vec<Array1<f64>> = (0..4)
            .map(|k| hfl_recover_gradient(tb, &hp, k).unwrap())
            .collect();
        let weights: Vec<Array1<f64>> = (0..=4)
            .map(|k| Array1::from_vec(tb.averaged_weights(k).unwrap().to_vec()))
            .collect();
        let ex = extract_quadratic_hfl(&grads, &weights, hp.alpha).unwrap();
        let norm_sq: f64 = xa_values.column(0).iter().map(|v| v * v).sum();
        assert!((ex.gram[[0, 0]] - norm_sq).abs() < 1e-8);
    }

    #[test]
    fn hfl_converged_run_lacks_weight_motion() {
        // Constant weight rounds give zero differences: rank collapses.
        let g = vec![array![1.0, 2.0], array![1.0, 2.0], array![1.0, 2.0]];
        let w = vec![array![0.5, 0.5]; 4];
        match extract_quadratic_hfl(&g, &w, 0.0) {
            Err(Error::InsufficientWeightDiffs { rank, needed, pairs }) => {
                assert_eq!(rank, 0);
                assert_eq!(needed, 2);
                assert_eq!(pairs, 2);
            }
            other => panic!("expected weight-diff error, got {other:?}"),
        }
    }

    fn multiparty_fixture(
        victim_values: Array2<f64>,
        iterations: usize,
        seed: u64,
    ) -> (crate::protocols::MultiVflRun, Hyperparams) {
        let m = victim_values.nrows();
        // The helper parties carry enough columns that the residual
        // differences span the sample space even when the victim block
        // contributes no rank at all.
        let parties = vec![
            DesignMatrix::from_array(seeded_matrix(m, 3, seed), PartyId::new("b")).unwrap(),
            DesignMatrix::from_array(victim_values, PartyId::new("a")).unwrap(),
            DesignMatrix::from_array(seeded_matrix(m, 3, seed + 1), PartyId::new("c")).unwrap(),
        ];
        let y = seeded_vector(m, seed + 2);
        let hp = Hyperparams::new(0.02, 0.1, iterations, Activation::Identity, seed + 3).unwrap();
        let coalition: BTreeSet<PartyId> = [PartyId::arbiter(), PartyId::new("b")]
            .into_iter()
            .collect();
        let run = multiparty_vfl_train(&parties, &y, &hp, &coalition).unwrap();
        (run, hp)
    }

    #[test]
    fn multiparty_inversion_reconstructs_victim_block() {
        let truth = seeded_matrix(7, 3, 151);
        let (run, hp) = multiparty_fixture(truth.clone(), 14, 152);
        let b = PartyId::new("b");
        let est = multiparty_linear_inversion(&run.transcripts[&b], &PartyId::new("a"), &hp)
            .unwrap();
        let rel = relative_error(&est.view(), &truth.view()).unwrap();
        assert!(rel <= 1e-8, "relative error {rel}");
    }

    #[test]
    fn multiparty_inversion_handles_degenerate_victims() {
        // All-zero victim block: the solve returns exactly zero.
        let (run, hp) = multiparty_fixture(Array2::zeros((5, 2)), 12, 161);
        let b = PartyId::new("b");
        let est =
            multiparty_linear_inversion(&run.transcripts[&b], &PartyId::new("a"), &hp).unwrap();
        assert!(linalg::max_abs(&est.view()) < 1e-10);

        // Single-column victim.
        let truth = seeded_matrix(5, 1, 162);
        let (run, hp) = multiparty_fixture(truth.clone(), 12, 163);
        let est =
            multiparty_linear_inversion(&run.transcripts[&b], &PartyId::new("a"), &hp).unwrap();
        let rel = relative_error(&est.view(), &truth.view()).unwrap();
        assert!(rel <= 1e-8);
    }

    #[test]
    fn multiparty_inversion_requires_plaintext_collusion() {
        let parties = vec![
            DesignMatrix::from_array(seeded_matrix(5, 2, 171), PartyId::new("b")).unwrap(),
            DesignMatrix::from_array(seeded_matrix(5, 2, 172), PartyId::new("a")).unwrap(),
        ];
        let y = seeded_vector(5, 173);
        let hp = Hyperparams::new(0.02, 0.1, 8, Activation::Identity, 19).unwrap();
        let run = multiparty_vfl_train(&parties, &y, &hp, &BTreeSet::new()).unwrap();
        let err = multiparty_linear_inversion(
            &run.transcripts[&PartyId::new("b")],
            &PartyId::new("a"),
            &hp,
        );
        assert!(matches!(err, Err(Error::MissingEvent { .. })));
    }

    #[test]
    fn kdr_matches_published_values() {
        assert!((kdr_vertical(4, 7) - 0.107).abs() < 5e-4);
        assert!((kdr_vertical(7, 7) - 0.306).abs() < 5e-4);
        assert_eq!(kdr_vertical(2, 9), 0.0);
        assert_eq!(kdr_vertical(1, 5), 0.0);
        assert!((kdr_horizontal(5, 5) - 0.40).abs() < 1e-12);
        assert!((kdr_horizontal(11, 11) - 0.4545).abs() < 1e-4);
        assert!((kdr_horizontal(4, 11) - 0.1364).abs() < 1e-4);
        // Past the square case whole rows must be known.
        assert!((kdr_horizontal(8, 5) - 0.625).abs() < 1e-12);
    }

    #[test]
    fn vertical_kdr_is_the_dof_share_of_the_block() {
        for (n_a, m) in [(3usize, 5usize), (4, 7), (5, 9), (7, 7)] {
            let dof = constrained_dof(m, n_a).unwrap();
            let expect = dof as f64 / (m * n_a) as f64;
            assert!((kdr_vertical(n_a, m) - expect).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn vertical_kdr_grows_with_victim_width(m in 3usize..60) {
            // More victim features means a larger share must be known,
            // as long as the sample count keeps recovery feasible.
            for n_a in 1..m {
                prop_assert!(kdr_vertical(n_a + 1, m) >= kdr_vertical(n_a, m) - 1e-15);
            }
        }
    }

    #[test]
    fn fake_features_leave_training_quality_alone() {
        let xa = DesignMatrix::from_array(seeded_matrix(20, 3, 181), PartyId::new("a")).unwrap();
        let xb = DesignMatrix::from_array(seeded_matrix(20, 5, 182), PartyId::new("b")).unwrap();
        let planted = seeded_vector(8, 183);
        let all = ndarray::concatenate![Axis(1), xa.values().clone(), xb.values().clone()];
        let noise = seeded_vector(20, 184);
        let y = &all.dot(&planted) + &(0.1 * &noise);

        let hp = Hyperparams::new(0.01, 0.01, 400, Activation::Identity, 3).unwrap();
        let base = vfl_linreg_train(&xa, &xb, &y, &hp).unwrap();
        // Two fake columns out of seven total keeps the fake rate under
        // thirty percent.
        let xb_fake = inject_fake_features(&xb, 2, 185).unwrap();
        let faked = vfl_linreg_train(&xa, &xb_fake, &y, &hp).unwrap();

        let l0 = *base.loss_trace.last().unwrap();
        let l1 = *faked.loss_trace.last().unwrap();
        assert!(
            (l1 - l0).abs() / l0 <= 0.05,
            "loss moved from {l0} to {l1}"
        );
    }

    #[test]
    fn full_vertical_inversion_recovers_narrow_victim_without_knowns() {
        let truth = seeded_matrix(6, 2, 191);
        let xa = DesignMatrix::from_array(truth.clone(), PartyId::new("a")).unwrap();
        let xb = DesignMatrix::from_array(seeded_matrix(6, 7, 192), PartyId::new("b")).unwrap();
        let y = seeded_vector(6, 193);
        let hp = Hyperparams::new(0.01, 0.1, 12, Activation::Identity, 41).unwrap();
        let mut run = vfl_linreg_train(&xa, &xb, &y, &hp).unwrap();

        let scenario = AttackScenario {
            setting: AttackSetting::Vertical2Party,
            model: ModelKind::Linear,
            known_entries: vec![],
            fake_feature_count: 0,
            seed: 0,
        };
        let result = full_inversion(
            &scenario,
            AttackInputs::Vertical2Party {
                run: &mut run,
                xb: &xb,
                hp: &hp,
            },
            Some(&truth),
        )
        .unwrap();
        // Two-feature victims need zero known entries; the solution set
        // is the mirror pair around the weight axis.
        assert_eq!(result.solution_count, 2);
        assert!(result.rel_error.unwrap() <= 1e-6, "rel {:?}", result.rel_error);
        assert_eq!(result.kdr, 0.0);
        assert_eq!(result.constraints_used.linear, 6);
        assert_eq!(result.converged, Some(false));
    }

    #[test]
    fn full_vertical_inversion_uses_known_entries_for_wider_victims() {
        let truth = seeded_matrix(6, 3, 201);
        let xa = DesignMatrix::from_array(truth.clone(), PartyId::new("a")).unwrap();
        let xb = DesignMatrix::from_array(seeded_matrix(6, 7, 202), PartyId::new("b")).unwrap();
        let y = seeded_vector(6, 203);
        let hp = Hyperparams::new(0.01, 0.1, 12, Activation::Identity, 43).unwrap();
        let mut run = vfl_linreg_train(&xa, &xb, &y, &hp).unwrap();

        let scenario = AttackScenario {
            setting: AttackSetting::Vertical2Party,
            model: ModelKind::Linear,
            // Three victim features need (3-1)(3-2)/2 = 1 known entry.
            known_entries: vec![KnownEntry::new(0, 1, truth[[0, 1]])],
            fake_feature_count: 0,
            seed: 0,
        };
        let result = full_inversion(
            &scenario,
            AttackInputs::Vertical2Party {
                run: &mut run,
                xb: &xb,
                hp: &hp,
            },
            Some(&truth),
        )
        .unwrap();
        assert!(result.rel_error.unwrap() <= 1e-6);
        assert!((result.kdr - kdr_vertical(3, 6)).abs() < 1e-12);
    }

    #[test]
    fn full_horizontal_inversion_recovers_victim_rows() {
        let truth = seeded_matrix(3, 4, 211);
        let xa = DesignMatrix::from_array(truth.clone(), PartyId::new("a")).unwrap();
        let ya = seeded_vector(3, 212);
        let xb = DesignMatrix::from_array(seeded_matrix(5, 4, 213), PartyId::new("b")).unwrap();
        let yb = seeded_vector(5, 214);
        let hp = Hyperparams::new(0.01, 0.1, 10, Activation::Identity, 45).unwrap();
        let run = hfl_linreg_train(&[(xa, ya), (xb, yb)], &hp).unwrap();

        // Three victim rows need 3 * 2 / 2 = 3 known entries; the pattern
        // pins two entries of one sample and one of another.
        let scenario = AttackScenario {
            setting: AttackSetting::Horizontal2Party,
            model: ModelKind::Linear,
            known_entries: vec![
                KnownEntry::new(1, 0, truth[[1, 0]]),
                KnownEntry::new(2, 0, truth[[2, 0]]),
                KnownEntry::new(2, 1, truth[[2, 1]]),
            ],
            fake_feature_count: 0,
            seed: 0,
        };
        let result = full_inversion(
            &scenario,
            AttackInputs::Horizontal2Party {
                transcript: &run.transcripts[&PartyId::new("b")],
                victim_rows: 3,
                hp: &hp,
            },
            Some(&truth),
        )
        .unwrap();
        assert!(result.rel_error.unwrap() <= 1e-6, "rel {:?}", result.rel_error);
        assert!((result.kdr - 0.25).abs() < 1e-12);
        assert_eq!(result.estimate.nrows(), 3);
        assert_eq!(result.estimate.ncols(), 4);
    }

    #[test]
    fn full_multiparty_inversion_needs_no_knowns() {
        let truth = seeded_matrix(7, 3, 221);
        let (run, hp) = multiparty_fixture(truth.clone(), 14, 222);
        let scenario = AttackScenario {
            setting: AttackSetting::VerticalMultiparty,
            model: ModelKind::Linear,
            known_entries: vec![],
            fake_feature_count: 0,
            seed: 0,
        };
        let result = full_inversion(
            &scenario,
            AttackInputs::VerticalMultiparty {
                transcript: &run.transcripts[&PartyId::new("b")],
                victim: &PartyId::new("a"),
                hp: &hp,
            },
            Some(&truth),
        )
        .unwrap();
        assert_eq!(result.solution_count, 1);
        assert_eq!(result.kdr, 0.0);
        assert!(result.rel_error.unwrap() <= 1e-8);
    }

    #[test]
    fn mismatched_setting_and_inputs_rejected() {
        let truth = seeded_matrix(5, 2, 231);
        let (run, hp) = multiparty_fixture(truth, 12, 232);
        let scenario = AttackScenario {
            setting: AttackSetting::Horizontal2Party,
            model: ModelKind::Linear,
            known_entries: vec![],
            fake_feature_count: 0,
            seed: 0,
        };
        let err = full_inversion(
            &scenario,
            AttackInputs::VerticalMultiparty {
                transcript: &run.transcripts[&PartyId::new("b")],
                victim: &PartyId::new("a"),
                hp: &hp,
            },
            None,
        );
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }
}
