//! Scenario orchestration: dataset handling, TOML configuration, end-to-end
//! pipeline runs, and machine-readable reports.
//!
//! Everything below glues the protocol simulators to the attacks. A scenario
//! is described by a [`ScenarioConfig`] (usually loaded from a TOML file),
//! executed by [`run_scenario`], and summarized in an [`AttackReport`] whose
//! JSON field order is stable so runs can be diffed byte for byte (timing
//! excluded, see [`report_diff`]).

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attacks::{
    full_inversion, inject_fake_features, AttackInputs, AttackScenario, AttackSetting,
    InversionResult, ModelKind,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::protocols::{
    hfl_linreg_train, multiparty_vfl_train, poly_sigmoid, vfl_linreg_train, vfl_logreg_train,
    Activation, DesignMatrix, Hyperparams, PartyId,
};
use crate::recovery::{constrained_dof, quadratic_dof, KnownEntry};
use crate::tree::{
    predict_query_count, secureboost_train, steal_thresholds, total_queries, AttackConfig,
    BoostParams, BoostedEnsemble, NodeKind, PredictionOracle, TheftOutcome,
};

/// Relative-error bound under which an inversion counts as successful when
/// the config does not override it.
pub const DEFAULT_REL_TOLERANCE: f64 = 1e-6;
/// Default target interval width for threshold theft.
pub const DEFAULT_EPSILON: f64 = 1e-2;
/// Default probe grid size for threshold theft.
pub const DEFAULT_GRID_POINTS: usize = 401;
/// Margin added on each side of the observed data range when the probe
/// bounds are not overridden. Trained thresholds are midpoints of observed
/// values, so any positive margin keeps them strictly interior.
const QUERY_BOUND_MARGIN: f64 = 0.05;

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// A fully numeric table: feature matrix plus one label per row.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Array1<f64>,
    pub feature_names: Vec<String>,
    pub label_name: String,
    /// Rows the loader discarded because a cell was empty or the record had
    /// the wrong field count. Always zero for synthetic data.
    pub dropped_rows: usize,
}

fn io_error(path: &Path, err: impl fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: err.to_string(),
    }
}

/// Loads a CSV file with a header row. The label lives in `label_column`,
/// or in the last column when none is named. Rows with empty cells or a
/// wrong field count are dropped (and counted); non-numeric or non-finite
/// cells abort the load with the offending line number.
pub fn load_dataset(path: &Path, label_column: Option<&str>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| io_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| io_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.len() < 2 {
        return Err(Error::Dataset {
            line: 1,
            message: format!(
                "need a label column plus at least one feature, found {} header columns",
                headers.len()
            ),
        });
    }
    let label_idx = match label_column {
        Some(name) => {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Dataset {
                    line: 1,
                    message: format!("label column {name:?} is not in the header"),
                })?
        }
        None => headers.len() - 1,
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| io_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != headers.len() || record.iter().any(str::is_empty) {
            dropped += 1;
            continue;
        }
        let mut parsed = Vec::with_capacity(headers.len());
        for (field, name) in record.iter().zip(&headers) {
            let value: f64 = field.parse().map_err(|_| Error::Dataset {
                line,
                message: format!("column {name:?}: {field:?} is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Dataset {
                    line,
                    message: format!("column {name:?}: {field:?} is not finite"),
                });
            }
            parsed.push(value);
        }
        rows.push(parsed);
    }
    if rows.is_empty() {
        return Err(Error::Dataset {
            line: 1,
            message: "no usable data rows".into(),
        });
    }

    let n_features = headers.len() - 1;
    let mut features = Array2::zeros((rows.len(), n_features));
    let mut labels = Array1::zeros(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let mut k = 0;
        for (j, &value) in row.iter().enumerate() {
            if j == label_idx {
                labels[i] = value;
            } else {
                features[[i, k]] = value;
                k += 1;
            }
        }
    }
    let feature_names = headers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    Ok(Dataset {
        features,
        labels,
        feature_names,
        label_name: headers[label_idx].clone(),
        dropped_rows: dropped,
    })
}

/// Gaussian features with a linear target plus Gaussian noise.
pub fn synthetic_regression(rows: usize, features: usize, noise: f64, seed: u64) -> Result<Dataset> {
    synthetic(rows, features, noise, seed, false)
}

/// Gaussian features with soft labels: the linear score is clamped to the
/// invertible range of the polynomial sigmoid and squashed through it, so
/// the labels are valid probabilities for the logistic trainer.
pub fn synthetic_classification(
    rows: usize,
    features: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    synthetic(rows, features, noise, seed, true)
}

fn synthetic(
    rows: usize,
    features: usize,
    noise: f64,
    seed: u64,
    classification: bool,
) -> Result<Dataset> {
    if rows == 0 || features == 0 {
        return Err(Error::arg(
            "synthetic dataset needs at least one row and one feature",
        ));
    }
    if !noise.is_finite() || noise < 0.0 {
        return Err(Error::arg(format!(
            "noise level {noise} must be finite and non-negative"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((rows, features), |_| rng.sample::<f64, _>(StandardNormal));
    let w = Array1::from_shape_fn(features, |_| rng.sample::<f64, _>(StandardNormal));
    let scale = (features as f64).sqrt();
    let mut y = x.dot(&w) / scale;
    for value in y.iter_mut() {
        *value += noise * rng.sample::<f64, _>(StandardNormal);
    }
    if classification {
        y.mapv_inplace(|score| poly_sigmoid(score.clamp(-2.0, 2.0)));
    }
    let feature_names = (0..features).map(|j| format!("f{j}")).collect();
    Ok(Dataset {
        features: x,
        labels: y,
        feature_names,
        label_name: "label".into(),
        dropped_rows: 0,
    })
}

/// Centers every column and scales it to unit variance. Columns with
/// (near-)zero variance are centered only.
pub fn standardize(features: &ArrayView2<'_, f64>) -> Array2<f64> {
    let rows = features.nrows().max(1) as f64;
    let mut out = features.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / rows;
        col.mapv_inplace(|v| v - mean);
        let sd = (col.iter().map(|v| v * v).sum::<f64>() / rows).sqrt();
        if sd > 1e-12 {
            col.mapv_inplace(|v| v / sd);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

/// Splits columns among parties, in the order given. Every listed party must
/// receive at least one column and the counts must cover the matrix exactly.
pub fn split_vertical(
    features: &ArrayView2<'_, f64>,
    feature_names: &[String],
    parts: &[(PartyId, usize)],
) -> Result<Vec<DesignMatrix>> {
    if feature_names.len() != features.ncols() {
        return Err(Error::dim(format!(
            "{} feature names for {} columns",
            feature_names.len(),
            features.ncols()
        )));
    }
    let total: usize = parts.iter().map(|(_, c)| *c).sum();
    if total != features.ncols() {
        return Err(Error::Config(format!(
            "vertical split allocates {total} columns but the dataset has {}",
            features.ncols()
        )));
    }
    let mut out = Vec::with_capacity(parts.len());
    let mut start = 0;
    for (party, count) in parts {
        if *count == 0 {
            return Err(Error::Config(format!(
                "party {party} would receive no columns"
            )));
        }
        let block = features.slice(s![.., start..start + count]).to_owned();
        let names = feature_names[start..start + count].to_vec();
        out.push(DesignMatrix::new(block, party.clone(), names)?);
        start += count;
    }
    Ok(out)
}

/// Splits rows (and their labels) among parties, in the order given.
pub fn split_horizontal(
    features: &ArrayView2<'_, f64>,
    labels: &ArrayView1<'_, f64>,
    feature_names: &[String],
    parts: &[(PartyId, usize)],
) -> Result<Vec<(DesignMatrix, Array1<f64>)>> {
    if labels.len() != features.nrows() {
        return Err(Error::dim(format!(
            "{} labels for {} rows",
            labels.len(),
            features.nrows()
        )));
    }
    let total: usize = parts.iter().map(|(_, c)| *c).sum();
    if total != features.nrows() {
        return Err(Error::Config(format!(
            "horizontal split allocates {total} rows but the dataset has {}",
            features.nrows()
        )));
    }
    let mut out = Vec::with_capacity(parts.len());
    let mut start = 0;
    for (party, count) in parts {
        if *count == 0 {
            return Err(Error::Config(format!(
                "party {party} would receive no rows"
            )));
        }
        let block = features.slice(s![start..start + count, ..]).to_owned();
        let slice = labels.slice(s![start..start + count]).to_owned();
        out.push((
            DesignMatrix::new(block, party.clone(), feature_names.to_vec())?,
            slice,
        ));
        start += count;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Known-entry placement
// ---------------------------------------------------------------------------

/// Where the attacker's pre-known victim entries sit in the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementPolicy {
    /// Stepped pattern in the leading rows: the i-th filled row knows the
    /// trailing k-i columns, so the counts descend k, k-1, ..., 1.
    #[default]
    Triangular,
    /// Same column pattern, with the filled rows spread evenly down the
    /// matrix instead of packed at the top.
    Staircase,
    /// Seeded random distinct rows with random column subsets of descending
    /// sizes. Still solvable: the solver orders rows by known count.
    RandomValid,
}

fn triangular_root(count: usize) -> Option<usize> {
    let mut k = 0usize;
    let mut total = 0usize;
    while total < count {
        k += 1;
        total += k;
    }
    (total == count).then_some(k)
}

/// Picks `count` positions for pre-known entries in a `rows` x `cols`
/// victim matrix. `count` must be triangular (k(k+1)/2), which every
/// degrees-of-freedom formula in this crate produces; the pattern needs k
/// rows and k+1 columns to fit. Returns positions sorted by (row, col).
pub fn place_known_entries(
    rows: usize,
    cols: usize,
    count: usize,
    policy: PlacementPolicy,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let k = triangular_root(count).ok_or_else(|| {
        Error::arg(format!(
            "{count} known entries do not form a stepped pattern; counts must be k(k+1)/2"
        ))
    })?;
    if k > rows || k + 1 > cols {
        return Err(Error::arg(format!(
            "stepped placement of {count} entries needs {k} rows and {} columns; matrix is {rows}x{cols}",
            k + 1
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let row_ids: Vec<usize> = match policy {
        PlacementPolicy::Triangular => (0..k).collect(),
        PlacementPolicy::Staircase => {
            if k == 1 {
                vec![0]
            } else {
                (0..k).map(|i| i * (rows - 1) / (k - 1)).collect()
            }
        }
        PlacementPolicy::RandomValid => {
            let mut ids: Vec<usize> = (0..rows).collect();
            ids.shuffle(&mut rng);
            ids.truncate(k);
            ids
        }
    };
    let mut placed = Vec::with_capacity(count);
    for (i, &row) in row_ids.iter().enumerate() {
        let need = k - i;
        if policy == PlacementPolicy::RandomValid {
            let mut columns: Vec<usize> = (0..cols).collect();
            columns.shuffle(&mut rng);
            columns.truncate(need);
            placed.extend(columns.into_iter().map(|c| (row, c)));
        } else {
            placed.extend((cols - need..cols).map(|c| (row, c)));
        }
    }
    placed.sort_unstable();
    Ok(placed)
}

/// Reads the true values at the given positions, producing the known-entry
/// list the attacker feeds to the solver.
pub fn fill_known_entries(
    positions: &[(usize, usize)],
    truth: &ArrayView2<'_, f64>,
) -> Result<Vec<KnownEntry>> {
    positions
        .iter()
        .map(|&(row, col)| {
            if row >= truth.nrows() || col >= truth.ncols() {
                return Err(Error::dim(format!(
                    "known entry ({row}, {col}) is outside a {}x{} matrix",
                    truth.nrows(),
                    truth.ncols()
                )));
            }
            Ok(KnownEntry::new(row, col, truth[[row, col]]))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Which protocol-plus-attack pipeline a scenario runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SettingKind {
    VflLinreg,
    VflLogreg,
    HflLinreg,
    VflMulti,
    Secureboost,
}

impl SettingKind {
    pub fn label(self) -> &'static str {
        match self {
            SettingKind::VflLinreg => "vfl-linreg",
            SettingKind::VflLogreg => "vfl-logreg",
            SettingKind::HflLinreg => "hfl-linreg",
            SettingKind::VflMulti => "vfl-multi",
            SettingKind::Secureboost => "secureboost",
        }
    }
}

impl fmt::Display for SettingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

mod defaults {
    pub(super) fn rows() -> usize {
        64
    }
    pub(super) fn features() -> usize {
        8
    }
    pub(super) fn noise() -> f64 {
        0.05
    }
    pub(super) fn standardize() -> bool {
        true
    }
    pub(super) fn trees() -> usize {
        3
    }
    pub(super) fn depth() -> usize {
        3
    }
    pub(super) fn learning_rate() -> f64 {
        0.3
    }
    pub(super) fn lambda() -> f64 {
        1.0
    }
    pub(super) fn gain_threshold() -> f64 {
        1e-6
    }
    pub(super) fn reveal() -> bool {
        true
    }
}

/// Data source. With a `path` the CSV loader runs and `rows`, `features`,
/// `noise`, and `seed` are ignored; without one a synthetic table of that
/// shape is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DatasetConfig {
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Name of the label column in the CSV header; default is the last one.
    #[serde(default)]
    pub label_column: Option<String>,
    #[serde(default = "defaults::rows")]
    pub rows: usize,
    #[serde(default = "defaults::features")]
    pub features: usize,
    #[serde(default = "defaults::noise")]
    pub noise: f64,
    #[serde(default = "defaults::standardize")]
    pub standardize: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: None,
            label_column: None,
            rows: defaults::rows(),
            features: defaults::features(),
            noise: defaults::noise(),
            standardize: defaults::standardize(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    fn validate(&self) -> Result<()> {
        if self.path.is_none() && (self.rows == 0 || self.features == 0) {
            return Err(Error::Config(
                "synthetic dataset needs rows >= 1 and features >= 1".into(),
            ));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(Error::Config(format!(
                "noise level {} must be finite and non-negative",
                self.noise
            )));
        }
        Ok(())
    }
}

/// How the table is divided among parties. Which fields apply depends on
/// the setting; `validate` rejects fields that do not belong.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SplitConfig {
    /// Attacker column count (vertical settings). The attacker holds the
    /// leading columns and, in two-party settings, the labels.
    #[serde(default)]
    pub attacker_features: Option<usize>,
    /// Victim column count (vertical settings); the columns right after the
    /// attacker's.
    #[serde(default)]
    pub victim_features: Option<usize>,
    /// Extra parties' column counts (vfl-multi only).
    #[serde(default)]
    pub helper_features: Vec<usize>,
    /// Victim row count (hfl-linreg only); the victim holds the leading
    /// rows, the attacker the rest.
    #[serde(default)]
    pub victim_rows: Option<usize>,
    /// Optional cap on the training rows used by vertical settings.
    #[serde(default)]
    pub samples: Option<usize>,
    /// Tiny random columns the attacker appends to its own block before
    /// training (vfl-linreg / vfl-logreg only).
    #[serde(default)]
    pub fake_features: usize,
}

/// Gradient-descent hyperparameters, shared by every party.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainConfig {
    pub eta: f64,
    #[serde(default)]
    pub alpha: f64,
    pub iterations: usize,
    #[serde(default)]
    pub init_seed: u64,
}

/// Boosted-tree training knobs (secureboost only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct BoostConfig {
    #[serde(default = "defaults::trees")]
    pub trees: usize,
    #[serde(default = "defaults::depth")]
    pub depth: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::gain_threshold")]
    pub gain_threshold: f64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            trees: defaults::trees(),
            depth: defaults::depth(),
            learning_rate: defaults::learning_rate(),
            lambda: defaults::lambda(),
            gain_threshold: defaults::gain_threshold(),
        }
    }
}

/// Attack-side knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AttackSection {
    #[serde(default)]
    pub known_policy: PlacementPolicy,
    #[serde(default)]
    pub placement_seed: u64,
    /// Inversion passes when the relative error stays at or below this.
    #[serde(default)]
    pub rel_error_tolerance: Option<f64>,
    /// Target interval width for threshold theft.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Probe grid size for threshold theft.
    #[serde(default)]
    pub grid_points: Option<usize>,
    /// Probe range override; both or neither of lb/ub must be set.
    #[serde(default)]
    pub query_lb: Option<f64>,
    #[serde(default)]
    pub query_ub: Option<f64>,
    /// Whether the protocol leaks which feature each victim node splits on.
    /// When false the thief falls back to probing features one by one.
    #[serde(default = "defaults::reveal")]
    pub reveal_feature_ids: bool,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            known_policy: PlacementPolicy::default(),
            placement_seed: 0,
            rel_error_tolerance: None,
            epsilon: None,
            grid_points: None,
            query_lb: None,
            query_ub: None,
            reveal_feature_ids: defaults::reveal(),
        }
    }
}

/// Sweep inputs for the plot-ready CSV outputs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SweepConfig {
    /// Fake-attribute rates for the loss sweep, each in [0, 1).
    #[serde(default)]
    pub fake_rates: Vec<f64>,
    /// Precision targets for the query-budget sweep.
    #[serde(default)]
    pub epsilons: Vec<f64>,
}

/// One complete scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ScenarioConfig {
    pub setting: SettingKind,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub boost: Option<BoostConfig>,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl ScenarioConfig {
    /// Parses and validates a TOML scenario. Unknown keys anywhere in the
    /// document are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Points every stage's RNG at one master seed: dataset generation,
    /// weight initialization, and known-entry placement.
    pub fn apply_seed_override(&mut self, seed: u64) {
        self.dataset.seed = seed;
        if let Some(train) = self.train.as_mut() {
            train.init_seed = seed;
        }
        self.attack.placement_seed = seed;
    }

    fn require_train(&self) -> Result<&TrainConfig> {
        self.train.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "{} needs a [train] section (eta, iterations)",
                self.setting
            ))
        })
    }

    fn two_party_features(&self) -> Result<(usize, usize)> {
        match (self.split.attacker_features, self.split.victim_features) {
            (Some(a), Some(v)) if a >= 1 && v >= 1 => Ok((a, v)),
            _ => Err(Error::Config(format!(
                "{} needs split.attacker-features and split.victim-features, both >= 1",
                self.setting
            ))),
        }
    }

    /// Structural checks that need no data: section presence, field
    /// applicability, and (for synthetic data, whose shape is known up
    /// front) the split arithmetic.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let split = &self.split;
        let is_vertical = matches!(
            self.setting,
            SettingKind::VflLinreg
                | SettingKind::VflLogreg
                | SettingKind::VflMulti
                | SettingKind::Secureboost
        );
        if is_vertical {
            self.two_party_features()?;
            if split.victim_rows.is_some() {
                return Err(Error::Config(
                    "split.victim-rows only applies to hfl-linreg".into(),
                ));
            }
        }
        match self.setting {
            SettingKind::VflLinreg | SettingKind::VflLogreg => {
                self.require_train()?;
                if !split.helper_features.is_empty() {
                    return Err(Error::Config(
                        "split.helper-features only applies to vfl-multi".into(),
                    ));
                }
            }
            SettingKind::VflMulti => {
                self.require_train()?;
                if split.helper_features.contains(&0) {
                    return Err(Error::Config(
                        "every helper party needs at least one column".into(),
                    ));
                }
                if split.fake_features != 0 {
                    return Err(Error::Config(
                        "split.fake-features only applies to the two-party regressions".into(),
                    ));
                }
            }
            SettingKind::HflLinreg => {
                self.require_train()?;
                if split.victim_rows.map_or(true, |r| r == 0) {
                    return Err(Error::Config(
                        "hfl-linreg needs split.victim-rows >= 1".into(),
                    ));
                }
                if split.attacker_features.is_some()
                    || split.victim_features.is_some()
                    || !split.helper_features.is_empty()
                {
                    return Err(Error::Config(
                        "feature splits do not apply to hfl-linreg; use split.victim-rows".into(),
                    ));
                }
                if split.samples.is_some() {
                    return Err(Error::Config(
                        "split.samples only applies to vertical settings".into(),
                    ));
                }
                if split.fake_features != 0 {
                    return Err(Error::Config(
                        "split.fake-features only applies to the two-party regressions".into(),
                    ));
                }
            }
            SettingKind::Secureboost => {
                if self.train.is_some() {
                    return Err(Error::Config(
                        "secureboost is configured through [boost], not [train]".into(),
                    ));
                }
                if !split.helper_features.is_empty() {
                    return Err(Error::Config(
                        "split.helper-features only applies to vfl-multi".into(),
                    ));
                }
                if split.fake_features != 0 {
                    return Err(Error::Config(
                        "split.fake-features only applies to the two-party regressions".into(),
                    ));
                }
            }
        }
        if self.setting != SettingKind::Secureboost && self.boost.is_some() {
            return Err(Error::Config(
                "[boost] only applies to secureboost".into(),
            ));
        }

        let attack = &self.attack;
        if let Some(tol) = attack.rel_error_tolerance {
            if !tol.is_finite() || tol <= 0.0 {
                return Err(Error::Config(format!(
                    "rel-error-tolerance {tol} must be positive and finite"
                )));
            }
        }
        if let Some(eps) = attack.epsilon {
            if !eps.is_finite() || eps <= 0.0 {
                return Err(Error::Config(format!(
                    "epsilon {eps} must be positive and finite"
                )));
            }
        }
        if let Some(points) = attack.grid_points {
            if points < 3 {
                return Err(Error::Config(
                    "grid-points must be at least 3 (two endpoints plus one probe)".into(),
                ));
            }
        }
        match (attack.query_lb, attack.query_ub) {
            (Some(lb), Some(ub)) => {
                if !lb.is_finite() || !ub.is_finite() || ub <= lb {
                    return Err(Error::Config(format!(
                        "query bounds [{lb}, {ub}] must be finite with ub > lb"
                    )));
                }
            }
            (None, None) => {}
            _ => {
                return Err(Error::Config(
                    "query-lb and query-ub must be set together".into(),
                ));
            }
        }
        for &rate in &self.sweep.fake_rates {
            if !rate.is_finite() || !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!(
                    "fake rate {rate} must lie in [0, 1)"
                )));
            }
        }
        for &eps in &self.sweep.epsilons {
            if !eps.is_finite() || eps <= 0.0 {
                return Err(Error::Config(format!(
                    "sweep epsilon {eps} must be positive and finite"
                )));
            }
        }

        if self.dataset.path.is_none() {
            self.validate_dimensions(self.dataset.rows, self.dataset.features)?;
        }
        Ok(())
    }

    /// Split arithmetic against the actual table shape. For synthetic data
    /// this runs inside [`Self::validate`]; for CSV data it runs right
    /// after the load.
    pub fn validate_dimensions(&self, rows: usize, cols: usize) -> Result<()> {
        let split = &self.split;
        match self.setting {
            SettingKind::VflLinreg
            | SettingKind::VflLogreg
            | SettingKind::VflMulti
            | SettingKind::Secureboost => {
                let (a, v) = self.two_party_features()?;
                let helpers: usize = split.helper_features.iter().sum();
                let allocated = a + v + helpers;
                if allocated != cols {
                    return Err(Error::Config(format!(
                        "split allocates {allocated} feature columns but the dataset has {cols}"
                    )));
                }
                if let Some(m) = split.samples {
                    if m == 0 || m > rows {
                        return Err(Error::Config(format!(
                            "split.samples = {m} must lie in 1..={rows}"
                        )));
                    }
                }
            }
            SettingKind::HflLinreg => {
                let victim = split.victim_rows.unwrap_or(0);
                if victim + 1 > rows {
                    return Err(Error::Config(format!(
                        "split.victim-rows = {victim} leaves no rows for the attacker (dataset has {rows})"
                    )));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// One pre-known victim entry, echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnownEntryReport {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Outcome of a matrix-inversion attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionReport {
    pub victim_rows: usize,
    pub victim_cols: usize,
    /// Fraction of victim entries the attacker needed up front.
    pub kdr: f64,
    pub dof_required: usize,
    pub rel_error: Option<f64>,
    pub solution_count: usize,
    pub quadratic_constraints: usize,
    pub linear_constraints: usize,
    pub converged: Option<bool>,
    pub known_entries: Vec<KnownEntryReport>,
}

/// One recovered split threshold next to its true value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdReport {
    pub tree: usize,
    pub node: usize,
    pub feature: usize,
    pub recovered: f64,
    pub actual: f64,
    pub abs_error: f64,
}

/// Outcome of a threshold-theft attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeReport {
    pub victim_nodes: usize,
    pub queries_per_node: usize,
    /// Budget formula: victim nodes times per-node rounds for the full
    /// probe range. Observed refinement can only be lower (a pinned
    /// interval may start narrower).
    pub predicted_total_queries: usize,
    pub refinement_batches: usize,
    pub discovery_batches: usize,
    pub records_submitted: usize,
    pub epsilon: f64,
    pub max_abs_error: f64,
    pub thresholds: Vec<ThresholdReport>,
}

/// Attack results by family; exactly one side is filled per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inversion: Option<InversionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeReport>,
}

/// Wall-clock breakdown; excluded from [`report_diff`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingReport {
    pub train_ms: f64,
    pub attack_ms: f64,
    pub total_ms: f64,
}

/// Everything a run produces, in a stable field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackReport {
    pub setting: SettingKind,
    /// Full input echo so the report alone reproduces the run.
    pub scenario: ScenarioConfig,
    /// The regression attacks assume the attacker knows the training
    /// hyperparameters; the tree attack does not need them.
    pub assumes_shared_hyperparams: bool,
    pub dataset_rows_used: usize,
    pub dataset_dropped_rows: usize,
    pub outcome: OutcomeReport,
    pub pass: bool,
    pub timing: TimingReport,
}

impl AttackReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("report serialization failed: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("report parse failed: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| io_error(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::from_json(&text)
    }
}

/// Field-by-field comparison of two reports with timing stripped, for
/// checking that reruns are deterministic. Returns one line per difference;
/// an empty vector means the reports agree.
pub fn report_diff(left: &AttackReport, right: &AttackReport) -> Result<Vec<String>> {
    let strip = |report: &AttackReport| -> Result<serde_json::Value> {
        let mut value = serde_json::to_value(report)
            .map_err(|e| Error::Config(format!("report serialization failed: {e}")))?;
        if let Some(map) = value.as_object_mut() {
            map.remove("timing");
        }
        Ok(value)
    };
    let mut diffs = Vec::new();
    diff_values("", &strip(left)?, &strip(right)?, &mut diffs);
    Ok(diffs)
}

fn diff_values(path: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(ma), Value::Object(mb)) => {
            let keys: BTreeSet<&String> = ma.keys().chain(mb.keys()).collect();
            for key in keys {
                let sub = if path.is_empty() {
                    key.clone()
                } else {
                    format!("{path}.{key}")
                };
                match (ma.get(key), mb.get(key)) {
                    (Some(x), Some(y)) => diff_values(&sub, x, y, out),
                    (Some(_), None) => out.push(format!("{sub}: only in left")),
                    (None, Some(_)) => out.push(format!("{sub}: only in right")),
                    (None, None) => {}
                }
            }
        }
        (Value::Array(xa), Value::Array(xb)) => {
            if xa.len() != xb.len() {
                out.push(format!("{path}: array length {} vs {}", xa.len(), xb.len()));
            } else {
                for (i, (x, y)) in xa.iter().zip(xb).enumerate() {
                    diff_values(&format!("{path}[{i}]"), x, y, out);
                }
            }
        }
        _ => {
            if a != b {
                out.push(format!("{path}: {a} vs {b}"));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Scenario execution
// ---------------------------------------------------------------------------

fn stage<T>(name: &str, result: Result<T>) -> Result<T> {
    result.map_err(|e| Error::Stage {
        stage: name.to_string(),
        source: Box::new(e),
    })
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn victim_id() -> PartyId {
    PartyId::new("alice")
}

fn attacker_id() -> PartyId {
    PartyId::new("bob")
}

struct PipelineRun {
    outcome: OutcomeReport,
    pass: bool,
    train_ms: f64,
    attack_ms: f64,
    rows_used: usize,
}

/// Runs one configured scenario end to end: data, split, training, attack,
/// report. Errors carry the stage they came from.
pub fn run_scenario(config: &ScenarioConfig) -> Result<AttackReport> {
    config.validate()?;
    let started = Instant::now();
    let dataset = stage("dataset", prepare_dataset(config))?;
    stage(
        "dataset",
        config.validate_dimensions(dataset.features.nrows(), dataset.features.ncols()),
    )?;
    let run = match config.setting {
        SettingKind::VflLinreg => run_vfl_two_party(config, &dataset, ModelKind::Linear)?,
        SettingKind::VflLogreg => run_vfl_two_party(config, &dataset, ModelKind::Logistic)?,
        SettingKind::VflMulti => run_vfl_multi(config, &dataset)?,
        SettingKind::HflLinreg => run_hfl(config, &dataset)?,
        SettingKind::Secureboost => run_secureboost(config, &dataset)?,
    };
    Ok(AttackReport {
        setting: config.setting,
        scenario: config.clone(),
        assumes_shared_hyperparams: config.setting != SettingKind::Secureboost,
        dataset_rows_used: run.rows_used,
        dataset_dropped_rows: dataset.dropped_rows,
        outcome: run.outcome,
        pass: run.pass,
        timing: TimingReport {
            train_ms: run.train_ms,
            attack_ms: run.attack_ms,
            total_ms: ms(started),
        },
    })
}

fn prepare_dataset(config: &ScenarioConfig) -> Result<Dataset> {
    let d = &config.dataset;
    let mut dataset = match &d.path {
        Some(path) => load_dataset(path, d.label_column.as_deref())?,
        None => match config.setting {
            SettingKind::VflLogreg => synthetic_classification(d.rows, d.features, d.noise, d.seed)?,
            _ => synthetic_regression(d.rows, d.features, d.noise, d.seed)?,
        },
    };
    if d.standardize {
        dataset.features = standardize(&dataset.features.view());
    }
    Ok(dataset)
}

fn inversion_report(
    result: &InversionResult,
    known: &[KnownEntry],
    dof: usize,
    victim_rows: usize,
    victim_cols: usize,
) -> InversionReport {
    InversionReport {
        victim_rows,
        victim_cols,
        kdr: result.kdr,
        dof_required: dof,
        rel_error: result.rel_error,
        solution_count: result.solution_count,
        quadratic_constraints: result.constraints_used.quadratic,
        linear_constraints: result.constraints_used.linear,
        converged: result.converged,
        known_entries: known
            .iter()
            .map(|k| KnownEntryReport {
                row: k.row,
                col: k.col,
                value: k.value,
            })
            .collect(),
    }
}

fn inversion_pass(config: &ScenarioConfig, report: &InversionReport) -> bool {
    let tolerance = config
        .attack
        .rel_error_tolerance
        .unwrap_or(DEFAULT_REL_TOLERANCE);
    report.rel_error.is_some_and(|e| e <= tolerance)
}

fn run_vfl_two_party(
    config: &ScenarioConfig,
    dataset: &Dataset,
    model: ModelKind,
) -> Result<PipelineRun> {
    let split = &config.split;
    let train = config.require_train()?;
    let (n_b, n_a) = self_features(config)?;
    let m = split.samples.unwrap_or(dataset.features.nrows());
    let features = dataset.features.slice(s![..m, ..]);
    let labels = dataset.labels.slice(s![..m]).to_owned();

    let parts = stage(
        "dataset",
        split_vertical(
            &features,
            &dataset.feature_names,
            &[(attacker_id(), n_b), (victim_id(), n_a)],
        ),
    )?;
    let mut parts = parts.into_iter();
    let xb_real = parts.next().expect("two parts");
    let xa = parts.next().expect("two parts");
    let xb = stage(
        "dataset",
        inject_fake_features(&xb_real, split.fake_features, config.attack.placement_seed),
    )?;

    let activation = match model {
        ModelKind::Linear => Activation::Identity,
        ModelKind::Logistic => Activation::PolySigmoid,
    };
    let hp = stage(
        "train",
        Hyperparams::new(
            train.eta,
            train.alpha,
            train.iterations,
            activation,
            train.init_seed,
        ),
    )?;
    let t = Instant::now();
    let mut run = stage(
        "train",
        match model {
            ModelKind::Linear => vfl_linreg_train(&xa, &xb, &labels, &hp),
            ModelKind::Logistic => vfl_logreg_train(&xa, &xb, &labels, &hp),
        },
    )?;
    let train_ms = ms(t);

    let dof = stage("attack", constrained_dof(m, n_a))?;
    let positions = stage(
        "attack",
        place_known_entries(
            m,
            n_a,
            dof,
            config.attack.known_policy,
            config.attack.placement_seed,
        ),
    )?;
    let known = stage("attack", fill_known_entries(&positions, &xa.values().view()))?;
    let scenario = AttackScenario {
        setting: AttackSetting::Vertical2Party,
        model,
        known_entries: known.clone(),
        fake_feature_count: split.fake_features,
        seed: config.attack.placement_seed,
    };
    let t = Instant::now();
    let result = stage(
        "attack",
        full_inversion(
            &scenario,
            AttackInputs::Vertical2Party {
                run: &mut run,
                xb: &xb,
                hp: &hp,
            },
            Some(xa.values()),
        ),
    )?;
    let attack_ms = ms(t);

    let report = inversion_report(&result, &known, dof, m, n_a);
    let pass = inversion_pass(config, &report);
    Ok(PipelineRun {
        outcome: OutcomeReport {
            inversion: Some(report),
            tree: None,
        },
        pass,
        train_ms,
        attack_ms,
        rows_used: m,
    })
}

fn self_features(config: &ScenarioConfig) -> Result<(usize, usize)> {
    let (a, v) = config.two_party_features()?;
    Ok((a, v))
}

fn run_vfl_multi(config: &ScenarioConfig, dataset: &Dataset) -> Result<PipelineRun> {
    let split = &config.split;
    let train = config.require_train()?;
    let (n_b, n_a) = self_features(config)?;
    let m = split.samples.unwrap_or(dataset.features.nrows());
    let features = dataset.features.slice(s![..m, ..]);
    let labels = dataset.labels.slice(s![..m]).to_owned();

    let attacker = attacker_id();
    let victim = victim_id();
    let mut spec = vec![(attacker.clone(), n_b), (victim.clone(), n_a)];
    for (i, &count) in split.helper_features.iter().enumerate() {
        spec.push((PartyId::new(format!("helper-{i}")), count));
    }
    let parts = stage(
        "dataset",
        split_vertical(&features, &dataset.feature_names, &spec),
    )?;
    let truth = parts[1].values().clone();

    let hp = stage(
        "train",
        Hyperparams::new(
            train.eta,
            train.alpha,
            train.iterations,
            Activation::Identity,
            train.init_seed,
        ),
    )?;
    let colluding: BTreeSet<PartyId> = [PartyId::arbiter(), attacker.clone()].into();
    let t = Instant::now();
    let run = stage("train", multiparty_vfl_train(&parts, &labels, &hp, &colluding))?;
    let train_ms = ms(t);

    let transcript = run.transcripts.get(&attacker).ok_or_else(|| Error::Stage {
        stage: "attack".into(),
        source: Box::new(Error::Config(format!("no transcript for {attacker}"))),
    })?;
    let scenario = AttackScenario {
        setting: AttackSetting::VerticalMultiparty,
        model: ModelKind::Linear,
        known_entries: Vec::new(),
        fake_feature_count: 0,
        seed: config.attack.placement_seed,
    };
    let t = Instant::now();
    let result = stage(
        "attack",
        full_inversion(
            &scenario,
            AttackInputs::VerticalMultiparty {
                transcript,
                victim: &victim,
                hp: &hp,
            },
            Some(&truth),
        ),
    )?;
    let attack_ms = ms(t);

    let report = inversion_report(&result, &[], 0, m, n_a);
    let pass = inversion_pass(config, &report);
    Ok(PipelineRun {
        outcome: OutcomeReport {
            inversion: Some(report),
            tree: None,
        },
        pass,
        train_ms,
        attack_ms,
        rows_used: m,
    })
}

fn run_hfl(config: &ScenarioConfig, dataset: &Dataset) -> Result<PipelineRun> {
    let train = config.require_train()?;
    let victim_rows = config.split.victim_rows.unwrap_or(0);
    let rows = dataset.features.nrows();
    let n = dataset.features.ncols();

    let victim = victim_id();
    let attacker = attacker_id();
    let parts = stage(
        "dataset",
        split_horizontal(
            &dataset.features.view(),
            &dataset.labels.view(),
            &dataset.feature_names,
            &[
                (victim.clone(), victim_rows),
                (attacker.clone(), rows - victim_rows),
            ],
        ),
    )?;
    let truth = parts[0].0.values().clone();

    let hp = stage(
        "train",
        Hyperparams::new(
            train.eta,
            train.alpha,
            train.iterations,
            Activation::Identity,
            train.init_seed,
        ),
    )?;
    let t = Instant::now();
    let run = stage("train", hfl_linreg_train(&parts, &hp))?;
    let train_ms = ms(t);

    // The horizontal problem is solved on the transposed victim block, so
    // placement happens in (feature, victim-row) coordinates and is mapped
    // back for the report.
    let dof = stage("attack", quadratic_dof(n, victim_rows))?;
    let positions = stage(
        "attack",
        place_known_entries(
            n,
            victim_rows,
            dof,
            config.attack.known_policy,
            config.attack.placement_seed,
        ),
    )?;
    let known: Vec<KnownEntry> = positions
        .iter()
        .map(|&(feature, row)| KnownEntry::new(row, feature, truth[[row, feature]]))
        .collect();
    let transcript = run.transcripts.get(&attacker).ok_or_else(|| Error::Stage {
        stage: "attack".into(),
        source: Box::new(Error::Config(format!("no transcript for {attacker}"))),
    })?;
    let scenario = AttackScenario {
        setting: AttackSetting::Horizontal2Party,
        model: ModelKind::Linear,
        known_entries: known.clone(),
        fake_feature_count: 0,
        seed: config.attack.placement_seed,
    };
    let t = Instant::now();
    let result = stage(
        "attack",
        full_inversion(
            &scenario,
            AttackInputs::Horizontal2Party {
                transcript,
                victim_rows,
                hp: &hp,
            },
            Some(&truth),
        ),
    )?;
    let attack_ms = ms(t);

    let report = inversion_report(&result, &known, dof, victim_rows, n);
    let pass = inversion_pass(config, &report);
    Ok(PipelineRun {
        outcome: OutcomeReport {
            inversion: Some(report),
            tree: None,
        },
        pass,
        train_ms,
        attack_ms,
        rows_used: rows,
    })
}

fn query_bounds(config: &ScenarioConfig, features: &ArrayView2<'_, f64>) -> Result<(f64, f64)> {
    match (config.attack.query_lb, config.attack.query_ub) {
        (Some(lb), Some(ub)) => Ok((lb, ub)),
        (None, None) => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in features.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::dim("cannot derive probe bounds from an empty matrix"));
            }
            let span = (hi - lo).max(1e-6);
            Ok((
                lo - QUERY_BOUND_MARGIN * span,
                hi + QUERY_BOUND_MARGIN * span,
            ))
        }
        _ => Err(Error::Config(
            "query-lb and query-ub must be set together".into(),
        )),
    }
}

/// Compares every recovered threshold against the true ensemble.
fn evaluate_theft(
    ensemble: &BoostedEnsemble,
    outcome: &TheftOutcome,
) -> (Vec<ThresholdReport>, f64) {
    let mut thresholds = Vec::with_capacity(outcome.recovered.len());
    let mut max_err: f64 = 0.0;
    for (&(tree, node), split) in &outcome.recovered {
        let actual = ensemble.trees()[tree]
            .node(node)
            .and_then(|n| match n.kind {
                NodeKind::Internal { threshold, .. } => Some(threshold),
                NodeKind::Leaf { .. } => None,
            })
            .unwrap_or(f64::NAN);
        let err = (split.threshold - actual).abs();
        max_err = max_err.max(err);
        thresholds.push(ThresholdReport {
            tree,
            node,
            feature: split.feature_id,
            recovered: split.threshold,
            actual,
            abs_error: err,
        });
    }
    (thresholds, max_err)
}

fn run_secureboost(config: &ScenarioConfig, dataset: &Dataset) -> Result<PipelineRun> {
    let split = &config.split;
    let boost = config.boost.clone().unwrap_or_default();
    let (n_b, n_a) = self_features(config)?;
    let m = split.samples.unwrap_or(dataset.features.nrows());
    let features = dataset.features.slice(s![..m, ..]);
    let labels = dataset.labels.slice(s![..m]).to_owned();

    let attacker = attacker_id();
    let parts = stage(
        "dataset",
        split_vertical(
            &features,
            &dataset.feature_names,
            &[(attacker.clone(), n_b), (victim_id(), n_a)],
        ),
    )?;
    let params = stage(
        "train",
        BoostParams::new(
            boost.trees,
            boost.depth,
            boost.learning_rate,
            boost.lambda,
            boost.gain_threshold,
        ),
    )?;
    let t = Instant::now();
    let ensemble = stage("train", secureboost_train(&parts, &labels, &params))?;
    let train_ms = ms(t);

    let epsilon = config.attack.epsilon.unwrap_or(DEFAULT_EPSILON);
    let grid_points = config.attack.grid_points.unwrap_or(DEFAULT_GRID_POINTS);
    let (lb, ub) = stage("attack", query_bounds(config, &features))?;
    let attack_config = stage(
        "attack",
        AttackConfig::uniform(epsilon, grid_points, lb, ub, ensemble.feature_count()),
    )?;
    let mut info = ensemble.tree_info(&attacker, config.attack.reveal_feature_ids);
    let mut oracle = PredictionOracle::new(&ensemble);
    let t = Instant::now();
    let outcome = stage("attack", steal_thresholds(&mut oracle, &mut info, &attack_config))?;
    let attack_ms = ms(t);

    let (thresholds, max_err) = evaluate_theft(&ensemble, &outcome);
    let queries_per_node = stage("attack", predict_query_count(lb, ub, epsilon, grid_points))?;
    let predicted = total_queries(outcome.victim_nodes, queries_per_node);
    let pass = max_err <= epsilon
        && outcome.refinement_batches <= predicted
        && thresholds.len() == outcome.victim_nodes;
    let report = TreeReport {
        victim_nodes: outcome.victim_nodes,
        queries_per_node,
        predicted_total_queries: predicted,
        refinement_batches: outcome.refinement_batches,
        discovery_batches: outcome.discovery_batches,
        records_submitted: outcome.records_submitted,
        epsilon,
        max_abs_error: max_err,
        thresholds,
    };
    Ok(PipelineRun {
        outcome: OutcomeReport {
            inversion: None,
            tree: Some(report),
        },
        pass,
        train_ms,
        attack_ms,
        rows_used: m,
    })
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

/// One point of the loss-versus-fake-rate sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarSweepRow {
    pub requested_far: f64,
    pub fake_features: usize,
    pub actual_far: f64,
    pub final_loss: f64,
    pub loss_ratio: f64,
}

/// Retrains a two-party vertical regression at each configured fake-attribute
/// rate and records the final loss next to the zero-fake baseline. The rate
/// counts fakes against all real features: far = k / (n + k).
pub fn far_sweep(config: &ScenarioConfig) -> Result<Vec<FarSweepRow>> {
    let model = match config.setting {
        SettingKind::VflLinreg => ModelKind::Linear,
        SettingKind::VflLogreg => ModelKind::Logistic,
        _ => {
            return Err(Error::Config(
                "the fake-rate sweep applies to vfl-linreg and vfl-logreg".into(),
            ));
        }
    };
    config.validate()?;
    let dataset = stage("dataset", prepare_dataset(config))?;
    stage(
        "dataset",
        config.validate_dimensions(dataset.features.nrows(), dataset.features.ncols()),
    )?;
    let (n_b, n_a) = self_features(config)?;
    let n_real = n_b + n_a;

    let baseline = train_with_fakes(config, &dataset, model, 0)?;
    let mut rows = vec![FarSweepRow {
        requested_far: 0.0,
        fake_features: 0,
        actual_far: 0.0,
        final_loss: baseline,
        loss_ratio: 1.0,
    }];
    for &rate in config.sweep.fake_rates.iter().filter(|&&r| r > 0.0) {
        let fake_features = (rate * n_real as f64 / (1.0 - rate)).round() as usize;
        let final_loss = train_with_fakes(config, &dataset, model, fake_features)?;
        rows.push(FarSweepRow {
            requested_far: rate,
            fake_features,
            actual_far: fake_features as f64 / (n_real + fake_features) as f64,
            final_loss,
            loss_ratio: final_loss / baseline,
        });
    }
    Ok(rows)
}

fn train_with_fakes(
    config: &ScenarioConfig,
    dataset: &Dataset,
    model: ModelKind,
    fake_features: usize,
) -> Result<f64> {
    let train = config.require_train()?;
    let (n_b, n_a) = self_features(config)?;
    let m = config.split.samples.unwrap_or(dataset.features.nrows());
    let features = dataset.features.slice(s![..m, ..]);
    let labels = dataset.labels.slice(s![..m]).to_owned();
    let parts = stage(
        "dataset",
        split_vertical(
            &features,
            &dataset.feature_names,
            &[(attacker_id(), n_b), (victim_id(), n_a)],
        ),
    )?;
    let mut parts = parts.into_iter();
    let xb_real = parts.next().expect("two parts");
    let xa = parts.next().expect("two parts");
    let xb = stage(
        "dataset",
        inject_fake_features(&xb_real, fake_features, config.attack.placement_seed),
    )?;
    let activation = match model {
        ModelKind::Linear => Activation::Identity,
        ModelKind::Logistic => Activation::PolySigmoid,
    };
    let hp = stage(
        "train",
        Hyperparams::new(
            train.eta,
            train.alpha,
            train.iterations,
            activation,
            train.init_seed,
        ),
    )?;
    let run = stage(
        "train",
        match model {
            ModelKind::Linear => vfl_linreg_train(&xa, &xb, &labels, &hp),
            ModelKind::Logistic => vfl_logreg_train(&xa, &xb, &labels, &hp),
        },
    )?;
    run.loss_trace
        .last()
        .copied()
        .ok_or_else(|| Error::Config("training produced an empty loss trace".into()))
}

/// One point of the query-budget-versus-precision sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSweepRow {
    pub epsilon: f64,
    pub queries_per_node: usize,
    pub victim_nodes: usize,
    pub predicted_total_queries: usize,
    pub observed_batches: usize,
    pub max_abs_error: f64,
}

/// Trains one secureboost ensemble and steals its thresholds once per
/// configured precision target, recording the predicted and observed query
/// budgets.
pub fn epsilon_sweep(config: &ScenarioConfig) -> Result<Vec<EpsilonSweepRow>> {
    if config.setting != SettingKind::Secureboost {
        return Err(Error::Config(
            "the precision sweep applies to secureboost".into(),
        ));
    }
    config.validate()?;
    let dataset = stage("dataset", prepare_dataset(config))?;
    stage(
        "dataset",
        config.validate_dimensions(dataset.features.nrows(), dataset.features.ncols()),
    )?;
    let split = &config.split;
    let boost = config.boost.clone().unwrap_or_default();
    let (n_b, n_a) = self_features(config)?;
    let m = split.samples.unwrap_or(dataset.features.nrows());
    let features = dataset.features.slice(s![..m, ..]);
    let labels = dataset.labels.slice(s![..m]).to_owned();
    let attacker = attacker_id();
    let parts = stage(
        "dataset",
        split_vertical(
            &features,
            &dataset.feature_names,
            &[(attacker.clone(), n_b), (victim_id(), n_a)],
        ),
    )?;
    let params = stage(
        "train",
        BoostParams::new(
            boost.trees,
            boost.depth,
            boost.learning_rate,
            boost.lambda,
            boost.gain_threshold,
        ),
    )?;
    let ensemble = stage("train", secureboost_train(&parts, &labels, &params))?;

    let grid_points = config.attack.grid_points.unwrap_or(DEFAULT_GRID_POINTS);
    let (lb, ub) = stage("attack", query_bounds(config, &features))?;
    let mut rows = Vec::with_capacity(config.sweep.epsilons.len());
    for &epsilon in &config.sweep.epsilons {
        let attack_config = stage(
            "attack",
            AttackConfig::uniform(epsilon, grid_points, lb, ub, ensemble.feature_count()),
        )?;
        let mut info = ensemble.tree_info(&attacker, config.attack.reveal_feature_ids);
        let mut oracle = PredictionOracle::new(&ensemble);
        let outcome = stage("attack", steal_thresholds(&mut oracle, &mut info, &attack_config))?;
        let (_, max_abs_error) = evaluate_theft(&ensemble, &outcome);
        let queries_per_node = stage(
            "attack",
            predict_query_count(lb, ub, epsilon, grid_points),
        )?;
        rows.push(EpsilonSweepRow {
            epsilon,
            queries_per_node,
            victim_nodes: outcome.victim_nodes,
            predicted_total_queries: total_queries(outcome.victim_nodes, queries_per_node),
            observed_batches: outcome.refinement_batches + outcome.discovery_batches,
            max_abs_error,
        });
    }
    Ok(rows)
}

/// Writes serializable rows as CSV with a header derived from the field
/// names, ready for plotting.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| io_error(path, e))?;
    }
    writer.flush().map_err(|e| io_error(path, e))
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

/// A learning rate that keeps plain gradient descent stable on this design
/// matrix: 0.9 / (sigma_max^2 + alpha).
pub fn suggest_eta(features: &ArrayView2<'_, f64>, alpha: f64) -> f64 {
    let top = linalg::singular_values(features)
        .first()
        .copied()
        .unwrap_or(0.0);
    let denom = top * top + alpha;
    if denom <= f64::EPSILON {
        1.0
    } else {
        0.9 / denom
    }
}

/// Short human-readable digest of a report for terminal output.
pub fn summarize(report: &AttackReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "setting           {}", report.setting);
    let _ = writeln!(
        out,
        "rows used         {} (dropped {})",
        report.dataset_rows_used, report.dataset_dropped_rows
    );
    if let Some(inv) = &report.outcome.inversion {
        let _ = writeln!(
            out,
            "victim block      {} x {}",
            inv.victim_rows, inv.victim_cols
        );
        let _ = writeln!(
            out,
            "known entries     {} (dof {}, kdr {:.4})",
            inv.known_entries.len(),
            inv.dof_required,
            inv.kdr
        );
        let _ = writeln!(
            out,
            "constraints       {} quadratic + {} linear",
            inv.quadratic_constraints, inv.linear_constraints
        );
        let _ = writeln!(out, "candidates        {}", inv.solution_count);
        match inv.rel_error {
            Some(e) => {
                let _ = writeln!(out, "relative error    {e:.3e}");
            }
            None => {
                let _ = writeln!(out, "relative error    n/a (no ground truth)");
            }
        }
        if let Some(converged) = inv.converged {
            let _ = writeln!(out, "model converged   {converged}");
        }
    }
    if let Some(tree) = &report.outcome.tree {
        let _ = writeln!(out, "victim nodes      {}", tree.victim_nodes);
        let _ = writeln!(
            out,
            "query budget      {} predicted ({} per node), {} refinement + {} discovery observed",
            tree.predicted_total_queries,
            tree.queries_per_node,
            tree.refinement_batches,
            tree.discovery_batches
        );
        let _ = writeln!(out, "records submitted {}", tree.records_submitted);
        let _ = writeln!(
            out,
            "max abs error     {:.3e} (target {:.3e})",
            tree.max_abs_error, tree.epsilon
        );
    }
    let _ = writeln!(out, "verdict           {}", if report.pass { "PASS" } else { "FAIL" });
    out
}
