//! Simulators for encrypted federated-learning protocols.
//!
//! Every training run produces one [`Transcript`] per participant. A
//! transcript holds exactly what that participant observes during the
//! protocol: its own plaintext values, plus [`Envelope`]s for ciphertext
//! that passed through its hands. Attack code consumes transcripts and
//! nothing else, so the visibility rules encoded here are the single
//! source of truth for what an adversary may use.
//!
//! Encryption is modeled as access control rather than actual
//! cryptography: an [`Envelope`] stores its payload privately and only
//! releases it to observers named in its visibility set. This keeps the
//! arithmetic exact (the protocols behave as if homomorphic operations
//! were lossless) while still making "who saw what" auditable in tests.

mod horizontal;
mod sigmoid;
mod vertical;

pub use horizontal::{hfl_linreg_train, HflRun};
pub use sigmoid::{poly_sigmoid, poly_sigmoid_inverse, POLY_SIGMOID_MAX, POLY_SIGMOID_MIN};
pub use vertical::{
    multiparty_vfl_train, vfl_linreg_train, vfl_logreg_train, MultiVflRun, VflModel, VflRun,
};

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// Identifies a protocol participant.
///
/// The name `"arbiter"` is reserved for the coordinator that holds the
/// decryption key; data parties must use any other non-empty name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartyId(String);

impl PartyId {
    pub fn new(name: impl Into<String>) -> Self {
        PartyId(name.into())
    }

    /// The coordinator that generates the key pair and decrypts
    /// aggregated ciphertexts.
    pub fn arbiter() -> Self {
        PartyId("arbiter".to_string())
    }

    pub fn is_arbiter(&self) -> bool {
        self.0 == "arbiter"
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A party's private feature block: the rows are samples, the columns are
/// the features this party holds.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: Array2<f64>,
    party: PartyId,
    feature_names: Vec<String>,
}

impl DesignMatrix {
    pub fn new(values: Array2<f64>, party: PartyId, feature_names: Vec<String>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::dim(format!(
                "design matrix for {party} must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if feature_names.len() != values.ncols() {
            return Err(Error::dim(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                values.ncols()
            )));
        }
        if party.is_arbiter() {
            return Err(Error::arg("the arbiter holds no features"));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::arg(format!(
                "design matrix for {party} contains non-finite value {bad}"
            )));
        }
        Ok(DesignMatrix {
            values,
            party,
            feature_names,
        })
    }

    /// Builds a matrix with synthetic feature names `f0..f{n-1}`.
    pub fn from_array(values: Array2<f64>, party: PartyId) -> Result<Self> {
        let names = (0..values.ncols()).map(|j| format!("f{j}")).collect();
        DesignMatrix::new(values, party, names)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn party(&self) -> &PartyId {
        &self.party
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }
}

/// Link function applied to the aggregated score before the residual is
/// formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// Plain least squares: residual is `z - y`.
    Identity,
    /// Cubic polynomial approximation of the logistic function, the form
    /// used when training under homomorphic encryption. See
    /// [`poly_sigmoid`].
    PolySigmoid,
}

/// Training hyperparameters shared by all protocol simulators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Gradient step size. Must be positive.
    pub eta: f64,
    /// L2 regularization strength. Must be non-negative, and `eta * alpha`
    /// must stay below 1 so the weight-decay factor `1 - eta * alpha`
    /// remains positive.
    pub alpha: f64,
    /// Number of gradient steps.
    pub iterations: usize,
    pub activation: Activation,
    /// Seed for the initial weight draw (uniform in `[-0.1, 0.1]`).
    pub init_seed: u64,
}

impl Hyperparams {
    pub fn new(
        eta: f64,
        alpha: f64,
        iterations: usize,
        activation: Activation,
        init_seed: u64,
    ) -> Result<Self> {
        if !eta.is_finite() || eta <= 0.0 {
            return Err(Error::Hyperparams(format!(
                "learning rate must be positive and finite, got {eta}"
            )));
        }
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::Hyperparams(format!(
                "regularization must be non-negative and finite, got {alpha}"
            )));
        }
        if eta * alpha >= 1.0 {
            return Err(Error::Hyperparams(format!(
                "eta * alpha = {} >= 1 makes the decay factor non-positive",
                eta * alpha
            )));
        }
        if iterations == 0 {
            return Err(Error::Hyperparams("iterations must be at least 1".into()));
        }
        Ok(Hyperparams {
            eta,
            alpha,
            iterations,
            activation,
            init_seed,
        })
    }

    /// Weight-decay factor `1 - eta * alpha` that multiplies the previous
    /// weights in each update.
    pub fn decay(&self) -> f64 {
        1.0 - self.eta * self.alpha
    }
}

/// Ciphertext stand-in. The payload is private: only observers in the
/// visibility set can [`open`](Envelope::open) it, everyone else sees just
/// the label and the length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    label: String,
    payload: Vec<f64>,
    visible_to: BTreeSet<PartyId>,
}

impl Envelope {
    pub fn seal(label: impl Into<String>, payload: Vec<f64>, visible_to: BTreeSet<PartyId>) -> Self {
        Envelope {
            label: label.into(),
            payload,
            visible_to,
        }
    }

    /// Releases the payload if `observer` is allowed to decrypt it.
    pub fn open(&self, observer: &PartyId) -> Result<&[f64]> {
        if self.visible_to.contains(observer) {
            Ok(&self.payload)
        } else {
            Err(Error::EnvelopeSealed {
                observer: observer.to_string(),
            })
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Length is metadata: ciphertexts leak their size.
    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    pub fn visible_to(&self) -> &BTreeSet<PartyId> {
        &self.visible_to
    }

    /// Copy with the payload replaced by zeros. Keeps the label, length,
    /// and visibility set so structural checks still work.
    pub fn redacted(&self) -> Self {
        Envelope {
            label: self.label.clone(),
            payload: vec![0.0; self.payload.len()],
            visible_to: self.visible_to.clone(),
        }
    }
}

/// One observation in a transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    /// The observer's own score vector `z = X w` for this iteration.
    LocalFeature(Vec<f64>),
    /// The observer's own weight vector at the start of this iteration.
    LocalWeights(Vec<f64>),
    /// A plaintext gradient, tagged with the party it belongs to.
    Gradient { party: PartyId, values: Vec<f64> },
    /// A plaintext aggregated residual or score seen in the clear.
    Intermediate(Vec<f64>),
    /// Globally averaged weights published in horizontal training.
    AveragedWeights(Vec<f64>),
    /// Training labels (only the label holder records these).
    Labels(Vec<f64>),
    /// The observer's weights after the final iteration.
    FinalModel(Vec<f64>),
    /// A score vector received during inference on a fresh sample.
    TestFeature(Vec<f64>),
    /// Ciphertext passing through the observer's hands.
    Sealed(Envelope),
}

impl EventKind {
    fn name(&self) -> &'static str {
        match self {
            EventKind::LocalFeature(_) => "local-feature",
            EventKind::LocalWeights(_) => "local-weights",
            EventKind::Gradient { .. } => "gradient",
            EventKind::Intermediate(_) => "intermediate",
            EventKind::AveragedWeights(_) => "averaged-weights",
            EventKind::Labels(_) => "labels",
            EventKind::FinalModel(_) => "final-model",
            EventKind::TestFeature(_) => "test-feature",
            EventKind::Sealed(_) => "sealed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Training iteration the event belongs to, or `None` for events
    /// outside the loop (labels, final model, inference).
    pub iteration: Option<usize>,
    pub kind: EventKind,
}

/// Everything one participant observed during a protocol run, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    observer: PartyId,
    events: Vec<Event>,
}

impl Transcript {
    pub fn new(observer: PartyId) -> Self {
        Transcript {
            observer,
            events: Vec::new(),
        }
    }

    pub fn observer(&self) -> &PartyId {
        &self.observer
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn push(&mut self, iteration: Option<usize>, kind: EventKind) {
        self.events.push(Event { iteration, kind });
    }

    fn missing(&self, kind: &str, iteration: Option<usize>) -> Error {
        Error::MissingEvent {
            observer: self.observer.to_string(),
            kind: kind.to_string(),
            iteration,
        }
    }

    /// The observer's score vector `z` at iteration `k`.
    pub fn local_feature(&self, k: usize) -> Result<&[f64]> {
        self.events
            .iter()
            .find_map(|e| match (&e.kind, e.iteration) {
                (EventKind::LocalFeature(v), Some(i)) if i == k => Some(v.as_slice()),
                _ => None,
            })
            .ok_or_else(|| self.missing("local-feature", Some(k)))
    }

    /// The observer's weight vector at iteration `k`.
    pub fn local_weights(&self, k: usize) -> Result<&[f64]> {
        self.events
            .iter()
            .find_map(|e| match (&e.kind, e.iteration) {
                (EventKind::LocalWeights(v), Some(i)) if i == k => Some(v.as_slice()),
                _ => None,
            })
            .ok_or_else(|| self.missing("local-weights", Some(k)))
    }

    /// Plaintext gradient of `party` at iteration `k`, if this observer
    /// saw it.
    pub fn gradient(&self, party: &PartyId, k: usize) -> Result<&[f64]> {
        self.events
            .iter()
            .find_map(|e| match (&e.kind, e.iteration) {
                (EventKind::Gradient { party: p, values }, Some(i)) if i == k && p == party => {
                    Some(values.as_slice())
                }
                _ => None,
            })
            .ok_or_else(|| self.missing("gradient", Some(k)))
    }

    /// Plaintext aggregated residual at iteration `k`, if visible.
    pub fn intermediate(&self, k: usize) -> Result<&[f64]> {
        self.events
            .iter()
            .find_map(|e| match (&e.kind, e.iteration) {
                (EventKind::Intermediate(v), Some(i)) if i == k => Some(v.as_slice()),
                _ => None,
            })
            .ok_or_else(|| self.missing("intermediate", Some(k)))
    }

    /// Published averaged weights at round `k` (horizontal training).
    pub fn averaged_weights(&self, k: usize) -> Result<&[f64]> {
        self.events
            .iter()
            .find_map(|e| match (&e.kind, e.iteration) {
                (EventKind::AveragedWeights(v), Some(i)) if i == k => Some(v.as_slice()),
                _ => None,
            })
            .ok_or_else(|| self.missing("averaged-weights", Some(k)))
    }

    pub fn labels(&self) -> Result<&[f64]> {
        self.events
            .iter()
            .find_map(|e| match &e.kind {
                EventKind::Labels(v) => Some(v.as_slice()),
                _ => None,
            })
            .ok_or_else(|| self.missing("labels", None))
    }

    pub fn final_model(&self) -> Result<&[f64]> {
        self.events
            .iter()
            .find_map(|e| match &e.kind {
                EventKind::FinalModel(v) => Some(v.as_slice()),
                _ => None,
            })
            .ok_or_else(|| self.missing("final-model", None))
    }

    /// Score vectors received during inference, in query order.
    pub fn test_features(&self) -> Vec<&[f64]> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::TestFeature(v) => Some(v.as_slice()),
                _ => None,
            })
            .collect()
    }

    /// Sealed envelope with the given label at iteration `k`.
    pub fn sealed(&self, label: &str, k: usize) -> Result<&Envelope> {
        self.events
            .iter()
            .find_map(|e| match (&e.kind, e.iteration) {
                (EventKind::Sealed(env), Some(i)) if i == k && env.label() == label => Some(env),
                _ => None,
            })
            .ok_or_else(|| self.missing(label, Some(k)))
    }

    /// Every plaintext number the observer can read directly, across all
    /// events. Sealed payloads are excluded. Used to audit that hidden
    /// values never leak into a transcript in the clear.
    pub fn visible_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for e in &self.events {
            match &e.kind {
                EventKind::LocalFeature(v)
                | EventKind::LocalWeights(v)
                | EventKind::Intermediate(v)
                | EventKind::AveragedWeights(v)
                | EventKind::Labels(v)
                | EventKind::FinalModel(v)
                | EventKind::TestFeature(v)
                | EventKind::Gradient { values: v, .. } => out.extend_from_slice(v),
                EventKind::Sealed(_) => {}
            }
        }
        out
    }

    /// Copy with every sealed payload zeroed out. Running an attack on
    /// the redacted copy proves it never depended on ciphertext contents.
    pub fn sealed_copy(&self) -> Transcript {
        let events = self
            .events
            .iter()
            .map(|e| Event {
                iteration: e.iteration,
                kind: match &e.kind {
                    EventKind::Sealed(env) => EventKind::Sealed(env.redacted()),
                    other => other.clone(),
                },
            })
            .collect();
        Transcript {
            observer: self.observer.clone(),
            events,
        }
    }

    /// Number of events of each kind, useful for structural assertions.
    pub fn count_kind(&self, kind_name: &str) -> usize {
        self.events
            .iter()
            .filter(|e| e.kind.name() == kind_name)
            .count()
    }
}

/// Draws an initial weight vector, uniform per coordinate in `[-0.1, 0.1]`.
pub(crate) fn init_weights<R: Rng>(n: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_iter((0..n).map(|_| rng.gen_range(-0.1..0.1)))
}

pub(crate) fn check_finite(values: &Array1<f64>, iteration: usize, context: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            iteration,
            context: context.to_string(),
        })
    }
}
