//! Vertically partitioned training: parties hold disjoint feature blocks
//! over the same samples, the label holder aggregates scores, and an
//! arbiter decrypts gradient ciphertexts.
//!
//! Message flow per iteration, two-party case:
//!
//! 1. Party A computes its score share `z_a = X_a w_a` and sends it to
//!    the label holder B encrypted.
//! 2. B forms the residual `d` under encryption (adding its own share
//!    and subtracting the labels, applying the link function for
//!    logistic training) and sends the ciphertext back to A.
//! 3. Both parties assemble encrypted gradients `X' d + alpha w`, the
//!    arbiter decrypts each and returns the plaintext to its owner.
//! 4. Each party takes a gradient step locally.
//!
//! Each observer's transcript records exactly what crossed its hands:
//! its own plaintext values, the decrypted gradient it got back, and
//! opaque envelopes for everything else.

use super::{
    check_finite, init_weights, poly_sigmoid, Activation, DesignMatrix, Envelope, EventKind,
    Hyperparams, PartyId, Transcript,
};
use crate::error::{Error, Result};
use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::{BTreeMap, BTreeSet};

/// Final model of a two-party vertical run.
#[derive(Debug, Clone, PartialEq)]
pub struct VflModel {
    pub w_a: Array1<f64>,
    pub w_b: Array1<f64>,
    pub activation: Activation,
}

/// Output of a two-party vertical training session.
#[derive(Debug, Clone, PartialEq)]
pub struct VflRun {
    pub transcripts: BTreeMap<PartyId, Transcript>,
    pub model: VflModel,
    /// Objective value per iteration, recorded by the simulator itself
    /// (it is telemetry, not something any single party observes).
    pub loss_trace: Vec<f64>,
    party_a: PartyId,
    party_b: PartyId,
}

impl VflRun {
    pub fn party_a(&self) -> &PartyId {
        &self.party_a
    }

    /// The label holder.
    pub fn party_b(&self) -> &PartyId {
        &self.party_b
    }

    /// Answers one inference query whose features are split across the
    /// two parties, logging A's unencrypted score share into B's
    /// transcript the way deployed vertical pipelines do.
    pub fn predict(&mut self, xa_query: &Array1<f64>, xb_query: &Array1<f64>) -> Result<f64> {
        vfl_predict(self, xa_query, xb_query)
    }
}

/// Runs one inference query against a trained two-party model. A's score
/// share `z_a` travels to B in plaintext and is recorded in B's
/// transcript; the prediction is the link function applied to the summed
/// shares.
pub fn vfl_predict(
    run: &mut VflRun,
    xa_query: &Array1<f64>,
    xb_query: &Array1<f64>,
) -> Result<f64> {
    if xa_query.len() != run.model.w_a.len() || xb_query.len() != run.model.w_b.len() {
        return Err(Error::dim(format!(
            "query split {}+{} does not match model split {}+{}",
            xa_query.len(),
            xb_query.len(),
            run.model.w_a.len(),
            run.model.w_b.len()
        )));
    }
    let z_a = xa_query.dot(&run.model.w_a);
    let z_b = xb_query.dot(&run.model.w_b);
    let transcript_b = run
        .transcripts
        .get_mut(&run.party_b)
        .expect("label holder transcript exists");
    transcript_b.push(None, EventKind::TestFeature(vec![z_a]));
    let score = z_a + z_b;
    Ok(match run.model.activation {
        Activation::Identity => score,
        Activation::PolySigmoid => poly_sigmoid(score),
    })
}

fn check_rows(xa: &DesignMatrix, xb: &DesignMatrix, y: &Array1<f64>) -> Result<usize> {
    if xa.rows() != xb.rows() || xa.rows() != y.len() {
        return Err(Error::dim(format!(
            "row counts disagree: {} ({}), {} ({}), {} labels",
            xa.rows(),
            xa.party(),
            xb.rows(),
            xb.party(),
            y.len()
        )));
    }
    if xa.party() == xb.party() {
        return Err(Error::arg(format!(
            "both feature blocks belong to {}",
            xa.party()
        )));
    }
    Ok(xa.rows())
}

/// Trains vertically partitioned linear regression between feature
/// holder A and label holder B. See the module docs for the message flow
/// and what lands in each transcript.
pub fn vfl_linreg_train(
    xa: &DesignMatrix,
    xb: &DesignMatrix,
    y: &Array1<f64>,
    hp: &Hyperparams,
) -> Result<VflRun> {
    if hp.activation != Activation::Identity {
        return Err(Error::Hyperparams(
            "linear regression requires the identity activation".into(),
        ));
    }
    vfl_train(xa, xb, y, hp)
}

/// Trains vertically partitioned logistic regression with the cubic
/// sigmoid approximation. Labels may be soft, anywhere in `[0, 1]`.
pub fn vfl_logreg_train(
    xa: &DesignMatrix,
    xb: &DesignMatrix,
    y: &Array1<f64>,
    hp: &Hyperparams,
) -> Result<VflRun> {
    if hp.activation != Activation::PolySigmoid {
        return Err(Error::Hyperparams(
            "logistic regression requires the poly-sigmoid activation".into(),
        ));
    }
    if let Some(bad) = y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::arg(format!(
            "logistic labels must lie in [0, 1], got {bad}"
        )));
    }
    vfl_train(xa, xb, y, hp)
}

fn vfl_train(
    xa: &DesignMatrix,
    xb: &DesignMatrix,
    y: &Array1<f64>,
    hp: &Hyperparams,
) -> Result<VflRun> {
    check_rows(xa, xb, y)?;
    let party_a = xa.party().clone();
    let party_b = xb.party().clone();
    let arbiter = PartyId::arbiter();

    let mut rng = ChaCha20Rng::seed_from_u64(hp.init_seed);
    let mut w_a = init_weights(xa.cols(), &mut rng);
    let mut w_b = init_weights(xb.cols(), &mut rng);

    let mut transcripts = BTreeMap::new();
    transcripts.insert(party_a.clone(), Transcript::new(party_a.clone()));
    transcripts.insert(party_b.clone(), Transcript::new(party_b.clone()));
    transcripts.insert(arbiter.clone(), Transcript::new(arbiter.clone()));
    transcripts
        .get_mut(&party_b)
        .unwrap()
        .push(None, EventKind::Labels(y.to_vec()));

    let arbiter_only: BTreeSet<PartyId> = [arbiter.clone()].into_iter().collect();
    let mut loss_trace = Vec::with_capacity(hp.iterations);

    for k in 0..hp.iterations {
        let z_a = xa.values().dot(&w_a);
        let z_b = xb.values().dot(&w_b);
        let score = &z_a + &z_b;
        let d = match hp.activation {
            Activation::Identity => &score - y,
            Activation::PolySigmoid => &score.mapv(poly_sigmoid) - y,
        };
        check_finite(&d, k, "aggregated residual")?;

        let loss = 0.5 * (d.dot(&d) + hp.alpha * (w_a.dot(&w_a) + w_b.dot(&w_b)));
        loss_trace.push(loss);

        let g_a = &xa.values().t().dot(&d) + &(hp.alpha * &w_a);
        let g_b = &xb.values().t().dot(&d) + &(hp.alpha * &w_b);
        check_finite(&g_a, k, "gradient of feature holder")?;
        check_finite(&g_b, k, "gradient of label holder")?;

        let ta = transcripts.get_mut(&party_a).unwrap();
        ta.push(Some(k), EventKind::LocalWeights(w_a.to_vec()));
        ta.push(Some(k), EventKind::LocalFeature(z_a.to_vec()));
        ta.push(
            Some(k),
            EventKind::Sealed(Envelope::seal("d", d.to_vec(), arbiter_only.clone())),
        );
        ta.push(
            Some(k),
            EventKind::Gradient {
                party: party_a.clone(),
                values: g_a.to_vec(),
            },
        );

        let tb = transcripts.get_mut(&party_b).unwrap();
        tb.push(Some(k), EventKind::LocalWeights(w_b.to_vec()));
        tb.push(
            Some(k),
            EventKind::Sealed(Envelope::seal("za", z_a.to_vec(), arbiter_only.clone())),
        );
        tb.push(Some(k), EventKind::LocalFeature(z_b.to_vec()));
        tb.push(
            Some(k),
            EventKind::Sealed(Envelope::seal("d", d.to_vec(), arbiter_only.clone())),
        );
        tb.push(
            Some(k),
            EventKind::Gradient {
                party: party_b.clone(),
                values: g_b.to_vec(),
            },
        );

        let tr = transcripts.get_mut(&arbiter).unwrap();
        tr.push(
            Some(k),
            EventKind::Gradient {
                party: party_a.clone(),
                values: g_a.to_vec(),
            },
        );
        tr.push(
            Some(k),
            EventKind::Gradient {
                party: party_b.clone(),
                values: g_b.to_vec(),
            },
        );

        w_a.scaled_add(-hp.eta, &g_a);
        w_b.scaled_add(-hp.eta, &g_b);
    }

    transcripts
        .get_mut(&party_a)
        .unwrap()
        .push(None, EventKind::FinalModel(w_a.to_vec()));
    transcripts
        .get_mut(&party_b)
        .unwrap()
        .push(None, EventKind::FinalModel(w_b.to_vec()));

    Ok(VflRun {
        transcripts,
        model: VflModel {
            w_a,
            w_b,
            activation: hp.activation,
        },
        loss_trace,
        party_a,
        party_b,
    })
}

/// Output of a multi-party vertical training session.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiVflRun {
    pub transcripts: BTreeMap<PartyId, Transcript>,
    /// Final weight vector per party, in the order the parties were
    /// passed in.
    pub weights: Vec<Array1<f64>>,
    pub party_ids: Vec<PartyId>,
    pub loss_trace: Vec<f64>,
}

/// Vertical linear regression across two or more feature-holding
/// parties. The first party in `parties` also holds the labels and
/// aggregates the score shares.
///
/// `colluding` names observers that pool what they see. Because the
/// arbiter holds the decryption key, a coalition that includes the
/// arbiter reads every ciphertext that passes through any member: each
/// non-arbiter member's transcript then additionally records the
/// aggregated residual and every party's decrypted gradient in
/// plaintext. A coalition without the arbiter learns nothing extra.
pub fn multiparty_vfl_train(
    parties: &[DesignMatrix],
    y: &Array1<f64>,
    hp: &Hyperparams,
    colluding: &BTreeSet<PartyId>,
) -> Result<MultiVflRun> {
    if hp.activation != Activation::Identity {
        return Err(Error::Hyperparams(
            "multi-party training is implemented for linear regression only".into(),
        ));
    }
    if parties.len() < 2 {
        return Err(Error::arg(format!(
            "need at least 2 feature-holding parties, got {}",
            parties.len()
        )));
    }
    let m = parties[0].rows();
    let mut ids: Vec<PartyId> = Vec::with_capacity(parties.len());
    for p in parties {
        if p.rows() != m {
            return Err(Error::dim(format!(
                "party {} has {} rows, expected {m}",
                p.party(),
                p.rows()
            )));
        }
        if ids.contains(p.party()) {
            return Err(Error::arg(format!("duplicate party id {}", p.party())));
        }
        ids.push(p.party().clone());
    }
    if y.len() != m {
        return Err(Error::dim(format!(
            "{} labels for {m} samples",
            y.len()
        )));
    }
    let arbiter = PartyId::arbiter();
    for member in colluding {
        if !member.is_arbiter() && !ids.contains(member) {
            return Err(Error::arg(format!(
                "colluding member {member} is not part of this session"
            )));
        }
    }
    let coalition_active = colluding.contains(&arbiter);

    let mut rng = ChaCha20Rng::seed_from_u64(hp.init_seed);
    let mut weights: Vec<Array1<f64>> = parties
        .iter()
        .map(|p| init_weights(p.cols(), &mut rng))
        .collect();

    let mut transcripts = BTreeMap::new();
    for id in ids.iter().chain(std::iter::once(&arbiter)) {
        transcripts.insert(id.clone(), Transcript::new(id.clone()));
    }
    let aggregator = ids[0].clone();
    transcripts
        .get_mut(&aggregator)
        .unwrap()
        .push(None, EventKind::Labels(y.to_vec()));

    let arbiter_only: BTreeSet<PartyId> = [arbiter.clone()].into_iter().collect();
    let mut loss_trace = Vec::with_capacity(hp.iterations);

    for k in 0..hp.iterations {
        let scores: Vec<Array1<f64>> = parties
            .iter()
            .zip(&weights)
            .map(|(p, w)| p.values().dot(w))
            .collect();
        let mut d = -y.clone();
        for z in &scores {
            d += z;
        }
        check_finite(&d, k, "aggregated residual")?;

        let reg: f64 = weights.iter().map(|w| w.dot(w)).sum();
        loss_trace.push(0.5 * (d.dot(&d) + hp.alpha * reg));

        let gradients: Vec<Array1<f64>> = parties
            .iter()
            .zip(&weights)
            .map(|(p, w)| &p.values().t().dot(&d) + &(hp.alpha * w))
            .collect();
        for (p, g) in ids.iter().zip(&gradients) {
            check_finite(g, k, &format!("gradient of {p}"))?;
        }

        for (i, id) in ids.iter().enumerate() {
            let t = transcripts.get_mut(id).unwrap();
            t.push(Some(k), EventKind::LocalWeights(weights[i].to_vec()));
            t.push(Some(k), EventKind::LocalFeature(scores[i].to_vec()));
            if i == 0 {
                for (j, other) in ids.iter().enumerate().skip(1) {
                    t.push(
                        Some(k),
                        EventKind::Sealed(Envelope::seal(
                            format!("z-{other}"),
                            scores[j].to_vec(),
                            arbiter_only.clone(),
                        )),
                    );
                }
            }
            t.push(
                Some(k),
                EventKind::Sealed(Envelope::seal("d", d.to_vec(), arbiter_only.clone())),
            );
            t.push(
                Some(k),
                EventKind::Gradient {
                    party: id.clone(),
                    values: gradients[i].to_vec(),
                },
            );
        }

        let tr = transcripts.get_mut(&arbiter).unwrap();
        for (id, g) in ids.iter().zip(&gradients) {
            tr.push(
                Some(k),
                EventKind::Gradient {
                    party: id.clone(),
                    values: g.to_vec(),
                },
            );
        }

        if coalition_active {
            for member in colluding.iter().filter(|c| !c.is_arbiter()) {
                let t = transcripts.get_mut(member).unwrap();
                t.push(Some(k), EventKind::Intermediate(d.to_vec()));
                for (id, g) in ids.iter().zip(&gradients) {
                    if id != member {
                        t.push(
                            Some(k),
                            EventKind::Gradient {
                                party: id.clone(),
                                values: g.to_vec(),
                            },
                        );
                    }
                }
            }
        }

        for (w, g) in weights.iter_mut().zip(&gradients) {
            w.scaled_add(-hp.eta, g);
        }
    }

    for (id, w) in ids.iter().zip(&weights) {
        transcripts
            .get_mut(id)
            .unwrap()
            .push(None, EventKind::FinalModel(w.to_vec()));
    }

    Ok(MultiVflRun {
        transcripts,
        weights,
        party_ids: ids,
        loss_trace,
    })
}
