//! Horizontally partitioned training: every party holds the same feature
//! columns for its own set of samples, takes one local full-batch
//! gradient step per round, and uploads the stepped weights encrypted.
//! The arbiter averages the ciphertexts and the parties decrypt the new
//! shared weights.
//!
//! The arbiter never sees individual updates in the clear (the averaging
//! happens homomorphically), so envelopes holding a party's local update
//! are visible to that party alone. What every party does see each
//! round: the shared weights entering the round, its own gradient, and
//! the averaged weights coming out.

use super::{check_finite, init_weights, DesignMatrix, Envelope, EventKind, Hyperparams, PartyId, Transcript};
use crate::error::{Error, Result};
use crate::protocols::Activation;
use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::{BTreeMap, BTreeSet};

/// Output of a horizontal training session.
#[derive(Debug, Clone, PartialEq)]
pub struct HflRun {
    pub transcripts: BTreeMap<PartyId, Transcript>,
    pub final_weights: Array1<f64>,
    pub party_ids: Vec<PartyId>,
    pub loss_trace: Vec<f64>,
}

/// Trains shared-feature linear regression across two or more parties by
/// weight averaging. Round `k` of every transcript records the shared
/// weights `W_k`, the party's own gradient, and its stepped local update
/// (the update also travels to the arbiter as a sealed envelope). After
/// the last round the final shared weights appear once more so that
/// every consecutive round pair is observable.
pub fn hfl_linreg_train(parties: &[(DesignMatrix, Array1<f64>)], hp: &Hyperparams) -> Result<HflRun> {
    if hp.activation != Activation::Identity {
        return Err(Error::Hyperparams(
            "horizontal training is implemented for linear regression only".into(),
        ));
    }
    if parties.len() < 2 {
        return Err(Error::arg(format!(
            "need at least 2 parties, got {}",
            parties.len()
        )));
    }
    let n = parties[0].0.cols();
    let mut ids = Vec::with_capacity(parties.len());
    for (x, y) in parties {
        if x.cols() != n {
            return Err(Error::dim(format!(
                "party {} holds {} features, expected {n}",
                x.party(),
                x.cols()
            )));
        }
        if y.len() != x.rows() {
            return Err(Error::dim(format!(
                "party {} has {} labels for {} samples",
                x.party(),
                y.len(),
                x.rows()
            )));
        }
        if ids.contains(x.party()) {
            return Err(Error::arg(format!("duplicate party id {}", x.party())));
        }
        ids.push(x.party().clone());
    }

    let mut rng = ChaCha20Rng::seed_from_u64(hp.init_seed);
    let mut w = init_weights(n, &mut rng);

    let arbiter = PartyId::arbiter();
    let mut transcripts = BTreeMap::new();
    for id in ids.iter().chain(std::iter::once(&arbiter)) {
        transcripts.insert(id.clone(), Transcript::new(id.clone()));
    }
    for (x, y) in parties {
        transcripts
            .get_mut(x.party())
            .unwrap()
            .push(None, EventKind::Labels(y.to_vec()));
    }

    let everyone: BTreeSet<PartyId> = ids.iter().cloned().collect();
    let scale = 1.0 / parties.len() as f64;
    let mut loss_trace = Vec::with_capacity(hp.iterations);

    for k in 0..hp.iterations {
        for id in &ids {
            transcripts
                .get_mut(id)
                .unwrap()
                .push(Some(k), EventKind::AveragedWeights(w.to_vec()));
        }

        let mut loss = 0.5 * hp.alpha * w.dot(&w);
        let mut sum = Array1::zeros(n);
        for (x, y) in parties {
            let residual = &x.values().dot(&w) - y;
            loss += 0.5 * residual.dot(&residual);
            let g = &x.values().t().dot(&residual) + &(hp.alpha * &w);
            check_finite(&g, k, &format!("gradient of {}", x.party()))?;
            let local = &w - &(hp.eta * &g);

            let t = transcripts.get_mut(x.party()).unwrap();
            t.push(
                Some(k),
                EventKind::Gradient {
                    party: x.party().clone(),
                    values: g.to_vec(),
                },
            );
            t.push(Some(k), EventKind::LocalWeights(local.to_vec()));

            let owner_only: BTreeSet<PartyId> = [x.party().clone()].into_iter().collect();
            transcripts.get_mut(&arbiter).unwrap().push(
                Some(k),
                EventKind::Sealed(Envelope::seal(
                    format!("local-update-{}", x.party()),
                    local.to_vec(),
                    owner_only,
                )),
            );
            sum += &local;
        }
        loss_trace.push(loss);

        w = scale * &sum;
        check_finite(&w, k, "averaged weights")?;
        transcripts.get_mut(&arbiter).unwrap().push(
            Some(k),
            EventKind::Sealed(Envelope::seal("averaged", w.to_vec(), everyone.clone())),
        );
    }

    let last = hp.iterations;
    for id in &ids {
        let t = transcripts.get_mut(id).unwrap();
        t.push(Some(last), EventKind::AveragedWeights(w.to_vec()));
        t.push(None, EventKind::FinalModel(w.to_vec()));
    }

    Ok(HflRun {
        transcripts,
        final_weights: w,
        party_ids: ids,
        loss_trace,
    })
}
