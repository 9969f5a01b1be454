use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::{GradVector, MlpSpec, ParamVector};

/// A client's reported vector together with its sample count `n_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Contribution<V> {
    pub client_id: usize,
    pub value: V,
    pub num_samples: usize,
}

/// Denominator of the aggregation weights `n_k / N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// `N` = samples held by the participating clients.
    Participants,
    /// `N` = a fixed total, e.g. all samples across all `K` clients.
    Total(usize),
}

trait Flat {
    fn flat(&self) -> &[f64];
    fn spec(&self) -> &Arc<MlpSpec>;
}

impl Flat for ParamVector {
    fn flat(&self) -> &[f64] {
        self.values()
    }
    fn spec(&self) -> &Arc<MlpSpec> {
        ParamVector::spec(self)
    }
}

impl Flat for GradVector {
    fn flat(&self) -> &[f64] {
        self.values()
    }
    fn spec(&self) -> &Arc<MlpSpec> {
        GradVector::spec(self)
    }
}

/// `sum_k (n_k / N) v_k`, accumulated in ascending client-id order.
fn weighted_sum<V: Flat>(
    items: &[Contribution<V>],
    normalization: Normalization,
) -> Result<(Vec<f64>, Arc<MlpSpec>)> {
    let first = items.first().ok_or(Error::EmptyAggregation)?;
    let len = first.value.flat().len();
    if let Some(bad) = items.iter().find(|c| c.value.flat().len() != len) {
        return Err(Error::ShapeMismatch {
            context: "aggregation",
            expected: len,
            found: bad.value.flat().len(),
        });
    }
    if let Some(bad) = items.iter().find(|c| c.num_samples == 0) {
        return Err(Error::InvalidConfig(format!(
            "client {} reported zero samples",
            bad.client_id
        )));
    }
    let total = match normalization {
        Normalization::Participants => items.iter().map(|c| c.num_samples).sum(),
        Normalization::Total(n) => n,
    } as f64;

    let mut order: Vec<&Contribution<V>> = items.iter().collect();
    order.sort_by_key(|c| c.client_id);

    let mut acc = vec![0.0; len];
    for c in order {
        let weight = c.num_samples as f64 / total;
        for (a, v) in acc.iter_mut().zip(c.value.flat()) {
            *a += weight * v;
        }
    }
    Ok((acc, Arc::clone(first.value.spec())))
}

/// Sample-weighted mean of client models over the participants.
pub fn aggregate_weights(updates: &[Contribution<ParamVector>]) -> Result<ParamVector> {
    aggregate_weights_normalized(updates, Normalization::Participants)
}

pub fn aggregate_weights_normalized(
    updates: &[Contribution<ParamVector>],
    normalization: Normalization,
) -> Result<ParamVector> {
    let (values, spec) = weighted_sum(updates, normalization)?;
    ParamVector::from_values(spec, values)
}

/// Server pseudo-gradient `-sum_k (n_k / N) (w_k - w_t)` from client deltas.
pub fn aggregate_deltas(deltas: &[Contribution<GradVector>]) -> Result<GradVector> {
    aggregate_deltas_normalized(deltas, Normalization::Participants)
}

pub fn aggregate_deltas_normalized(
    deltas: &[Contribution<GradVector>],
    normalization: Normalization,
) -> Result<GradVector> {
    let (values, spec) = weighted_sum(deltas, normalization)?;
    Ok(GradVector::from_values(spec, values)?.scaled(-1.0))
}
