//! Evaluation of a parameter store over instance sets: rank every item for
//! each prefix, aggregate precision@K and MRR@K.

use std::time::Instant;

use crate::data::pipeline::Instance;
use crate::error::Result;
use crate::metrics::{rank_of_target, EvalReport};
use crate::model::{predict_scores, ModelConfig};
use crate::parallel::{map_collect, map_collect_seq};
use crate::scalar::Scalar;
use crate::tensor::store::TensorStore;

fn collect_report(ranks: Vec<Result<usize>>, ks: &[usize], started: Instant) -> Result<EvalReport> {
    let ranks = ranks.into_iter().collect::<Result<Vec<_>>>()?;
    let mut report = EvalReport::from_ranks(&ranks, ks)?;
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Evaluate over instances, fanning out across them when the `parallel`
/// feature is enabled. Dropout is always disabled here.
pub fn evaluate<S: Scalar>(
    store: &TensorStore<S>,
    cfg: &ModelConfig,
    instances: &[Instance],
    ks: &[usize],
) -> Result<EvalReport> {
    let started = Instant::now();
    let ranks = map_collect(instances, |inst| {
        let scores = predict_scores(store, cfg, &inst.prefix)?;
        rank_of_target(&scores, inst.label)
    });
    collect_report(ranks, ks, started)
}

/// Sequential twin of [`evaluate`], for benchmarking the two execution
/// modes against each other in one build.
pub fn evaluate_seq<S: Scalar>(
    store: &TensorStore<S>,
    cfg: &ModelConfig,
    instances: &[Instance],
    ks: &[usize],
) -> Result<EvalReport> {
    let started = Instant::now();
    let ranks = map_collect_seq(instances, |inst| {
        let scores = predict_scores(store, cfg, &inst.prefix)?;
        rank_of_target(&scores, inst.label)
    });
    collect_report(ranks, ks, started)
}
