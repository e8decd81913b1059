use super::base::dev_scores;
use super::config::{TrainConfig, TrainHistory};
use super::fit::fit;
use crate::corpus::{Encounter, LabelSpace};
use crate::error::{Error, Result};
use crate::metrics::{first_visit_flags, PredictionRecord};
use crate::model::{BaseModel, RerankInput, Reranker, RerankerVars};
use crate::preprocess::Vocabulary;

/// Frozen base outputs for each encounter, computed once.
pub fn reranker_inputs(
    reranker: &Reranker,
    base: &BaseModel,
    vocab: &Vocabulary,
    encounters: &[Encounter],
    max_len: usize,
) -> Result<Vec<RerankInput>> {
    encounters.iter().map(|e| reranker.input(base, vocab, e, max_len)).collect()
}

/// Records ranked by the unclamped reranker scores.
pub fn rerank_records(
    reranker: &Reranker,
    inputs: &[RerankInput],
    encounters: &[Encounter],
    labels: &LabelSpace,
) -> Result<Vec<PredictionRecord>> {
    if inputs.len() != encounters.len() {
        return Err(Error::shape("rerank records", &[inputs.len()], &[encounters.len()]));
    }
    let first = first_visit_flags(encounters);
    inputs
        .iter()
        .zip(encounters)
        .zip(first)
        .map(|((x, e), f)| {
            let (probs, scores) = reranker.predict(x)?;
            PredictionRecord::from_encounter(e, labels, probs, Some(scores), f)
        })
        .collect()
}

/// Optimizes only the reranker; the base model enters through precomputed constants.
#[allow(clippy::too_many_arguments)]
pub fn train_reranker(
    reranker: Reranker,
    base: &BaseModel,
    train: &[Encounter],
    dev: &[Encounter],
    labels: &LabelSpace,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<(Reranker, TrainHistory)> {
    if reranker.n_labels() != labels.len() || base.n_labels() != labels.len() {
        return Err(Error::Contract("reranker, base model and label space disagree".into()));
    }
    let train_x = reranker_inputs(&reranker, base, vocab, train, cfg.max_len)?;
    let targets: Vec<Vec<f64>> = train.iter().map(|e| labels.encode(&e.codes).0).collect();
    let examples: Vec<(&RerankInput, &Vec<f64>)> = train_x.iter().zip(&targets).collect();
    let dev_x = reranker_inputs(&reranker, base, vocab, dev, cfg.max_len)?;
    let heads = reranker.heads;
    let template = reranker.clone();
    let (store, history) = fit(
        reranker.store,
        &examples,
        cfg,
        |tape, store, (x, y), _| {
            let vars = RerankerVars::bind(tape, store, heads)?;
            let out = vars.forward(tape, x)?;
            tape.bce(out.probs, y)
        },
        |store| {
            let mut r = template.clone();
            r.store = store.clone();
            let recs = rerank_records(&r, &dev_x, dev, labels)?;
            dev_scores(&recs, cfg.decision_threshold)
        },
    )?;
    let mut trained = template;
    trained.store = store;
    Ok((trained, history))
}
