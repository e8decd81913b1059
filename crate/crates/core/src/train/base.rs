use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{TrainConfig, TrainHistory, EARLY_STOP_K};
use super::fit::fit;
use crate::corpus::{Encounter, LabelSpace};
use crate::error::{Error, Result};
use crate::metrics::{first_visit_flags, mean_instance_f1, mean_recall_at_k, PredictionRecord};
use crate::model::{BaseModel, BaseVars};
use crate::numerics::{sigmoid, Tensor};
use crate::preprocess::{tokenize, Vocabulary, PAD};

struct Example {
    ids: Vec<usize>,
    targets: Vec<f64>,
}

/// Probabilities for a note; a note with no usable token gets the output bias alone.
pub fn predict_note(model: &BaseModel, vocab: &Vocabulary, text: &str, max_len: usize) -> Result<Vec<f64>> {
    let note = tokenize(text, vocab, max_len);
    match model.predict(&note.ids) {
        Err(Error::EmptySource) => Ok(model
            .store
            .by_name("out.b")
            .expect("validated at construction")
            .data()
            .iter()
            .map(|&b| sigmoid(b))
            .collect()),
        other => other,
    }
}

pub fn predict_records(
    model: &BaseModel,
    vocab: &Vocabulary,
    labels: &LabelSpace,
    encounters: &[Encounter],
    max_len: usize,
) -> Result<Vec<PredictionRecord>> {
    let first = first_visit_flags(encounters);
    encounters
        .iter()
        .zip(first)
        .map(|(e, f)| {
            let probs = predict_note(model, vocab, &e.text, max_len)?;
            PredictionRecord::from_encounter(e, labels, probs, None, f)
        })
        .collect()
}

pub(crate) fn dev_scores(records: &[PredictionRecord], threshold: f64) -> Result<(f64, f64)> {
    Ok((
        mean_recall_at_k(records, EARLY_STOP_K)?,
        mean_instance_f1(records, threshold)?,
    ))
}

/// Inverted dropout: each entry is 0 with probability `p`, else `1 / (1 - p)`.
fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let keep = 1.0 / (1.0 - p);
    let data = (0..rows * cols).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
    Tensor::new(vec![rows, cols], data).expect("sized above")
}

/// Trains every unfrozen base parameter end to end on binary cross-entropy.
pub fn train_base(
    model: BaseModel,
    train: &[Encounter],
    dev: &[Encounter],
    labels: &LabelSpace,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<(BaseModel, TrainHistory)> {
    if model.n_labels() != labels.len() || model.vocab_size() != vocab.len() {
        return Err(Error::Contract("model does not match the label space or vocabulary".into()));
    }
    let examples: Vec<Example> = train
        .iter()
        .map(|e| Example {
            ids: tokenize(&e.text, vocab, cfg.max_len).ids,
            targets: labels.encode(&e.codes).0,
        })
        .filter(|ex| ex.ids.iter().any(|&i| i != PAD))
        .collect();
    if examples.is_empty() && !train.is_empty() {
        return Err(Error::Contract("every training note is empty".into()));
    }
    let arch = model.arch;
    let d_embed = model.store.by_name("emb").expect("validated at construction").shape()[1];
    let (store, history) = fit(
        model.store,
        &examples,
        cfg,
        |tape, store, ex, rng| {
            let vars = BaseVars::bind(tape, store, arch)?;
            let mask = (cfg.dropout > 0.0).then(|| dropout_mask(ex.ids.len(), d_embed, cfg.dropout, rng));
            let (p, _) = vars.forward_masked(tape, &ex.ids, mask)?;
            tape.bce(p, &ex.targets)
        },
        |store| {
            let m = BaseModel::from_store(arch, store.clone())?;
            let recs = predict_records(&m, vocab, labels, dev, cfg.max_len)?;
            dev_scores(&recs, cfg.decision_threshold)
        },
    )?;
    Ok((BaseModel::from_store(arch, store)?, history))
}
