use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::base::{predict_records, train_base};
use super::config::{TrainConfig, EARLY_STOP_K};
use crate::corpus::{Encounter, LabelSpace};
use crate::error::{Error, Result};
use crate::metrics::{mean_instance_f1, mean_recall_at_k};
use crate::model::{BaseConfig, BaseModel};
use crate::preprocess::Vocabulary;
use crate::seed::derive_seed;

/// Uniform sample without replacement of `ceil(fraction * n)` encounters, in input order.
pub fn subsample_train(train: &[Encounter], fraction: f64, seed: u64) -> Result<Vec<Encounter>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let n = train.len();
    let take = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let take = take.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, take).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| train[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FractionRow {
    pub fraction: f64,
    pub n_train: usize,
    pub recall_at_5: f64,
    pub instance_f1: f64,
    pub recall_rel: f64,
    pub instance_f1_rel: f64,
}

/// Trains one base model per fraction of `train` and scores each on `test`.
/// Relative scores are divided by the full-data run.
/// Epoch limit and patience are scaled by `1 / fraction`, so every run gets the same update budget.
#[allow(clippy::too_many_arguments)]
pub fn data_fraction_experiment(
    fractions: &[f64],
    model_cfg: &BaseConfig,
    cfg: &TrainConfig,
    train: &[Encounter],
    dev: &[Encounter],
    test: &[Encounter],
    labels: &LabelSpace,
    vocab: &Vocabulary,
) -> Result<Vec<FractionRow>> {
    if !fractions.contains(&1.0) {
        return Err(Error::Config("fractions must include 1.0 for normalization".into()));
    }
    let mut rows = Vec::new();
    for &f in fractions {
        let subset = subsample_train(train, f, derive_seed(cfg.seed, &format!("fraction:{f}")))?;
        let run_cfg = scaled_budget(cfg, f);
        let init = BaseModel::init(model_cfg, vocab.len(), labels.len(), derive_seed(cfg.seed, "init"))?;
        let (model, _) = train_base(init, &subset, dev, labels, vocab, &run_cfg)?;
        let recs = predict_records(&model, vocab, labels, test, cfg.max_len)?;
        rows.push(FractionRow {
            fraction: f,
            n_train: subset.len(),
            recall_at_5: mean_recall_at_k(&recs, EARLY_STOP_K)?,
            instance_f1: mean_instance_f1(&recs, cfg.decision_threshold)?,
            recall_rel: 0.0,
            instance_f1_rel: 0.0,
        });
    }
    let full = rows.iter().find(|r| r.fraction == 1.0).cloned().expect("checked above");
    let rel = |v: f64, base: f64| if base > 0.0 { v / base } else { 0.0 };
    for r in &mut rows {
        r.recall_rel = rel(r.recall_at_5, full.recall_at_5);
        r.instance_f1_rel = rel(r.instance_f1, full.instance_f1);
    }
    Ok(rows)
}

fn scaled_budget(cfg: &TrainConfig, fraction: f64) -> TrainConfig {
    let scale = |epochs: usize| ((epochs as f64 / fraction) - 1e-9).ceil() as usize;
    TrainConfig {
        max_epochs: scale(cfg.max_epochs),
        patience: scale(cfg.patience),
        ..cfg.clone()
    }
}

pub fn fraction_csv(rows: &[FractionRow]) -> String {
    let mut s = String::from("fraction,n_train,recall_at_5,instance_f1,recall_rel,instance_f1_rel\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            r.fraction, r.n_train, r.recall_at_5, r.instance_f1, r.recall_rel, r.instance_f1_rel
        );
    }
    s
}
