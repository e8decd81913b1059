use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::config::{EpochRecord, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::numerics::{GradientMap, ParamStore, Tape, Var};

/// Mini-batch Adam with per-epoch dev evaluation and early stopping on dev Recall@5.
///
/// `loss` builds one example's scalar loss and may draw from the shared stream (dropout); `eval` returns dev `(recall@5, instance F1)`.
/// The starting parameters compete as epoch 0, so a run that never improves on them returns
/// them unchanged. Returns the parameters of the best epoch (ties go to the earliest).
pub(crate) fn fit<E, L, V>(
    mut store: ParamStore,
    examples: &[E],
    cfg: &TrainConfig,
    loss: L,
    eval: V,
) -> Result<(ParamStore, TrainHistory)>
where
    L: for<'p> Fn(&mut Tape<'p>, &'p ParamStore, &E, &mut ChaCha8Rng) -> Result<Var>,
    V: Fn(&ParamStore) -> Result<(f64, f64)>,
{
    cfg.validate()?;
    let mut history = TrainHistory::default();
    if cfg.max_epochs == 0 {
        return Ok((store, history));
    }
    if examples.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    (history.initial_dev_r5, history.initial_dev_if1) = eval(&store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut best = (history.initial_dev_r5, store.clone());
    history.best_epoch = Some(0);
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = GradientMap::new();
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut tape = Tape::new();
                let l = loss(&mut tape, &store, &examples[i], &mut rng)?;
                batch_loss += tape.value(l).data()[0];
                grads.merge(tape.backward(l)?);
            }
            if !batch_loss.is_finite() || !grads.max_abs().is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut store, &grads);
            total += batch_loss;
        }
        history.examples_processed += examples.len();
        let (dev_r5, dev_if1) = eval(&store)?;
        history.epochs.push(EpochRecord {
            epoch,
            loss: total / examples.len() as f64,
            dev_r5,
            dev_if1,
            seconds: cfg.record_wall_clock.then(|| start.elapsed().as_secs_f64()),
        });
        if dev_r5 > best.0 {
            best = (dev_r5, store.clone());
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok((best.1, history))
}
