use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::MmanModel;
use crate::tensor::Tensor;
use crate::text::{CategorySet, LabeledQuery};

/// Offset between the initialization seed and the shuffling stream.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-example loss of each epoch.
    pub loss_history: Vec<f64>,
    /// `(epoch, micro-F1)` on the held-out set, when requested.
    pub eval_history: Vec<(usize, f64)>,
}

/// Splits `batch` into at most `workers` contiguous chunks, computes each
/// chunk's gradient (scaled by `1/|batch|`), and adds them into the model's
/// gradient buffers in chunk order. Returns the batch mean loss.
///
/// With one worker the chunk is the whole batch, which is the determinism
/// reference; other worker counts differ only by summation order.
pub fn batch_step(model: &mut MmanModel, cats: &CategorySet, batch: &[&LabeledQuery], workers: usize) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let scale = 1.0 / batch.len() as f64;
    let chunk = batch.len().div_ceil(workers.max(1));
    let results: Vec<Result<(f64, Vec<Tensor>)>> = if chunk >= batch.len() {
        vec![model.batch_gradients(cats, batch, scale)]
    } else {
        let shared: &MmanModel = model;
        std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .chunks(chunk)
                .map(|part| s.spawn(move || shared.batch_gradients(cats, part, scale)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        })
    };
    let mut loss = 0.0;
    for r in results {
        let (l, grads) = r?;
        loss += l;
        model.params_mut().add_grads(&grads)?;
    }
    Ok(loss)
}

/// Mini-batch Adam over shuffled epochs.
///
/// `on_epoch(epoch, mean_loss)` runs after every epoch. When `eval` is given
/// and `cfg.eval_every > 0`, micro-F1 on it is recorded at that cadence.
pub fn train(
    model: &mut MmanModel,
    cats: &CategorySet,
    data: &[LabeledQuery],
    cfg: &TrainConfig,
    eval: Option<(&[LabeledQuery], f64)>,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(AdamState, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_cats = model.config().num_categories;
    if cats.len() != n_cats {
        return Err(Error::LabelCount {
            expected: n_cats,
            found: cats.len(),
        });
    }
    if let Some(bad) = data.iter().find(|ex| ex.labels.len() != n_cats) {
        return Err(Error::LabelCount {
            expected: n_cats,
            found: bad.labels.len(),
        });
    }

    let mut adam = AdamState::from_config(model.params(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport {
        loss_history: Vec::with_capacity(cfg.epochs),
        eval_history: Vec::new(),
    };
    model.params_mut().zero_grads();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&LabeledQuery> = idx.iter().map(|&i| &data[i]).collect();
            let loss = batch_step(model, cats, &batch, cfg.workers)?;
            weighted += loss * batch.len() as f64;
            adam.step(model.params_mut())?;
        }
        let mean = weighted / data.len() as f64;
        report.loss_history.push(mean);
        on_epoch(epoch, mean);
        if let Some((held_out, threshold)) = eval {
            if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 {
                let m = evaluate(model, cats, held_out, threshold)?;
                report.eval_history.push((epoch, m.micro.f1));
            }
        }
    }
    Ok((adam, report))
}
