use std::collections::VecDeque;

use super::{
    batch_gradient, check_inputs, streams, EpochCloser, TrainConfig, TrainLog, TrainResult, INITIAL_THRESHOLD,
};
use crate::data::Dataset;
use crate::error::Result;
use crate::model::{init_params, HainConfig, HainParams};
use crate::numerics::Rng;

/// Single-process simulation of asynchronous parameter-server SGD.
///
/// Worker `w` owns the rows `i` with `i % workers == w` and reshuffles them
/// every epoch. Updates are taken round-robin over workers; update `t` uses a
/// gradient computed against the parameter version from `delay` updates ago,
/// where `delay` is drawn uniformly from `0..=min(max_staleness, t)` on a
/// dedicated stream. The server applies `w <- w - lr * grad` with the
/// regularizer gradient at unit weight.
pub fn ps_train(
    data: &Dataset,
    validation: Option<&Dataset>,
    model: &HainConfig,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    check_inputs(data, model, cfg)?;
    let params = init_params(model, &Rng::new(model.seed))?;
    ps_train_from(params, data, validation, cfg)
}

pub fn ps_train_from(
    params: HainParams,
    data: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    check_inputs(data, params.config(), cfg)?;
    let (w, s) = (cfg.workers, cfg.max_staleness);
    let root = Rng::new(cfg.seed);
    let mut staleness_rng = root.derive(streams::STALENESS);
    let mut closer = EpochCloser {
        cfg,
        root: root.clone(),
        validation,
        threshold: INITIAL_THRESHOLD,
    };
    let shards: Vec<Vec<usize>> = (0..w).map(|k| (k..data.n_samples()).step_by(w).collect()).collect();

    // Newest version at the back.
    let mut history: VecDeque<HainParams> = VecDeque::from([params]);
    let mut step = 0usize;
    let mut log = TrainLog::default();
    let mut selection = None;
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let queues: Vec<Vec<Vec<usize>>> = shards
            .iter()
            .enumerate()
            .map(|(k, shard)| {
                let mut order = shard.clone();
                root.derive(streams::shuffle(epoch, k)).shuffle(&mut order);
                order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect()
            })
            .collect();
        let schedule = round_robin(&queues);

        let mut losses = Vec::with_capacity(data.n_samples());
        let mut alpha_sum = vec![0.0; data.n_features()];
        for batch in schedule {
            let delay = if s == 0 {
                0
            } else {
                staleness_rng.below(s.min(step) + 1)
            };
            let snapshot = &history[history.len() - 1 - delay.min(history.len() - 1)];
            let grads = batch_gradient(
                snapshot,
                data,
                batch,
                &cfg.weights,
                &mut losses,
                &mut alpha_sum,
                epoch + 1,
            )?;
            let mut next = history.back().expect("history is never empty").clone();
            super::apply_step(&mut next, grads, lr, cfg);
            history.push_back(next);
            while history.len() > s + 1 {
                history.pop_front();
            }
            step += 1;
        }
        let current = history.back().expect("history is never empty");
        let (record, state) = closer.close(epoch, current, &losses, &alpha_sum)?;
        log.records.push(record);
        selection = Some(state);
    }
    let params = history.pop_back().expect("history is never empty");
    let selection = match selection {
        Some(sel) => sel,
        None => super::untrained_selection(&params, data, cfg)?,
    };
    Ok(TrainResult { params, log, selection })
}

/// Interleaves worker queues: one batch from each worker with work left, in
/// worker order, until all are drained.
pub(crate) fn round_robin(queues: &[Vec<Vec<usize>>]) -> Vec<&[usize]> {
    let longest = queues.iter().map(Vec::len).max().unwrap_or(0);
    (0..longest)
        .flat_map(|round| queues.iter().filter_map(move |q| q.get(round).map(Vec::as_slice)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_drains_uneven_queues() {
        let q = vec![
            vec![vec![0], vec![1], vec![2]],
            vec![vec![10]],
            vec![vec![20], vec![21]],
        ];
        let order: Vec<usize> = round_robin(&q).iter().map(|b| b[0]).collect();
        assert_eq!(order, vec![0, 10, 20, 1, 21, 2]);
    }
}
