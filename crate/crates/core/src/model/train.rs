use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::GspnConfig;
use super::forward::{build_forward, check_possible, GraphBatch};
use super::params::{GspnParams, ModelVars};
use crate::autodiff::{adam_step, grad, AdamState, BoundParams, ParamStore, Tape, Var};
use crate::error::{GspnError, Result};
use crate::graph::{AttributeSchema, Dataset, Graph};
use crate::sampling::{seeded, SeededRng};

/// Graphs evaluated together when no gradient is needed.
const EVAL_CHUNK: usize = 256;

/// Fraction of the training graphs held out for early stopping.
pub const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the evaluation before any update.
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Splits `0..n` into shuffled training and validation indices.
pub(crate) fn split_indices(n: usize, rng: &mut SeededRng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    if n < 2 {
        return (idx.clone(), idx);
    }
    let n_val = ((n as f64 * VALIDATION_FRACTION).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    (idx, val)
}

pub(crate) struct LoopSettings {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

/// Mini-batch Adam ascent with early stopping on a validation score.
///
/// `objective` returns the scalar to maximize for a batch of training
/// indices; `evaluate` returns `(train metric, validation score)` and the
/// parameters with the best validation score are returned.
pub(crate) fn optimize<O, E>(
    store: &mut ParamStore,
    train: &[usize],
    settings: &LoopSettings,
    rng: &mut SeededRng,
    objective: O,
    mut evaluate: E,
) -> Result<TrainHistory>
where
    O: Fn(&mut Tape, &BoundParams, &[usize]) -> Result<Var>,
    E: FnMut(&ParamStore) -> Result<(f64, f64)>,
{
    let mut adam = AdamState::new(settings.learning_rate);
    let (t0, v0) = evaluate(store)?;
    let mut history = TrainHistory {
        epochs: vec![EpochRecord {
            epoch: 0,
            train: t0,
            validation: v0,
        }],
        ..Default::default()
    };
    let mut best = (v0, store.clone());
    let mut order = train.to_vec();
    let mut since_best = 0;
    for epoch in 1..=settings.epochs {
        order.shuffle(rng);
        for batch in order.chunks(settings.batch_size) {
            let (value, grads) = grad(|tape, bound| objective(tape, bound, batch), store)?;
            if !value.is_finite()
                || grads
                    .values()
                    .any(|g| g.data().iter().any(|x| !x.is_finite()))
            {
                log::warn!(
                    "skipping a batch with non-finite objective or gradient at epoch {epoch}"
                );
                continue;
            }
            adam_step(store, &grads, &mut adam);
        }
        let (t, v) = evaluate(store)?;
        log::debug!("epoch {epoch}: train {t:.6}, validation {v:.6}");
        history.epochs.push(EpochRecord {
            epoch,
            train: t,
            validation: v,
        });
        if v > best.0 {
            best = (v, store.clone());
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= settings.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    *store = best.1;
    Ok(history)
}

/// Sum of per-vertex pseudo log-likelihood terms and the number of vertices.
pub fn total_pll(
    schema: &AttributeSchema,
    graphs: &[&Graph],
    params: &GspnParams,
    cfg: &GspnConfig,
) -> Result<(f64, usize)> {
    let parts = graphs
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| -> Result<(f64, usize)> {
            let batch = GraphBatch::new(schema, chunk);
            let mut tape = Tape::new();
            let vars = params.to_vars(&mut tape);
            let fwd = build_forward(&mut tape, &batch, &vars, cfg)?;
            check_possible(&tape, &batch, &vars, &fwd)?;
            Ok((
                tape.value(fwd.vertex_ll).data().iter().sum(),
                batch.num_vertices(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    // reduced in chunk order so the result does not depend on scheduling
    Ok(parts
        .into_iter()
        .fold((0.0, 0), |(s, n), (ps, pn)| (s + ps, n + pn)))
}

/// Mean per-vertex pseudo log-likelihood of `graphs`.
pub fn mean_pll(
    schema: &AttributeSchema,
    graphs: &[&Graph],
    params: &GspnParams,
    cfg: &GspnConfig,
) -> Result<f64> {
    let (s, n) = total_pll(schema, graphs, params, cfg)?;
    if n == 0 {
        return Err(GspnError::Empty("no vertices to evaluate".into()));
    }
    Ok(s / n as f64)
}

/// Mean per-vertex pseudo log-likelihood of a batch, on the tape.
pub(crate) fn batch_objective(
    tape: &mut Tape,
    vars: &ModelVars,
    batch: &GraphBatch,
    cfg: &GspnConfig,
) -> Result<Var> {
    let fwd = build_forward(tape, batch, vars, cfg)?;
    let total = tape.sum(fwd.vertex_ll);
    Ok(tape.scale(total, 1.0 / batch.num_vertices().max(1) as f64))
}

/// Rejects datasets that carry no learning signal.
pub(crate) fn check_trainable(ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(GspnError::Empty("dataset has no graphs".into()));
    }
    let any_obs = ds
        .graphs()
        .iter()
        .any(|g| (0..g.num_vertices()).any(|v| g.mask_row(v).iter().any(|o| *o)));
    if !any_obs {
        return Err(GspnError::Empty(
            "every attribute of the dataset is masked; nothing to learn from".into(),
        ));
    }
    Ok(())
}

/// Maximizes the mean per-vertex pseudo log-likelihood with Adam.
///
/// 10% of the graphs are held out for early stopping; the parameters with
/// the best validation pseudo log-likelihood are returned.
pub fn train_unsupervised(ds: &Dataset, cfg: &GspnConfig) -> Result<(GspnParams, TrainHistory)> {
    cfg.validate()?;
    check_trainable(ds)?;
    let schema = ds.schema();
    let mut rng = seeded(cfg.seed);
    let (train, val) = split_indices(ds.len(), &mut rng);
    let first: Vec<&Graph> = train
        .iter()
        .take(cfg.batch_size)
        .map(|&i| &ds.graphs()[i])
        .collect();
    let init = GspnParams::initialize(schema, cfg, &first, &mut rng)?;
    let mut store = init.to_store()?;

    // batches are rebuilt from indices; evidence layout is cheap next to the tape
    let graphs = ds.graphs();
    let train_graphs: Vec<&Graph> = train.iter().map(|&i| &graphs[i]).collect();
    let val_graphs: Vec<&Graph> = val.iter().map(|&i| &graphs[i]).collect();
    let settings = LoopSettings {
        epochs: cfg.epochs,
        patience: cfg.patience,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
    };
    let history = optimize(
        &mut store,
        &train,
        &settings,
        &mut rng,
        |tape, bound, batch| {
            let gs: Vec<&Graph> = batch.iter().map(|&i| &graphs[i]).collect();
            let b = GraphBatch::new(schema, &gs);
            let vars = ModelVars::from_bound(bound, schema, cfg.layers);
            batch_objective(tape, &vars, &b, cfg)
        },
        |store| {
            let p = GspnParams::from_store(store, schema, cfg.layers)?;
            Ok((
                mean_pll(schema, &train_graphs, &p, cfg)?,
                mean_pll(schema, &val_graphs, &p, cfg)?,
            ))
        },
    )?;
    Ok((GspnParams::from_store(&store, schema, cfg.layers)?, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synth_community_graphs;

    #[test]
    fn split_keeps_all_indices() {
        let (t, v) = split_indices(20, &mut seeded(0));
        assert_eq!(v.len(), 2);
        let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn training_improves_and_is_deterministic() {
        let ds = synth_community_graphs(20, 12, 3, 0.3, 5).unwrap();
        let cfg = GspnConfig {
            layers: 2,
            states: 3,
            epochs: 8,
            batch_size: 4,
            learning_rate: 0.05,
            ..Default::default()
        };
        let (p1, h1) = train_unsupervised(&ds, &cfg).unwrap();
        let (p2, h2) = train_unsupervised(&ds, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
        let first = &h1.epochs[0];
        let last = h1.epochs.last().unwrap();
        assert!(last.train > first.train, "{h1:?}");
    }

    #[test]
    fn all_masked_dataset_is_rejected() {
        let ds = synth_community_graphs(3, 4, 2, 0.1, 1).unwrap();
        let graphs = ds
            .graphs()
            .iter()
            .map(|g| g.remasked(vec![false; g.num_vertices() * g.num_attributes()]))
            .collect();
        let ds = ds.with_graphs(graphs).unwrap();
        assert!(train_unsupervised(&ds, &GspnConfig::default()).is_err());
    }
}
