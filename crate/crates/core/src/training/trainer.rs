use std::fmt;
use std::ops::ControlFlow;

use rand_chacha::ChaCha8Rng;

use crate::data::{make_token_batch, shuffled_batches, Batch, EmbeddingTable, Example, Label};
use crate::error::{Error, Result};
use crate::layers::{forward, Network, NetworkConfig};
use crate::metrics::{decode_bio, score_labels, SpanScore};
use crate::persistence::{Checkpoint, CheckpointMeta};
use crate::seeds::{rng_for, Stream};

use super::backward::{backward, BackwardOptions};
use super::optim::{optimizer_step, OptimizerState, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: SpanScore,
}

impl fmt::Display for EpochLog {
    /// `epoch train_loss val_precision val_recall val_f1`, tab-separated.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.train_loss, self.val.precision, self.val.recall, self.val.f1
        )
    }
}

pub const LOG_HEADER: &str = "epoch\ttrain_loss\tval_precision\tval_recall\tval_f1";

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the highest validation F1 (the last
    /// epoch when there is no validation set).
    pub best: Checkpoint,
    /// State after the final epoch, including optimizer moments.
    pub last: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Predicted label sequences for unlabelled sentences.
pub fn predict(
    net: &Network<f32>,
    cfg: &NetworkConfig,
    sentences: &[Vec<String>],
    table: &EmbeddingTable,
    batch_size: usize,
) -> Result<Vec<Vec<Label>>> {
    let mut out = Vec::with_capacity(sentences.len());
    for chunk in sentences.chunks(batch_size.max(1)) {
        let batch = make_token_batch(chunk, table)?;
        out.extend(predict_batch(net, cfg, &batch)?);
    }
    Ok(out)
}

pub fn predict_batch(net: &Network<f32>, cfg: &NetworkConfig, batch: &Batch) -> Result<Vec<Vec<Label>>> {
    let (prob, _) = forward(&batch.embeddings, Some(&batch.mask), net, cfg)?;
    decode_bio(&prob, &batch.mask)
}

/// Exact-match span scores of the network on labelled sentences.
pub fn evaluate(
    net: &Network<f32>,
    cfg: &NetworkConfig,
    examples: &[Example],
    table: &EmbeddingTable,
    batch_size: usize,
) -> Result<SpanScore> {
    let sentences: Vec<Vec<String>> = examples.iter().map(|e| e.tokens.clone()).collect();
    let pred = predict(net, cfg, &sentences, table, batch_size)?;
    let gold: Vec<&[Label]> = examples.iter().map(|e| e.labels.as_slice()).collect();
    score_labels(&gold, &pred)
}

/// Mean loss and one optimizer update over a batch.
pub fn train_step(
    net: &mut Network<f32>,
    net_cfg: &NetworkConfig,
    batch: &Batch,
    state: &mut OptimizerState<f32>,
    cfg: &TrainConfig,
) -> Result<f64> {
    let (_, trace) = forward(&batch.embeddings, Some(&batch.mask), net, net_cfg)?;
    let opts = BackwardOptions {
        normalize_by_steps: cfg.normalize_by_steps,
        ..BackwardOptions::default()
    };
    let out = backward(&trace, &batch.labels, net, net_cfg, opts)?;
    if !out.loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {}", out.loss)));
    }
    optimizer_step(net, &out.grads, state, cfg)?;
    Ok(out.loss as f64)
}

/// Mini-batch training with per-epoch validation.
///
/// The network is initialised from the seed unless `resume` supplies a
/// checkpoint, in which case training continues after its epoch. Each
/// epoch's shuffle depends only on `(seed, epoch)`, so a resumed run
/// repeats the uninterrupted one.
pub fn train(
    train_set: &[Example],
    val_set: &[Example],
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    net_cfg: &NetworkConfig,
    resume: Option<Checkpoint>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    train_until(train_set, val_set, table, cfg, net_cfg, resume, |e| {
        on_epoch(e);
        ControlFlow::Continue(())
    })
}

/// [`train`] with a callback that may end training after any epoch.
pub fn train_until(
    train_set: &[Example],
    val_set: &[Example],
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    net_cfg: &NetworkConfig,
    resume: Option<Checkpoint>,
    mut on_epoch: impl FnMut(&EpochLog) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    net_cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    if net_cfg.embedding_dim != table.dim() {
        return Err(Error::Config(format!(
            "embedding_dim {} does not match the embedding table ({})",
            net_cfg.embedding_dim,
            table.dim()
        )));
    }
    let snapshot = |net: &Network<f32>, state: Option<&OptimizerState<f32>>, epoch: usize, f1: f64| Checkpoint {
        network_config: net_cfg.clone(),
        train_config: cfg.clone(),
        meta: CheckpointMeta {
            epoch,
            val_f1: f1,
            seed: cfg.seed,
        },
        network: net.clone(),
        optimizer: state.cloned(),
    };

    let (mut net, mut state, start, mut best) = match resume {
        Some(ck) => {
            if ck.network_config != *net_cfg {
                return Err(Error::Config("checkpoint network config differs from the run's".into()));
            }
            let state = ck.optimizer.clone().unwrap_or_else(|| OptimizerState::new(&ck.network));
            (ck.network.clone(), state, ck.meta.epoch, Some(ck))
        }
        None => {
            let net = Network::init(net_cfg, &mut rng_for(cfg.seed, Stream::Init))?;
            let state = OptimizerState::new(&net);
            (net, state, 0, None)
        }
    };

    let mut log = Vec::new();
    for epoch in start + 1..=cfg.epochs {
        let mut rng: ChaCha8Rng = rng_for(cfg.seed, Stream::Shuffle(epoch as u64));
        let batches = shuffled_batches(train_set, table, cfg.batch_size, &mut rng)?;
        let mut total = 0.0;
        for batch in &batches {
            total += train_step(&mut net, net_cfg, batch, &mut state, cfg)?;
        }
        let val = if val_set.is_empty() {
            score_labels::<Vec<Label>, Vec<Label>>(&[], &[])?
        } else {
            evaluate(&net, net_cfg, val_set, table, cfg.batch_size.max(32))?
        };
        let entry = EpochLog {
            epoch,
            train_loss: total / batches.len() as f64,
            val,
        };
        let flow = on_epoch(&entry);
        let improved = match &best {
            None => true,
            Some(b) => val_set.is_empty() || val.f1 > b.meta.val_f1,
        };
        if improved {
            best = Some(snapshot(&net, Some(&state), epoch, val.f1));
        }
        log.push(entry);
        if flow.is_break() {
            break;
        }
    }
    let last_epoch = log.last().map_or(start, |l| l.epoch);
    let last_f1 = log.last().map_or(best.as_ref().map_or(0.0, |b| b.meta.val_f1), |l| l.val.f1);
    let last = snapshot(&net, Some(&state), last_epoch, last_f1);
    Ok(TrainOutcome {
        best: best.unwrap_or_else(|| last.clone()),
        last,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy::{generate_corpus, generate_embeddings};
    use crate::data::parse_embeddings;
    use crate::training::OptimizerKind;

    fn setup(n: usize) -> (Vec<Example>, EmbeddingTable, NetworkConfig) {
        let corpus = generate_corpus(n, 11);
        let table = parse_embeddings(&generate_embeddings(6, 3)).unwrap();
        let cfg = NetworkConfig {
            channels: 8,
            embedding_dim: 6,
            kernel: 3,
            n_spiking_conv: 1,
            time_steps: 3,
            ..NetworkConfig::default()
        };
        (corpus, table, cfg)
    }

    fn quiet(_: &EpochLog) {}

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let (corpus, table, net_cfg) = setup(10);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            ..TrainConfig::default()
        };
        let out = train(&corpus, &[], &table, &cfg, &net_cfg, None, quiet).unwrap();
        let init = Network::<f32>::init(&net_cfg, &mut rng_for(cfg.seed, Stream::Init)).unwrap();
        assert_eq!(out.last.network, init);
    }

    #[test]
    fn loss_mostly_decreases_on_small_set() {
        let (corpus, table, net_cfg) = setup(10);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            epochs: 20,
            batch_size: 10,
            ..TrainConfig::default()
        };
        let out = train(&corpus, &[], &table, &cfg, &net_cfg, None, quiet).unwrap();
        let losses: Vec<f64> = out.log.iter().map(|l| l.train_loss).collect();
        let down = losses.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(down as f64 >= 0.8 * (losses.len() - 1) as f64, "{losses:?}");
        assert!(losses.last().unwrap() < &losses[0]);
    }

    #[test]
    fn same_seed_same_losses() {
        let (corpus, table, net_cfg) = setup(12);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let a = train(&corpus[..8], &corpus[8..], &table, &cfg, &net_cfg, None, quiet).unwrap();
        let b = train(&corpus[..8], &corpus[8..], &table, &cfg, &net_cfg, None, quiet).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.best.network, b.best.network);
    }

    #[test]
    fn resumed_run_matches_uninterrupted() {
        let (corpus, table, net_cfg) = setup(12);
        for optimizer in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let full_cfg = TrainConfig {
                learning_rate: 1e-3,
                epochs: 4,
                batch_size: 5,
                optimizer,
                ..TrainConfig::default()
            };
            let full = train(&corpus, &[], &table, &full_cfg, &net_cfg, None, quiet).unwrap();
            let half_cfg = TrainConfig { epochs: 2, ..full_cfg.clone() };
            let half = train(&corpus, &[], &table, &half_cfg, &net_cfg, None, quiet).unwrap();
            let bytes = crate::persistence::to_bytes(&half.last).unwrap();
            let ck = crate::persistence::from_bytes(&bytes).unwrap();
            let rest = train(&corpus, &[], &table, &full_cfg, &net_cfg, Some(ck), quiet).unwrap();
            let joined: Vec<f64> = half.log.iter().chain(&rest.log).map(|l| l.train_loss).collect();
            let straight: Vec<f64> = full.log.iter().map(|l| l.train_loss).collect();
            assert_eq!(joined, straight);
            assert_eq!(rest.last.network, full.last.network);
        }
    }

    #[test]
    fn stopping_early_keeps_the_prefix() {
        let (corpus, table, net_cfg) = setup(12);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 4,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let full = train(&corpus[..8], &corpus[8..], &table, &cfg, &net_cfg, None, quiet).unwrap();
        let cut = train_until(&corpus[..8], &corpus[8..], &table, &cfg, &net_cfg, None, |e| {
            if e.epoch == 2 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
        assert_eq!(cut.log, full.log[..2]);
        assert_eq!(cut.last.meta.epoch, 2);
    }

    #[test]
    fn log_line_format() {
        let (corpus, table, net_cfg) = setup(6);
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let out = train(&corpus[..4], &corpus[4..], &table, &cfg, &net_cfg, None, quiet).unwrap();
        let line = out.log[0].to_string();
        assert_eq!(line.split('\t').count(), 5);
        assert!(line.starts_with("1\t"));
    }

    #[test]
    fn embedding_dim_mismatch_is_a_config_error() {
        let (corpus, table, mut net_cfg) = setup(4);
        net_cfg.embedding_dim = 7;
        let err = train(&corpus, &[], &table, &TrainConfig::default(), &net_cfg, None, quiet).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
