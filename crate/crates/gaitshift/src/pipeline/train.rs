use std::time::Instant;

use log::{debug, info};

use super::config::{lr_at, TrainConfig};
use super::runlog::{EpochRecord, RunLog, Stage};
use crate::data::sample_pk_batch;
use crate::discovery::{
    build_bank, discover_neighborhoods, rank_and_select, CurriculumSchedule, Neighborhood,
};
use crate::encoder::{
    backward_trace, init_params, trace_batch, EncoderParams, ParamGrads, SilhouetteSequence,
};
use crate::error::{GaitError, Result};
use crate::losses::{an_loss, softmax_row, triplet_loss, AnchorTerm};
use crate::numerics::Rng;

// Independent random streams per purpose, all derived from the run seed.
const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;
const RANK_STREAM: u64 = 3;
const SHUFFLE_STREAM: u64 = 4;

/// Parameters every run starts from for a given seed.
pub fn initial_params(cfg: &TrainConfig) -> Result<EncoderParams> {
    init_params(cfg.encoder, &mut Rng::derived(cfg.seed, INIT_STREAM))
}

/// Supervised pretraining with the batch-all triplet loss on p x k batches
/// and plain SGD.
pub fn pretrain_source(
    seqs: &[SilhouetteSequence],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(EncoderParams, RunLog)> {
    cfg.validate()?;
    if seqs.len() != labels.len() {
        return Err(GaitError::param("one label per source sequence required"));
    }
    if cfg.persons < 2 || cfg.samples_per_person < 2 {
        return Err(GaitError::param(
            "triplet pretraining needs >= 2 persons and >= 2 samples per person",
        ));
    }
    let mut params = initial_params(cfg)?;
    let mut log = RunLog::default();
    if cfg.pretrain_epochs == 0 {
        return Ok((params, log));
    }
    // fail early with identity counts if the batch shape cannot be met
    let mut rng = Rng::derived(cfg.seed, BATCH_STREAM);
    sample_pk_batch(
        labels,
        cfg.persons,
        cfg.samples_per_person,
        &mut rng.clone(),
    )?;
    let batch_size = cfg.persons * cfg.samples_per_person;
    let batches = if cfg.batches_per_epoch == 0 {
        seqs.len().div_ceil(batch_size)
    } else {
        cfg.batches_per_epoch
    };

    for epoch in 1..=cfg.pretrain_epochs {
        let started = Instant::now();
        let lr = lr_at(epoch, cfg);
        let mut total = 0.0;
        for _ in 0..batches {
            let batch = sample_pk_batch(labels, cfg.persons, cfg.samples_per_person, &mut rng)?;
            let traces = trace_batch(batch.iter().map(|&i| &seqs[i]).collect::<Vec<_>>(), &params)?;
            let embeddings: Vec<&[f64]> = traces.iter().map(|t| t.embedding().as_slice()).collect();
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let out = triplet_loss(&embeddings, &batch_labels, cfg.margin)?;
            let mut grads = ParamGrads::zeros_like(&params);
            for ((&i, trace), g) in batch.iter().zip(&traces).zip(&out.grads) {
                backward_trace(&seqs[i], trace, g, &params, &mut grads)?;
            }
            params.sgd_step(&grads, lr)?;
            total += out.loss;
        }
        let loss = total / batches as f64;
        debug!("pretrain epoch {epoch}: loss {loss:.6} lr {lr:e}");
        log.epochs.push(EpochRecord {
            stage: Stage::Pretrain,
            round: 0,
            epoch,
            loss,
            lr,
            steps: batches,
            wall_secs: started.elapsed().as_secs_f64(),
        });
    }
    if let (Some(first), Some(last)) = (log.epochs.first(), log.epochs.last()) {
        info!(
            "pretraining done: loss {:.4} -> {:.4} over {} epochs",
            first.loss, last.loss, cfg.pretrain_epochs
        );
    }
    Ok((params, log))
}

/// What a round selected, for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub schedule: CurriculumSchedule,
    pub neighborhoods: Vec<Neighborhood>,
}

#[derive(Debug, Clone)]
pub struct Adaptation {
    pub params: EncoderParams,
    pub log: RunLog,
    pub rounds: Vec<RoundReport>,
}

/// Unsupervised adaptation over `cfg.rounds` curriculum rounds.
///
/// Each round rebuilds the memory bank, freezes k-NN neighborhoods and the
/// entropy-ranked anchor selection, then trains `epochs_per_round` epochs
/// of the anchor-neighborhood loss over shuffled anchor batches. Each step
/// uses the batch-mean loss and writes the fresh embeddings back into the
/// bank with momentum. Target labels are never read.
pub fn adapt_target(
    seqs: &[SilhouetteSequence],
    pretrained: EncoderParams,
    cfg: &TrainConfig,
) -> Result<Adaptation> {
    cfg.validate()?;
    let n = seqs.len();
    if n < cfg.k + 1 {
        return Err(GaitError::param(format!(
            "target set of {n} samples is too small for k={} neighbors",
            cfg.k
        )));
    }
    let mut params = pretrained;
    let mut log = RunLog::default();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut rank_rng = Rng::derived(cfg.seed, RANK_STREAM);
    let mut shuffle_rng = Rng::derived(cfg.seed, SHUFFLE_STREAM);
    let mut schedule = CurriculumSchedule::new(cfg.rounds, cfg.strategy)?;
    let mut epoch = 0;

    for round in 1..=cfg.rounds {
        let mut bank = build_bank(seqs, &params, cfg.bank_momentum)?;
        let hoods = discover_neighborhoods(&bank, cfg.k)?;
        schedule = rank_and_select(
            &bank,
            &schedule,
            round,
            cfg.tau,
            cfg.exclude_self,
            &mut rank_rng,
        )?;
        info!(
            "round {round}/{}: {} of {n} anchors selected ({:?})",
            cfg.rounds,
            schedule.selected.len(),
            cfg.strategy
        );

        // (sample, trained with its full neighborhood?)
        let mut work: Vec<(usize, bool)> = schedule.selected.iter().map(|&i| (i, true)).collect();
        if cfg.unselected_self_terms {
            let mut chosen = vec![false; n];
            for &i in &schedule.selected {
                chosen[i] = true;
            }
            work.extend((0..n).filter(|&i| !chosen[i]).map(|i| (i, false)));
        }

        for _ in 0..cfg.epochs_per_round {
            epoch += 1;
            let started = Instant::now();
            let lr = lr_at(epoch, cfg);
            shuffle_rng.shuffle(&mut work);
            let mut total = 0.0;
            let mut steps = 0;
            for batch in work.chunks(cfg.anchor_batch) {
                let traces = trace_batch(
                    batch.iter().map(|&(i, _)| &seqs[i]).collect::<Vec<_>>(),
                    &params,
                )?;
                let terms = batch
                    .iter()
                    .zip(&traces)
                    .map(|(&(i, full), trace)| {
                        let x = trace.embedding().as_slice();
                        let neighborhood = if !full {
                            vec![i]
                        } else if cfg.exclude_self {
                            hoods[i].neighbors.clone()
                        } else {
                            hoods[i].members()
                        };
                        Ok(AnchorTerm {
                            anchor: x.to_vec(),
                            row: softmax_row(i, x, &bank, cfg.tau, cfg.exclude_self)?,
                            neighborhood,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let out = an_loss(&terms, &bank)?;
                let scale = 1.0 / batch.len() as f64;
                let mut grads = ParamGrads::zeros_like(&params);
                for ((&(i, _), trace), g) in batch.iter().zip(&traces).zip(&out.grads) {
                    let g: Vec<f64> = g.iter().map(|v| v * scale).collect();
                    backward_trace(&seqs[i], trace, &g, &params, &mut grads)?;
                }
                params.sgd_step(&grads, lr)?;
                let ids: Vec<usize> = batch.iter().map(|&(i, _)| i).collect();
                let fresh: Vec<&[f64]> = traces.iter().map(|t| t.embedding().as_slice()).collect();
                bank.update(&ids, &fresh)?;
                total += out.loss * scale;
                steps += 1;
            }
            let loss = total / steps.max(1) as f64;
            debug!("adapt round {round} epoch {epoch}: loss {loss:.6} lr {lr:e}");
            log.epochs.push(EpochRecord {
                stage: Stage::Adapt,
                round,
                epoch,
                loss,
                lr,
                steps,
                wall_secs: started.elapsed().as_secs_f64(),
            });
        }
        rounds.push(RoundReport {
            schedule: schedule.clone(),
            neighborhoods: hoods,
        });
    }
    Ok(Adaptation {
        params,
        log,
        rounds,
    })
}
