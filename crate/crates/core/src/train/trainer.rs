//! The fine-tuning loop: schedule events, accumulated steps, evaluation.

use std::collections::BTreeMap;

use super::config::TrainConfig;
use super::metrics::MetricsRecord;
use super::optimizer::{grad_clip, optimizer_step, OptimizerState};
use crate::data::{evaluate, BatchSampler, Corpus, Split};
use crate::error::{Error, Result};
use crate::model::GptModel;
use crate::norm::{apply_event, collect_sigma, observe_sigma, NormAction, NormMode, SigmaStats};
use crate::numerics::{Scalar, Tensor};
use crate::schedule::RemovalSchedule;

/// Observer for a running loop; every method defaults to doing nothing.
pub trait TrainHooks<F: Scalar> {
    fn on_record(&mut self, _record: &MetricsRecord) -> Result<()> {
        Ok(())
    }

    /// Called after each validation pass with the evaluated model.
    fn on_eval(&mut self, _step: u64, _model: &GptModel<F>, _is_best: bool) -> Result<()> {
        Ok(())
    }
}

pub struct NoHooks;

impl<F: Scalar> TrainHooks<F> for NoHooks {}

#[derive(Clone, Debug)]
pub struct BestSnapshot<F> {
    pub step: u64,
    pub val_loss: f64,
    pub model: GptModel<F>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<F> {
    pub metrics: Vec<MetricsRecord>,
    /// Lowest validation loss among evaluations at or after the last event.
    pub best: Option<BestSnapshot<F>>,
    pub final_val_loss: Option<f64>,
    pub stats: Option<SigmaStats>,
}

/// The first `n` consecutive training windows of `seq_len` tokens.
pub fn sigma_prompts(corpus: &Corpus, n: usize, seq_len: usize) -> Vec<Vec<u16>> {
    let stream = corpus.split(Split::Train);
    stream
        .chunks_exact(seq_len)
        .take(n)
        .map(<[u16]>::to_vec)
        .collect()
}

/// Fails early if any event cannot be applied, by replaying the schedule on
/// a copy of the norm states.
fn dry_run<F: Scalar>(model: &GptModel<F>, schedule: &RemovalSchedule, stats: &SigmaStats) -> Result<()> {
    let mut probe = model.clone();
    for e in schedule.events() {
        apply_event(&mut probe, e.site, e.action, stats).map_err(|err| match err {
            Error::State { site, detail } => Error::Precondition(format!(
                "schedule event `{}` at step {} cannot be applied: {site}: {detail}",
                e.label(),
                e.step
            )),
            other => other,
        })?;
    }
    Ok(())
}

/// Trains `model` in place for `cfg.total_steps` steps, applying the events
/// of `schedule` before the update of their step.
///
/// Statistics for freezing are taken from `stats` when given, otherwise
/// collected from `model` before the first step.
pub fn train_loop<F: Scalar>(
    model: &mut GptModel<F>,
    corpus: &Corpus,
    schedule: &RemovalSchedule,
    stats: Option<SigmaStats>,
    cfg: &TrainConfig,
    hooks: &mut dyn TrainHooks<F>,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    let needs_stats = schedule.events().iter().any(|e| {
        matches!(e.action, NormAction::FreezeMain | NormAction::SetInterpolation(_))
    });
    let prompts = if needs_stats && (stats.is_none() || cfg.recollect_sigma) {
        let p = sigma_prompts(corpus, cfg.sigma_prompts, cfg.seq_len);
        if p.len() < cfg.sigma_prompts {
            return Err(Error::Argument(format!(
                "training split holds {} sigma prompts of {} tokens, {} needed",
                p.len(),
                cfg.seq_len,
                cfg.sigma_prompts
            )));
        }
        p
    } else {
        Vec::new()
    };
    let mut stats = match stats {
        Some(s) => Some(s),
        None if needs_stats => Some(collect_sigma(model, &prompts, cfg.sigma_prompts)?),
        None => None,
    };
    if let Some(s) = &stats {
        dry_run(model, schedule, s)?;
    }

    let mut sampler = BatchSampler::new(corpus, Split::Train, cfg.seq_len, cfg.micro_batch_size, cfg.seed)?;
    let mut opt = OptimizerState::new();
    let mut metrics: Vec<MetricsRecord> = Vec::with_capacity(cfg.total_steps as usize);
    let mut best: Option<BestSnapshot<F>> = None;
    let mut final_val = None;
    let mut above = 0u64;
    let mut recent: Vec<String> = Vec::new();
    let eligible_from = schedule.last_step().unwrap_or(0);

    for step in 0..cfg.total_steps {
        let events = schedule.events_at(step);
        if !events.is_empty() {
            if cfg.recollect_sigma && events.iter().any(|e| e.action == NormAction::FreezeMain) {
                let fresh = observe_sigma(model, &prompts, cfg.sigma_prompts)?;
                stats.get_or_insert_with(SigmaStats::default).update(&fresh);
            }
            let st = stats.as_ref().expect("stats exist whenever events do");
            for e in events {
                apply_event(model, e.site, e.action, st)?;
            }
            recent = events.iter().map(|e| e.label()).collect();
            above = 0;
        }

        let mut acc: Option<BTreeMap<String, Tensor<F>>> = None;
        let mut loss_sum = 0.0;
        for _ in 0..cfg.grad_accum {
            let b = sampler.next_batch(corpus);
            let (loss, grads) = model.loss_and_grads(&b.as_ref(), &b.targets)?;
            loss_sum += loss;
            match &mut acc {
                None => acc = Some(grads),
                Some(a) => {
                    for (k, g) in grads {
                        a.get_mut(&k).expect("same parameter set").add_assign(&g);
                    }
                }
            }
        }
        let train_loss = loss_sum / cfg.grad_accum as f64;
        let diverged = |why: String| {
            let ev = if recent.is_empty() {
                "no events applied yet".to_string()
            } else {
                format!("most recent events: {}", recent.join(", "))
            };
            Error::Divergence(format!("step {step}: {why}; {ev}"))
        };
        if !train_loss.is_finite() {
            return Err(diverged(format!("training loss is {train_loss}")));
        }
        let mut grads = acc.expect("grad_accum >= 1");
        if cfg.grad_accum > 1 {
            let inv = F::of(1.0 / cfg.grad_accum as f64);
            for g in grads.values_mut() {
                g.scale_assign(inv);
            }
        }
        grad_clip(&mut grads, cfg.optimizer.grad_clip);
        let lr = cfg.lr.lr_at(step);
        optimizer_step(model, &grads, &mut opt, lr, &cfg.optimizer).map_err(|e| match e {
            Error::Divergence(d) => diverged(d),
            other => other,
        })?;

        if train_loss > cfg.divergence_threshold {
            above += 1;
            if above > cfg.divergence_patience {
                return Err(diverged(format!(
                    "loss above {} for {above} consecutive steps",
                    cfg.divergence_threshold
                )));
            }
        } else {
            above = 0;
        }

        let last = step + 1 == cfg.total_steps;
        let val_loss = if (step + 1) % cfg.eval_every == 0 || last {
            let r = evaluate(model, corpus, Split::Val, cfg.eval_tokens, cfg.seq_len)?;
            if !r.mean_loss.is_finite() {
                return Err(diverged(format!("validation loss is {}", r.mean_loss)));
            }
            Some(r.mean_loss)
        } else {
            None
        };

        let record = MetricsRecord {
            step,
            train_loss,
            val_loss,
            lr,
            events: events.iter().map(|e| e.label()).collect(),
        };
        hooks.on_record(&record)?;
        metrics.push(record);

        if let Some(v) = val_loss {
            let eligible = step >= eligible_from;
            let is_best = eligible && best.as_ref().is_none_or(|b| v < b.val_loss);
            if is_best {
                best = Some(BestSnapshot {
                    step,
                    val_loss: v,
                    model: model.clone(),
                });
            }
            hooks.on_eval(step, model, is_best)?;
            if last {
                final_val = Some(v);
            }
        }
    }
    Ok(TrainOutcome {
        metrics,
        best,
        final_val_loss: final_val,
        stats,
    })
}

/// Whether every site the schedule touches ended in the state it prescribes.
pub fn matches_terminal_state<F: Scalar>(model: &GptModel<F>, schedule: &RemovalSchedule) -> bool {
    schedule.events().iter().all(|e| {
        let Some(s) = model.norm_state(e.site) else {
            return false;
        };
        let frozen = s.mode == NormMode::Frozen
            || !schedule
                .events()
                .iter()
                .any(|o| o.site == e.site && o.action == NormAction::FreezeMain);
        let dropped = |a: NormAction, active: bool| {
            !schedule.events().iter().any(|o| o.site == e.site && o.action == a) || !active
        };
        frozen
            && dropped(NormAction::DropBosSpecial, s.special_bos_active)
            && dropped(NormAction::DropEotSpecial, s.special_eot_active)
    })
}
