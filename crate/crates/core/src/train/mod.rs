//! Hybrid-epsilon Adam, learning-rate and domain-stage schedules, the
//! training loop and the gradient-check harness.

mod adam;
mod gradcheck;
mod schedule;

pub use adam::{adam_step, lr_at, AdamConfig, AdamState, EpsRecord};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use schedule::{Stage, StageSchedule};

use std::io::Write;

use crate::data::{InstanceSet, TrainingInstance};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::PrngState;
use crate::tensor::{ParamTag, ParamTree};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    /// Seeds batch sampling.
    pub seed: u64,
    /// Targets equal to this token are excluded from the loss.
    pub pad: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub stage: usize,
    pub loss: f64,
    pub lr: f64,
    pub dense_grad_norm: f64,
    pub rre_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
    pub state: AdamState,
}

/// L2 norms of the dense/embedding and RRE partitions of a gradient tree.
pub fn partition_norms(grads: &ParamTree) -> (f64, f64) {
    (grads.norm_where(|t| !t.is_rre()), grads.norm_where(ParamTag::is_rre))
}

/// Mean loss and mean gradient over a batch.
pub fn batch_loss_and_grad(model: &Model, batch: &[&TrainingInstance], pad: Option<u32>) -> Result<(f64, ParamTree)> {
    if batch.is_empty() {
        return Err(Error::DegenerateBatch);
    }
    let mut total = model.params.zeros_like();
    let mut loss = 0.0;
    for inst in batch {
        let (l, g) = model.lm_loss_and_grad(inst.domain, &inst.tokens, pad)?;
        loss += l;
        total.add_scaled(&g, 1.0)?;
    }
    let inv = 1.0 / batch.len() as f64;
    for (_, p) in total.iter_mut() {
        p.tensor.scale(inv);
    }
    Ok((loss * inv, total))
}

/// Runs `opts.steps` optimizer steps. Each batch draws only from the
/// domains the current stage activates; the optimizer step counter is
/// 1-based, so the first update uses `lr_at(1)`.
pub fn train(
    model: &mut Model,
    data: &InstanceSet,
    adam: &AdamConfig,
    schedule: &StageSchedule,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    let mut state = AdamState::new(&model.params);
    let trace = train_with_state(model, data, adam, schedule, opts, &mut state)?;
    Ok(TrainReport { trace, state })
}

/// Continues training from `state`; steps are numbered globally from
/// `state.step`, both for the stage lookup and the learning rate.
pub fn train_with_state(
    model: &mut Model,
    data: &InstanceSet,
    adam: &AdamConfig,
    schedule: &StageSchedule,
    opts: &TrainOptions,
    state: &mut AdamState,
) -> Result<Vec<TraceRow>> {
    adam.validate()?;
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let first = state.step;
    if schedule.end() < first + opts.steps {
        return Err(Error::Schedule(format!(
            "schedule covers {} steps, {} requested",
            schedule.end(),
            first + opts.steps
        )));
    }
    if data.seq_len > model.config.max_seq_len {
        return Err(Error::Config(format!(
            "instances of length {} exceed max_seq_len {}",
            data.seq_len, model.config.max_seq_len
        )));
    }
    let pools = data.by_domain();
    let num_domains = model.config.num_domains;
    // Active domains with data, per stage.
    let mut active = Vec::with_capacity(schedule.stages().len());
    for (i, stage) in schedule.stages().iter().enumerate() {
        if let Some(&d) = stage.domains.iter().find(|&&d| d >= num_domains) {
            return Err(Error::Schedule(format!(
                "stage {i} activates domain {d}; model has {num_domains}"
            )));
        }
        let usable: Vec<usize> = stage
            .domains
            .iter()
            .copied()
            .filter(|&d| pools.get(d).is_some_and(|p| !p.is_empty()))
            .collect();
        if usable.is_empty() {
            return Err(Error::Schedule(format!("stage {i} has no domain with data")));
        }
        active.push(usable);
    }

    let mut trace = Vec::with_capacity(opts.steps as usize);
    for step in first..first + opts.steps {
        let mut rng = batch_rng(opts.seed, step);
        let (stage_idx, _) = schedule.stage_at(step).expect("schedule covers all steps");
        let domains = &active[stage_idx];
        let batch: Vec<&TrainingInstance> = (0..opts.batch_size)
            .map(|_| {
                let pool = &pools[domains[rng.below(domains.len())]];
                pool[rng.below(pool.len())]
            })
            .collect();
        let (loss, grads) = batch_loss_and_grad(model, &batch, opts.pad)?;
        let (dense_grad_norm, rre_grad_norm) = partition_norms(&grads);
        let lr = lr_at(adam, step + 1);
        adam_step(&mut model.params, &grads, state, adam, lr)?;
        trace.push(TraceRow {
            step,
            stage: stage_idx,
            loss,
            lr,
            dense_grad_norm,
            rre_grad_norm,
        });
    }
    Ok(trace)
}

/// Sampling stream for one step, so a run split into segments draws the
/// same batches as an uninterrupted one.
fn batch_rng(seed: u64, step: u64) -> PrngState {
    PrngState::new(seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Mean next-token loss over a set of instances.
pub fn evaluate(model: &Model, instances: &[TrainingInstance], pad: Option<u32>) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::DegenerateBatch);
    }
    let mut total = 0.0;
    for inst in instances {
        total += model.lm_loss(inst.domain, &inst.tokens, pad)?;
    }
    Ok(total / instances.len() as f64)
}

pub fn write_trace_csv<W: Write>(mut w: W, trace: &[TraceRow]) -> Result<()> {
    writeln!(w, "step,stage,loss,lr,dense_grad_norm,rre_grad_norm")?;
    for r in trace {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.step, r.stage, r.loss, r.lr, r.dense_grad_norm, r.rre_grad_norm
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_instances;
    use crate::model::ModelConfig;

    fn small() -> (Model, InstanceSet) {
        let config = ModelConfig {
            dense_layers: 1,
            rre_layers: 1,
            heads: 2,
            hidden: 8,
            ffn: 16,
            vocab: 24,
            embedding_slots: 1,
            num_domains: 3,
            experts_per_domain: 2,
            max_seq_len: 8,
            domain_slots: vec![0; 3],
            init_seed: 1,
            routing_seed: 2,
        };
        (
            Model::init(config).unwrap(),
            synthetic_instances(3, 24, 8, 4, 3).unwrap(),
        )
    }

    fn opts(steps: u64) -> TrainOptions {
        TrainOptions {
            steps,
            batch_size: 2,
            seed: 9,
            pad: None,
        }
    }

    #[test]
    fn replay_is_deterministic() {
        let (m0, data) = small();
        let adam = AdamConfig {
            warmup_steps: 2,
            decay_steps: 10,
            ..AdamConfig::default()
        };
        let sched = StageSchedule::single(5, 3).unwrap();
        let mut a = m0.clone();
        let mut b = m0.clone();
        let ra = train(&mut a, &data, &adam, &sched, &opts(5)).unwrap();
        let rb = train(&mut b, &data, &adam, &sched, &opts(5)).unwrap();
        assert_eq!(ra.trace, rb.trace);
        assert_eq!(a, b);
        assert_ne!(a.params, m0.params);
    }

    #[test]
    fn segmented_run_matches_full_run() {
        let (m0, data) = small();
        let adam = AdamConfig {
            warmup_steps: 2,
            decay_steps: 10,
            ..AdamConfig::default()
        };
        let sched = StageSchedule::parse("0..3:0,1;3..6:0,1,2").unwrap();
        let mut full = m0.clone();
        let whole = train(&mut full, &data, &adam, &sched, &opts(6)).unwrap();
        let mut split = m0.clone();
        let mut state = AdamState::new(&split.params);
        let mut trace = train_with_state(&mut split, &data, &adam, &sched, &opts(3), &mut state).unwrap();
        trace.extend(train_with_state(&mut split, &data, &adam, &sched, &opts(3), &mut state).unwrap());
        assert_eq!(trace, whole.trace);
        assert_eq!(split, full);
        assert_eq!(trace[4].stage, 1);
    }

    #[test]
    fn schedule_errors() {
        let (mut m, data) = small();
        let adam = AdamConfig::default();
        let short = StageSchedule::single(3, 3).unwrap();
        assert!(matches!(
            train(&mut m, &data, &adam, &short, &opts(5)),
            Err(Error::Schedule(_))
        ));
        let only_one =
            InstanceSet::new(8, 3, data.instances.iter().filter(|i| i.domain == 0).cloned().collect()).unwrap();
        let sched = StageSchedule::parse("0..5:1,2").unwrap();
        assert!(matches!(
            train(&mut m, &only_one, &adam, &sched, &opts(5)),
            Err(Error::Schedule(_))
        ));
        let sched = StageSchedule::parse("0..5:0,7").unwrap();
        assert!(train(&mut m, &data, &adam, &sched, &opts(5)).is_err());
    }

    #[test]
    fn csv_header() {
        let mut out = Vec::new();
        write_trace_csv(
            &mut out,
            &[TraceRow {
                step: 0,
                stage: 0,
                loss: 1.0,
                lr: 0.0,
                dense_grad_norm: 0.5,
                rre_grad_norm: 0.25,
            }],
        )
        .unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("step,stage,loss,lr,dense_grad_norm,rre_grad_norm\n0,0,"));
    }
}
