use std::fs::File;
use std::io::BufWriter;

use sigma_core::checkpoint::{load_checkpoint, save_checkpoint};
use sigma_core::config::{load_instance_path, RunConfig};
use sigma_core::inherit::{extract_submodel, inherit_model, merge_vocab, DonorModel, SubModelSpec, Vocab};
use sigma_core::model::Model;
use sigma_core::rng::PrngState;
use sigma_core::train::{self as trainer, grad_check, write_trace_csv, GradCheckOptions, StageSchedule};
use sigma_core::{Error, Result};

use crate::{EvalArgs, ExtractArgs, GradcheckArgs, InheritArgs, InitArgs, TrainArgs};

pub fn init(a: InitArgs) -> Result<()> {
    let config = RunConfig::load(&a.config)?;
    let model = Model::init(config.model)?;
    save_checkpoint(&model, &a.out)?;
    println!("parameters {}", model.params.num_elements());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut config = RunConfig::load(&a.config)?;
    if let Some(steps) = a.steps {
        config.train.steps = steps;
    }
    if let Some(p) = &a.stage_schedule {
        config.stages = Some(StageSchedule::parse(&std::fs::read_to_string(p)?)?);
    }
    if let Some(p) = a.data {
        config.data_path = Some(p);
    }
    config.validate()?;
    let out = a
        .out
        .or(config.checkpoint.clone())
        .ok_or_else(|| Error::Config("no output: pass --out or set `out.checkpoint`".into()))?;
    let trace_path = a
        .trace
        .or(config.trace.clone())
        .unwrap_or_else(|| out.join("trace.csv"));

    let mut model = match &a.init {
        Some(dir) => load_checkpoint(dir)?,
        None => Model::init(config.model.clone())?,
    };
    let data = config.load_data()?;
    let schedule = config.schedule()?;
    let report = trainer::train(&mut model, &data, &config.adam, &schedule, &config.train)?;

    save_checkpoint(&model, &out)?;
    if let Some(parent) = trace_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_trace_csv(BufWriter::new(File::create(&trace_path)?), &report.trace)?;
    if let (Some(first), Some(last)) = (report.trace.first(), report.trace.last()) {
        println!(
            "steps {} loss {:.6} -> {:.6}",
            report.trace.len(),
            first.loss,
            last.loss
        );
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let data = load_instance_path(&a.data)?;
    let mut total = 0.0;
    let mut per_domain = vec![(0.0, 0usize); data.num_domains];
    for inst in &data.instances {
        let loss = model.lm_loss(inst.domain, &inst.tokens, a.pad)?;
        total += loss;
        per_domain[inst.domain].0 += loss;
        per_domain[inst.domain].1 += 1;
    }
    if data.instances.is_empty() {
        return Err(Error::DegenerateBatch);
    }
    println!("loss {:.6}", total / data.instances.len() as f64);
    for (d, (sum, n)) in per_domain.iter().enumerate().filter(|(_, (_, n))| *n > 0) {
        println!("domain {d} loss {:.6} instances {n}", sum / *n as f64);
    }
    Ok(())
}

pub fn inherit(a: InheritArgs) -> Result<()> {
    let donor_model = load_checkpoint(&a.donor)?;
    let donor_vocab = match &a.donor_vocab {
        Some(p) => Vocab::from_lines(&std::fs::read_to_string(p)?)?,
        None => Vocab::numbered(donor_model.config.vocab),
    };
    let addition = match &a.vocab_add {
        Some(p) => Vocab::from_lines(&std::fs::read_to_string(p)?)?,
        None => Vocab::new(Vec::<String>::new())?,
    };
    let merged = merge_vocab(&donor_vocab, &addition);
    let mut target = RunConfig::load(&a.config)?.model;
    target.vocab = merged.len();
    let donor = DonorModel::new(donor_model, donor_vocab)?;
    let model = inherit_model(&donor, &merged, target, a.seed)?;
    save_checkpoint(&model, &a.out)?;
    if let Some(p) = &a.vocab_out {
        let mut text = merged.tokens().join("\n");
        text.push('\n');
        std::fs::write(p, text)?;
    }
    println!("vocab {} parameters {}", merged.len(), model.params.num_elements());
    Ok(())
}

pub fn extract(a: ExtractArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let sub = extract_submodel(&model, SubModelSpec { domain: a.domain })?;
    save_checkpoint(&sub, &a.out)?;
    println!(
        "parameters {} of {}",
        sub.params.num_elements(),
        model.params.num_elements()
    );
    Ok(())
}

/// Returns whether the max relative error stayed below the tolerance.
pub fn gradcheck(a: GradcheckArgs) -> Result<bool> {
    let model = match (&a.checkpoint, &a.config) {
        (Some(dir), _) => load_checkpoint(dir)?,
        (None, Some(cfg)) => Model::init(RunConfig::load(cfg)?.model)?,
        (None, None) => return Err(Error::Config("pass --checkpoint or --config".into())),
    };
    if a.len == 0 || a.len > model.config.max_seq_len {
        return Err(Error::Config(format!(
            "--len must be in 1..={}",
            model.config.max_seq_len
        )));
    }
    let mut rng = PrngState::new(a.seed);
    let tokens: Vec<u32> = (0..a.len).map(|_| rng.below(model.config.vocab) as u32).collect();
    let opts = GradCheckOptions {
        max_coords_per_tensor: a.max_coords,
        seed: a.seed,
        ..GradCheckOptions::default()
    };
    let report = grad_check(&model, a.domain, &tokens, &opts)?;
    println!("{report}");
    let ok = report.max_rel_error < a.tolerance;
    println!("{} (tolerance {:.1e})", if ok { "PASS" } else { "FAIL" }, a.tolerance);
    Ok(ok)
}
