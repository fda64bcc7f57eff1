//! Adapter training against a frozen host with a prompt-masked LM loss.

mod optim;
mod run;

pub use optim::{clip_global_norm, learning_rate_at, AdamW, Scheduler, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use run::{config_hash, load_selected, write_run, CheckpointEntry, RunManifest, RUN_MANIFEST};

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::adapter::LowRankAdapter;
use crate::data::PromptExample;
use crate::error::{Error, Result};
use crate::evaluate::{generate_records, EvalDecoding};
use crate::host::{AdapterBindings, HostBindings, HostModel, TokenId};
use crate::metrics::{ce_single, OracleClassifier};
use crate::numeric::{GradientTape, Matrix, Prng, Var};
use crate::site::AttachmentSite;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub scheduler: Scheduler,
    pub warmup_ratio: f64,
    /// Decoupled decay applied to both factors.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub r: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub max_grad_norm: f64,
    pub seed: u64,
    /// Validation prompts decoded per checkpoint (0 = all).
    pub validation_limit: usize,
    pub max_new_tokens: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            scheduler: Scheduler::Constant,
            warmup_ratio: 0.0,
            weight_decay: 0.0,
            epochs: 3,
            batch_size: 8,
            r: 4,
            alpha: 8.0,
            dropout: 0.1,
            max_grad_norm: 1.0,
            seed: 8989,
            validation_limit: 0,
            max_new_tokens: 24,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and non-negative", self.learning_rate));
        }
        if self.batch_size == 0 || self.r == 0 {
            return bad("batch_size and r must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) || self.weight_decay < 0.0 || !(self.max_grad_norm > 0.0) {
            return bad("warmup_ratio, weight_decay or max_grad_norm out of range".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// 1-based.
    pub epoch: usize,
    pub adapters: Vec<LowRankAdapter>,
    pub validation_ce: f64,
    /// Mean batch loss over the epoch.
    pub training_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Loss over the whole training set before the first update, without dropout.
    pub initial_loss: f64,
    pub checkpoints: Vec<Checkpoint>,
}

/// Index of the highest value; ties go to the earliest.
pub fn select_best_index(values: &[f64]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::Empty("checkpoint list"));
    }
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn select_checkpoint(checkpoints: &[Checkpoint]) -> Result<&Checkpoint> {
    let ces: Vec<f64> = checkpoints.iter().map(|c| c.validation_ce).collect();
    Ok(&checkpoints[select_best_index(&ces)?])
}

/// Input tokens and completion-only targets for next-token prediction.
fn lm_targets(example: &PromptExample) -> (Vec<TokenId>, Vec<Option<usize>>) {
    let seq = example.full_sequence();
    let input = seq[..seq.len() - 1].to_vec();
    let targets = (0..input.len())
        .map(|p| (p + 1 >= example.prompt.len()).then(|| seq[p + 1] as usize))
        .collect();
    (input, targets)
}

/// Records the batch loss: per-item masked CE, weighted by completion length.
pub fn record_batch_loss(
    host: &HostModel,
    tape: &mut GradientTape,
    weights: &HostBindings,
    adapters: &AdapterBindings,
    batch: &[PromptExample],
    mut dropout: Option<&mut Prng>,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let total: usize = batch.iter().map(|e| e.completion.len()).sum();
    let mut loss: Option<Var> = None;
    for example in batch {
        if example.completion.is_empty() || example.prompt.is_empty() {
            return Err(Error::InvalidArgument("examples need a prompt and a completion".into()));
        }
        let (input, targets) = lm_targets(example);
        let trace = host.trace(tape, weights, adapters, &input, dropout.as_deref_mut())?;
        let item = tape.cross_entropy(trace.logits, &targets)?;
        let weighted = tape.scale(item, example.completion.len() as f64 / total as f64)?;
        loss = Some(match loss {
            Some(l) => tape.add(l, weighted)?,
            None => weighted,
        });
    }
    Ok(loss.expect("non-empty batch"))
}

/// Mean completion-token cross entropy under the current registry, no dropout.
pub fn lm_loss(host: &HostModel, batch: &[PromptExample]) -> Result<f64> {
    let mut tape = GradientTape::new();
    let weights = host.bind_weights(&mut tape, false);
    let adapters = host.bind_adapters(&mut tape, false)?;
    let loss = record_batch_loss(host, &mut tape, &weights, &adapters, batch, None)?;
    Ok(tape.value(loss).get(0, 0))
}

/// Checkpoint-selection CE: greedy generations on `validation`, mean over the ensemble.
pub fn validation_ce(
    host: &HostModel,
    validation: &[PromptExample],
    ensemble: &[OracleClassifier],
    max_new: usize,
    stop: TokenId,
    is_special: impl Fn(TokenId) -> bool + Sync,
) -> Result<f64> {
    let records = generate_records(host, validation, max_new, stop, is_special, EvalDecoding::Greedy)?;
    Ok(ce_single(&records, ensemble)?.0)
}

/// What the trainer needs to score checkpoints.
pub struct ValidationSpec<'a> {
    pub prompts: &'a [PromptExample],
    pub ensemble: &'a [OracleClassifier],
    pub stop: TokenId,
    pub is_special: &'a (dyn Fn(TokenId) -> bool + Sync),
}

/// Attaches fresh adapters named `name` at `sites`, trains them, and detaches them
/// again. The host's frozen weights are never written.
pub fn train_adapters(
    host: &mut HostModel,
    name: &str,
    sites: &[AttachmentSite],
    train: &[PromptExample],
    validation: &ValidationSpec<'_>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if sites.is_empty() {
        return Err(Error::Empty("site list"));
    }
    let digest = host.frozen_digest();
    let base = Prng::new(cfg.seed);
    let mut init = base.derive(1);
    for &site in sites {
        let (d_out, d_in) = host.site_dims(site)?;
        let ad = LowRankAdapter::init(name, site, d_out, d_in, cfg.r, cfg.alpha, cfg.dropout, &mut init)?;
        host.attach(site, ad)?;
    }
    let result = run_training(host, name, sites, train, validation, cfg, &base);
    for &site in sites {
        host.detach(site, name)?;
    }
    if host.frozen_digest() != digest {
        return Err(Error::InvalidArgument("frozen host weights changed during training".into()));
    }
    result
}

fn run_training(
    host: &mut HostModel,
    name: &str,
    sites: &[AttachmentSite],
    train: &[PromptExample],
    validation: &ValidationSpec<'_>,
    cfg: &TrainConfig,
    base: &Prng,
) -> Result<TrainOutcome> {
    let initial_loss = lm_loss(host, train)?;
    info!("{name}: initial loss {initial_loss:.4}");
    let mut shuffle = base.derive(2);
    let mut dropout = base.derive(3);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let shapes: Vec<(usize, usize)> = sites
        .iter()
        .flat_map(|&s| {
            let ad = find(host, s, name);
            [ad.a().shape(), ad.b().shape()]
        })
        .collect();
    let mut opt = AdamW::new(shapes, cfg.weight_decay);
    let val_prompts = match cfg.validation_limit {
        0 => validation.prompts,
        n => &validation.prompts[..n.min(validation.prompts.len())],
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        shuffle.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<PromptExample> = chunk.iter().map(|&i| train[i].clone()).collect();
            let mut tape = GradientTape::new();
            let weights = host.bind_weights(&mut tape, false);
            let bound = host.bind_adapters(&mut tape, true)?;
            let loss = record_batch_loss(host, &mut tape, &weights, &bound, &batch, Some(&mut dropout))?;
            epoch_loss += tape.value(loss).get(0, 0);
            let mut grads_all = tape.backward(loss)?;
            let mut grads = Vec::with_capacity(2 * sites.len());
            for &site in sites {
                let vars = bound
                    .vars
                    .iter()
                    .find(|v| v.site == site && v.name == name)
                    .expect("trained adapters are bound");
                grads.push(grads_all.take(vars.a).expect("parameter gradient"));
                grads.push(grads_all.take(vars.b).expect("parameter gradient"));
            }
            let norm = clip_global_norm(&mut grads, cfg.max_grad_norm);
            let lr = learning_rate_at(cfg.learning_rate, cfg.scheduler, cfg.warmup_ratio, step, total_steps);
            let mut params: Vec<Matrix> = sites
                .iter()
                .flat_map(|&s| {
                    let ad = find(host, s, name);
                    [ad.a().clone(), ad.b().clone()]
                })
                .collect();
            opt.step(&mut params, &grads, lr);
            let mut it = params.into_iter();
            for &site in sites {
                let (a, b) = (it.next().expect("A"), it.next().expect("B"));
                host.adapter_mut(site, name)?.set_factors(a, b)?;
            }
            debug!("{name}: step {step} loss {:.4} grad-norm {norm:.4}", tape.value(loss).get(0, 0));
            step += 1;
        }
        let training_loss = epoch_loss / steps_per_epoch as f64;
        let ce = validation_ce(
            host,
            val_prompts,
            validation.ensemble,
            cfg.max_new_tokens,
            validation.stop,
            validation.is_special,
        )?;
        info!("{name}: epoch {epoch} loss {training_loss:.4} validation CE {ce:.2}");
        checkpoints.push(Checkpoint {
            epoch,
            adapters: sites.iter().map(|&s| find(host, s, name).clone()).collect(),
            validation_ce: ce,
            training_loss,
        });
    }
    Ok(TrainOutcome {
        initial_loss,
        checkpoints,
    })
}

fn find<'a>(host: &'a HostModel, site: AttachmentSite, name: &str) -> &'a LowRankAdapter {
    host.adapters_at(site)
        .iter()
        .find(|a| a.name() == name)
        .expect("adapter attached by the trainer")
}
