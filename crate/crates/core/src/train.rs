//! Training loop: shuffled minibatch epochs, Adam updates, resumable state.
//!
//! A `Trainer` owns every piece of mutable training state: the parameter
//! store, the optimizer moments, the RNG, and the epoch/step counters. All
//! of it round-trips through a checkpoint file, so a run resumed from disk
//! continues bit-for-bit as if it had never stopped.

use std::collections::HashMap;
use std::path::Path;

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::data::IdxDataset;
use crate::error::{Error, Result};
use crate::model::{build_prior_means, LatentPrior, Model, ModelConfig};
use crate::nn::{Adam, ParameterStore};
use crate::objective::{LossBreakdown, Objective};
use crate::{Graph, Rng, Tensor};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub objective: Objective,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Batch size, learning rate, and dimensions used for the digit runs.
    pub fn mnist_default(objective: Objective) -> Self {
        TrainConfig {
            model: ModelConfig::mnist_default(),
            objective,
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.objective.validate()?;
        if self.batch_size == 0 {
            return Err(Error::BadModelConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::BadModelConfig(format!(
                "learning_rate must be a positive finite number, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// All mutable state of a run, plus the immutable pieces derived from the
/// config (model wiring, prior means).
pub struct Trainer {
    config: TrainConfig,
    model: Model,
    prior: LatentPrior,
    store: ParameterStore,
    adam: Adam,
    rng: Rng,
    epochs_done: usize,
    steps_done: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let prior = build_prior_means(
            config.model.num_categories,
            config.model.latent_dim,
            config.model.lambda,
        )?;
        let mut store = ParameterStore::new();
        let mut rng = Rng::new(config.seed);
        let model = Model::new(&mut store, &mut rng, config.model.clone())?;
        let adam = Adam::new(config.learning_rate);
        Ok(Trainer {
            config,
            model,
            prior,
            store,
            adam,
            rng,
            epochs_done: 0,
            steps_done: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }
    pub fn model(&self) -> &Model {
        &self.model
    }
    pub fn prior(&self) -> &LatentPrior {
        &self.prior
    }
    pub fn store(&self) -> &ParameterStore {
        &self.store
    }
    pub fn rng_mut(&mut self) -> &mut Rng {
        &mut self.rng
    }
    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }
    pub fn steps_done(&self) -> u64 {
        self.steps_done
    }

    /// One optimizer step on one batch. The loss is checked for finiteness
    /// before any parameter moves, so a blown-up run aborts with the full
    /// term breakdown instead of poisoning the weights.
    pub fn train_step(&mut self, x: &Tensor) -> Result<LossBreakdown> {
        let mut g = Graph::new();
        let binding = self.store.bind_all(&mut g);
        let nodes = self.config.objective.build(
            &mut g,
            &self.model,
            &binding,
            &self.prior,
            x,
            &mut self.rng,
            true,
        )?;
        let breakdown = nodes.breakdown(&g)?;
        g.backward(nodes.total)?;
        self.store.collect_grads(&g, &binding)?;
        self.adam.step(&mut self.store)?;
        self.steps_done += 1;
        Ok(breakdown)
    }

    /// One pass over `data` in a fresh shuffled order. Returns the
    /// sample-weighted mean of each loss term across the epoch's batches.
    pub fn run_epoch(&mut self, data: &IdxDataset) -> Result<LossBreakdown> {
        if data.n() == 0 {
            return Err(Error::BadModelConfig("cannot train on an empty dataset".into()));
        }
        let mut order: Vec<usize> = (0..data.n()).collect();
        self.rng.shuffle(&mut order);
        let mut sums = LossBreakdown {
            recon: 0.0,
            kl_cat: 0.0,
            kl_gauss: 0.0,
            info: 0.0,
            total: 0.0,
        };
        for chunk in order.chunks(self.config.batch_size) {
            let x = data.gather(chunk);
            let b = self.train_step(&x)?;
            let w = chunk.len() as f64;
            sums.recon += w * b.recon;
            sums.kl_cat += w * b.kl_cat;
            sums.kl_gauss += w * b.kl_gauss;
            sums.info += w * b.info;
            sums.total += w * b.total;
        }
        let n = data.n() as f64;
        self.epochs_done += 1;
        Ok(LossBreakdown {
            recon: sums.recon / n,
            kl_cat: sums.kl_cat / n,
            kl_gauss: sums.kl_gauss / n,
            info: sums.info / n,
            total: sums.total / n,
        })
    }

    /// Writes parameters, optimizer moments, RNG state, and counters.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries: Vec<(String, Tensor)> = self
            .store
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        let (t, m, v) = self.adam.export_state();
        if t > 0 {
            for (i, (name, _)) in self.store.iter().enumerate() {
                entries.push((
                    format!("adam.m.{name}"),
                    Tensor::new(vec![m[i].len()], m[i].clone())?,
                ));
                entries.push((
                    format!("adam.v.{name}"),
                    Tensor::new(vec![v[i].len()], v[i].clone())?,
                ));
            }
        }
        let rng_bits: Vec<f64> = self.rng.state().iter().map(|&w| f64::from_bits(w)).collect();
        entries.push(("meta.rng_state".to_string(), Tensor::new(vec![4], rng_bits)?));
        entries.push((
            "meta.counters".to_string(),
            Tensor::new(
                vec![3],
                vec![self.epochs_done as f64, self.steps_done as f64, t as f64],
            )?,
        ));
        entries.push((
            "meta.model_config".to_string(),
            Tensor::new(vec![6], model_config_values(&self.config.model))?,
        ));
        write_checkpoint(path, &entries)
    }

    /// Rebuilds a trainer from a config and a checkpoint written by `save`.
    /// Every tensor the model expects must be present with its exact shape;
    /// unrecognized leftovers are an error rather than silently ignored.
    pub fn resume(config: TrainConfig, path: &Path) -> Result<Self> {
        let mut trainer = Trainer::new(config)?;
        let mut map: HashMap<String, Tensor> = read_checkpoint(path)?.into_iter().collect();
        let mut take = |name: &str| -> Result<Tensor> {
            map.remove(name)
                .ok_or_else(|| Error::CheckpointMismatch(format!("missing entry {name:?}")))
        };

        let stored = take("meta.model_config")?;
        if stored.data() != model_config_values(&trainer.config.model) {
            return Err(Error::CheckpointMismatch(
                "checkpoint was written with a different model configuration".into(),
            ));
        }

        let names: Vec<String> = trainer.store.iter().map(|(n, _)| n.to_string()).collect();
        for name in &names {
            let value = take(name)?;
            trainer.store.set(name, value)?;
        }

        let counters = take("meta.counters")?;
        if counters.numel() != 3 {
            return Err(Error::CheckpointMismatch("meta.counters must hold 3 values".into()));
        }
        trainer.epochs_done = counters.data()[0] as usize;
        trainer.steps_done = counters.data()[1] as u64;
        let adam_t = counters.data()[2] as u64;

        if adam_t > 0 {
            let mut m = Vec::with_capacity(names.len());
            let mut v = Vec::with_capacity(names.len());
            for name in &names {
                let expect = trainer.store.get(name)?.numel();
                let mi = take(&format!("adam.m.{name}"))?;
                let vi = take(&format!("adam.v.{name}"))?;
                if mi.numel() != expect || vi.numel() != expect {
                    return Err(Error::CheckpointMismatch(format!(
                        "optimizer moments for {name:?} have the wrong size"
                    )));
                }
                m.push(mi.into_data());
                v.push(vi.into_data());
            }
            trainer.adam.import_state(adam_t, m, v);
        }

        let state = take("meta.rng_state")?;
        if state.numel() != 4 {
            return Err(Error::CheckpointMismatch("meta.rng_state must hold 4 values".into()));
        }
        let words: Vec<u64> = state.data().iter().map(|v| v.to_bits()).collect();
        trainer.rng = Rng::from_state([words[0], words[1], words[2], words[3]]);

        if !map.is_empty() {
            let mut extra: Vec<&String> = map.keys().collect();
            extra.sort();
            return Err(Error::CheckpointMismatch(format!(
                "unrecognized entries: {extra:?}"
            )));
        }
        Ok(trainer)
    }
}

/// The six numbers that pin down a model architecture inside a checkpoint.
fn model_config_values(m: &ModelConfig) -> Vec<f64> {
    vec![
        m.num_categories as f64,
        m.latent_dim as f64,
        m.lambda,
        m.input_dim as f64,
        m.hidden_dim as f64,
        m.dropout_rate,
    ]
}

/// Rebuilds just the model side of a checkpoint for evaluation commands:
/// the architecture comes from the stored metadata, the weights from the
/// stored tensors. Optimizer state and counters are ignored.
pub fn load_model(path: &Path) -> Result<(Model, ParameterStore, LatentPrior)> {
    let mut map: HashMap<String, Tensor> = read_checkpoint(path)?.into_iter().collect();
    let stored = map
        .remove("meta.model_config")
        .ok_or_else(|| Error::CheckpointMismatch("missing entry \"meta.model_config\"".into()))?;
    if stored.numel() != 6 {
        return Err(Error::CheckpointMismatch("meta.model_config must hold 6 values".into()));
    }
    let v = stored.data();
    let cfg = ModelConfig {
        num_categories: v[0] as usize,
        latent_dim: v[1] as usize,
        lambda: v[2],
        input_dim: v[3] as usize,
        hidden_dim: v[4] as usize,
        dropout_rate: v[5],
    };
    cfg.validate()?;
    let prior = build_prior_means(cfg.num_categories, cfg.latent_dim, cfg.lambda)?;
    let mut store = ParameterStore::new();
    let model = Model::new(&mut store, &mut Rng::new(0), cfg)?;
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for name in &names {
        let value = map.remove(name).ok_or_else(|| {
            Error::CheckpointMismatch(format!("missing parameter {name:?}"))
        })?;
        store.set(name, value)?;
    }
    Ok((model, store, prior))
}

/// One tab-separated metrics row: epoch number then the five loss terms.
pub fn metrics_line(epoch: usize, b: &LossBreakdown) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        epoch, b.recon, b.kl_cat, b.kl_gauss, b.info, b.total
    )
}

/// Header naming the columns of `metrics_line`.
pub fn metrics_header() -> &'static str {
    "epoch\trecon\tkl_cat\tkl_gauss\tinfo\ttotal"
}
