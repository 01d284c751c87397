//! Plain `key = value` run configuration.
//!
//! A config file can set any training knob; later sources win, so the
//! conventional precedence (defaults, then file, then command line) falls
//! out of apply order. `#` starts a comment, blank lines are skipped, and
//! unknown keys are hard errors: a typo should stop a run, not silently
//! train the default.

use std::path::Path;

use crate::error::{Error, Result};
use crate::objective::{Likelihood, Mode};
use crate::train::TrainConfig;

/// Applies one key/value pair to the config.
pub fn apply_kv(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let bad = |reason: &str| Error::InvalidConfigValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    };
    let as_usize = || value.parse::<usize>().map_err(|_| bad("expected a non-negative integer"));
    let as_u64 = || value.parse::<u64>().map_err(|_| bad("expected a non-negative integer"));
    let as_f64 = || {
        value
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad("expected a finite number"))
    };
    let as_bool = || match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad("expected true or false")),
    };

    match key {
        "mode" => cfg.objective.mode = Mode::parse(value).ok_or_else(|| bad("expected infocatvae or vanilla_catvae"))?,
        "likelihood" => {
            cfg.objective.likelihood =
                Likelihood::parse(value).ok_or_else(|| bad("expected bernoulli or gaussian"))?
        }
        "epochs" => cfg.epochs = as_usize()?,
        "batch_size" => cfg.batch_size = as_usize()?,
        "learning_rate" => cfg.learning_rate = as_f64()?,
        "seed" => cfg.seed = as_u64()?,
        "beta_cont" => cfg.objective.betas.cont = as_f64()?,
        "beta_cat" => cfg.objective.betas.cat = as_f64()?,
        "beta_info" => cfg.objective.betas.info = as_f64()?,
        "info_samples" => cfg.objective.info_samples = as_usize()?,
        "detach_decoder_info" => cfg.objective.detach_decoder_info = as_bool()?,
        "num_categories" => cfg.model.num_categories = as_usize()?,
        "latent_dim" => cfg.model.latent_dim = as_usize()?,
        "lambda" => cfg.model.lambda = as_f64()?,
        "input_dim" => cfg.model.input_dim = as_usize()?,
        "hidden_dim" => cfg.model.hidden_dim = as_usize()?,
        "dropout_rate" => cfg.model.dropout_rate = as_f64()?,
        _ => return Err(Error::UnknownConfigKey(key.to_string())),
    }
    Ok(())
}

/// Applies every assignment in `text`, top to bottom.
pub fn apply_str(cfg: &mut TrainConfig, text: &str) -> Result<()> {
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(Error::MalformedConfigLine {
            line: idx + 1,
            text: raw.to_string(),
        })?;
        apply_kv(cfg, key.trim(), value.trim())?;
    }
    Ok(())
}

pub fn apply_file(cfg: &mut TrainConfig, path: &Path) -> Result<()> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    apply_str(cfg, &text)
}

/// Serializes every knob. Feeding the output back through `apply_str`
/// reproduces the config, so a run can echo exactly what it used.
pub fn render(cfg: &TrainConfig) -> String {
    let mut out = String::new();
    let mut push = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    push("mode", cfg.objective.mode.as_str().to_string());
    push("likelihood", cfg.objective.likelihood.as_str().to_string());
    push("epochs", cfg.epochs.to_string());
    push("batch_size", cfg.batch_size.to_string());
    push("learning_rate", cfg.learning_rate.to_string());
    push("seed", cfg.seed.to_string());
    push("beta_cont", cfg.objective.betas.cont.to_string());
    push("beta_cat", cfg.objective.betas.cat.to_string());
    push("beta_info", cfg.objective.betas.info.to_string());
    push("info_samples", cfg.objective.info_samples.to_string());
    push("detach_decoder_info", cfg.objective.detach_decoder_info.to_string());
    push("num_categories", cfg.model.num_categories.to_string());
    push("latent_dim", cfg.model.latent_dim.to_string());
    push("lambda", cfg.model.lambda.to_string());
    push("input_dim", cfg.model.input_dim.to_string());
    push("hidden_dim", cfg.model.hidden_dim.to_string());
    push("dropout_rate", cfg.model.dropout_rate.to_string());
    out
}
