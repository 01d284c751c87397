//! The training objective.
//!
//! Everything is a minimized loss: the negated ELBO splits into a
//! reconstruction term, a categorical KL against the uniform prior over
//! categories, and the expected Gaussian KL against the category's prior
//! component, each in closed form. The information-maximization variant
//! adds a fourth term: decode prior samples, classify them, and charge the
//! negative log-probability of the category that generated them. Weighted:
//!
//!   total = recon + beta_cat * kl_cat + beta_cont * kl_gauss
//!                 + beta_info * info          (info mode only)
//!
//! All terms are graph nodes, so one builder serves training (backward) and
//! evaluation (read the scalars, never differentiate).

use crate::error::{Error, Result};
use crate::model::{
    one_hot_from_indices, reparameterize, sample_prior_batch, EncoderOutput, LatentPrior, Model,
};
use crate::nn::Binding;
use crate::{Graph, NodeId, Rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    VanillaCatVae,
    InfoCatVae,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::VanillaCatVae => "vanilla_catvae",
            Mode::InfoCatVae => "infocatvae",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vanilla_catvae" => Some(Mode::VanillaCatVae),
            "infocatvae" => Some(Mode::InfoCatVae),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Likelihood {
    /// Pixel-summed binary cross-entropy against the sigmoid output.
    Bernoulli,
    /// Pixel-summed squared error against the mean output.
    Gaussian,
}

impl Likelihood {
    pub fn as_str(self) -> &'static str {
        match self {
            Likelihood::Bernoulli => "bernoulli",
            Likelihood::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bernoulli" => Some(Likelihood::Bernoulli),
            "gaussian" => Some(Likelihood::Gaussian),
            _ => None,
        }
    }
}

/// Loss-term weights. The defaults are the ones the image experiments use.
#[derive(Clone, Copy, Debug)]
pub struct Betas {
    pub cont: f64,
    pub cat: f64,
    pub info: f64,
}

impl Default for Betas {
    fn default() -> Self {
        Betas {
            cont: 10.0,
            cat: 10.0,
            info: 100.0,
        }
    }
}

impl Betas {
    pub fn validate(&self) -> Result<()> {
        for b in [self.cont, self.cat, self.info] {
            if !b.is_finite() || b < 0.0 {
                return Err(Error::NegativeBeta);
            }
        }
        Ok(())
    }
}

/// How to assemble the loss for one batch.
#[derive(Clone, Debug)]
pub struct Objective {
    pub mode: Mode,
    pub betas: Betas,
    pub likelihood: Likelihood,
    /// Prior draws per step for the information term.
    pub info_samples: usize,
    /// Ablation switch: treat the decoded image as a constant in the
    /// information term, so only the classifier learns from it.
    pub detach_decoder_info: bool,
}

impl Objective {
    pub fn new(mode: Mode) -> Self {
        Objective {
            mode,
            betas: Betas::default(),
            likelihood: Likelihood::Bernoulli,
            info_samples: 128,
            detach_decoder_info: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.betas.validate()?;
        if self.mode == Mode::InfoCatVae && self.info_samples == 0 {
            return Err(Error::BadModelConfig(
                "info_samples must be at least 1 in infocatvae mode".into(),
            ));
        }
        Ok(())
    }

    /// Builds every term on `g`. `dropout` selects the training path; the
    /// RNG drives reparametrization noise, prior draws, and dropout masks,
    /// in that call order, so a reseeded RNG reproduces the loss exactly.
    pub fn build(
        &self,
        g: &mut Graph,
        model: &Model,
        binding: &Binding,
        prior: &LatentPrior,
        x: &Tensor,
        rng: &mut Rng,
        dropout: bool,
    ) -> Result<LossNodes> {
        self.validate()?;
        let x = g.constant(x);
        let enc = model.encode(g, binding, x, train_rng(rng, dropout))?;
        let recon =
            reconstruction_term(g, model, binding, x, &enc, rng, dropout, self.likelihood)?;
        let kl_cat = categorical_kl(g, enc.cat_probs, enc.cat_logits)?;
        let kl_gauss = gaussian_kl_expected(g, &enc, prior)?;
        let info = match self.mode {
            Mode::VanillaCatVae => None,
            Mode::InfoCatVae => Some(info_max_term(
                g,
                model,
                binding,
                prior,
                rng,
                self.info_samples,
                dropout,
                self.detach_decoder_info,
            )?),
        };

        let weighted_cat = g.scalar_mul(kl_cat, self.betas.cat)?;
        let weighted_gauss = g.scalar_mul(kl_gauss, self.betas.cont)?;
        let mut total = g.add(recon, weighted_cat)?;
        total = g.add(total, weighted_gauss)?;
        if let Some(info) = info {
            let weighted_info = g.scalar_mul(info, self.betas.info)?;
            total = g.add(total, weighted_info)?;
        }
        Ok(LossNodes {
            recon,
            kl_cat,
            kl_gauss,
            info,
            total,
        })
    }
}

fn train_rng(rng: &mut Rng, dropout: bool) -> Option<&mut Rng> {
    if dropout {
        Some(rng)
    } else {
        None
    }
}

/// Scalar nodes for each loss term of one batch.
pub struct LossNodes {
    pub recon: NodeId,
    pub kl_cat: NodeId,
    pub kl_gauss: NodeId,
    /// Absent in vanilla mode.
    pub info: Option<NodeId>,
    pub total: NodeId,
}

/// Evaluated loss values for logging and abort checks.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl_cat: f64,
    pub kl_gauss: f64,
    pub info: f64,
    pub total: f64,
}

impl LossNodes {
    /// Reads the term values out of the graph. A non-finite total is an
    /// error carrying every component, so the blow-up is attributable.
    pub fn breakdown(&self, g: &Graph) -> Result<LossBreakdown> {
        let read = |id: NodeId| g.scalar_value(id).expect("loss nodes are scalars");
        let b = LossBreakdown {
            recon: read(self.recon),
            kl_cat: read(self.kl_cat),
            kl_gauss: read(self.kl_gauss),
            info: self.info.map_or(0.0, read),
            total: read(self.total),
        };
        if !b.total.is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "recon={} kl_cat={} kl_gauss={} info={} total={}",
                b.recon, b.kl_cat, b.kl_gauss, b.info, b.total
            )));
        }
        Ok(b)
    }
}

/// Column j of a (rows, k) node as a (rows, 1) node, extracted with a
/// one-hot matmul so it stays differentiable.
fn column(g: &mut Graph, m: NodeId, j: usize) -> Result<NodeId> {
    let k = g.shape(m)[1];
    let mut e = vec![0.0; k];
    e[j] = 1.0;
    let e = g.constant(&Tensor::new(vec![k, 1], e).expect("k values"));
    g.matmul(m, e)
}

/// Per-row sums of a rank-2 node, as (rows, 1).
fn row_sums(g: &mut Graph, m: NodeId) -> Result<NodeId> {
    let cols = g.shape(m)[1];
    let ones = g.constant(&Tensor::full(vec![cols, 1], 1.0));
    g.matmul(m, ones)
}

/// Category-weighted reconstruction loss, batch-averaged.
///
/// Every sample is pushed through all K posterior branches; branch c is
/// decoded from one reparametrized draw of q(z|c,x) and its pixel-summed
/// loss is weighted by q(c|x). No category is ever sampled, so the estimator
/// is exact in c and the categorical weights receive gradients.
#[allow(clippy::too_many_arguments)]
pub fn reconstruction_term(
    g: &mut Graph,
    model: &Model,
    binding: &Binding,
    x: NodeId,
    enc: &EncoderOutput,
    rng: &mut Rng,
    dropout: bool,
    likelihood: Likelihood,
) -> Result<NodeId> {
    let k = enc.mu.len();
    let mut acc: Option<NodeId> = None;
    for c in 0..k {
        let z = reparameterize(g, enc.mu[c], enc.log_var[c], rng)?;
        let dec = model.decode(g, binding, z, train_rng(rng, dropout))?;
        let pixels = match likelihood {
            Likelihood::Bernoulli => g.bce_with_logits(dec.logits, x)?,
            Likelihood::Gaussian => {
                let diff = g.sub(dec.mean, x)?;
                g.square(diff)
            }
        };
        let per_sample = row_sums(g, pixels)?;
        let weight = column(g, enc.cat_probs, c)?;
        let weighted = g.mul(per_sample, weight)?;
        acc = Some(match acc {
            None => weighted,
            Some(a) => g.add(a, weighted)?,
        });
    }
    Ok(g.mean(acc.expect("K >= 1")))
}

/// KL(q(c|x) || Uniform(K)) = log K − H(q(c|x)), batch-averaged.
///
/// The entropy is taken as Σ p·log p with log p from log-softmax of the
/// logits: where a probability underflows to 0 the product is exactly 0,
/// which is the correct p·log p limit.
pub fn categorical_kl(g: &mut Graph, cat_probs: NodeId, cat_logits: NodeId) -> Result<NodeId> {
    let (batch, k) = match g.shape(cat_probs) {
        [b, k] => (*b, *k),
        other => {
            return Err(Error::BadShape {
                op: "categorical_kl",
                shape: other.to_vec(),
                reason: "expected (batch, K)",
            })
        }
    };
    let log_p = g.log_softmax_rows(cat_logits)?;
    let p_log_p = g.mul(cat_probs, log_p)?;
    let neg_entropy = g.sum(p_log_p);
    let scaled = g.scalar_mul(neg_entropy, 1.0 / batch as f64)?;
    let log_k = g.constant_scalar((k as f64).ln());
    g.add(scaled, log_k)
}

/// E_{q(c|x)} KL(q(z|c,x) || N(μ_c, I)), batch-averaged:
/// Σ_c q(c|x) · ½ Σ_j (σ² + (μ_φ − μ_c)² − 1 − log σ²).
pub fn gaussian_kl_expected(
    g: &mut Graph,
    enc: &EncoderOutput,
    prior: &LatentPrior,
) -> Result<NodeId> {
    let k = prior.num_categories();
    let d = prior.latent_dim();
    if enc.mu.len() != k {
        return Err(Error::ShapeMismatch {
            op: "gaussian_kl_expected",
            lhs: vec![enc.mu.len()],
            rhs: vec![k],
        });
    }
    let batch = g.shape(enc.cat_probs)[0];
    let ones_col = g.constant(&Tensor::full(vec![batch, 1], 1.0));
    let one = g.constant_scalar(1.0);
    let mut acc: Option<NodeId> = None;
    for c in 0..k {
        let (mu, log_var) = (enc.mu[c], enc.log_var[c]);
        if g.shape(mu) != [batch, d] {
            return Err(Error::ShapeMismatch {
                op: "gaussian_kl_expected",
                lhs: g.shape(mu).to_vec(),
                rhs: vec![batch, d],
            });
        }
        let var = g.exp(log_var)?;
        let prior_row = Tensor::new(vec![1, d], prior.mean_of(c)?.to_vec()).expect("d values");
        let prior_row = g.constant(&prior_row);
        let prior_bcast = g.matmul(ones_col, prior_row)?;
        let diff = g.sub(mu, prior_bcast)?;
        let diff_sq = g.square(diff);
        let sum_terms = g.add(var, diff_sq)?;
        let sum_terms = g.sub(sum_terms, one)?;
        let sum_terms = g.sub(sum_terms, log_var)?;
        let per_sample = row_sums(g, sum_terms)?;
        let half = g.scalar_mul(per_sample, 0.5)?;
        let weight = column(g, enc.cat_probs, c)?;
        let weighted = g.mul(half, weight)?;
        acc = Some(match acc {
            None => weighted,
            Some(a) => g.add(a, weighted)?,
        });
    }
    Ok(g.mean(acc.expect("K >= 1")))
}

/// The information term: −(1/n) Σ log q(c_i | decode(z_i)) over prior draws
/// (c_i, z_i). Minimizing it pushes decoded categories to be recognizable,
/// a variational lower bound on the category/sample mutual information.
/// Gradients reach the classifier and, unless `detach_decoder`, the decoder.
#[allow(clippy::too_many_arguments)]
pub fn info_max_term(
    g: &mut Graph,
    model: &Model,
    binding: &Binding,
    prior: &LatentPrior,
    rng: &mut Rng,
    n_samples: usize,
    dropout: bool,
    detach_decoder: bool,
) -> Result<NodeId> {
    if n_samples == 0 {
        return Err(Error::BadModelConfig(
            "info term needs at least one prior sample".into(),
        ));
    }
    let (cats, z) = sample_prior_batch(prior, n_samples, rng);
    let z = g.constant(&z);
    let dec = model.decode(g, binding, z, train_rng(rng, dropout))?;
    let image = if detach_decoder {
        let frozen = g.tensor(dec.mean);
        g.constant(&frozen)
    } else {
        dec.mean
    };
    let logits = model.classify(g, binding, image, train_rng(rng, dropout))?;
    // log-softmax keeps log q finite even where softmax would round to 0.
    let log_p = g.log_softmax_rows(logits)?;
    let mask = g.constant(&one_hot_from_indices(&cats, prior.num_categories()));
    let picked = g.mul(log_p, mask)?;
    let total = g.sum(picked);
    g.scalar_mul(total, -1.0 / n_samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::finite_difference_check;
    use crate::model::{build_prior_means, ModelConfig};
    use crate::nn::ParameterStore;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            num_categories: 4,
            latent_dim: 8,
            lambda: 2.0,
            input_dim: 12,
            hidden_dim: 16,
            dropout_rate: 0.25,
        }
    }

    fn build_model(cfg: ModelConfig, seed: u64) -> (ParameterStore, Model, LatentPrior) {
        let prior = build_prior_means(cfg.num_categories, cfg.latent_dim, cfg.lambda).unwrap();
        let mut store = ParameterStore::new();
        let mut rng = Rng::new(seed);
        let model = Model::new(&mut store, &mut rng, cfg).unwrap();
        (store, model, prior)
    }

    /// Zeroes a whole layer so its output is the bias (also zero).
    fn zero_layer(store: &mut ParameterStore, prefix: &str) {
        let w = store.get(&format!("{prefix}.w")).unwrap().shape().to_vec();
        let b = store.get(&format!("{prefix}.b")).unwrap().shape().to_vec();
        store.set(&format!("{prefix}.w"), Tensor::zeros(w)).unwrap();
        store.set(&format!("{prefix}.b"), Tensor::zeros(b)).unwrap();
    }

    fn set_bias(store: &mut ParameterStore, name: &str, value: Tensor) {
        store.set(name, value).unwrap();
    }

    #[test]
    fn bce_recon_is_input_dim_ln2_when_decoder_says_half() {
        // Zeroed output layer → every pixel gets probability 1/2, costing
        // ln 2 regardless of the binary target: 784 · ln 2 ≈ 543.427.
        let cfg = ModelConfig {
            input_dim: 784,
            ..ModelConfig::mnist_default()
        };
        let (mut store, model, _prior) = build_model(cfg, 1);
        zero_layer(&mut store, "decoder.out");
        let mut g = Graph::new();
        let binding = store.bind_all(&mut g);
        let mut rng = Rng::new(2);
        let x_data: Vec<f64> = (0..2 * 784).map(|i| f64::from(i % 2 == 0)).collect();
        let x = g.constant(&Tensor::new(vec![2, 784], x_data).unwrap());
        let enc = model.encode(&mut g, &binding, x, None).unwrap();
        let recon = reconstruction_term(
            &mut g,
            &model,
            &binding,
            x,
            &enc,
            &mut rng,
            false,
            Likelihood::Bernoulli,
        )
        .unwrap();
        let got = g.scalar_value(recon).unwrap();
        let want = 784.0 * std::f64::consts::LN_2;
        assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
    }

    #[test]
    fn gaussian_recon_is_zero_for_perfect_reconstruction() {
        // x = 0.5 everywhere and a zeroed output layer reconstruct exactly.
        let (mut store, model, _prior) = build_model(tiny_cfg(), 3);
        zero_layer(&mut store, "decoder.out");
        let mut g = Graph::new();
        let binding = store.bind_all(&mut g);
        let mut rng = Rng::new(4);
        let x = g.constant(&Tensor::full(vec![3, 12], 0.5));
        let enc = model.encode(&mut g, &binding, x, None).unwrap();
        let recon = reconstruction_term(
            &mut g,
            &model,
            &binding,
            x,
            &enc,
            &mut rng,
            false,
            Likelihood::Gaussian,
        )
        .unwrap();
        assert_eq!(g.scalar_value(recon), Some(0.0));
    }

    #[test]
    fn one_hot_weights_reduce_recon_to_a_single_branch() {
        let cfg = tiny_cfg();
        let (mut store, model, _prior) = build_model(cfg.clone(), 5);
        // Deterministic branches: log-variance pinned far negative so
        // z ≈ mu up to e^{-400}, and per-category mu from the one-hot rows.
        zero_layer(&mut store, "encoder.trunk");
        zero_layer(&mut store, "encoder.logvar");
        set_bias(
            &mut store,
            "encoder.logvar.b",
            Tensor::full(vec![1, 8], -800.0),
        );
        // Classifier forced one-hot at category 2.
        zero_layer(&mut store, "encoder.classifier");
        let mut logits = vec![-40.0; 4];
        logits[2] = 40.0;
        set_bias(
            &mut store,
            "encoder.classifier.b",
            Tensor::new(vec![1, 4], logits).unwrap(),
        );

        let mut g = Graph::new();
        let binding = store.bind_all(&mut g);
        let mut rng = Rng::new(6);
        let x = g.constant(&Tensor::full(vec![2, 12], 0.25));
        let enc = model.encode(&mut g, &binding, x, None).unwrap();
        let recon = reconstruction_term(
            &mut g,
            &model,
            &binding,
            x,
            &enc,
            &mut rng,
            false,
            Likelihood::Bernoulli,
        )
        .unwrap();

        // Independent single-branch evaluation: decode mu_2 directly.
        let mu2 = g.tensor(enc.mu[2]);
        let z = g.constant(&mu2);
        let dec = model.decode(&mut g, &binding, z, None).unwrap();
        let pixels = g.bce_with_logits(dec.logits, x).unwrap();
        let want = {
            let rows = row_sums(&mut g, pixels).unwrap();
            let m = g.mean(rows);
            g.scalar_value(m).unwrap()
        };
        let got = g.scalar_value(recon).unwrap();
        assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
    }

    #[test]
    fn categorical_kl_reference_values() {
        // Uniform → 0; one-hot → ln K; (0.75, 0.25) → 0.130812.
        let mut g = Graph::new();
        let uniform = g.constant(&Tensor::zeros(vec![1, 10]));
        let p = g.softmax_rows(uniform).unwrap();
        let kl = categorical_kl(&mut g, p, uniform).unwrap();
        assert!(g.scalar_value(kl).unwrap().abs() < 1e-12);

        let mut hot = vec![-40.0; 10];
        hot[3] = 40.0;
        let hot = g.constant(&Tensor::new(vec![1, 10], hot).unwrap());
        let p = g.softmax_rows(hot).unwrap();
        let kl = categorical_kl(&mut g, p, hot).unwrap();
        assert!((g.scalar_value(kl).unwrap() - 10f64.ln()).abs() < 1e-9);

        let logits = g.constant(&Tensor::new(vec![1, 2], vec![0.75f64.ln(), 0.25f64.ln()]).unwrap());
        let p = g.softmax_rows(logits).unwrap();
        let kl = categorical_kl(&mut g, p, logits).unwrap();
        assert!((g.scalar_value(kl).unwrap() - 0.130812).abs() < 1e-6);
    }

    #[test]
    fn categorical_kl_stays_in_range_and_batch_averages() {
        let mut rng = Rng::new(7);
        let mut g = Graph::new();
        let logits = g.constant(&Tensor::new(vec![50, 6], rng.normal_vec(300)).unwrap());
        let p = g.softmax_rows(logits).unwrap();
        let kl = categorical_kl(&mut g, p, logits).unwrap();
        let v = g.scalar_value(kl).unwrap();
        assert!(v >= 0.0 && v <= 6f64.ln(), "kl = {v}");
    }

    #[test]
    fn gaussian_kl_reference_values() {
        let cfg = ModelConfig::mnist_default();
        let (mut store, model, prior) = build_model(cfg, 8);
        // mu head reproduces the prior mean of each category exactly via the
        // one-hot block of its weight matrix; log-variance on zero.
        zero_layer(&mut store, "encoder.trunk");
        zero_layer(&mut store, "encoder.logvar");
        let mut w = Tensor::zeros(vec![410, 20]);
        for c in 0..10 {
            for (j, &m) in prior.mean_of(c).unwrap().iter().enumerate() {
                w.data_mut()[(400 + c) * 20 + j] = m;
            }
        }
        store.set("encoder.mu.w", w.clone()).unwrap();
        set_bias(&mut store, "encoder.mu.b", Tensor::zeros(vec![1, 20]));

        let eval_kl = |store: &ParameterStore| {
            let mut g = Graph::new();
            let binding = store.bind_all(&mut g);
            let x = g.constant(&Tensor::full(vec![2, 784], 0.5));
            let enc = model.encode(&mut g, &binding, x, None).unwrap();
            let kl = gaussian_kl_expected(&mut g, &enc, &prior).unwrap();
            g.scalar_value(kl).unwrap()
        };

        // Matching means, unit variance → 0.
        assert!(eval_kl(&store).abs() < 1e-12);

        // Every coordinate offset by 1 (σ² = 1): ½ · 20 = 10, for any
        // category weighting since all branches cost the same.
        let mut w_off = w.clone();
        for c in 0..10 {
            for j in 0..20 {
                w_off.data_mut()[(400 + c) * 20 + j] += 1.0;
            }
        }
        store.set("encoder.mu.w", w_off).unwrap();
        assert!((eval_kl(&store) - 10.0).abs() < 1e-12);

        // Back to matching means but σ² = 2: 20 · ½(2 − 1 − ln 2) ≈ 3.0685.
        store.set("encoder.mu.w", w).unwrap();
        set_bias(
            &mut store,
            "encoder.logvar.b",
            Tensor::full(vec![1, 20], std::f64::consts::LN_2),
        );
        let want = 10.0 * (1.0 - std::f64::consts::LN_2);
        assert!((eval_kl(&store) - want).abs() < 1e-9);
    }

    #[test]
    fn info_term_is_log_k_for_a_blind_classifier() {
        let (mut store, model, prior) = build_model(tiny_cfg(), 9);
        zero_layer(&mut store, "encoder.classifier");
        let mut g = Graph::new();
        let binding = store.bind_all(&mut g);
        let mut rng = Rng::new(10);
        let info = info_max_term(&mut g, &model, &binding, &prior, &mut rng, 64, false, false)
            .unwrap();
        assert!((g.scalar_value(info).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn info_term_is_zero_with_a_single_category() {
        // K = 1 makes q(c|x̃) ≡ 1: a perfect classifier by construction.
        let cfg = ModelConfig {
            num_categories: 1,
            latent_dim: 2,
            ..tiny_cfg()
        };
        let (store, model, prior) = build_model(cfg, 11);
        let mut g = Graph::new();
        let binding = store.bind_all(&mut g);
        let mut rng = Rng::new(12);
        let info = info_max_term(&mut g, &model, &binding, &prior, &mut rng, 16, false, false)
            .unwrap();
        assert_eq!(g.scalar_value(info), Some(0.0));
    }

    #[test]
    fn info_gradients_reach_classifier_and_decoder_unless_detached() {
        let (store, model, prior) = build_model(tiny_cfg(), 13);
        let grads_nonzero = |detach: bool| {
            let mut g = Graph::new();
            let binding = store.bind_all(&mut g);
            let mut rng = Rng::new(14);
            let info =
                info_max_term(&mut g, &model, &binding, &prior, &mut rng, 32, false, detach)
                    .unwrap();
            g.backward(info).unwrap();
            let nonzero = |name: &str| {
                g.grad(binding.get(name).unwrap())
                    .map(|gr| gr.iter().any(|&v| v != 0.0))
                    .unwrap_or(false)
            };
            (nonzero("encoder.classifier.w"), nonzero("decoder.out.w"))
        };
        assert_eq!(grads_nonzero(false), (true, true));
        assert_eq!(grads_nonzero(true), (true, false));
    }

    #[test]
    fn total_loss_composes_terms_and_validates_betas() {
        let (store, model, prior) = build_model(tiny_cfg(), 15);
        let mut rng = Rng::new(16);
        let x = Tensor::new(vec![4, 12], rng.uniform_vec(48)).unwrap();

        let mut obj = Objective::new(Mode::InfoCatVae);
        obj.info_samples = 8;
        let mut g = Graph::new();
        let binding = store.bind_all(&mut g);
        let nodes = obj
            .build(&mut g, &model, &binding, &prior, &x, &mut rng, false)
            .unwrap();
        let b = nodes.breakdown(&g).unwrap();
        let recomposed = b.recon + 10.0 * b.kl_cat + 10.0 * b.kl_gauss + 100.0 * b.info;
        assert!((b.total - recomposed).abs() < 1e-6);
        assert!(b.recon >= 0.0 && b.kl_cat >= 0.0 && b.kl_gauss >= 0.0 && b.info >= 0.0);

        // All betas zero → total = recon alone.
        let mut free = Objective::new(Mode::VanillaCatVae);
        free.betas = Betas {
            cont: 0.0,
            cat: 0.0,
            info: 0.0,
        };
        let mut g = Graph::new();
        let binding = store.bind_all(&mut g);
        let mut rng = Rng::new(16);
        let nodes = free
            .build(&mut g, &model, &binding, &prior, &x, &mut rng, false)
            .unwrap();
        let b = nodes.breakdown(&g).unwrap();
        assert_eq!(b.total, b.recon);
        assert_eq!(b.info, 0.0);

        let mut bad = Objective::new(Mode::VanillaCatVae);
        bad.betas.cat = -1.0;
        let mut g = Graph::new();
        let binding = store.bind_all(&mut g);
        assert!(matches!(
            bad.build(&mut g, &model, &binding, &prior, &x, &mut rng, false),
            Err(Error::NegativeBeta)
        ));
    }

    #[test]
    fn vanilla_mode_omits_the_info_node() {
        let (store, model, prior) = build_model(tiny_cfg(), 17);
        let mut rng = Rng::new(18);
        let x = Tensor::new(vec![2, 12], rng.uniform_vec(24)).unwrap();
        let mut g = Graph::new();
        let binding = store.bind_all(&mut g);
        let nodes = Objective::new(Mode::VanillaCatVae)
            .build(&mut g, &model, &binding, &prior, &x, &mut rng, false)
            .unwrap();
        assert!(nodes.info.is_none());
    }

    #[test]
    fn every_term_passes_finite_difference_checks() {
        // Perturb one parameter tensor per term, dropout off, noise frozen
        // by reseeding inside the closure.
        let (store, model, prior) = build_model(tiny_cfg(), 19);
        let x = Tensor::new(vec![3, 12], Rng::new(20).uniform_vec(36)).unwrap();

        let check = |param: &str, term: &str| {
            let err = finite_difference_check(
                |g, leaf| {
                    let binding = store.bind_with_override(g, param, leaf)?;
                    let mut rng = Rng::new(21);
                    let x_id = g.constant(&x);
                    let enc = model.encode(g, &binding, x_id, None)?;
                    match term {
                        "recon" => reconstruction_term(
                            g,
                            &model,
                            &binding,
                            x_id,
                            &enc,
                            &mut rng,
                            false,
                            Likelihood::Bernoulli,
                        ),
                        "recon_gauss" => reconstruction_term(
                            g,
                            &model,
                            &binding,
                            x_id,
                            &enc,
                            &mut rng,
                            false,
                            Likelihood::Gaussian,
                        ),
                        "kl_cat" => categorical_kl(g, enc.cat_probs, enc.cat_logits),
                        "kl_gauss" => gaussian_kl_expected(g, &enc, &prior),
                        "info" => {
                            info_max_term(g, &model, &binding, &prior, &mut rng, 8, false, false)
                        }
                        _ => unreachable!(),
                    }
                },
                store.get(param).unwrap(),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "{term} via {param}: err = {err}");
        };

        check("encoder.trunk.w", "recon");
        check("decoder.out.b", "recon");
        check("encoder.mu.w", "recon_gauss");
        check("encoder.classifier.w", "kl_cat");
        check("encoder.mu.w", "kl_gauss");
        check("encoder.logvar.b", "kl_gauss");
        check("decoder.hidden.w", "info");
        check("encoder.classifier.b", "info");
    }
}
