//! The networks and the fixed categorical prior.
//!
//! The latent space is split into K blocks of width δ = d/K. Category c's
//! prior mean puts λ on its own block and zero elsewhere, so the K means are
//! pairwise orthogonal with squared norm δλ², and the prior over z is the
//! uniform mixture of N(μ_c, I).
//!
//! Inference is category-conditioned: a shared trunk embeds x, a softmax
//! head produces q(c|x), and a shared pair of heads maps [trunk ⊕ onehot(c)]
//! to the mean and log-variance of q(z|c,x) for every candidate c. The
//! decoder mirrors the trunk back to pixel space through a sigmoid.

use crate::error::{Error, Result};
use crate::nn::{Binding, Dropout, Linear, ParameterStore};
use crate::{Graph, NodeId, Rng, Tensor};

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub num_categories: usize,
    pub latent_dim: usize,
    pub lambda: f64,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
}

impl ModelConfig {
    /// The dimensions and scale used for the MNIST-class experiments.
    pub fn mnist_default() -> Self {
        ModelConfig {
            num_categories: 10,
            latent_dim: 20,
            lambda: 2.0,
            input_dim: 784,
            hidden_dim: 400,
            dropout_rate: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_categories", self.num_categories),
            ("latent_dim", self.latent_dim),
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
        ] {
            if v == 0 {
                return Err(Error::BadModelConfig(format!("{name} must be positive")));
            }
        }
        if self.latent_dim % self.num_categories != 0 {
            return Err(Error::IndivisibleLatent {
                d: self.latent_dim,
                k: self.num_categories,
            });
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::BadModelConfig(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::BadDropoutRate(self.dropout_rate));
        }
        Ok(())
    }

    /// Per-category block width δ.
    pub fn delta(&self) -> usize {
        self.latent_dim / self.num_categories
    }
}

/// The fixed mixture prior: K unit-covariance Gaussians at block-structured
/// means, categories weighted uniformly.
pub struct LatentPrior {
    means: Tensor, // (K, d)
    k: usize,
    d: usize,
}

impl LatentPrior {
    pub fn num_categories(&self) -> usize {
        self.k
    }

    pub fn latent_dim(&self) -> usize {
        self.d
    }

    /// All means as a (K, d) tensor.
    pub fn means(&self) -> &Tensor {
        &self.means
    }

    pub fn mean_of(&self, c: usize) -> Result<&[f64]> {
        if c >= self.k {
            return Err(Error::CategoryOutOfRange { c, k: self.k });
        }
        Ok(&self.means.data()[c * self.d..(c + 1) * self.d])
    }
}

/// Builds the prior means: row c holds `lambda` on coordinates
/// [c·δ, (c+1)·δ) and zero elsewhere.
pub fn build_prior_means(k: usize, d: usize, lambda: f64) -> Result<LatentPrior> {
    if k == 0 || d == 0 {
        return Err(Error::BadModelConfig(
            "prior needs positive category count and latent dimension".into(),
        ));
    }
    if d % k != 0 {
        return Err(Error::IndivisibleLatent { d, k });
    }
    let delta = d / k;
    let mut data = vec![0.0; k * d];
    for c in 0..k {
        for j in c * delta..(c + 1) * delta {
            data[c * d + j] = lambda;
        }
    }
    Ok(LatentPrior {
        means: Tensor::new(vec![k, d], data).expect("k*d data"),
        k,
        d,
    })
}

/// Per-category posterior statistics for one batch.
///
/// `mu[c]` and `log_var[c]` are (batch, d) nodes for candidate category c;
/// stacked over c they form the (batch, K, d) family the objective weights
/// by `cat_probs`. `cat_logits` is kept alongside the softmax so losses can
/// take exact log-probabilities through log-softmax instead of log(probs).
pub struct EncoderOutput {
    pub cat_logits: NodeId,
    pub cat_probs: NodeId,
    pub mu: Vec<NodeId>,
    pub log_var: Vec<NodeId>,
}

/// Decoder output: `mean` = sigmoid(`logits`). The logits feed the fused
/// cross-entropy; the mean is the image.
pub struct Decoded {
    pub mean: NodeId,
    pub logits: NodeId,
}

pub struct Model {
    pub cfg: ModelConfig,
    enc_trunk: Linear,
    enc_drop: Dropout,
    classifier: Linear,
    mu_head: Linear,
    logvar_head: Linear,
    dec_hidden: Linear,
    dec_drop_hidden: Dropout,
    dec_out: Linear,
    dec_drop_out: Dropout,
}

impl Model {
    /// Registers all parameters in `store` (fan-in uniform init) and wires
    /// the layers to the dimensions in `cfg`.
    pub fn new(store: &mut ParameterStore, rng: &mut Rng, cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (input, hidden) = (cfg.input_dim, cfg.hidden_dim);
        let (k, d) = (cfg.num_categories, cfg.latent_dim);
        let enc_trunk = Linear::new(store, rng, "encoder.trunk", input, hidden)?;
        let classifier = Linear::new(store, rng, "encoder.classifier", hidden, k)?;
        let mu_head = Linear::new(store, rng, "encoder.mu", hidden + k, d)?;
        let logvar_head = Linear::new(store, rng, "encoder.logvar", hidden + k, d)?;
        let dec_hidden = Linear::new(store, rng, "decoder.hidden", d, hidden)?;
        let dec_out = Linear::new(store, rng, "decoder.out", hidden, input)?;
        let drop = cfg.dropout_rate;
        Ok(Model {
            cfg,
            enc_trunk,
            enc_drop: Dropout::new(drop)?,
            classifier,
            mu_head,
            logvar_head,
            dec_hidden,
            dec_drop_hidden: Dropout::new(drop)?,
            dec_out,
            dec_drop_out: Dropout::new(drop)?,
        })
    }

    /// Shared feature extractor: ReLU(Dropout(FC input→hidden)).
    fn trunk_features(
        &self,
        g: &mut Graph,
        binding: &Binding,
        x: NodeId,
        rng: Option<&mut Rng>,
    ) -> Result<NodeId> {
        match g.shape(x) {
            [_, cols] if *cols == self.cfg.input_dim => {}
            other => {
                return Err(Error::BadShape {
                    op: "encode",
                    shape: other.to_vec(),
                    reason: "expected (batch, input_dim)",
                })
            }
        }
        let pre = self.enc_trunk.forward(g, binding, x)?;
        let dropped = self.enc_drop.apply(g, pre, rng)?;
        Ok(g.relu(dropped))
    }

    /// Category logits for q(c|x) without the Gaussian heads; the
    /// information term only needs the classifier.
    pub fn classify(
        &self,
        g: &mut Graph,
        binding: &Binding,
        x: NodeId,
        rng: Option<&mut Rng>,
    ) -> Result<NodeId> {
        let trunk = self.trunk_features(g, binding, x, rng)?;
        self.classifier.forward(g, binding, trunk)
    }

    /// Runs the inference networks on a (batch, input_dim) node. `rng: Some`
    /// enables dropout (training); `None` is the deterministic eval path.
    pub fn encode(
        &self,
        g: &mut Graph,
        binding: &Binding,
        x: NodeId,
        rng: Option<&mut Rng>,
    ) -> Result<EncoderOutput> {
        let k = self.cfg.num_categories;
        let trunk = self.trunk_features(g, binding, x, rng)?;
        let batch = g.shape(trunk)[0];

        let cat_logits = self.classifier.forward(g, binding, trunk)?;
        let cat_probs = g.softmax_rows(cat_logits)?;

        let mut mu = Vec::with_capacity(k);
        let mut log_var = Vec::with_capacity(k);
        for c in 0..k {
            let onehot = g.constant(&one_hot_rows(batch, k, c));
            let conditioned = g.concat_cols(trunk, onehot)?;
            mu.push(self.mu_head.forward(g, binding, conditioned)?);
            log_var.push(self.logvar_head.forward(g, binding, conditioned)?);
        }
        Ok(EncoderOutput {
            cat_logits,
            cat_probs,
            mu,
            log_var,
        })
    }

    /// Maps a (batch, d) latent node to pixel space.
    pub fn decode(
        &self,
        g: &mut Graph,
        binding: &Binding,
        z: NodeId,
        mut rng: Option<&mut Rng>,
    ) -> Result<Decoded> {
        match g.shape(z) {
            [_, cols] if *cols == self.cfg.latent_dim => {}
            other => {
                return Err(Error::BadShape {
                    op: "decode",
                    shape: other.to_vec(),
                    reason: "expected (batch, latent_dim)",
                })
            }
        }
        let pre = self.dec_hidden.forward(g, binding, z)?;
        let dropped = self.dec_drop_hidden.apply(g, pre, rng.as_deref_mut())?;
        let hidden = g.relu(dropped);
        // The second dropout regularizes the hidden code feeding the output
        // layer; dropping pixels after the sigmoid would punch holes in the
        // image itself.
        let hidden = self.dec_drop_out.apply(g, hidden, rng)?;
        let logits = self.dec_out.forward(g, binding, hidden)?;
        let mean = g.sigmoid(logits);
        Ok(Decoded { mean, logits })
    }
}

/// z = mu + exp(log_var / 2) ⊙ ε with ε ~ N(0, I). The noise enters as a
/// constant, so gradients flow to mu and log_var only.
pub fn reparameterize(
    g: &mut Graph,
    mu: NodeId,
    log_var: NodeId,
    rng: &mut Rng,
) -> Result<NodeId> {
    let eps = rng.normal_tensor(g.shape(mu).to_vec());
    reparameterize_with_noise(g, mu, log_var, &eps)
}

/// Deterministic reparametrization for a caller-supplied ε.
pub fn reparameterize_with_noise(
    g: &mut Graph,
    mu: NodeId,
    log_var: NodeId,
    eps: &Tensor,
) -> Result<NodeId> {
    if g.shape(mu) != g.shape(log_var) {
        return Err(Error::ShapeMismatch {
            op: "reparameterize",
            lhs: g.shape(mu).to_vec(),
            rhs: g.shape(log_var).to_vec(),
        });
    }
    let half_log_var = g.scalar_mul(log_var, 0.5)?;
    let std = g.exp(half_log_var)?;
    let eps = g.constant(eps);
    let noise = g.mul(std, eps)?;
    g.add(mu, noise)
}

/// Draws (c, z) from the prior: c uniform over categories unless forced,
/// then z ~ N(μ_c, I). Returns z as a (1, d) tensor.
pub fn sample_prior(
    prior: &LatentPrior,
    c: Option<usize>,
    rng: &mut Rng,
) -> Result<(usize, Tensor)> {
    let k = prior.num_categories();
    let c = match c {
        Some(c) if c < k => c,
        Some(c) => return Err(Error::CategoryOutOfRange { c, k }),
        None => rng.below(k),
    };
    let mean = prior.mean_of(c)?;
    let d = prior.latent_dim();
    let data: Vec<f64> = mean.iter().map(|&m| m + rng.standard_normal()).collect();
    Ok((c, Tensor::new(vec![1, d], data).expect("d values")))
}

/// n independent prior draws, stacked into (n, d) with their categories.
pub fn sample_prior_batch(
    prior: &LatentPrior,
    n: usize,
    rng: &mut Rng,
) -> (Vec<usize>, Tensor) {
    let d = prior.latent_dim();
    let mut cats = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let (c, z) = sample_prior(prior, None, rng).expect("unforced draw cannot fail");
        cats.push(c);
        data.extend_from_slice(z.data());
    }
    (cats, Tensor::new(vec![n, d], data).expect("n*d values"))
}

/// (rows, k) matrix whose every row is e_hot.
pub fn one_hot_rows(rows: usize, k: usize, hot: usize) -> Tensor {
    debug_assert!(hot < k);
    let mut data = vec![0.0; rows * k];
    for r in 0..rows {
        data[r * k + hot] = 1.0;
    }
    Tensor::new(vec![rows, k], data).expect("rows*k values")
}

/// (n, k) matrix with row i = e_{hots[i]}.
pub fn one_hot_from_indices(hots: &[usize], k: usize) -> Tensor {
    let mut data = vec![0.0; hots.len() * k];
    for (r, &h) in hots.iter().enumerate() {
        debug_assert!(h < k);
        data[r * k + h] = 1.0;
    }
    Tensor::new(vec![hots.len(), k], data).expect("n*k values")
}
