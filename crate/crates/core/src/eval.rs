//! Evaluation tools: sample generation, kernel density scoring, latent
//! traversals, and portable graymap rendering.
//!
//! Everything here runs the deterministic forward path (dropout off). The
//! density eval follows the classic recipe for implicit generators: fit an
//! isotropic Gaussian KDE on generated samples, pick its bandwidth by
//! cross-validation, and report the mean log-density of held-out data.

use crate::autodiff::linalg::gemm_nt;
use crate::error::{Error, Result};
use crate::model::{build_prior_means, sample_prior, sample_prior_batch, LatentPrior, Model};
use crate::nn::ParameterStore;
use crate::objective::info_max_term;
use crate::{Graph, Rng, Tensor};

// ---- kernel density estimation ----

/// Isotropic Gaussian mixture centered on a fixed support set:
/// p(x) = (1/n) sum_i N(x; s_i, h^2 I).
pub struct KdeModel {
    support: Tensor,
    support_sq: Vec<f64>,
    bandwidth: f64,
}

fn row_sq_norms(points: &Tensor) -> Vec<f64> {
    let (n, d) = points.dims2().expect("matrix");
    (0..n)
        .map(|i| points.data()[i * d..(i + 1) * d].iter().map(|v| v * v).sum())
        .collect()
}

fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl KdeModel {
    pub fn new(support: Tensor, bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::BadBandwidth(bandwidth));
        }
        if support.dims2().is_none() {
            return Err(Error::BadShape {
                op: "kde support",
                shape: support.shape().to_vec(),
                reason: "expected (points, dim)",
            });
        }
        let support_sq = row_sq_norms(&support);
        Ok(KdeModel {
            support,
            support_sq,
            bandwidth,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// log p(x) for every row of `points`, evaluated in blocks so the
    /// cross-distance matrix never exceeds a few megabytes.
    pub fn log_density(&self, points: &Tensor) -> Result<Vec<f64>> {
        let (n, d) = self.support.dims2().expect("validated in new");
        let (m, dp) = points.dims2().ok_or(Error::BadShape {
            op: "kde eval",
            shape: points.shape().to_vec(),
            reason: "expected (points, dim)",
        })?;
        if dp != d {
            return Err(Error::ShapeMismatch {
                op: "kde eval",
                lhs: points.shape().to_vec(),
                rhs: self.support.shape().to_vec(),
            });
        }
        let h2 = self.bandwidth * self.bandwidth;
        let log_norm = (n as f64).ln()
            + 0.5 * d as f64 * (2.0 * std::f64::consts::PI * h2).ln();

        const BLOCK: usize = 256;
        let mut out = Vec::with_capacity(m);
        let mut cross = vec![0.0; BLOCK * n];
        let mut row = vec![0.0; n];
        let point_sq = row_sq_norms(points);
        for start in (0..m).step_by(BLOCK) {
            let b = BLOCK.min(m - start);
            let chunk = &points.data()[start * d..(start + b) * d];
            cross[..b * n].fill(0.0);
            gemm_nt(chunk, self.support.data(), &mut cross[..b * n], b, d, n);
            for i in 0..b {
                for j in 0..n {
                    // Rounding can push tiny distances below zero.
                    let d2 = (point_sq[start + i] + self.support_sq[j]
                        - 2.0 * cross[i * n + j])
                        .max(0.0);
                    row[j] = -d2 / (2.0 * h2);
                }
                out.push(logsumexp(&row) - log_norm);
            }
        }
        Ok(out)
    }

    pub fn mean_log_density(&self, points: &Tensor) -> Result<f64> {
        let lls = self.log_density(points)?;
        Ok(lls.iter().sum::<f64>() / lls.len() as f64)
    }
}

/// `n` geometrically spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo, "degenerate log grid");
    let ratio = (hi / lo).powf(1.0 / (n - 1) as f64);
    (0..n).map(|i| lo * ratio.powi(i as i32)).collect()
}

/// The bandwidth grid used when nothing else is specified.
pub fn default_bandwidth_grid() -> Vec<f64> {
    log_space(0.05, 1.0, 20)
}

/// Picks the grid bandwidth maximizing held-out log-density under
/// deterministic round-robin k-fold cross-validation (point i falls in fold
/// i mod k). Ties go to the smaller bandwidth.
pub fn fit_bandwidth(points: &Tensor, folds: usize, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::EmptyBandwidthGrid);
    }
    for &h in grid {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::BadBandwidth(h));
        }
    }
    let (n, d) = points.dims2().ok_or(Error::BadShape {
        op: "bandwidth fit",
        shape: points.shape().to_vec(),
        reason: "expected (points, dim)",
    })?;
    if folds < 2 || n < folds {
        return Err(Error::TooFewPoints { points: n, folds });
    }

    // One n x n squared-distance table shared by every (fold, bandwidth) pair.
    let sq = row_sq_norms(points);
    let mut cross = vec![0.0; n * n];
    gemm_nt(points.data(), points.data(), &mut cross, n, d, n);
    let d2: Vec<f64> = (0..n * n)
        .map(|ij| (sq[ij / n] + sq[ij % n] - 2.0 * cross[ij]).max(0.0))
        .collect();
    let fold_size = |f: usize| (n - f).div_ceil(folds);

    let mut best = (f64::NEG_INFINITY, grid[0]);
    let mut row = Vec::with_capacity(n);
    for &h in grid {
        let h2 = h * h;
        let mut total = 0.0;
        for i in 0..n {
            row.clear();
            let fold = i % folds;
            for j in 0..n {
                if j % folds != fold {
                    row.push(-d2[i * n + j] / (2.0 * h2));
                }
            }
            let support = n - fold_size(fold);
            total += logsumexp(&row)
                - (support as f64).ln()
                - 0.5 * d as f64 * (2.0 * std::f64::consts::PI * h2).ln();
        }
        if total > best.0 {
            best = (total, h);
        }
    }
    Ok(best.1)
}

// ---- generation ----

/// Decodes latent rows through the deterministic path.
pub fn decode_latents(model: &Model, store: &ParameterStore, z: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let binding = store.bind_all(&mut g);
    let z = g.constant(z);
    let dec = model.decode(&mut g, &binding, z, None)?;
    Ok(g.tensor(dec.mean))
}

/// `n` unconditional prior draws decoded to images, with their categories.
pub fn sample_images(
    model: &Model,
    store: &ParameterStore,
    prior: &LatentPrior,
    n: usize,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Tensor)> {
    let (cats, z) = sample_prior_batch(prior, n, rng);
    Ok((cats, decode_latents(model, store, &z)?))
}

/// One row per category, `per_class` draws each, in category-major order.
pub fn sample_class_grid(
    model: &Model,
    store: &ParameterStore,
    prior: &LatentPrior,
    per_class: usize,
    rng: &mut Rng,
) -> Result<Tensor> {
    if per_class == 0 {
        return Err(Error::BadModelConfig("per_class must be at least 1".into()));
    }
    let k = prior.num_categories();
    let d = prior.latent_dim();
    let mut data = Vec::with_capacity(k * per_class * d);
    for c in 0..k {
        for _ in 0..per_class {
            let (_, z) = sample_prior(prior, Some(c), rng)?;
            data.extend_from_slice(z.data());
        }
    }
    decode_latents(model, store, &Tensor::new(vec![k * per_class, d], data)?)
}

/// Mean cross-entropy between the category a sample was drawn from and the
/// classifier's prediction on its decoded image: the information term of
/// the training objective, evaluated without dropout. Lower means the
/// generator keeps categories recognizable.
pub fn generated_crossentropy(
    model: &Model,
    store: &ParameterStore,
    prior: &LatentPrior,
    n: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let mut g = Graph::new();
    let binding = store.bind_all(&mut g);
    let node = info_max_term(&mut g, model, &binding, prior, rng, n, false, false)?;
    Ok(g.scalar_value(node).expect("info term is scalar"))
}

// ---- latent traversals ----

/// Latents walking each prior mean toward the next one (cyclically):
/// row c, column j holds (1-t) mu_c + t mu_{c+1 mod K} at t = j/(steps-1),
/// so the first and last columns sit exactly on prior means.
pub fn interpolation_latents(prior: &LatentPrior, steps: usize) -> Result<Tensor> {
    if steps < 2 {
        return Err(Error::BadModelConfig(
            "interpolation needs at least the two endpoint steps".into(),
        ));
    }
    let k = prior.num_categories();
    let d = prior.latent_dim();
    let mut data = Vec::with_capacity(k * steps * d);
    for c in 0..k {
        let a = prior.mean_of(c)?;
        let b = prior.mean_of((c + 1) % k)?;
        for j in 0..steps {
            let t = j as f64 / (steps - 1) as f64;
            data.extend(a.iter().zip(b).map(|(&x, &y)| (1.0 - t) * x + t * y));
        }
    }
    Tensor::new(vec![k * steps, d], data)
}

/// Decoded mean-to-mean interpolation grid, K rows by `steps` columns.
pub fn interpolate_centroids(
    model: &Model,
    store: &ParameterStore,
    prior: &LatentPrior,
    steps: usize,
) -> Result<Tensor> {
    decode_latents(model, store, &interpolation_latents(prior, steps)?)
}

/// Prior means rebuilt at each scale in `lambdas`: row for a scale holds
/// the K category means in order. Scale 0 collapses every category to the
/// origin; the training-time scale reproduces the actual prior means.
pub fn sweep_latents(prior: &LatentPrior, lambdas: &[f64]) -> Result<Tensor> {
    if lambdas.is_empty() {
        return Err(Error::BadModelConfig("lambda sweep needs at least one value".into()));
    }
    let k = prior.num_categories();
    let d = prior.latent_dim();
    let mut data = Vec::with_capacity(lambdas.len() * k * d);
    for &lambda in lambdas {
        if !lambda.is_finite() {
            return Err(Error::BadModelConfig(format!(
                "lambda sweep values must be finite, got {lambda}"
            )));
        }
        let means = build_prior_means(k, d, lambda)?;
        data.extend_from_slice(means.means().data());
    }
    Tensor::new(vec![lambdas.len() * k, d], data)
}

/// Decoded prior means at several scales, one row per scale, K columns.
pub fn lambda_sweep(
    model: &Model,
    store: &ParameterStore,
    prior: &LatentPrior,
    lambdas: &[f64],
) -> Result<Tensor> {
    decode_latents(model, store, &sweep_latents(prior, lambdas)?)
}

// ---- rendering ----

/// Renders (rows*cols, side*side) images into one binary PGM (P5), row-major
/// with `sep`-pixel white gutters between tiles and no outer border.
/// Intensities map through round(v*255) clamped to [0, 255].
pub fn render_grid(images: &Tensor, rows: usize, cols: usize, sep: usize) -> Result<Vec<u8>> {
    let (count, pixels) = images.dims2().ok_or(Error::BadShape {
        op: "render grid",
        shape: images.shape().to_vec(),
        reason: "expected (images, pixels)",
    })?;
    if count != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::GridCountMismatch {
            expected: rows * cols,
            rows,
            cols,
            actual: count,
        });
    }
    let side = (pixels as f64).sqrt().round() as usize;
    if side * side != pixels {
        return Err(Error::BadImageLength(pixels, side * side));
    }

    let width = cols * side + (cols - 1) * sep;
    let height = rows * side + (rows - 1) * sep;
    let mut canvas = vec![255u8; width * height];
    for r in 0..rows {
        for c in 0..cols {
            let img = &images.data()[(r * cols + c) * pixels..(r * cols + c + 1) * pixels];
            let top = r * (side + sep);
            let left = c * (side + sep);
            for y in 0..side {
                let dst = (top + y) * width + left;
                for x in 0..side {
                    let v = (img[y * side + x] * 255.0 + 0.5).floor();
                    canvas[dst + x] = v.clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&canvas);
    Ok(out)
}
