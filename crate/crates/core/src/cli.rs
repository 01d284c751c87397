//! Command-line interface: training, generation, evaluation, and the
//! self-diagnostic gradient check.
//!
//! Exit codes: 0 success, 1 usage, 2 validation or I/O problems, 3
//! numerical failures (non-finite losses, failed gradient checks).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::autodiff::gradcheck::finite_difference_check;
use crate::config;
use crate::data::{synth, IdxDataset};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::ModelConfig;
use crate::nn::ParameterStore;
use crate::objective::{Mode, Objective};
use crate::train::{load_model, metrics_header, metrics_line, TrainConfig, Trainer};
use crate::{Rng, Tensor};

#[derive(Parser)]
#[command(
    name = "infocatvae",
    about = "Categorical VAE with a fixed multimodal prior and an information-maximization term",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train a model and write checkpoints plus per-epoch metrics
    Train(TrainArgs),
    /// Decode per-category prior samples into a PGM grid
    Sample(SampleArgs),
    /// Decode interpolations from each category mean to the next
    Interpolate(InterpolateArgs),
    /// Decode the category means at several prior scales
    Sweep(SweepArgs),
    /// Mean KDE log-density of held-out data under generated samples
    EvalLl(EvalLlArgs),
    /// Classifier cross-entropy on freshly generated samples
    EvalCe(EvalCeArgs),
    /// Finite-difference check of the full objective on a small model
    Gradcheck(GradcheckArgs),
    /// Generate the synthetic digit corpus in IDX format
    SynthData(SynthDataArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// Config file of key = value lines; command-line flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory holding train-images-idx3-ubyte[.gz] and, optionally,
    /// train-labels-idx1-ubyte[.gz]
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
    /// Run directory for metrics, checkpoints, and the echoed config
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// infocatvae or vanilla_catvae
    #[arg(long)]
    pub mode: Option<String>,
    /// Train on only the first N samples
    #[arg(long)]
    pub limit: Option<usize>,
    /// Also write a checkpoint every N epochs
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from an existing checkpoint instead of initializing fresh
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Samples drawn per category (grid columns)
    #[arg(long, default_value_t = 10)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "samples.pgm")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Frames per category pair, endpoints included
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value = "interpolation.pgm")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Prior scales to decode, one grid row each
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,1.5,2,3")]
    pub lambda_values: Vec<f64>,
    #[arg(long, default_value = "sweep.pgm")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalLlArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory holding t10k-images-idx3-ubyte[.gz]
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
    /// Generated samples forming the KDE support
    #[arg(long, default_value_t = 10000)]
    pub n_generated: usize,
    /// Held-out points to score (first N of the test set)
    #[arg(long, default_value_t = 10000)]
    pub n_eval: usize,
    /// Cross-validation folds for the bandwidth search
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct EvalCeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Prior draws to classify
    #[arg(long, default_value_t = 10000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Central-difference step size
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Largest acceptable relative error
    #[arg(long, default_value_t = 1e-3)]
    pub threshold: f64,
}

#[derive(Args)]
pub struct SynthDataArgs {
    #[arg(long, default_value = "data")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 10000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Maps an error to the process exit code its class deserves.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite { .. }
        | Error::NonFiniteLoss(_)
        | Error::LogDomain(_)
        | Error::GradCheckFailed { .. } => 3,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => train(args),
        Command::Sample(args) => sample(args),
        Command::Interpolate(args) => interpolate(args),
        Command::Sweep(args) => sweep(args),
        Command::EvalLl(args) => eval_ll(args),
        Command::EvalCe(args) => eval_ce(args),
        Command::Gradcheck(args) => gradcheck(args),
        Command::SynthData(args) => synth_data(args),
    }
}

/// Picks `base` or `base.gz`, preferring the uncompressed file.
fn existing_variant(dir: &Path, base: &str) -> Option<PathBuf> {
    let plain = dir.join(base);
    if plain.exists() {
        return Some(plain);
    }
    let gz = dir.join(format!("{base}.gz"));
    gz.exists().then_some(gz)
}

fn load_split(dir: &Path, images_base: &str, labels_base: &str) -> Result<IdxDataset> {
    let images = existing_variant(dir, images_base).ok_or_else(|| {
        Error::io(
            dir.join(images_base).display().to_string(),
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "not found (run the synth-data command to create a corpus)",
            ),
        )
    })?;
    let labels = existing_variant(dir, labels_base);
    IdxDataset::load(&images, labels.as_deref())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::mnist_default(Objective::new(Mode::InfoCatVae));
    if let Some(path) = &args.config {
        config::apply_file(&mut cfg, path)?;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        config::apply_kv(&mut cfg, "learning_rate", &v.to_string())?;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.mode {
        config::apply_kv(&mut cfg, "mode", v)?;
    }
    cfg.validate()?;

    let mut data = load_split(&args.data_dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")?;
    if let Some(limit) = args.limit {
        data = data.take(limit);
    }
    if data.pixels() != cfg.model.input_dim {
        return Err(Error::BadModelConfig(format!(
            "dataset rows have {} pixels but input_dim is {}",
            data.pixels(),
            cfg.model.input_dim
        )));
    }

    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    write_file(&args.out.join("config.used"), config::render(&cfg).as_bytes())?;

    let mut trainer = match &args.resume {
        Some(ckpt) => Trainer::resume(cfg.clone(), ckpt)?,
        None => Trainer::new(cfg.clone())?,
    };

    let mut metrics = String::from(metrics_header());
    metrics.push('\n');
    println!("{}", metrics_header());
    while trainer.epochs_done() < cfg.epochs {
        let breakdown = trainer.run_epoch(&data)?;
        let line = metrics_line(trainer.epochs_done(), &breakdown);
        println!("{line}");
        metrics.push_str(&line);
        metrics.push('\n');
        // Rewritten every epoch so an interrupted run still leaves a valid file.
        write_file(&args.out.join("metrics.tsv"), metrics.as_bytes())?;
        if let Some(every) = args.checkpoint_every {
            if every > 0 && trainer.epochs_done() % every == 0 {
                trainer.save(&args.out.join(format!("checkpoint_epoch_{}.ckpt", trainer.epochs_done())))?;
            }
        }
    }
    trainer.save(&args.out.join("checkpoint_final.ckpt"))?;
    Ok(())
}

fn sample(args: SampleArgs) -> Result<()> {
    let (model, store, prior) = load_model(&args.checkpoint)?;
    let mut rng = Rng::new(args.seed);
    let grid = eval::sample_class_grid(&model, &store, &prior, args.per_class, &mut rng)?;
    let pgm = eval::render_grid(&grid, prior.num_categories(), args.per_class, 2)?;
    write_file(&args.out, &pgm)?;
    println!("wrote {} ({} categories x {} samples)", args.out.display(), prior.num_categories(), args.per_class);
    Ok(())
}

fn interpolate(args: InterpolateArgs) -> Result<()> {
    let (model, store, prior) = load_model(&args.checkpoint)?;
    let grid = eval::interpolate_centroids(&model, &store, &prior, args.steps)?;
    let pgm = eval::render_grid(&grid, prior.num_categories(), args.steps, 2)?;
    write_file(&args.out, &pgm)?;
    println!("wrote {} ({} rows x {} steps)", args.out.display(), prior.num_categories(), args.steps);
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let (model, store, prior) = load_model(&args.checkpoint)?;
    let grid = eval::lambda_sweep(&model, &store, &prior, &args.lambda_values)?;
    let pgm = eval::render_grid(&grid, args.lambda_values.len(), prior.num_categories(), 2)?;
    write_file(&args.out, &pgm)?;
    println!("wrote {} (scales {:?})", args.out.display(), args.lambda_values);
    Ok(())
}

/// Bandwidth selection uses at most this many support points; the KDE mean
/// log-density itself uses all of them.
const BANDWIDTH_FIT_CAP: usize = 2000;

fn eval_ll(args: EvalLlArgs) -> Result<()> {
    let (model, store, prior) = load_model(&args.checkpoint)?;
    let test = load_split(&args.data_dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
    let mut rng = Rng::new(args.seed);
    let (_, generated) = eval::sample_images(&model, &store, &prior, args.n_generated, &mut rng)?;

    let fit_on = generated_subset(&generated, BANDWIDTH_FIT_CAP);
    let bandwidth = eval::fit_bandwidth(&fit_on, args.folds, &eval::default_bandwidth_grid())?;
    let kde = eval::KdeModel::new(generated, bandwidth)?;
    let points = test.take(args.n_eval.min(test.n())).images().clone();
    let mean = kde.mean_log_density(&points)?;
    println!("bandwidth\t{bandwidth}");
    println!("kde_loglik\t{mean}");
    Ok(())
}

fn generated_subset(points: &Tensor, cap: usize) -> Tensor {
    let (n, d) = points.dims2().expect("generated matrix");
    if n <= cap {
        return points.clone();
    }
    Tensor::new(vec![cap, d], points.data()[..cap * d].to_vec()).expect("prefix")
}

fn eval_ce(args: EvalCeArgs) -> Result<()> {
    let (model, store, prior) = load_model(&args.checkpoint)?;
    let mut rng = Rng::new(args.seed);
    let ce = eval::generated_crossentropy(&model, &store, &prior, args.n, &mut rng)?;
    println!("generated_crossentropy\t{ce}");
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<()> {
    // Small enough to difference every coordinate, big enough that every
    // layer, branch, and loss term participates.
    let model_cfg = ModelConfig {
        num_categories: 4,
        latent_dim: 8,
        lambda: 2.0,
        input_dim: 20,
        hidden_dim: 16,
        dropout_rate: 0.25,
    };
    let mut objective = Objective::new(Mode::InfoCatVae);
    objective.info_samples = 6;
    let prior = crate::model::build_prior_means(4, 8, 2.0)?;
    let mut store = ParameterStore::new();
    let mut rng = Rng::new(args.seed);
    let model = crate::model::Model::new(&mut store, &mut rng, model_cfg)?;
    let x = Tensor::new(vec![4, 20], rng.uniform_vec(80))?;

    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    let mut max_err = 0.0f64;
    let mut checked = 0usize;
    for name in &names {
        let value = store.get(name)?.clone();
        let noise_seed = args.seed ^ 0x9e3779b97f4a7c15;
        let err = finite_difference_check(
            |g, leaf| {
                let binding = store.bind_with_override(g, name, leaf)?;
                let nodes = objective.build(
                    g,
                    &model,
                    &binding,
                    &prior,
                    &x,
                    &mut Rng::new(noise_seed),
                    true,
                )?;
                Ok(nodes.total)
            },
            &value,
            args.step,
        )?;
        checked += value.numel();
        println!("{name}\t{err:e}");
        max_err = max_err.max(err);
    }
    println!("checked\t{checked}");
    println!("max_rel_err\t{max_err:e}");
    if max_err > args.threshold {
        return Err(Error::GradCheckFailed {
            max_err,
            threshold: args.threshold,
        });
    }
    println!("gradcheck\tPASS");
    Ok(())
}

fn synth_data(args: SynthDataArgs) -> Result<()> {
    synth::write_corpus(&args.out_dir, args.n_train, args.n_test, args.seed)?;
    println!(
        "wrote {} train and {} test samples to {}",
        args.n_train,
        args.n_test,
        args.out_dir.display()
    );
    Ok(())
}
