use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;

use nlrd::config::RunConfig;
use nlrd::image::add_gaussian_noise;
use nlrd::metrics::{format_db, psnr, ssim};
use nlrd::pgm::{read_image, write_image};
use nlrd::synth::synthetic_scene;
use nlrd::training::dataset::{image_seed, list_images};
use nlrd::training::{
    format_record, gradient_check, initialize_model, load_dataset, load_model, make_dataset,
    perturb_model, prepare_samples, save_model, train, write_dataset, InitMode, LossKind,
    TrainConfig, TrainingSample,
};
use nlrd::{denoise, Error};

#[derive(Parser)]
#[command(
    name = "nlrd",
    version,
    about = "Trainable non-local reaction diffusion denoiser"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Center-crop clean images and record noise seeds
    MakeDataset {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 180)]
        crop: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset directory
    Train(TrainArgs),
    /// Denoise one PGM image
    Denoise {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report PSNR/SSIM on freshly corrupted clean images
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare analytic gradients with finite differences
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// `plain` or `local:BASE.nlrd`
    #[arg(long, default_value = "plain")]
    init: String,
    /// `l2` or `ssim`
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Write one record per iteration here
    #[arg(long)]
    log: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    })
}

fn run_train(args: TrainArgs) -> anyhow::Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(loss) = args.loss {
        config.loss = loss;
    }
    if let Some(n) = args.iterations {
        config.iterations = n;
    }
    let dataset = load_dataset(&args.dataset)?;
    if let Some(first) = dataset.entries.first() {
        if dataset.entries.iter().all(|e| e.sigma == first.sigma) {
            config.sigma = first.sigma;
        }
    }
    config.validate()?;
    let init = match args.init.as_str() {
        "plain" => InitMode::Plain(config.init_options()),
        other => match other.strip_prefix("local:") {
            Some(base) => InitMode::Local(Box::new(
                load_model(base).with_context(|| format!("loading base model {base}"))?,
            )),
            None => bail!(Error::InvalidInput(format!(
                "--init must be `plain` or `local:PATH`, got {other:?}"
            ))),
        },
    };
    let train_config = TrainConfig {
        hyper: config.hyperparameters(),
        stages: config.stages,
        init,
        loss: config.loss,
        lbfgs: config.lbfgs(),
    };
    let mut log = match &args.log {
        Some(p) => Some(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => None,
    };
    let mut log_error = None;
    info!(
        "training on {} samples, {} iterations, loss {}",
        dataset.samples.len(),
        config.iterations,
        config.loss
    );
    let outcome = train(&train_config, &dataset.samples, |r| {
        let line = format_record(r);
        info!("{line}");
        if let Some(w) = log.as_mut() {
            if let Err(e) = writeln!(w, "{line}") {
                log_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    if let Some(e) = log_error {
        return Err(e).context("writing training log");
    }
    save_model(&outcome.model, &args.out)?;
    let r = &outcome.report;
    println!(
        "termination={:?} iterations={} evaluations={} initial_loss={} loss={}",
        r.termination, r.iterations, r.evaluations, r.initial_loss, r.loss
    );
    Ok(())
}

struct EvalRow {
    name: String,
    psnr_noisy: f64,
    psnr: f64,
    ssim_noisy: f64,
    ssim: f64,
}

fn run_eval(model: &Path, clean: &Path, sigma: f64, seed: u64) -> anyhow::Result<()> {
    if sigma.is_nan() || sigma < 0.0 {
        bail!(Error::InvalidInput(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    let model = load_model(model)?;
    let paths = list_images(clean)?;
    if paths.is_empty() {
        bail!(Error::InvalidInput(format!(
            "no .pgm images in {}",
            clean.display()
        )));
    }
    let mut rows = paths
        .par_iter()
        .enumerate()
        .map(|(i, path)| -> anyhow::Result<EvalRow> {
            let clean = read_image(path)?;
            let noisy = add_gaussian_noise(&clean, sigma, image_seed(seed, i))?;
            let out = denoise(&noisy, &model).with_context(|| format!("{}", path.display()))?;
            Ok(EvalRow {
                name: path.file_name().unwrap().to_string_lossy().into_owned(),
                psnr_noisy: psnr(&noisy, &clean)?,
                psnr: psnr(&out, &clean)?,
                ssim_noisy: ssim(&noisy, &clean)?,
                ssim: ssim(&out, &clean)?,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.name.cmp(&b.name));
    let n = rows.len() as f64;
    let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let means = EvalRow {
        name: "mean".into(),
        psnr_noisy: mean(|r| r.psnr_noisy),
        psnr: mean(|r| r.psnr),
        ssim_noisy: mean(|r| r.ssim_noisy),
        ssim: mean(|r| r.ssim),
    };
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
    println!(
        "{:<width$}  {:>10}  {:>10}  {:>10}  {:>10}",
        "image", "psnr_noisy", "psnr", "ssim_noisy", "ssim"
    );
    for r in rows.iter().chain([&means]) {
        println!(
            "{:<width$}  {:>10}  {:>10}  {:>10.4}  {:>10.4}",
            r.name,
            format_db(r.psnr_noisy),
            format_db(r.psnr),
            r.ssim_noisy,
            r.ssim
        );
    }
    for r in &rows {
        println!(
            "record=image name={} psnr_noisy={} psnr={} ssim_noisy={} ssim={}",
            r.name, r.psnr_noisy, r.psnr, r.ssim_noisy, r.ssim
        );
    }
    println!(
        "record=mean count={} sigma={sigma} seed={seed} psnr_noisy={} psnr={} ssim_noisy={} ssim={}",
        rows.len(),
        means.psnr_noisy,
        means.psnr,
        means.ssim_noisy,
        means.ssim
    );
    Ok(())
}

/// Returns whether every block is within tolerance.
fn run_gradcheck(config: &Path, eps: f64) -> anyhow::Result<bool> {
    let config = RunConfig::from_file(config)?;
    config.validate()?;
    if eps.is_nan() || eps <= 0.0 {
        bail!(Error::InvalidInput(format!(
            "--eps must be positive, got {eps}"
        )));
    }
    let hyper = config.hyperparameters();
    let base = initialize_model(hyper, config.stages, &config.init_options())?;
    let model = perturb_model(&base, config.seed)?;
    let size = config.gradcheck_size;
    let clean = synthetic_scene(size, size, config.seed);
    let noisy = add_gaussian_noise(&clean, config.sigma, config.seed.wrapping_add(1))?;
    let batch = prepare_samples(&[TrainingSample::new(noisy, clean)?], &model)?;
    let report = gradient_check(&model, &batch, config.loss, eps)?;
    const TOLERANCE: f64 = 1e-4;
    for (block, err) in &report.blocks {
        println!("block={block} rel_error={err:e}");
    }
    let ok = report.max_error() <= TOLERANCE;
    println!(
        "max_rel_error={:e} tolerance={TOLERANCE:e} status={}",
        report.max_error(),
        if ok { "pass" } else { "fail" }
    );
    Ok(ok)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::MakeDataset {
            clean,
            sigma,
            seed,
            crop,
            out,
        } => {
            let ds = make_dataset(&clean, sigma, seed, crop)?;
            write_dataset(&ds, &out)?;
            println!("samples={} out={}", ds.samples.len(), out.display());
        }
        Command::Train(args) => run_train(args)?,
        Command::Denoise { model, input, out } => {
            let model = load_model(&model)?;
            let f = read_image(&input)?;
            let u = denoise(&f, &model)?;
            write_image(&u, &out)?;
        }
        Command::Eval {
            model,
            clean,
            sigma,
            seed,
        } => run_eval(&model, &clean, sigma, seed)?,
        Command::Gradcheck { config, eps } => return run_gradcheck(&config, eps),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
