use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use robust_rkm::generate::{
    evaluate, fit_latent_gaussian, latent_diagnostics, sample_and_decode, traverse, LatentGaussian,
};
use robust_rkm::io::{
    contaminate, histograms_to_csv, load_checkpoint, load_data, save_checkpoint, weights_to_csv, write_matrix,
    Checkpoint, Dataset,
};
use robust_rkm::trainer::{resume, train, TrainConfig};
use robust_rkm::{Result, RkmError};

#[derive(Parser)]
#[command(name = "rrkm", version, about = "Robust generative kernel machines with MCD-weighted latent spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct DataOpts {
    /// Rescale each column to [0, 1] by its min and max
    #[arg(long)]
    normalize: bool,
    /// Use only the first N samples
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train maps and latent space; writes a checkpoint
    Train {
        /// IDX, RRKMDAT1 or CSV samples with values in [0, 1]
        #[arg(long)]
        data: PathBuf,
        /// Flat `key = value` file; missing keys keep their defaults
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint to write
        #[arg(long)]
        out: PathBuf,
        /// Skip the MCD reweighting step (D = I)
        #[arg(long)]
        no_robust: bool,
        /// Continue from this checkpoint instead of starting fresh
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Extra epochs when resuming
        #[arg(long, default_value_t = 1)]
        extra_epochs: usize,
        /// Per-epoch losses; JSON lines unless the path ends in .csv
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        data_opts: DataOpts,
    },
    /// Project samples on the latent space and decode them
    Denoise {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        data_opts: DataOpts,
    },
    /// Sample a Gaussian fitted to the latents and decode
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(short = 'n', long)]
        n: usize,
        /// Diagonal covariance
        #[arg(long)]
        diag: bool,
        /// Weight latent points by D when fitting the Gaussian
        #[arg(long)]
        weighted_fit: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Vary one latent coordinate on a linear grid around a training latent
    Traverse {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        base: usize,
        #[arg(long, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, allow_hyphen_values = true)]
        hi: f64,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump squared distances, weights and cutoff as CSV
    InspectWeights {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add Gaussian noise to a random fraction of rows
    Contaminate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        fraction: f64,
        #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
        noise_mean: f64,
        #[arg(long, default_value_t = 0.5)]
        noise_sd: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Write the contaminated row indices, one per line
        #[arg(long)]
        indices: Option<PathBuf>,
        #[command(flatten)]
        data_opts: DataOpts,
    },
    /// Denoise NOISY, score against CLEAN, and report latent skewness
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        noisy: PathBuf,
        /// Latent histograms as CSV
        #[arg(long)]
        hist: Option<PathBuf>,
        #[command(flatten)]
        data_opts: DataOpts,
    },
}

fn load(path: &Path, opts: &DataOpts) -> Result<Dataset> {
    let d = load_data(path, opts.normalize, opts.limit)?;
    for w in &d.warnings {
        log::warn!("{}: {w}", d.source);
    }
    Ok(d)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("NA".to_string(), |x| format!("{x:.6}"))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { data, config, out, no_robust, resume: from, extra_epochs, report, data_opts } => {
            let data = load(&data, &data_opts)?;
            let mut cfg = match &config {
                Some(p) => TrainConfig::parse(&std::fs::read_to_string(p)?)?,
                None => TrainConfig::default(),
            };
            if no_robust {
                cfg.robust = false;
            }
            let outcome = match from {
                Some(p) => {
                    let ckpt = load_checkpoint(&p)?;
                    if config.is_none() {
                        cfg = ckpt.config.clone();
                        cfg.robust &= !no_robust;
                    }
                    resume(&data.rows, &cfg, ckpt.train_state(), extra_epochs)?
                }
                None => train(&data.rows, &cfg)?,
            };
            save_checkpoint(&out, &Checkpoint::from_outcome(&outcome))?;
            if let Some(p) = report {
                let text = if p.extension().is_some_and(|e| e == "csv") {
                    outcome.report.to_csv()
                } else {
                    outcome.report.to_json_lines()
                };
                std::fs::write(p, text)?;
            }
            let last = outcome.report.epochs.last();
            println!(
                "trained {} epochs on {} samples in {:.1}s; final J = {:.6e}; {} of {} points down-weighted{}",
                outcome.state.epochs_done,
                outcome.model.n(),
                outcome.report.wall_clock_secs,
                outcome.report.final_dual_objective,
                outcome.weights.downweighted().len(),
                outcome.weights.len(),
                last.map_or(String::new(), |e| format!("; last epoch loss {:.6e}", e.loss.total))
            );
        }
        Command::Denoise { ckpt, data, out, data_opts } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let data = load(&data, &data_opts)?;
            let recon = ckpt.trained_model().denoise(&data.rows)?;
            write_matrix(&out, &recon)?;
        }
        Command::Generate { ckpt, n, diag, weighted_fit, seed, out } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let g = fit_latent_gaussian(&ckpt.model, &ckpt.weights, weighted_fit, diag)?;
            if g.jitter > 0.0 {
                log::warn!("latent covariance needed {:e} diagonal jitter", g.jitter);
            }
            let samples = sample_and_decode(&g, n, &ckpt.trained_model(), seed)?;
            write_matrix(&out, &samples)?;
        }
        Command::Traverse { ckpt, dim, base, lo, hi, steps, out } => {
            let ckpt = load_checkpoint(&ckpt)?;
            if base >= ckpt.model.n() {
                return Err(RkmError::InvalidArgument(format!(
                    "base {base} out of range for {} latents",
                    ckpt.model.n()
                )));
            }
            let h: DVector<f64> = ckpt.model.h.column(base).into_owned();
            let grid = traverse(&ckpt.trained_model(), &LatentGaussian::point_mass(h).mean, dim, lo, hi, steps)?;
            write_matrix(&out, &grid)?;
        }
        Command::InspectWeights { ckpt, out } => {
            let ckpt = load_checkpoint(&ckpt)?;
            std::fs::write(&out, weights_to_csv(&ckpt.weights))?;
            println!(
                "{} of {} points down-weighted (threshold {:.6})",
                ckpt.weights.downweighted().len(),
                ckpt.weights.len(),
                ckpt.weights.threshold
            );
        }
        Command::Contaminate { data, fraction, noise_mean, noise_sd, seed, out, indices, data_opts } => {
            let data = load(&data, &data_opts)?;
            let (noisy, idx) = contaminate(&data.rows, fraction, noise_mean, noise_sd, seed)?;
            write_matrix(&out, &noisy)?;
            if let Some(p) = indices {
                let text: String = idx.iter().map(|i| format!("{i}\n")).collect();
                std::fs::write(p, text)?;
            }
            println!("contaminated {} of {} rows", idx.len(), noisy.nrows());
        }
        Command::Eval { ckpt, clean, noisy, hist, data_opts } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let clean = load(&clean, &data_opts)?;
            let noisy = load(&noisy, &data_opts)?;
            let report = evaluate(&ckpt.trained_model(), &ckpt.weights, &clean.rows, &noisy.rows)?;
            println!("mae = {:.6}", report.mae);
            println!("fraction_downweighted = {:.6}", report.fraction_downweighted);
            for (j, (a, i)) in report.skew_all.iter().zip(&report.skew_inliers).enumerate() {
                println!("skewness[{j}] all = {} weight1 = {}", fmt_opt(*a), fmt_opt(*i));
            }
            if let Some(p) = hist {
                std::fs::write(p, histograms_to_csv(&latent_diagnostics(&ckpt.model, &ckpt.weights).histograms))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
