use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use adreg::benchmark::{
    run_experiment, summarize, write_csv, AugmentationSpec, Method,
};
use adreg::error::{Error, Result};
use adreg::icp::{icp_register, IcpConfig, IcpResult};
use adreg::pointcloud::FileFormat;
use adreg::registration::{register, Mode, RegistrationResult, TrainConfig};
use adreg::selfcheck::{run_with_fault, Fault, SelfCheckOptions};
use adreg::PointCloud;

/// Rigid point-cloud registration: adversarial optimizer, ICP baseline,
/// experiment sweeps, and built-in numerical verification.
#[derive(Parser)]
#[command(name = "adreg", version, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, ValueEnum)]
enum CliMode {
    Joint,
    #[value(name = "two-phase", alias = "rotation-then-translation")]
    TwoPhase,
}

#[derive(Copy, Clone, ValueEnum)]
enum CliFormat {
    Ply,
    Xyz,
}

#[derive(Subcommand)]
enum Command {
    /// Align source onto target with the adversarial optimizer.
    Register {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Training configuration (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the result record here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured optimization mode.
        #[arg(long, value_enum)]
        mode: Option<CliMode>,
        /// Force the input format instead of inferring from extensions.
        #[arg(long, value_enum)]
        format: Option<CliFormat>,
    },
    /// Align source onto target with point-to-point ICP.
    Icp {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// ICP configuration (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the result record here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Force the input format instead of inferring from extensions.
        #[arg(long, value_enum)]
        format: Option<CliFormat>,
    },
    /// Run an experiment sweep and write one CSV row per trial.
    Benchmark {
        /// Base point cloud the instances are generated from.
        #[arg(long)]
        base: PathBuf,
        /// Experiment description (TOML).
        #[arg(long)]
        spec: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Training configuration for the adversarial method (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// ICP configuration (TOML).
        #[arg(long)]
        icp_config: Option<PathBuf>,
        /// Override the experiment seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Cap the number of parallel trial workers.
        #[arg(long)]
        jobs: Option<usize>,
        /// Force the input format instead of inferring from extensions.
        #[arg(long, value_enum)]
        format: Option<CliFormat>,
    },
    /// Verify the analytic gradients and rotation metric on this machine.
    Selfcheck {
        /// Random instances per gradient check.
        #[arg(long, default_value_t = 50)]
        seeds: u64,
        /// Random rotation pairs for the metric oracles.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn load_cloud(path: &Path, format: Option<CliFormat>) -> Result<PointCloud> {
    let format = match format {
        Some(CliFormat::Ply) => FileFormat::Ply,
        Some(CliFormat::Xyz) => FileFormat::Xyz,
        None => FileFormat::from_path(path),
    };
    PointCloud::load(path, format)
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn emit(out: Option<&Path>, record: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, record).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{record}");
            std::io::stdout().flush().map_err(|e| Error::Io {
                path: PathBuf::from("<stdout>"),
                source: e,
            })
        }
    }
}

fn transform_record_header(result: &adreg::RigidTransform) -> Result<String> {
    let r = result.rotation_matrix()?;
    let mut text = String::from("rotation_matrix:\n");
    for row in 0..3 {
        text.push_str(&format!(
            "  {:.16e} {:.16e} {:.16e}\n",
            r[(row, 0)],
            r[(row, 1)],
            r[(row, 2)]
        ));
    }
    text.push_str(&format!(
        "rotation_vector: {:.16e} {:.16e} {:.16e}\n",
        result.rotation_vector.x, result.rotation_vector.y, result.rotation_vector.z
    ));
    text.push_str(&format!(
        "translation: {:.16e} {:.16e} {:.16e}\n",
        result.translation.x, result.translation.y, result.translation.z
    ));
    Ok(text)
}

fn register_record(result: &RegistrationResult, seed: u64) -> Result<String> {
    let mut text = transform_record_header(&result.transform)?;
    text.push_str(&format!("epochs: {}\n", result.epochs_run));
    let (critic, generator) = match result.trace.last() {
        Some(e) => (e.critic_loss, e.generator_loss),
        None => (f64::NAN, f64::NAN),
    };
    text.push_str(&format!("final_critic_loss: {critic:.16e}\n"));
    text.push_str(&format!("final_generator_loss: {generator:.16e}\n"));
    text.push_str(&format!("seed: {seed}\n"));
    Ok(text)
}

fn icp_record(result: &IcpResult) -> Result<String> {
    let mut text = transform_record_header(&result.transform)?;
    text.push_str(&format!("iterations: {}\n", result.iterations));
    let mse = result.mse_trace.last().copied().unwrap_or(f64::NAN);
    text.push_str(&format!("final_mse: {mse:.16e}\n"));
    text.push_str(&format!("converged: {}\n", result.converged));
    Ok(text)
}

fn cmd_register(
    source: &Path,
    target: &Path,
    config: Option<&Path>,
    out: Option<&Path>,
    seed: Option<u64>,
    mode: Option<CliMode>,
    format: Option<CliFormat>,
) -> Result<()> {
    let mut cfg = match config {
        Some(path) => TrainConfig::from_toml_str(&read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(mode) = mode {
        cfg.mode = match mode {
            CliMode::Joint => Mode::Joint,
            CliMode::TwoPhase => Mode::RotationThenTranslation,
        };
    }
    let source = load_cloud(source, format)?;
    let target = load_cloud(target, format)?;
    let result = register(&source, &target, &cfg)?;
    emit(out, &register_record(&result, cfg.seed)?)
}

fn cmd_icp(
    source: &Path,
    target: &Path,
    config: Option<&Path>,
    out: Option<&Path>,
    format: Option<CliFormat>,
) -> Result<()> {
    let cfg = match config {
        Some(path) => {
            let cfg: IcpConfig = toml::from_str(&read_to_string(path)?)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            cfg.validate()?;
            cfg
        }
        None => IcpConfig::default(),
    };
    let source = load_cloud(source, format)?;
    let target = load_cloud(target, format)?;
    let result = icp_register(&source, &target, &cfg)?;
    emit(out, &icp_record(&result)?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_benchmark(
    base: &Path,
    spec_path: &Path,
    out: &Path,
    config: Option<&Path>,
    icp_config: Option<&Path>,
    seed: Option<u64>,
    jobs: Option<usize>,
    format: Option<CliFormat>,
) -> Result<()> {
    let mut spec = AugmentationSpec::from_toml_str(&read_to_string(spec_path)?)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let train_cfg = match config {
        Some(path) => TrainConfig::from_toml_str(&read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    let icp_cfg = match icp_config {
        Some(path) => {
            let cfg: IcpConfig = toml::from_str(&read_to_string(path)?)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            cfg.validate()?;
            cfg
        }
        None => IcpConfig::default(),
    };
    let base = load_cloud(base, format)?;
    let methods = [Method::Adversarial, Method::Icp];

    let results = match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
            pool.install(|| run_experiment(&base, &spec, &methods, &train_cfg, &icp_cfg))?
        }
        None => run_experiment(&base, &spec, &methods, &train_cfg, &icp_cfg)?,
    };

    let mut csv = Vec::new();
    write_csv(&results, &mut csv).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    std::fs::write(out, csv).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;

    println!("{:<12} {:>8} {:>10}", "method", "level", "successes");
    for row in summarize(&results) {
        println!(
            "{:<12} {:>8} {:>7}/{:<2} ({:.2})",
            row.method.as_str(),
            row.level,
            row.successes,
            row.trials,
            row.ratio()
        );
    }
    Ok(())
}

fn cmd_selfcheck(seeds: u64, samples: usize, inject_fault: Option<&str>) -> Result<u8> {
    let fault = match inject_fault {
        None => None,
        Some("critic-param-grad") => Some(Fault::CriticParamGrad),
        Some(other) => {
            return Err(Error::InvalidConfig(format!(
                "unknown fault injection target '{other}'"
            )))
        }
    };
    if seeds == 0 || samples == 0 {
        return Err(Error::InvalidConfig(
            "selfcheck needs at least one seed and one sample".into(),
        ));
    }
    let opts = SelfCheckOptions {
        gradient_seeds: seeds,
        metric_samples: samples,
        ..SelfCheckOptions::default()
    };
    let reports = run_with_fault(&opts, fault);
    let mut failed = Vec::new();
    for r in &reports {
        println!(
            "{:<28} max_error {:.3e}  tolerance {:.0e}  {}",
            r.name,
            r.max_error,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
        if !r.passed {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        println!("all {} checks passed", reports.len());
        Ok(0)
    } else {
        println!("FAILED: {}", failed.join(", "));
        Ok(1)
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Register {
            source,
            target,
            config,
            out,
            seed,
            mode,
            format,
        } => cmd_register(
            &source,
            &target,
            config.as_deref(),
            out.as_deref(),
            seed,
            mode,
            format,
        )
        .map(|()| 0),
        Command::Icp {
            source,
            target,
            config,
            out,
            format,
        } => cmd_icp(&source, &target, config.as_deref(), out.as_deref(), format).map(|()| 0),
        Command::Benchmark {
            base,
            spec,
            out,
            config,
            icp_config,
            seed,
            jobs,
            format,
        } => cmd_benchmark(
            &base,
            &spec,
            &out,
            config.as_deref(),
            icp_config.as_deref(),
            seed,
            jobs,
            format,
        )
        .map(|()| 0),
        Command::Selfcheck {
            seeds,
            samples,
            inject_fault,
        } => cmd_selfcheck(seeds, samples, inject_fault.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
