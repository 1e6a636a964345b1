use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pelpa_core::attack::NoiseSampler;
use pelpa_core::detector::{calibrate_kappa, calibration_csv, calibration_sweep, CalibrationSetup};
use pelpa_core::rng::{substream, Stream};
use pelpa_core::{plot, replay, run_campaign, write_campaign, Error, ExperimentConfig};

#[derive(Parser)]
#[command(name = "pelpa", version, about = "LDP knowledge-sharing poisoning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set privacy.epsilon=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, seeds: &[u64]) -> Result<ExperimentConfig, Error> {
        let text = match &self.config {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?,
            None => String::new(),
        };
        let mut overrides = self.overrides.clone();
        if !seeds.is_empty() {
            let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
            overrides.push(format!("run.seeds=[{}]", list.join(",")));
        }
        ExperimentConfig::from_toml_with_overrides(&text, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign and write its artifacts.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Replace the configured seed list (repeatable).
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Outlier-count calibration experiment.
    Calibrate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Tolerance multiplier; searched for when omitted.
        #[arg(long)]
        kappa: Option<f64>,
        /// Poisoning degrees to evaluate (repeatable); defaults to 1..=8.
        #[arg(long = "gamma")]
        gammas: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value = "tilted", value_parser = parse_sampler)]
        sampler: NoiseSampler,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Render SVG figures from the CSVs in a campaign directory.
    Plot { dir: PathBuf },
    /// Re-run the campaign recorded in a manifest.
    Replay {
        manifest: PathBuf,
        /// Defaults to `replay/` next to the manifest.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn parse_sampler(s: &str) -> Result<NoiseSampler, String> {
    match s {
        "tilted" => Ok(NoiseSampler::Tilted),
        "shifted-laplace" => Ok(NoiseSampler::ShiftedLaplace),
        _ => Err(format!("unknown sampler `{s}` (expected tilted or shifted-laplace)")),
    }
}

enum Failure {
    Usage(String),
    Arms(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { cfg, seeds, out_dir } => {
            let config = cfg.load(&seeds)?;
            let result = run_campaign(&config)?;
            let manifest = write_campaign(&result, &out_dir)?;
            println!("wrote {}", manifest.display());
            for f in &result.failures {
                eprintln!("arm ratio={} seed={} failed: {}", f.ratio, f.seed, f.error);
            }
            if !result.failures.is_empty() {
                return Err(Failure::Arms(result.failures.len()));
            }
        }
        Command::Calibrate {
            cfg,
            kappa,
            gammas,
            tau,
            sampler,
            reps,
            n,
            seed,
            out_dir,
        } => {
            let config = cfg.load(&[])?;
            let mechanism = config.privacy.mechanism(config.learner.alpha)?;
            let mut setup = CalibrationSetup {
                n,
                tau,
                kappa: kappa.unwrap_or(1.0),
                sampler,
                mechanism,
            };
            let mut rng = substream(seed, Stream::Env);
            if kappa.is_none() {
                let found = calibrate_kappa(&setup, reps, 1000, &mut rng)?
                    .ok_or_else(|| Failure::Usage("no kappa in 1..=1000 matches the no-DP outlier count".into()))?;
                println!("calibrated kappa = {found}");
                setup.kappa = found;
            }
            let gammas = if gammas.is_empty() { (1..=8).map(f64::from).collect() } else { gammas };
            let rows = calibration_sweep(&setup, &gammas, config.attack.theta, reps, &mut rng)?;
            let path = out_dir.join("calibration.csv");
            fs::create_dir_all(&out_dir).map_err(|e| Error::Io { path: out_dir.clone(), source: e })?;
            fs::write(&path, calibration_csv(&rows)).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            plot::render_calibration(&path, &out_dir.join("plots"))?;
            println!("wrote {}", path.display());
        }
        Command::Plot { dir } => plot::render_dir(&dir)?,
        Command::Replay { manifest, out_dir } => {
            let out = out_dir.unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("replay"));
            let result = replay(&manifest, &out)?;
            println!("replayed into {}", out.display());
            if !result.failures.is_empty() {
                return Err(Failure::Arms(result.failures.len()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Arms(n)) => {
            eprintln!("{n} arm(s) failed");
            ExitCode::from(2)
        }
    }
}
