use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use maada_core::analysis::{bound_report, measure_epsilon_c, risk_split, BoundReport, EpsilonC, RiskSplit};
use maada_core::data::{gen_circle, gen_two_moons, load_csv, rotate, save_csv, Dataset, Domain};
use maada_core::manifold::GeoDBreakdown;
use maada_core::trainer::{train, TrainConfig};
use maada_core::Error;

mod artifacts;

use artifacts::{load_model, save_model, RunManifest};

#[derive(Parser)]
#[command(name = "maada", version, about = "Manifold-aware adversarial augmentation for domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    TwoMoons,
    Circle,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV.
    Gen {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Counter-clockwise rotation about the origin, in degrees.
        #[arg(long, default_value_t = 0.0)]
        rotate_deg: f64,
        #[arg(long, default_value = "source")]
        domain: Domain,
        /// Write every label as -1.
        #[arg(long)]
        unlabeled: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a labeled source and an unlabeled target.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Risk split, consistency gap, GeoD and bound report for a trained model.
    Report {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Labeled copy of the target, used only for evaluation.
        #[arg(long)]
        target_oracle: Option<PathBuf>,
        /// Also estimate the joint-hypothesis risk (needs --target-oracle).
        #[arg(long)]
        lambda_star: bool,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFinite { .. } | Error::Training { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn load_config(path: &Path) -> Result<TrainConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let config: TrainConfig =
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    config
        .validate()
        .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    Ok(config)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("report types serialize");
    fs::write(path, text).map_err(|e| Failure::from(Error::from(e)))
}

fn create_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Failure::from(Error::from(e))),
        _ => Ok(()),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen(kind: Kind, n: usize, noise: f64, seed: u64, rotate_deg: f64, domain: Domain, unlabeled: bool, out: &Path) -> Result<(), Failure> {
    let base = match kind {
        Kind::TwoMoons => gen_two_moons(n, noise, seed)?,
        Kind::Circle => gen_circle(n, 1.0, seed)?,
    };
    let ds = rotate(&base, rotate_deg.to_radians(), Some(domain), unlabeled)?;
    create_parent(out)?;
    save_csv(&ds, out)?;
    println!("{}", out.display());
    Ok(())
}

fn cmd_train(config: &Path, source: &Path, target: &Path, out_dir: &Path) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let s = load_csv(source)?;
    let t = load_csv(target)?;
    let (params, log) = train(&cfg, &s, &t)?;

    fs::create_dir_all(out_dir).map_err(|e| Failure::from(Error::from(e)))?;
    let metrics = out_dir.join("metrics.jsonl");
    fs::write(&metrics, log.to_jsonl()).map_err(|e| Failure::from(Error::from(e)))?;
    let model = out_dir.join("model.bin");
    save_model(&params, &model)?;

    let mut manifest = RunManifest::new(&cfg);
    manifest.add("config", config);
    manifest.add("source", source);
    manifest.add("target", target);
    manifest.add("metrics", &metrics);
    manifest.add("model", &model);
    manifest.add("model_header", &artifacts::sidecar_path(&model));
    let path = out_dir.join("manifest.json");
    manifest.write(&path)?;
    println!("{}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct ReportDocument {
    /// Absent when no labeled target sample is available.
    #[serde(skip_serializing_if = "Option::is_none")]
    risk_split: Option<RiskSplit>,
    epsilon_c: EpsilonC,
    geod: GeoDBreakdown,
    bound: BoundReport,
    manifest: RunManifest,
}

fn cmd_report(
    model: &Path,
    source: &Path,
    target: &Path,
    target_oracle: Option<&Path>,
    lambda_star: bool,
    config: &Path,
    out: &Path,
) -> Result<(), Failure> {
    if lambda_star && target_oracle.is_none() {
        return Err(usage("--lambda-star needs oracle target labels: pass --target-oracle"));
    }
    let cfg = load_config(config)?;
    let params = load_model(model)?;
    let s = load_csv(source)?;
    let t = load_csv(target)?;
    let oracle: Option<Dataset> = target_oracle.map(load_csv).transpose()?;
    if let Some(o) = &oracle {
        if !o.is_fully_labeled() {
            return Err(usage("--target-oracle must label every point"));
        }
    }

    let labeled_target = oracle.as_ref().or(t.is_fully_labeled().then_some(&t));
    let split = labeled_target
        .map(|lt| risk_split(&params, lt, cfg.beta, cfg.k, cfg.m))
        .transpose()?;
    let epsilon_c = measure_epsilon_c(&params, &t, cfg.alpha, cfg.k, cfg.m)?;
    let bound = bound_report(&params, &s, &t, if lambda_star { oracle.as_ref() } else { None }, &cfg)?;

    let mut manifest = RunManifest::new(&cfg);
    manifest.add("config", config);
    manifest.add("model", model);
    manifest.add("source", source);
    manifest.add("target", target);
    if let Some(p) = target_oracle {
        manifest.add("target_oracle", p);
    }
    let doc = ReportDocument {
        risk_split: split,
        epsilon_c,
        geod: bound.geod,
        bound,
        manifest,
    };
    create_parent(out)?;
    write_json(out, &doc)?;
    println!("{}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let _ = e.print();
            eprintln!("\n{}", Cli::command().render_usage());
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Gen {
            kind,
            n,
            noise,
            seed,
            rotate_deg,
            domain,
            unlabeled,
            out,
        } => cmd_gen(*kind, *n, *noise, *seed, *rotate_deg, *domain, *unlabeled, out),
        Command::Train {
            config,
            source,
            target,
            out_dir,
        } => cmd_train(config, source, target, out_dir),
        Command::Report {
            model,
            source,
            target,
            target_oracle,
            lambda_star,
            config,
            out,
        } => cmd_report(model, source, target, target_oracle.as_deref(), *lambda_star, config, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
