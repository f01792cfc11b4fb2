//! `dcdc`: train, certify and convert drift functions into convergence bounds.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dcdc_core::certifier::Certificate;
use dcdc_core::experiment::{report, Experiment, ExperimentConfig};
use dcdc_core::Error;

const OK: u8 = 0;
const CONFIG_ERROR: u8 = 2;
const DIVERGED: u8 = 3;
const CERT_FAILED: u8 = 4;

/// Built-in experiments for `reproduce`.
const EXPERIMENTS: &[(&str, &str)] = &[
    ("quad1d", include_str!("../../../configs/quad1d.toml")),
    ("logistic", include_str!("../../../configs/logistic.toml")),
    ("tandem", include_str!("../../../configs/tandem.toml")),
    ("walk", include_str!("../../../configs/walk.toml")),
    ("walk_poly", include_str!("../../../configs/walk_poly.toml")),
];

#[derive(Parser)]
#[command(
    name = "dcdc",
    version,
    about = "Explicit convergence bounds from learned contractive drift"
)]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(value_name = "CONFIG")]
    config_pos: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory; defaults to the config's `out_dir` or `runs/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the drift equation and write a checkpoint.
    Train(Common),
    /// Verify a checkpoint on a point set.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Convert a certificate into a convergence bound.
    Bound {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        certificate: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run train, certify and bound for a built-in experiment.
    Reproduce {
        /// One of quad1d, logistic, tandem, walk, walk_poly.
        experiment: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize a run directory.
    Report {
        #[arg(value_name = "DIR")]
        dir_pos: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn status(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } => DIVERGED,
        Error::InvalidCertificate(_) | Error::InvalidStage { .. } | Error::DegenerateRate(_) => {
            CERT_FAILED
        }
        _ => CONFIG_ERROR,
    }
}

fn load(common: &Common) -> Result<(Experiment, PathBuf), Error> {
    let path = common
        .config
        .as_ref()
        .or(common.config_pos.as_ref())
        .ok_or_else(|| {
            Error::Config("no configuration given (use --config or a positional path)".into())
        })?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = common.seed {
        cfg.set_seed(s);
    }
    let exp = Experiment::new(cfg)?;
    let out = common.out.clone().unwrap_or_else(|| exp.default_out_dir());
    Ok((exp, out))
}

fn print_certificate(c: &Certificate) {
    println!(
        "certificate {}: u~ = {:.6}, eps = {}",
        if c.valid { "valid" } else { "INVALID" },
        c.u_tilde,
        c.config.epsilon
    );
    println!(
        "K^V - V: max {:.6}, mean {:.6}, std {:.6}",
        c.drift.max, c.drift.mean, c.drift.std
    );
    println!(
        "K^V - V + U: max {:.6}, mean {:.6}, std {:.6}",
        c.drift_with_u.max, c.drift_with_u.mean, c.drift_with_u.std
    );
    println!(
        "V on the point set: [{:.6}, {:.6}]",
        c.extrema.inf_v, c.extrema.sup_v
    );
}

fn cmd_train(common: &Common) -> Result<u8, Error> {
    let (exp, out) = load(common)?;
    if exp.is_sequence() {
        let stages = exp.run_sequence_train(&out)?;
        for (k, (_, c)) in stages.iter().enumerate() {
            println!("stage {}:", k + 1);
            print_certificate(c);
        }
    } else {
        let rep = exp.run_train(&out)?;
        if let Some(p) = rep.probe.last() {
            println!(
                "trained {} iterations; probe max {:.6}, max |residual| {:.6}",
                rep.iterations_run, p.max, p.max_abs
            );
        }
    }
    println!(
        "checkpoint written to {}",
        out.join("checkpoint.json").display()
    );
    Ok(OK)
}

fn cmd_certify(common: &Common, checkpoint: Option<&Path>) -> Result<u8, Error> {
    let (exp, out) = load(common)?;
    if exp.is_sequence() {
        let stages = exp.run_sequence_certify(&out)?;
        let mut ok = true;
        for (k, (_, c)) in stages.iter().enumerate() {
            println!("stage {}:", k + 1);
            print_certificate(c);
            ok &= dcdc_core::bounds::stage_scale(c) > 0.0;
        }
        return Ok(if ok { OK } else { CERT_FAILED });
    }
    let ck = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join("checkpoint.json"));
    let net = exp.load_net(&ck)?;
    let cert = exp.run_certify(&net, &out)?;
    print_certificate(&cert);
    Ok(if cert.valid { OK } else { CERT_FAILED })
}

fn cmd_bound(
    common: &Common,
    certificate: Option<&Path>,
    checkpoint: Option<&Path>,
) -> Result<u8, Error> {
    let (exp, out) = load(common)?;
    let rep = if exp.is_sequence() {
        let stages = exp.load_sequence(&out)?;
        exp.run_polynomial_bound(&stages, &out)?
    } else {
        let cp = certificate
            .map(Path::to_path_buf)
            .unwrap_or_else(|| out.join("certificate.json"));
        let cert = Certificate::load(&cp)?;
        if !cert.valid {
            print_certificate(&cert);
            return Ok(CERT_FAILED);
        }
        let ck = checkpoint
            .map(Path::to_path_buf)
            .unwrap_or_else(|| out.join("checkpoint.json"));
        let net = exp.load_net(&ck)?;
        exp.run_bound(&cert, &net, &out)?
    };
    println!("{}", rep.headline);
    for c in &rep.crossings {
        if let Some(n) = c.first_n {
            println!("bound < {} from n = {n}", c.threshold);
        }
    }
    Ok(OK)
}

fn cmd_reproduce(name: &str, out: Option<PathBuf>, seed: Option<u64>) -> Result<u8, Error> {
    let Some((_, text)) = EXPERIMENTS.iter().find(|(n, _)| *n == name) else {
        let names: Vec<&str> = EXPERIMENTS.iter().map(|e| e.0).collect();
        return Err(Error::Config(format!(
            "unknown experiment {name:?}; expected one of {}",
            names.join(", ")
        )));
    };
    let mut cfg = ExperimentConfig::from_toml(text)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    let exp = Experiment::new(cfg)?;
    let dir = out.unwrap_or_else(|| exp.default_out_dir());
    let summary = exp.reproduce(&dir)?;
    print!("{}", summary.to_text());
    println!("summary written to {}", dir.join("summary.txt").display());
    Ok(if summary.certificate_valid {
        OK
    } else {
        CERT_FAILED
    })
}

fn run(cli: Cli) -> Result<u8, Error> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Train(c) => cmd_train(&c),
        Command::Certify { common, checkpoint } => cmd_certify(&common, checkpoint.as_deref()),
        Command::Bound {
            common,
            certificate,
            checkpoint,
        } => cmd_bound(&common, certificate.as_deref(), checkpoint.as_deref()),
        Command::Reproduce {
            experiment,
            out,
            seed,
        } => cmd_reproduce(&experiment, out, seed),
        Command::Report { dir_pos, out } => {
            let dir = out
                .or(dir_pos)
                .ok_or_else(|| Error::Config("no run directory given".into()))?;
            print!("{}", report(&dir)?);
            Ok(OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Divergence { last_batch, .. } = &e {
                eprintln!("last batch starts: {last_batch:?}");
            }
            ExitCode::from(status(&e))
        }
    }
}
