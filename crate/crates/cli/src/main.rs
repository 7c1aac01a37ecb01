use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use interp_lab::design::{build_covariance, CovarianceKind};
use interp_lab::experiment::{
    emit_outputs, parse_config_text, plot_cells, read_cells_csv, run_experiment, ConfigError, ExperimentConfig, Setup,
};
use interp_lab::theory::{solve_isotropic, solve_spiked};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BUDGET: u8 = 3;

#[derive(Parser)]
#[command(
    name = "interp-lab",
    version,
    about = "Simulations and calibration theory for minimum-norm interpolation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print calibration tables as CSV.
    #[command(subcommand)]
    Theory(TheoryCommand),
    /// Run one experiment setup and write its artifacts.
    Run(RunArgs),
    /// Render a cells CSV as an SVG risk-versus-gamma chart.
    Plot {
        #[arg(long)]
        cells: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum TheoryCommand {
    /// Isotropic design; `--gamma` accepts a comma-separated list.
    Isotropic {
        #[arg(long, value_delimiter = ',', required = true)]
        gamma: Vec<f64>,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
    },
    /// Spiked-isotropic design with a flat tail of dimension `r2`.
    Spiked {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k_star: usize,
        #[arg(long)]
        lambda_head: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_tail: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        r2: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat key=value file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    setup: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gammas: Option<String>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    ensembles: Option<String>,
    #[arg(long)]
    c: Option<f64>,
    /// Worker threads; defaults to INTERP_LAB_THREADS, then 1.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip SVG plots.
    #[arg(long)]
    no_plots: bool,
}

enum Failure {
    Config(String),
    Other(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let file_pairs = match &args.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            parse_config_text(&text)?
        }
        None => Vec::new(),
    };
    let setup_text = args
        .setup
        .clone()
        .or_else(|| {
            file_pairs
                .iter()
                .rev()
                .find(|(k, _)| k == "setup")
                .map(|(_, v)| v.clone())
        })
        .ok_or_else(|| Failure::Config("no setup given (use --setup or `setup=` in the config file)".into()))?;
    let setup: Setup = setup_text.parse().map_err(Failure::Config)?;

    let mut cfg = ExperimentConfig::defaults(setup);
    if let Some(t) = std::env::var("INTERP_LAB_THREADS")
        .ok()
        .filter(|s| !s.trim().is_empty())
    {
        cfg.set("threads", &t)
            .map_err(|e| Failure::Config(format!("INTERP_LAB_THREADS: {e}")))?;
    }
    for (k, v) in file_pairs.iter().filter(|(k, _)| k != "setup") {
        cfg.set(k, v)?;
    }
    let flags: [(&str, Option<String>); 9] = [
        ("n", args.n.map(|v| v.to_string())),
        ("trials", args.trials.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("gammas", args.gammas.clone()),
        ("sigma2", args.sigma2.map(|v| v.to_string())),
        ("ensembles", args.ensembles.clone()),
        ("c", args.c.map(|v| v.to_string())),
        ("threads", args.threads.map(|v| v.to_string())),
        ("out", args.out.as_ref().map(|p| p.display().to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    if args.no_plots {
        cfg.plots = false;
    }
    cfg.validate()?;
    if cfg.out_dir.is_none() {
        return Err(Failure::Config("no output directory (use --out or `out=`)".into()));
    }
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<ExitCode, Failure> {
    let cfg = resolve_config(&args)?;
    let out = cfg.out_dir.clone().expect("checked in resolve_config");
    let result = run_experiment(&cfg).map_err(|e| Failure::Other(e.to_string()))?;
    let files = emit_outputs(&result, &out).map_err(|e| Failure::Other(e.to_string()))?;

    for c in &result.cells {
        println!(
            "{} gamma={:<8} p={:<6} {:<14} {:<11} risk={:.6} ± {:.6}  linf={:.4}  trials={}{}",
            c.setup,
            c.gamma,
            c.p,
            c.estimator,
            c.ensemble,
            c.mean_risk,
            c.std_risk,
            c.mean_linf,
            c.trials,
            if c.incomplete { " (incomplete)" } else { "" }
        );
    }
    for f in &result.fits {
        match (&f.fit, &f.error) {
            (Some(fit), _) => println!(
                "fit {} ({}): risk = {:.6} + {:.6}/ln(gamma), R^2 = {:.6}",
                f.estimator, f.ensemble, fit.intercept, fit.slope, fit.r_squared
            ),
            (None, Some(e)) => println!("fit {} ({}): unavailable: {e}", f.estimator, f.ensemble),
            _ => {}
        }
    }
    for s in &result.flow_summary {
        println!(
            "p={} trials={} risk: t*={:.5} min={:.5} final={:.5} cv-stop={:.5} lasso-cv={:.5}; U-shaped {}/{}",
            s.p,
            s.trials,
            s.mean_risk_tstar,
            s.mean_risk_min,
            s.mean_risk_final,
            s.mean_risk_cv_stop,
            s.mean_risk_lasso_cv,
            s.u_shaped,
            s.trials
        );
        if let (Some(r), Some(e)) = (s.mean_risk_that, s.mean_sigma_rel_err) {
            println!("  adaptive stop risk={r:.5}, mean |sigma_hat - sigma|/sigma = {e:.4}");
        }
    }
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {} files to {}", files.len(), out.display());
    if result.failure_budget_exceeded() {
        eprintln!("error: solver failures exceeded the per-cell budget");
        return Ok(ExitCode::from(EXIT_BUDGET));
    }
    Ok(ExitCode::SUCCESS)
}

fn theory(cmd: TheoryCommand) -> Result<ExitCode, Failure> {
    match cmd {
        TheoryCommand::Isotropic { gamma, sigma2 } => {
            println!("gamma,sigma2,kappa,m2,m,predicted_risk");
            for g in gamma {
                let c = solve_isotropic(g, sigma2).map_err(|e| Failure::Config(format!("gamma = {g}: {e}")))?;
                println!("{},{},{},{},{},{}", c.gamma, c.sigma2, c.kappa, c.m2, c.m, c.alpha2);
            }
        }
        TheoryCommand::Spiked {
            n,
            k_star,
            lambda_head,
            lambda_tail,
            r2,
            sigma2,
        } => {
            println!("n,k_star,r2,gamma,tau,kappa_tail,e_head,e_tail,predicted_risk,b2,head_bound,iterations");
            for tail in r2 {
                let cov = build_covariance(
                    CovarianceKind::SpikedIsotropic,
                    k_star + tail,
                    k_star,
                    lambda_head,
                    lambda_tail,
                )
                .map_err(|e| Failure::Config(e.to_string()))?;
                let c =
                    solve_spiked(&cov, n, sigma2, None).map_err(|e| Failure::Config(format!("r2 = {tail}: {e}")))?;
                println!(
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    n,
                    k_star,
                    tail,
                    tail as f64 / n as f64,
                    c.tau,
                    c.kappa_tail,
                    c.e_head,
                    c.e_tail,
                    c.e_total,
                    c.b2,
                    c.head_bound,
                    c.iterations
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn plot(cells: PathBuf, out: PathBuf) -> Result<ExitCode, Failure> {
    let records = read_cells_csv(&cells).map_err(|e| Failure::Config(e.to_string()))?;
    std::fs::write(&out, plot_cells(&records)).map_err(|e| Failure::Other(format!("{}: {e}", out.display())))?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Theory(cmd) => theory(cmd),
        Command::Run(args) => run(args),
        Command::Plot { cells, out } => plot(cells, out),
    };
    match outcome {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
