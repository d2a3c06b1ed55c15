use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sagald::experiment::{run, Command, ExperimentConfig, Format, ProblemSpec};
use sagald::Error;

#[derive(Parser)]
#[command(name = "sagald", version, about = "SAGA Langevin sampler and coupling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Derived constants K, C_check, C_hat and ln beta
    Constants(Flags),
    /// Trajectory plus moment tracking
    Sample(Flags),
    /// Meeting probabilities of coupled map chains
    Couple(Flags),
    /// Empirical alpha-mixing against the coupling bound
    Mixing(Flags),
    /// Ergodic averages of an observable
    Lln(Flags),
    /// TV distances between marginals at checkpoints
    Tv(Flags),
    /// Assumption and minorization checks
    Verify(Flags),
}

#[derive(Args, Clone)]
struct Flags {
    /// Built-in name (lin-1d, micro-1d, well-2d) or a path to a problem JSON file
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    reps: Option<u64>,
    #[arg(long)]
    k_override: Option<f64>,
    #[arg(long)]
    unsafe_eta: bool,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv, json or binary
    #[arg(long)]
    format: Option<String>,
    /// JSON config file; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Observable for lln (const:C, xI, norm, capsq:CAP, step:A:W)
    #[arg(long)]
    phi: Option<String>,
    #[arg(long, value_delimiter = ',')]
    lags: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
}

fn config_from(flags: Flags) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &flags.config {
        Some(path) => ExperimentConfig::from_json(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = flags.problem {
        cfg.problem = Some(if std::path::Path::new(&p).is_file() {
            ProblemSpec::Inline(sagald::Problem::from_json(&std::fs::read_to_string(&p)?)?)
        } else {
            ProblemSpec::Builtin(p)
        });
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = flags.$flag { cfg.$field = Some(v); }
        )*};
    }
    set!(eta => eta, steps => steps, reps => replications, k_override => k_override,
         threads => threads, phi => phi, lags => lags, checkpoints => checkpoints, x0 => x0);
    if let Some(v) = flags.eps {
        cfg.eps = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.out {
        cfg.output_dir = v;
    }
    if let Some(v) = flags.format {
        cfg.format = v.parse::<Format>()?;
    }
    cfg.unsafe_eta |= flags.unsafe_eta;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, flags) = match cli.command {
        Cmd::Constants(f) => (Command::Constants, f),
        Cmd::Sample(f) => (Command::Sample, f),
        Cmd::Couple(f) => (Command::Couple, f),
        Cmd::Mixing(f) => (Command::Mixing, f),
        Cmd::Lln(f) => (Command::Lln, f),
        Cmd::Tv(f) => (Command::Tv, f),
        Cmd::Verify(f) => (Command::Verify, f),
    };
    let result = config_from(flags).and_then(|cfg| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads.unwrap_or(0))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| run(cmd, &cfg))
    });
    match result {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if outcome.failed {
                eprintln!("error: a verification failed");
                return ExitCode::from(4);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
