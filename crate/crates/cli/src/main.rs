use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use skewinla::experiments::ExperimentName;
use skewinla::io;
use skewinla::Strategy;
use skewinla_cli::manifest::{self, default_strategies, parse_strategy_list, ExperimentManifest, ModelSource, OracleSettings};
use skewinla_cli::run::{self, Overrides};

#[derive(Parser)]
#[command(name = "skewinla", version, about = "Skewed and variance-corrected INLA approximations for latent Gaussian models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Comma-separated strategies: gaussian, vb-mean, vb-mean-var, sgc-vb.
    #[arg(long, value_parser = parse_strategies)]
    strategy: Option<StrategyList>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Lattice points for the skewed linear-predictor densities (power of two).
    #[arg(long, value_parser = parse_pow2)]
    fft_points: Option<usize>,
    /// Largest latent dimension handled with dense whitening.
    #[arg(long)]
    dense_limit: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a named experiment, fit it and compare with the oracle.
    Reproduce {
        /// poisson-intercept, student-t, gpd, sens-spec, skew-sim or imbalanced-logistic.
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        oracle_iters: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the model described by a manifest.
    Fit {
        manifest: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a manifest with every requested strategy and the oracle.
    Compare {
        manifest: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        oracle_iters: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Export the joint density of two latent components at the θ mode.
    Contour {
        manifest: PathBuf,
        /// Component pair, e.g. `0,1`.
        #[arg(long, value_parser = parse_pair)]
        pair: (usize, usize),
        #[arg(long, default_value_t = 101)]
        points: usize,
        /// Half-width of the grid in marginal sds.
        #[arg(long, default_value_t = 4.0)]
        width: f64,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone)]
struct StrategyList(Vec<Strategy>);

fn parse_strategies(s: &str) -> Result<StrategyList, String> {
    parse_strategy_list(s).map(StrategyList)
}

fn parse_pow2(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 16 && v.is_power_of_two() {
        Ok(v)
    } else {
        Err(format!("{v} is not a power of two ≥ 16"))
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected `i,j`")?;
    let a = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b = b.trim().parse().map_err(|e| format!("{e}"))?;
    if a == b {
        return Err("the two components must differ".into());
    }
    Ok((a, b))
}

fn apply(m: &mut ExperimentManifest, c: &Common, seed: Option<u64>, n: Option<usize>, oracle_iters: Option<usize>) -> Result<(), String> {
    if let Some(s) = &c.strategy {
        m.strategies = s.0.clone();
    }
    if let Some(o) = &c.out {
        m.out_dir = o.clone();
    }
    if let Some(s) = seed {
        m.seed = s;
    }
    if let Some(n) = n {
        if n == 0 {
            return Err("--n must be at least 1".into());
        }
        match &mut m.source {
            ModelSource::Experiment { n: slot, .. } => *slot = Some(n),
            ModelSource::Custom { .. } => return Err("--n applies to named experiments only".into()),
        }
    }
    if let Some(it) = oracle_iters {
        m.oracle.iterations = it;
        m.oracle.burn_in = it / 10;
    }
    Ok(())
}

fn overrides(c: &Common) -> Overrides {
    Overrides { fft_points: c.fft_points, dense_limit: c.dense_limit }
}

fn load(path: &PathBuf) -> Result<ExperimentManifest, String> {
    manifest::load(path).map_err(|e| e.to_string())
}

fn execute(command: Command) -> Result<bool, String> {
    match command {
        Command::Reproduce { name, seed, n, oracle_iters, common } => {
            let exp: ExperimentName = name.parse().map_err(|e: skewinla::Error| e.to_string())?;
            let mut m = ExperimentManifest {
                source: ModelSource::Experiment { name: exp, n: None },
                seed,
                strategies: default_strategies(Some(exp)),
                oracle: OracleSettings::default(),
                out_dir: PathBuf::from("out").join(exp.as_str()),
            };
            apply(&mut m, &common, None, n, oracle_iters)?;
            let out = run::run("reproduce", &m, &overrides(&common), true).map_err(|e| e.to_string())?;
            print!("{}", run::summary_text(&out));
            Ok(out.status.success())
        }
        Command::Fit { manifest, seed, n, common } => {
            let mut m = load(&manifest)?;
            apply(&mut m, &common, seed, n, None)?;
            let out = run::run("fit", &m, &overrides(&common), false).map_err(|e| e.to_string())?;
            print!("{}", run::summary_text(&out));
            Ok(out.status.success())
        }
        Command::Compare { manifest, seed, n, oracle_iters, common } => {
            let mut m = load(&manifest)?;
            apply(&mut m, &common, seed, n, oracle_iters)?;
            let out = run::run("compare", &m, &overrides(&common), true).map_err(|e| e.to_string())?;
            print!("{}", run::summary_text(&out));
            Ok(out.status.success())
        }
        Command::Contour { manifest, pair, points, width, common } => {
            let mut m = load(&manifest)?;
            apply(&mut m, &common, None, None, None)?;
            if common.strategy.is_none() {
                m.strategies = vec![Strategy::SgcVb];
            }
            let out = run::run("contour", &m, &overrides(&common), false).map_err(|e| e.to_string())?;
            for (s, fit) in &out.fits {
                let table = run::contour(fit, pair.0, pair.1, points, width).map_err(|e| e.to_string())?;
                let path = m.out_dir.join(format!("contour-{s}-{}-{}.csv", pair.0, pair.1));
                let file = std::fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                io::write_contour_csv(std::io::BufWriter::new(file), &table).map_err(|e| e.to_string())?;
                println!("wrote {}", path.display());
            }
            print!("{}", run::summary_text(&out));
            Ok(out.status.success())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
