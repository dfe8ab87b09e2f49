use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hmpir::cli;
use hmpir::config::RunConfig;

/// Hierarchical matching pursuit image retrieval.
///
/// Log verbosity follows the HMPIR_LOG environment variable (error, warn, info, debug).
#[derive(Parser)]
#[command(name = "hmpir", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Use the bag-of-features baseline instead of the hierarchical encoder.
    #[arg(long)]
    baseline: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one dictionary per layer.
    TrainDict(Common),
    /// Encode every manifest image into a descriptor file.
    Encode(Common),
    /// Build the inverted file from the descriptors.
    BuildIndex(Common),
    /// Rank indexed images against a query image.
    Query {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        #[arg(long)]
        no_self_exclude: bool,
        image: PathBuf,
    },
    /// Run the ground-truth queries and report mAP.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_self_exclude: bool,
    },
}

fn load(common: &Common) -> hmpir::Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    cfg.baseline |= common.baseline;
    Ok(cfg)
}

fn run(command: Command) -> hmpir::Result<()> {
    match command {
        Command::TrainDict(c) => {
            let cfg = load(&c)?;
            let summary = cli::with_threads(cfg.threads, || cli::train_dictionaries(&cfg))??;
            for (file, trace) in summary.files.iter().zip(&summary.traces) {
                println!("{}\tfinal objective {:.6e}", file.display(), trace.last().copied().unwrap_or(0.0));
            }
        }
        Command::Encode(c) => {
            let cfg = load(&c)?;
            let s = cli::with_threads(cfg.threads, || cli::encode_all(&cfg))??;
            println!(
                "encoded {} images into {} (dimension {}, mean nnz {:.1})",
                s.count,
                s.dir.display(),
                s.dimension,
                s.mean_nnz
            );
        }
        Command::BuildIndex(c) => {
            let cfg = load(&c)?;
            let (path, index) = cli::build_index(&cfg)?;
            println!(
                "indexed {} images ({} postings) into {}",
                index.doc_count(),
                index.posting_count(),
                path.display()
            );
        }
        Command::Query {
            common,
            top_k,
            no_self_exclude,
            image,
        } => {
            let cfg = load(&common)?;
            let result = cli::with_threads(cfg.threads, || cli::query(&cfg, &image, top_k, !no_self_exclude))??;
            print!("{}", cli::format_ranking(&result));
        }
        Command::Evaluate { common, no_self_exclude } => {
            let cfg = load(&common)?;
            let (path, report) = cli::with_threads(cfg.threads, || cli::evaluate_run(&cfg, !no_self_exclude))??;
            eprintln!("report written to {}", path.display());
            println!("mAP {:.6}", report.mean_average_precision);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HMPIR_LOG", "warn")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
