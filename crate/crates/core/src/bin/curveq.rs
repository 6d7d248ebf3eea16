use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use curve_equivalence::cli::{run, Overrides, RunConfig};
use curve_equivalence::ModelRegistry;

/// Equivalence tests for two dose-response curves with shared parameters.
#[derive(Parser, Debug)]
#[command(name = "curveq", version)]
struct Args {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Bootstrap replicates B.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include replicate statistics in the report.
    #[arg(long)]
    emit_replicates: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = RunConfig::load(&args.config).and_then(|mut config| {
        config.apply(&Overrides {
            seed: args.seed,
            bootstrap: args.bootstrap,
            out: args.out.clone(),
            emit_replicates: args.emit_replicates,
        });
        let registry = ModelRegistry::new();
        match args.threads {
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| curve_equivalence::Error::InvalidInput(e.to_string()))?;
                pool.install(|| run(&config, &registry))
            }
            None => run(&config, &registry),
        }
    });
    match result {
        Ok(artifacts) => {
            println!("{}", artifacts.summary);
            for f in &artifacts.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("curveq: error: {e}");
            ExitCode::FAILURE
        }
    }
}
