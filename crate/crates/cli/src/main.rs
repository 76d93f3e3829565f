use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vortexlab::harness::{self, RunConfig};
use vortexlab::Error;

#[derive(Parser)]
#[command(
    name = "vortexlab",
    version,
    about = "Stochastic point vortices against the stochastic vorticity equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration, or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    threads: Option<usize>,
    /// Replaces `master_seed` from the configuration.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Particle sweep over N with a shared field reference and a rate fit.
    Converge(Common),
    /// Field-driven copies against the field at a fixed time.
    MvCheck(Common),
    /// Field solve only.
    SolveSpde(Common),
    /// One particle run with collision diagnostics.
    SimulateParticles(Common),
    /// Kernel values on a grid.
    KernelTable(Common),
}

fn run(cli: Cli) -> vortexlab::Result<()> {
    let (name, args) = match &cli.command {
        Command::Converge(a) => ("converge", a),
        Command::MvCheck(a) => ("mv-check", a),
        Command::SolveSpde(a) => ("solve-spde", a),
        Command::SimulateParticles(a) => ("simulate-particles", a),
        Command::KernelTable(a) => ("kernel-table", a),
    };
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed_override {
        cfg.master_seed = s;
    }
    let out = args.out_dir.clone();
    log::info!("{name}: writing to {}", out.display());
    harness::with_threads(args.threads, move || match name {
        "converge" => {
            let s = harness::converge(&cfg, &out)?;
            match &s.fit {
                Some(f) => println!("slope {:.4}  r² {:.4}", f.slope, f.r_squared),
                None => println!("no rate fit (fewer than three particle counts)"),
            }
            Ok(())
        }
        "mv-check" => {
            let s = harness::mv_check(&cfg, &out)?;
            for r in &s.rows {
                println!("copies {:>7}  tv {:.5e}", r.copies, r.tv);
            }
            println!("tv ratios {:?}", s.ratios);
            Ok(())
        }
        "solve-spde" => harness::solve_spde(&cfg, &out).map(drop),
        "simulate-particles" => harness::simulate_particles(&cfg, &out).map(drop),
        _ => harness::kernel_table(&cfg, &out).map(drop),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else {
        3
    }
}
