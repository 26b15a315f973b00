use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod run;

use run::{Failure, Flags};

/// Experiments with automorphisms of free products: words, train tracks,
/// laminations and attractive fixed rays.
#[derive(Parser, Debug)]
#[command(name = "kurosh", version)]
struct Cli {
    /// Bundled instance name (`cyclic5`, `f2factor`) or a path to a TOML file.
    #[arg(long, global = true, default_value = "cyclic5")]
    instance: String,
    /// Boundary comparison depth, or language depth for `lamination`.
    #[arg(long, global = true)]
    depth: Option<usize>,
    /// Iteration cap for language generation.
    #[arg(long, global = true)]
    kmax: Option<usize>,
    /// Number of ray segments to build.
    #[arg(long, global = true)]
    levels: Option<usize>,
    /// Offset search radius for the base vertex.
    #[arg(long, global = true)]
    radius: Option<usize>,
    /// Largest power tried for the base vertex.
    #[arg(long = "power-cap", global = true)]
    power_cap: Option<usize>,
    /// Largest order tested by `stabcheck`.
    #[arg(long = "order-cap", global = true)]
    order_cap: Option<usize>,
    /// Seed for randomized probes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write a JSON report with sorted keys to this path.
    #[arg(long, global = true)]
    dump: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Free-product normal form of a word.
    Reduce { word: String },
    /// Image of a word under an automorphism expression.
    Apply { aut: String, word: String },
    /// `w, φ(w), ..., φ^k(w)`.
    Orbit { aut: String, word: String, k: usize },
    /// The rational point `u^∞` and its fixedness under `ι_u`.
    Rational { word: String },
    /// Train-track, irreducibility and N-path report for a graph map.
    Traincheck { map: String },
    /// Laminary language, quasi-periodicity and stabilization.
    Lamination {
        map: String,
        /// Further maps whose stabilization of the language is checked.
        #[arg(long = "by")]
        by: Vec<String>,
    },
    /// Attractive fixed ray and its brick splittings.
    Ray { map: String },
    /// Attractive/repulsive evidence at a fixed boundary point.
    Classify { aut: String, ray: String },
    /// Stabilizer experiment for an automorphism at a boundary point.
    Stabcheck { aut: String, ray: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let flags = Flags {
        depth: cli.depth,
        kmax: cli.kmax,
        levels: cli.levels,
        radius: cli.radius,
        power_cap: cli.power_cap,
        order_cap: cli.order_cap,
        seed: cli.seed,
    };
    let result = run::load_instance(&cli.instance).and_then(|inst| {
        let mut session = run::Session::new(inst, flags);
        match &cli.command {
            Command::Reduce { word } => session.reduce(word),
            Command::Apply { aut, word } => session.apply(aut, word),
            Command::Orbit { aut, word, k } => session.orbit(aut, word, *k),
            Command::Rational { word } => session.rational(word),
            Command::Traincheck { map } => session.traincheck(map),
            Command::Lamination { map, by } => session.lamination(map, by),
            Command::Ray { map } => session.ray(map),
            Command::Classify { aut, ray } => session.classify(aut, ray),
            Command::Stabcheck { aut, ray } => session.stabcheck(aut, ray),
        }
        .map(|()| session.into_report())
    });
    match result {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            println!("{}", if report.ok { "OK" } else { "FAIL" });
            if let Some(path) = &cli.dump {
                if let Err(e) = std::fs::write(path, report.json()) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return ExitCode::from(1);
                }
            }
            ExitCode::from(if report.ok { 0 } else { 1 })
        }
        Err(Failure::Parse(msg)) => {
            eprintln!("parse error: {msg}");
            println!("FAIL");
            ExitCode::from(2)
        }
        Err(Failure::Validation(msg)) => {
            eprintln!("validation error: {msg}");
            println!("FAIL");
            ExitCode::from(3)
        }
    }
}
