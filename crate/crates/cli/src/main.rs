use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ouinf_core::{config, scenarios};

/// Runs the OU-system verification scenarios.
#[derive(Parser, Debug)]
#[command(name = "ouinf", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the scenario registry.
    ListScenarios {
        /// Emit the registry as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML configuration layered over the scenario defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario name; overrides `scenario` in the config file.
    #[arg(long)]
    scenario: Option<String>,
    /// Master seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default `results/<scenario>`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Shorthand for `--override scheme.paths=<n>`.
    #[arg(long)]
    paths: Option<usize>,
    /// Shorthand for `--override scheme.dt=<dt>`.
    #[arg(long)]
    dt: Option<f64>,
    /// Dotted `key=value` assignment, value parsed as TOML (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

const USAGE_ERROR: u8 = 2;

fn print_registry() {
    for s in scenarios::registry() {
        println!("{:<24} {}\n{:<24} [{}]", s.name, s.description, "", s.anchor);
    }
}

fn run(args: RunArgs) -> ExitCode {
    if args.config.is_none() && args.scenario.is_none() {
        eprintln!("error: give --scenario or --config (see `ouinf list-scenarios`)");
        return ExitCode::from(USAGE_ERROR);
    }
    let text = match &args.config {
        Some(p) => match fs::read_to_string(p) {
            Ok(t) => Some(t),
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", p.display());
                return ExitCode::from(USAGE_ERROR);
            }
        },
        None => None,
    };
    let mut overrides = Vec::new();
    if let Some(s) = args.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(n) = args.paths {
        overrides.push(format!("scheme.paths={n}"));
    }
    if let Some(dt) = args.dt {
        overrides.push(format!("scheme.dt={dt:e}"));
    }
    overrides.extend(args.overrides);

    let cfg = match config::resolve(text.as_deref(), args.scenario.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            if e.to_string().contains("unknown scenario") {
                eprintln!();
                print_registry();
            }
            return ExitCode::from(USAGE_ERROR);
        }
    };
    if let Err(e) = scenarios::validate(&cfg) {
        eprintln!("error: {e}");
        return ExitCode::from(USAGE_ERROR);
    }
    let out_dir = args
        .out_dir
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results").join(&cfg.scenario));

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = args.threads {
        pool = pool.num_threads(t.max(1));
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(USAGE_ERROR);
        }
    };
    let report = match pool.install(|| scenarios::run(&cfg)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(USAGE_ERROR);
        }
    };
    let written = report.write(&out_dir).and_then(|files| {
        let resolved = out_dir.join("config.toml");
        fs::write(&resolved, cfg.to_toml()?)?;
        Ok(files.len() + 1)
    });
    match written {
        Ok(n) => eprintln!("wrote {n} files to {}", out_dir.display()),
        Err(e) => {
            eprintln!("error: writing results: {e}");
            return ExitCode::from(USAGE_ERROR);
        }
    }
    for c in &report.criteria {
        println!("{:<4} {}/{}", if c.pass { "PASS" } else { "FAIL" }, report.scenario, c.name);
    }
    println!("{} {}", report.scenario, if report.passed() { "PASS" } else { "FAIL" });
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Some(Command::ListScenarios { json }) => {
            if json {
                println!("{}", scenarios::registry_json());
            } else {
                print_registry();
            }
            ExitCode::SUCCESS
        }
        None => run(cli.run),
    }
}
