use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use confspace_cli::commands::execute;
use confspace_cli::config::{Command, RunConfig, ValidateSection};
use confspace_cli::CliError;

#[derive(Parser, Debug)]
#[command(name = "confspace", version, about = "Configuration-space dynamics: simulation, correlation hierarchies and validation suites")]
struct Args {
    /// Command to run; overrides `command` in the config file.
    #[arg(value_enum)]
    command: Option<Command>,
    /// TOML run configuration (or a `run.json` written by an earlier run).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Validation suite: algebra, lp, duality, displays, flows, consistency, invariance, functional or all.
    #[arg(long)]
    suite: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Overrides `seed` in the config file.
    #[arg(long)]
    seed: Option<u64>,
}

fn resolve(args: &Args) -> Result<RunConfig, CliError> {
    let mut cfg = match (&args.config, args.command) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(command)) => RunConfig {
            command,
            seed: None,
            output_dir: None,
            model: None,
            window: None,
            integrator: None,
            sim: None,
            hierarchy: None,
            functional: None,
            duality: None,
            crosscheck: None,
            validate: None,
        },
        (None, None) => return Err(CliError::Config("give a command or --config <path>".into())),
    };
    if let Some(c) = args.command {
        cfg.command = c;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if let Some(s) = &args.suite {
        if cfg.command != Command::Validate {
            return Err(CliError::Config("--suite only applies to validate".into()));
        }
        cfg.validate.get_or_insert_with(ValidateSection::default).suite = Some(s.clone());
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if args.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(args.threads).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    let result = resolve(&args).and_then(|cfg| {
        let out = args.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
        execute(&cfg, &out).map(|ok| (ok, out))
    });
    match result {
        Ok((true, out)) => {
            println!("done; artifacts in {}", out.display());
            ExitCode::SUCCESS
        }
        Ok((false, out)) => {
            eprintln!("some checks failed; see {}", out.join("report.txt").display());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
