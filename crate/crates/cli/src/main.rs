mod args;
mod commands;
mod config;
mod error;
mod manifest;

use std::path::{Path, PathBuf};

use clap::Parser;

use crate::args::{Cli, Command};
use crate::commands::{locate_solver, Context};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{sha256_hex, RunManifest, Workspace};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    let code = match dispatch(&cli, &args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("stg: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: &Cli, args: &[String]) -> Result<(), CliError> {
    match &cli.command {
        Command::Replay { manifest } => replay(cli, manifest),
        Command::Run { config } => {
            let mut cfg = RunConfig::load(config)?;
            cfg.apply_flags(cli);
            run_pipeline(&cfg, &out_dir(cli), args).map(|_| ())
        }
        command => {
            let cfg = RunConfig::resolve(cli)?;
            run_single(command, &cfg, &out_dir(cli), args).map(|_| ())
        }
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

/// Size the global worker pool; returns the effective worker count.
fn init_workers(requested: Option<usize>) -> Result<usize, CliError> {
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = requested {
            if n == 0 {
                return Err(CliError::Config("--workers must be at least 1".into()));
            }
            // A second initialization (pipeline steps, replays) keeps the first pool.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        Ok(rayon::current_num_threads())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = requested;
        Ok(1)
    }
}

fn run_single(command: &Command, cfg: &RunConfig, out: &Path, args: &[String]) -> Result<RunManifest, CliError> {
    let workers = init_workers(cfg.workers)?;
    let solver = if command.needs_solver() { Some(locate_solver(cfg)?) } else { None };
    let mut ws = Workspace::create(out)?;
    Context {
        cfg,
        ws: &mut ws,
        solver,
    }
    .execute(command)?;
    ws.finish(command.name(), args, cfg, workers)
}

fn parse_step(step: &[String], out: &Path) -> Result<Command, CliError> {
    let argv = std::iter::once("stg".to_string())
        .chain(step.iter().map(|a| a.replace("$OUT", &out.display().to_string())));
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Config(format!("pipeline step {step:?}: {e}")))?;
    if cli.seed.is_some() || cli.workers.is_some() || cli.solver.is_some() || cli.out.is_some() || cli.config.is_some() {
        return Err(CliError::Config(format!("pipeline step {step:?}: global flags belong in the run configuration")));
    }
    Ok(cli.command)
}

/// Run every configured step into its own numbered subdirectory, with one
/// manifest for the whole run.
fn run_pipeline(cfg: &RunConfig, out: &Path, args: &[String]) -> Result<RunManifest, CliError> {
    if cfg.pipeline.steps.is_empty() {
        return Err(CliError::Config("the run configuration has no [pipeline] steps".into()));
    }
    let steps = cfg
        .pipeline
        .steps
        .iter()
        .map(|s| parse_step(s, out))
        .collect::<Result<Vec<_>, _>>()?;
    let workers = init_workers(cfg.workers)?;
    let solver = if steps.iter().any(Command::needs_solver) { Some(locate_solver(cfg)?) } else { None };
    let mut ws = Workspace::create(out)?;
    for (i, step) in steps.iter().enumerate() {
        ws.set_prefix(format!("{:02}-{}", i + 1, step.name()));
        log::info!("step {}: {}", i + 1, step.name());
        Context {
            cfg,
            ws: &mut ws,
            solver: solver.clone(),
        }
        .execute(step)?;
    }
    ws.set_prefix("");
    ws.finish("run", args, cfg, workers)
}

fn replay(cli: &Cli, path: &Path) -> Result<(), CliError> {
    let recorded = RunManifest::load(path)?;
    let original_out = path.parent().unwrap_or(Path::new("."));
    let out = cli.out.clone().unwrap_or_else(|| original_out.join("replay"));
    for (input, digest) in &recorded.inputs {
        let p = Path::new(input);
        if p.starts_with(original_out) {
            continue;
        }
        let bytes = std::fs::read(p).map_err(|e| CliError::Input(format!("recorded input {input}: {e}")))?;
        if sha256_hex(&bytes) != *digest {
            return Err(CliError::Input(format!("recorded input {input} has changed")));
        }
    }
    let mut cfg = recorded.config.clone();
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if let Some(s) = &cli.solver {
        cfg.solver = Some(s.clone());
    }
    let argv = std::iter::once("stg".to_string()).chain(recorded.args.iter().cloned());
    let original = Cli::try_parse_from(argv).map_err(|e| CliError::Input(format!("recorded arguments: {e}")))?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    let fresh = match &original.command {
        Command::Run { .. } => run_pipeline(&cfg, &out, &args)?,
        Command::Replay { .. } => return Err(CliError::Input("cannot replay a replay".into())),
        command => run_single(command, &cfg, &out, &args)?,
    };
    let mut diffs = Vec::new();
    for (name, digest) in &recorded.outputs {
        match fresh.outputs.get(name) {
            Some(d) if d == digest => {}
            Some(_) => diffs.push(format!("{name} differs")),
            None => diffs.push(format!("{name} missing")),
        }
    }
    diffs.extend(fresh.outputs.keys().filter(|k| !recorded.outputs.contains_key(*k)).map(|k| format!("{k} is new")));
    if diffs.is_empty() {
        println!("replay identical: {} outputs", recorded.outputs.len());
        Ok(())
    } else {
        Err(CliError::Mismatch(diffs.join(", ")))
    }
}
