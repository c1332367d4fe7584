mod cli;
mod commands;
mod config;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command};
use config::RunConfig;
use error::{CliError, CliResult};
use manifest::{file_record, Ctx, Invocation, Manifest};

fn thread_count(flag: Option<usize>, cfg: &RunConfig) -> CliResult<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    if let Ok(v) = std::env::var("SKILLPATH_THREADS") {
        let n = v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Config(format!("SKILLPATH_THREADS=`{v}` is not a positive integer")))?;
        return Ok(Some(n));
    }
    Ok(cfg.run.threads)
}

fn init_threads(n: Option<usize>) -> CliResult<usize> {
    if n == Some(0) {
        return Err(CliError::Config("thread count must be positive".into()));
    }
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n {
        b = b.num_threads(n);
    }
    b.build_global().map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(rayon::current_num_threads())
}

fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    apply_flags(&cli.command, &mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn apply_flags(cmd: &Command, cfg: &mut RunConfig) {
    if let Some(f) = cmd.model_flags() {
        f.apply(cfg);
    }
    if let Some(f) = cmd.prune_flags() {
        f.apply(cfg);
    }
    if let Command::GenData(a) = cmd {
        if let Some(s) = a.seed {
            cfg.run.seed = s;
        }
    }
    if let Command::Mediate(a) = cmd {
        if let Some(n) = a.max_nodes {
            cfg.mediation.max_nodes = n;
        }
    }
}

fn absolute(p: &Path) -> CliResult<PathBuf> {
    Ok(if p.is_absolute() { p.to_path_buf() } else { std::env::current_dir()?.join(p) })
}

fn replay(manifest_path: &Path, out_dir: &Path, threads: Option<usize>) -> CliResult<()> {
    let recorded = Manifest::load(manifest_path)?;
    let out_dir = absolute(out_dir)?;
    std::env::set_current_dir(&recorded.cwd)
        .map_err(|e| CliError::Data(format!("cannot enter {}: {e}", recorded.cwd.display())))?;
    let mut inv = recorded.invocation.clone();
    apply_flags(&inv.command.clone(), &mut inv.config);
    inv.config.validate()?;
    let n = init_threads(threads.or(inv.config.run.threads))?;
    let (manifest, failure) = commands::execute(&inv, Ctx::new(out_dir.clone(), n)?)?;
    let mut identical = true;
    let mut files = Vec::new();
    for rec in &recorded.outputs {
        let now = file_record(&out_dir.join(&rec.path), rec.path.clone()).ok();
        let same = now.as_ref().is_some_and(|r| r.sha256 == rec.sha256);
        identical &= same;
        println!("{} {}", if same { "identical" } else { "DIFFERS  " }, rec.path);
        files.push(serde_json::json!({
            "path": rec.path,
            "expected": rec.sha256,
            "actual": now.map(|r| r.sha256),
            "identical": same,
        }));
    }
    identical &= manifest.outputs.len() == recorded.outputs.len();
    let doc = serde_json::json!({
        "manifest": manifest_path,
        "identical": identical,
        "files": files,
    });
    manifest::write_atomic(&out_dir.join("replay_check.json"), &commands::to_json_bytes(&doc)?)?;
    if let Some(f) = failure {
        return Err(CliError::Internal(f));
    }
    if !identical {
        return Err(CliError::Internal("replayed outputs differ from the manifest".into()));
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Command::Replay(a) = &cli.command {
        let threads = match cli.threads {
            Some(n) => Some(n),
            None => thread_count(None, &RunConfig::default())?,
        };
        return replay(&a.manifest, &cli.out_dir, threads);
    }
    let cfg = resolve(&cli)?;
    let n = init_threads(thread_count(cli.threads, &cfg)?)?;
    let inv = Invocation {
        command: cli.command,
        config: cfg,
    };
    let (_, failure) = commands::execute(&inv, Ctx::new(cli.out_dir, n)?)?;
    match failure {
        Some(f) => Err(CliError::Internal(f)),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
