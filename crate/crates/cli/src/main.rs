mod args;
mod commands;
mod failure;
mod manifest;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use args::{Cli, Command};
use commands::{fresh_out_dir, plan, Outcome};
use failure::Failure;
use manifest::{hash_outputs, RunManifest, ERROR_FILE, RUN_MANIFEST};

fn error_document(failure: &Failure) -> serde_json::Value {
    json!({ "status": "error", "kind": failure.kind(), "exit_code": failure.exit_code(), "message": failure.message() })
}

fn finish(out: &Path, threads: usize, command: &Command, outcome: Outcome) -> Result<serde_json::Value, Failure> {
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        threads,
        command: command.clone(),
        dataset_manifest_hash: outcome.dataset_manifest_hash,
        audit: outcome.audit,
        outputs: hash_outputs(out)?,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out.join(RUN_MANIFEST), text)?;
    Ok(json!({ "status": "ok", "command": command.name(), "out_dir": out, "result": outcome.summary }))
}

fn run(cli: Cli) -> Result<serde_json::Value, Failure> {
    let (mut command, threads) = match cli.command {
        Command::Rerun(r) => {
            let recorded = RunManifest::read(&r.manifest)?;
            let mut command = recorded.command;
            let out = r.out.out_dir.ok_or_else(|| Failure::Config("no output directory given (--out-dir or SSF_OUT_DIR)".into()))?;
            command.set_out_dir(out);
            (command, recorded.threads)
        }
        other => (other, cli.threads),
    };
    if threads == 0 {
        return Err(Failure::Config("--threads must be at least 1".into()));
    }
    let job = plan(&mut command)?;
    let out = fresh_out_dir(command.out_dir())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    fs::create_dir_all(&out)?;
    let result = pool.install(|| job(&out)).and_then(|outcome| finish(&out, threads, &command, outcome));
    if let Err(failure) = &result {
        // Best effort: the original failure is what gets reported.
        let _ = fs::write(out.join(ERROR_FILE), error_document(failure).to_string());
    }
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            let failure = Failure::Config(e.kind().to_string());
            println!("{}", error_document(&failure));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(doc) => {
            println!("{doc}");
            ExitCode::SUCCESS
        }
        Err(failure) => {
            log::error!("{failure}");
            println!("{}", error_document(&failure));
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}
