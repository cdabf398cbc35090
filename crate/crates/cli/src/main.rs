use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use freqbin_core::config::{parse_config_with_warnings, serialize_config, Pipeline, PRESETS};
use freqbin_core::pipeline::{error_record, run_pipeline_with_warnings};
use freqbin_core::Error;

/// Frequency-bin biphoton simulations.
///
/// Exit status: 0 on success, 1 for configuration errors, 2 for runtime errors.
/// Set FREQBIN_THREADS to bound the worker threads.
#[derive(Parser, Debug)]
#[command(name = "freqbin", version)]
struct Cli {
    /// jsi, jta, schmidt, hom, tof or netsim; `presets` lists the named presets
    pipeline: String,
    /// Configuration file (`[section]` headers and `key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset applied after those named in the file; repeatable
    #[arg(long)]
    preset: Vec<String>,
    /// Overrides `seed` from the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir`
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved configuration and exit
    #[arg(long)]
    print_config: bool,
}

fn fail(err: &Error, out: Option<&Path>) -> ExitCode {
    eprintln!("error: {err}");
    if let Some(dir) = out {
        if std::fs::create_dir_all(dir).is_ok() {
            let record = serde_json::to_string_pretty(&error_record(err)).unwrap_or_default();
            let _ = std::fs::write(dir.join("error.json"), record + "\n");
        }
    }
    ExitCode::from(if err.is_config() { 1 } else { 2 })
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("FREQBIN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config { line: 0, msg: format!("FREQBIN_THREADS must be a positive integer, found {raw:?}") })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.pipeline == "presets" {
        for p in PRESETS {
            println!("{:<16} {}", p.name, p.description);
        }
        return ExitCode::SUCCESS;
    }
    if let Err(e) = configure_threads() {
        return fail(&e, cli.out.as_deref());
    }
    let pipeline: Pipeline = match cli.pipeline.parse() {
        Ok(p) => p,
        Err(msg) => return fail(&Error::Config { line: 0, msg }, cli.out.as_deref()),
    };
    let mut text = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                let err = Error::Config { line: 0, msg: format!("cannot read {}: {e}", path.display()) };
                return fail(&err, cli.out.as_deref());
            }
        },
        None => String::new(),
    };
    text.push_str(&format!("\n[run]\npipeline = {pipeline}\n"));
    let (mut cfg, warnings) = match parse_config_with_warnings(&text, &cli.preset) {
        Ok(v) => v,
        Err(e) => return fail(&e, cli.out.as_deref()),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.run.output_dir = out.display().to_string();
    }
    if cli.print_config {
        for w in &warnings {
            eprintln!("warning: {w}");
        }
        print!("{}", serialize_config(&cfg));
        return ExitCode::SUCCESS;
    }
    let out_dir = PathBuf::from(&cfg.run.output_dir);
    match run_pipeline_with_warnings(&cfg, &out_dir, &warnings) {
        Ok(manifest) => {
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", serde_json::to_string_pretty(&manifest.metrics).unwrap_or_default());
            eprintln!("wrote {} files to {}", manifest.files.len() + 1, out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e, Some(&out_dir)),
    }
}
