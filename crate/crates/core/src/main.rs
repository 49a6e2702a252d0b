use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use kgscatter::harness::{run_many, ConfigSource, CHECKS};

/// Run a registered check (or `all`) and write its reports.
#[derive(Parser, Debug)]
#[command(name = "kgscatter", version)]
struct Cli {
    /// Check name, or `all`.
    check: String,
    /// Flat key = value configuration file; desk defaults fill the gaps.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set dt=1e-3` or `--set cr-scan.dt=0.01`.
    #[arg(long = "set", value_name = "K=V")]
    set: Vec<String>,
    /// Output directory for reports and artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads when running several checks.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let source = (|| {
        let mut s = match &cli.config {
            Some(p) => ConfigSource::load(p)?,
            None => ConfigSource::desk(),
        };
        for pair in &cli.set {
            s.set_pair(pair)?;
        }
        if let Some(out) = &cli.out {
            s.set("out", &out.to_string_lossy())?;
        }
        Ok::<_, kgscatter::Error>(s)
    })();
    let source = match source {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let checks: Vec<&str> = if cli.check == "all" {
        CHECKS.to_vec()
    } else {
        vec![cli.check.as_str()]
    };
    let mut failed = false;
    let mut errored = false;
    for (check, result) in checks.iter().zip(run_many(&source, &checks, cli.jobs)) {
        match result {
            Ok(r) => {
                let time = r
                    .wall_time
                    .map(|t| format!(" ({t:.1} s)"))
                    .unwrap_or_default();
                println!("{} {check}{time}", if r.pass { "PASS" } else { "FAIL" });
                failed |= !r.pass;
            }
            Err(e) => {
                println!("ERROR {check}: {e}");
                errored = true;
            }
        }
    }
    if errored {
        ExitCode::from(2)
    } else if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}
