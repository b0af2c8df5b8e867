use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use imitate_cli::plot::{group_label, plot_logs};

/// Draws learning curves from training log CSVs.
#[derive(Debug, Parser)]
#[command(name = "plot_log")]
struct Cli {
    /// Log CSVs, optionally written as `label=path`. Logs sharing a label
    /// are drawn as one mean line with a min/max band.
    #[arg(required = true)]
    logs: Vec<String>,
    /// Directory receiving one SVG per statistic.
    #[arg(long, default_value = "output/plots")]
    out: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let inputs: Vec<(String, PathBuf)> = cli
        .logs
        .iter()
        .map(|s| match s.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => (group_label(std::path::Path::new(s)), PathBuf::from(s)),
        })
        .collect();
    for p in plot_logs(&inputs, &cli.out)? {
        println!("{}", p.display());
    }
    Ok(())
}
