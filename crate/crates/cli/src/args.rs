//! Run arguments: `--key value` pairs from an optional arg file, overridden
//! key by key by the command line.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{error::ErrorKind, ArgAction, CommandFactory, Parser, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Parser)]
#[command(
    name = "imitate",
    about = "Train and test motion imitation policies",
    rename_all = "snake_case",
    args_override_self = true,
    disable_help_subcommand = true
)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value = "train")]
    pub mode: Mode,
    /// Parallel environments per worker.
    #[arg(long, default_value_t = 16)]
    pub num_envs: usize,
    #[arg(long)]
    pub env_config: Option<PathBuf>,
    #[arg(long)]
    pub agent_config: Option<PathBuf>,
    /// Export trajectory files while running.
    #[arg(long, action = ArgAction::Set, default_value_t = false)]
    pub visualize: bool,
    #[arg(long, default_value = "output/log.txt")]
    pub log_file: PathBuf,
    #[arg(long, default_value = "output/model.json")]
    pub out_model_file: PathBuf,
    /// Checkpoint to test, or to resume training from.
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    pub logger: String,
    #[arg(long)]
    pub arg_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub num_workers: usize,
    #[arg(long, default_value = "cpu")]
    pub device: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training stops once this many iterations have completed.
    #[arg(long, default_value_t = 100)]
    pub max_iterations: u64,
    /// Episodes per evaluation; defaults to `num_envs`.
    #[arg(long)]
    pub test_episodes: Option<usize>,
}

/// Every accepted flag, without its `--` prefix.
pub fn valid_keys() -> Vec<String> {
    RunArgs::command()
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .filter(|k| k != "help")
        .collect()
}

/// Splits arg-file text into tokens, dropping `#` comments.
pub fn arg_file_tokens(text: &str) -> Vec<String> {
    text.lines()
        .flat_map(|l| l.split('#').next().unwrap_or("").split_whitespace())
        .map(str::to_string)
        .collect()
}

fn find_arg_file(tokens: &[String]) -> Result<Option<PathBuf>> {
    let mut found = None;
    let mut it = tokens.iter();
    while let Some(t) = it.next() {
        if t == "--arg_file" {
            let v = it.next().ok_or_else(|| anyhow!("missing value for --arg_file"))?;
            found = Some(PathBuf::from(v));
        } else if let Some(v) = t.strip_prefix("--arg_file=") {
            found = Some(PathBuf::from(v));
        }
    }
    Ok(found)
}

/// Parses command-line tokens, not including the program name.
pub fn parse_args<S: AsRef<str>>(tokens: &[S]) -> Result<RunArgs> {
    let cli: Vec<String> = tokens.iter().map(|s| s.as_ref().to_string()).collect();
    let mut all = vec!["imitate".to_string()];
    if let Some(path) = find_arg_file(&cli)? {
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read arg_file {}", path.display()))?;
        all.extend(arg_file_tokens(&text));
    }
    all.extend(cli);
    let args = RunArgs::try_parse_from(&all).map_err(|e| match e.kind() {
        ErrorKind::UnknownArgument => {
            let bad = e
                .get(clap::error::ContextKind::InvalidArg)
                .map(|v| v.to_string())
                .unwrap_or_default();
            anyhow!("unknown argument {bad}; valid keys: --{}", valid_keys().join(", --"))
        }
        _ => anyhow!("{e}"),
    })?;
    args.validate()?;
    Ok(args)
}

impl RunArgs {
    pub fn validate(&self) -> Result<()> {
        if self.mode == Mode::Test && self.model_file.is_none() {
            bail!("--mode test requires --model_file");
        }
        if self.num_workers == 0 {
            bail!("--num_workers must be at least 1");
        }
        if self.num_envs == 0 {
            bail!("--num_envs must be at least 1");
        }
        Ok(())
    }

    /// Renders the arguments back to tokens that parse to an equal value.
    pub fn to_tokens(&self) -> Vec<String> {
        let mut t = Vec::new();
        let mut put = |k: &str, v: String| {
            t.push(format!("--{k}"));
            t.push(v);
        };
        let path = |p: &Path| p.display().to_string();
        put("mode", self.mode.to_possible_value().expect("variant").get_name().to_string());
        put("num_envs", self.num_envs.to_string());
        if let Some(p) = &self.env_config {
            put("env_config", path(p));
        }
        if let Some(p) = &self.agent_config {
            put("agent_config", path(p));
        }
        put("visualize", self.visualize.to_string());
        put("log_file", path(&self.log_file));
        put("out_model_file", path(&self.out_model_file));
        if let Some(p) = &self.model_file {
            put("model_file", path(p));
        }
        put("logger", self.logger.clone());
        if let Some(p) = &self.arg_file {
            put("arg_file", path(p));
        }
        put("num_workers", self.num_workers.to_string());
        put("device", self.device.clone());
        put("seed", self.seed.to_string());
        put("max_iterations", self.max_iterations.to_string());
        if let Some(n) = self.test_episodes {
            put("test_episodes", n.to_string());
        }
        t
    }
}
