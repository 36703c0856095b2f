use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ppem_cli::config::{Command, Config};
use serde_json::{Map, Value};

#[derive(Parser)]
#[command(name = "ppem", version, about = "Privacy-preserving distributed EM experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a network and report its connectivity.
    GraphGen(Args),
    /// Run one protocol next to centralized EM and compare them.
    EmRun(Args),
    /// Monte Carlo leakage of one honest node under each protocol.
    PrivacyAudit(Args),
    /// Check the mutual-information estimator against Gaussian closed forms.
    CalibrateMi(Args),
}

/// Flags override values from `--config`; anything without a dedicated flag
/// can be set with `--set key=value` (value parsed as JSON, else a string).
#[derive(clap::Args)]
struct Args {
    /// Flat JSON config, or a result file with an embedded config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $PPEM_OUT_DIR, then ./ppem-out).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// geometric, fig1 or file.
    #[arg(long)]
    graph: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    graph_file: Option<PathBuf>,
    /// parkinsons-like, csv or synthetic.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    pca_k: Option<usize>,
    /// federated, secure-sum or subspace.
    #[arg(long)]
    protocol: Option<String>,
    /// Comma-separated protocol list for audits.
    #[arg(long)]
    protocols: Option<String>,
    /// Mixture components.
    #[arg(long)]
    c: Option<usize>,
    /// EM iterations.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    sigma_lambda: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Consensus tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// synchronous or asynchronous.
    #[arg(long)]
    mode: Option<String>,
    /// Comma-separated corrupt node labels (empty for none).
    #[arg(long)]
    corrupt: Option<String>,
    #[arg(long)]
    target: Option<usize>,
    /// passive or eavesdrop.
    #[arg(long)]
    adversary: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Neighbors for the MI estimator.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>, String> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("bad list entry {s:?}")))
        .collect()
}

impl Args {
    fn overrides(&self) -> Result<Map<String, Value>, String> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        let word = |s: &String| Value::String(s.replace('-', "_"));
        let path = |p: &PathBuf| Value::String(p.display().to_string());
        if let Some(v) = &self.out {
            put("out_dir", path(v))
        }
        if let Some(v) = self.seed {
            put("seed", v.into())
        }
        if let Some(v) = &self.graph {
            put("graph", word(v))
        }
        if let Some(v) = self.n {
            put("n", v.into())
        }
        if let Some(v) = self.radius {
            put("radius", v.into())
        }
        if let Some(v) = &self.graph_file {
            put("graph_file", path(v))
        }
        if let Some(v) = &self.dataset {
            put("dataset", word(v))
        }
        if let Some(v) = &self.csv {
            put("csv", path(v))
        }
        if let Some(v) = self.pca_k {
            put("pca_k", v.into())
        }
        if let Some(v) = &self.protocol {
            put("protocol", word(v))
        }
        if let Some(v) = &self.protocols {
            put("protocols", list::<String>(v)?.iter().map(word).collect());
        }
        if let Some(v) = self.c {
            put("c", v.into())
        }
        if let Some(v) = self.iters {
            put("iters", v.into())
        }
        if let Some(v) = self.sigma_lambda {
            put("sigma_lambda", v.into())
        }
        if let Some(v) = self.rho {
            put("rho", v.into())
        }
        if let Some(v) = self.tol {
            put("tol", v.into())
        }
        if let Some(v) = self.max_iters {
            put("max_iters", v.into())
        }
        if let Some(v) = &self.mode {
            put("mode", word(v))
        }
        if let Some(v) = &self.corrupt {
            put("corrupt", list::<usize>(v)?.into())
        }
        if let Some(v) = self.target {
            put("target", v.into())
        }
        if let Some(v) = &self.adversary {
            put("adversary", word(v))
        }
        if let Some(v) = self.trials {
            put("trials", v.into())
        }
        if let Some(v) = self.repeats {
            put("repeats", v.into())
        }
        if let Some(v) = self.k {
            put("k", v.into())
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            put(k.trim(), value);
        }
        Ok(m)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Cmd::GraphGen(a) => (Command::GraphGen, a),
        Cmd::EmRun(a) => (Command::EmRun, a),
        Cmd::PrivacyAudit(a) => (Command::PrivacyAudit, a),
        Cmd::CalibrateMi(a) => (Command::CalibrateMi, a),
    };
    let result = args
        .overrides()
        .map_err(anyhow::Error::msg)
        .and_then(|overrides| {
            let base = match &args.config {
                Some(p) => Config::from_file(p)?,
                None => Map::new(),
            };
            Config::merge(base, overrides)
        })
        .and_then(|cfg| ppem_cli::run(command, cfg));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", ppem_cli::error_json(&e));
            ExitCode::FAILURE
        }
    }
}
