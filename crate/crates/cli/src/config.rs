use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ppem_core::consensus::{Mode, StopRule, DEFAULT_RHO};
use ppem_core::data::ResponsibilityNorm;
use ppem_core::privacy::Adversary;
use ppem_core::protocols::Protocol;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const OUT_DIR_ENV: &str = "PPEM_OUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Geometric,
    Fig1,
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Built-in stand-in with the Parkinsons table's shape.
    ParkinsonsLike,
    Csv,
    /// Draws from a fixed two-component mixture in the plane.
    Synthetic,
}

/// Every experiment knob in one flat document. Unset entries take
/// per-command defaults when resolved; the resolved form is what gets
/// embedded in result files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,

    pub graph: Option<GraphKind>,
    pub n: Option<usize>,
    pub radius: Option<f64>,
    pub graph_file: Option<PathBuf>,
    pub max_attempts: Option<usize>,

    pub dataset: Option<DatasetKind>,
    pub csv: Option<PathBuf>,
    pub csv_header: Option<bool>,
    pub label_column: Option<String>,
    pub drop_columns: Option<Vec<String>>,
    pub pca_k: Option<usize>,
    pub standardize: Option<bool>,
    pub synthetic_points: Option<usize>,

    pub protocol: Option<Protocol>,
    pub protocols: Option<Vec<Protocol>>,
    pub c: Option<usize>,
    pub iters: Option<usize>,
    pub sigma_lambda: Option<f64>,
    pub rho: Option<f64>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub mode: Option<Mode>,
    pub stop: Option<StopRule>,
    pub mask_factor: Option<f64>,
    pub encrypt_relays: Option<bool>,
    pub transcript: Option<bool>,

    pub corrupt: Option<Vec<usize>>,
    pub target: Option<usize>,
    pub adversary: Option<Adversary>,
    pub trials: Option<usize>,
    pub repeats: Option<usize>,
    pub k: Option<usize>,
    pub normalization: Option<ResponsibilityNorm>,

    pub rhos: Option<Vec<f64>>,
    pub sizes: Option<Vec<usize>>,

    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GraphGen,
    EmRun,
    PrivacyAudit,
    CalibrateMi,
}

fn set<T>(slot: &mut Option<T>, value: T) {
    if slot.is_none() {
        *slot = Some(value);
    }
}

impl Config {
    /// Reads a config file. A result file is accepted too: its embedded
    /// `config` object is used.
    pub fn from_file(path: &Path) -> Result<Map<String, Value>> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let Value::Object(mut map) = value else {
            bail!("config {} is not a JSON object", path.display());
        };
        if let Some(Value::Object(embedded)) = map.remove("config") {
            return Ok(embedded);
        }
        Ok(map)
    }

    /// `base` with every key of `overrides` replaced.
    pub fn merge(mut base: Map<String, Value>, overrides: Map<String, Value>) -> Result<Config> {
        base.extend(overrides);
        let config: Config = serde_json::from_value(Value::Object(base)).context("invalid configuration")?;
        Ok(config)
    }

    /// Fills every setting the command uses. Settings it ignores stay unset
    /// so the embedded config only lists what mattered.
    pub fn resolve(mut self, command: Command) -> Result<Config> {
        set(&mut self.seed, 0);
        let env_out = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
        set(&mut self.out_dir, env_out.unwrap_or_else(|| PathBuf::from("ppem-out")));
        let default_graph = match command {
            Command::PrivacyAudit => GraphKind::Fig1,
            _ => GraphKind::Geometric,
        };
        if command != Command::CalibrateMi {
            set(&mut self.graph, default_graph);
            match self.graph {
                Some(GraphKind::Geometric) => {
                    set(&mut self.n, 80);
                    let n = self.n.unwrap_or(80);
                    set(&mut self.radius, ppem_core::graph::connectivity_radius(n));
                    set(&mut self.max_attempts, 100);
                }
                Some(GraphKind::File) => {
                    if self.graph_file.is_none() {
                        bail!("graph = \"file\" needs graph_file");
                    }
                }
                _ => {}
            }
        }
        match command {
            Command::GraphGen | Command::CalibrateMi => {}
            Command::EmRun => {
                set(&mut self.dataset, DatasetKind::ParkinsonsLike);
                match self.dataset {
                    Some(DatasetKind::Csv) => {
                        if self.csv.is_none() {
                            bail!("dataset = \"csv\" needs csv");
                        }
                        set(&mut self.drop_columns, Vec::new());
                    }
                    Some(DatasetKind::Synthetic) => set(&mut self.synthetic_points, 195),
                    _ => {}
                }
                if self.dataset != Some(DatasetKind::Synthetic) {
                    set(&mut self.pca_k, 2);
                    set(&mut self.standardize, false);
                }
                set(&mut self.protocol, Protocol::Subspace);
                set(&mut self.c, 2);
                set(&mut self.iters, 30);
                set(&mut self.transcript, true);
                match self.protocol {
                    Some(Protocol::Subspace) => {
                        set(&mut self.sigma_lambda, 1e3);
                        set(&mut self.rho, DEFAULT_RHO);
                        set(&mut self.tol, 1e-8);
                        set(&mut self.max_iters, 100_000);
                        set(&mut self.mode, Mode::Synchronous);
                        set(&mut self.stop, StopRule::OracleMean);
                    }
                    Some(Protocol::SecureSum) => {
                        set(&mut self.mask_factor, 1e3);
                        set(&mut self.encrypt_relays, false);
                    }
                    _ => {}
                }
            }
            Command::PrivacyAudit => {
                set(&mut self.protocols, Protocol::ALL.to_vec());
                set(&mut self.c, 1);
                set(&mut self.iters, 5);
                set(&mut self.corrupt, vec![2, 4]);
                set(&mut self.target, 1);
                set(&mut self.adversary, Adversary::Passive);
                set(&mut self.trials, 10_000);
                set(&mut self.repeats, 10);
                set(&mut self.k, ppem_core::privacy::DEFAULT_K);
                set(&mut self.normalization, ResponsibilityNorm::OverComponents);
                set(&mut self.mask_factor, 1e3);
                set(&mut self.encrypt_relays, false);
            }
        }
        if command == Command::CalibrateMi {
            set(&mut self.rhos, vec![0.0, 0.3, 0.6, 0.9]);
            set(&mut self.sizes, vec![1_000, 10_000]);
            set(&mut self.repeats, 20);
            set(&mut self.k, ppem_core::privacy::DEFAULT_K);
        }
        Ok(self)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("ppem-out"))
    }
}

/// Unwraps a setting filled in by [`Config::resolve`].
pub fn get<T: Clone>(slot: &Option<T>, name: &str) -> Result<T> {
    match slot {
        Some(v) => Ok(v.clone()),
        None => bail!("setting {name} is missing"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn map(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn flags_override_file_values() {
        let c = Config::merge(map(json!({"seed": 1, "n": 20})), map(json!({"n": 30}))).unwrap();
        assert_eq!((c.seed, c.n), (Some(1), Some(30)));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::merge(map(json!({"sede": 1})), Map::new()).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = Config::default().resolve(Command::EmRun).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        let back: Config = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.clone().resolve(Command::EmRun).unwrap(), c);
        assert_eq!(c.radius, Some(ppem_core::graph::connectivity_radius(80)));
    }

    #[test]
    fn audit_defaults_follow_the_fig1_scenario() {
        let c = Config::default().resolve(Command::PrivacyAudit).unwrap();
        assert_eq!(c.graph, Some(GraphKind::Fig1));
        assert_eq!(c.corrupt, Some(vec![2, 4]));
        assert_eq!(c.trials, Some(10_000));
        assert!(c.dataset.is_none());
    }
}
