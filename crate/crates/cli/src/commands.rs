use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ppem_core::consensus::ConsensusOptions;
use ppem_core::data::{load_csv, parkinsons_like, pca, synthetic_gmm_data, CsvOptions, Dataset};
use ppem_core::gmm::{centralized_em, init_params, EmOptions, GmmParams, ParamsRecord};
use ppem_core::graph::{connected_geometric_graph, random_geometric_layout, Graph, NodeId};
use ppem_core::linalg::Matrix;
use ppem_core::privacy::{calibrate, monte_carlo_leakage, LeakageConfig, LeakageReport};
use ppem_core::protocols::{
    run_federated_em, run_secure_sum_em, run_subspace_em, NodeData, Protocol, RunOptions, SecureSumOptions, SubspaceOptions,
};
use ppem_core::transcript::MessageKind;
use ppem_core::SeedStream;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{get, Config, DatasetKind, GraphKind};

/// Files produced by one command, relative to the output directory.
pub type Artifacts = Vec<PathBuf>;

/// The resolved config as embedded in result files. The output directory is
/// left out so that runs written to different places compare equal.
pub fn embedded(cfg: &Config) -> Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Value::Object(map) = &mut v {
        map.retain(|k, v| !v.is_null() && k != "out_dir");
    }
    v
}

struct Output {
    dir: PathBuf,
    written: Artifacts,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.text(name, &text)
    }

    fn with_writer(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        let mut w = BufWriter::new(file);
        f(&mut w)
            .and_then(|_| w.flush())
            .with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path);
        Ok(())
    }
}

fn build_graph(cfg: &Config, root: &SeedStream) -> Result<(Graph, usize)> {
    Ok(match get(&cfg.graph, "graph")? {
        GraphKind::Fig1 => (Graph::fig1(), 0),
        GraphKind::File => {
            let path = get(&cfg.graph_file, "graph_file")?;
            let text = fs::read_to_string(&path).with_context(|| format!("reading graph {}", path.display()))?;
            (Graph::from_edge_list(&text)?, 0)
        }
        GraphKind::Geometric => connected_geometric_graph(
            get(&cfg.n, "n")?,
            get(&cfg.radius, "radius")?,
            root.child("graph"),
            get(&cfg.max_attempts, "max_attempts")?,
        )?,
    })
}

pub fn graph_gen(cfg: &Config) -> Result<Artifacts> {
    let root = SeedStream::new(get(&cfg.seed, "seed")?);
    let (graph, retries) = build_graph(cfg, &root)?;
    let mut out = Output::new(&cfg.out_dir())?;
    out.text("graph.edges", &graph.to_edge_list())?;
    if cfg.graph == Some(GraphKind::Geometric) {
        let seed = root.child("graph").nth(retries as u64).seed();
        let layout = random_geometric_layout(get(&cfg.n, "n")?, get(&cfg.radius, "radius")?, seed)?;
        let mut csv = String::from("node,x,y\n");
        for (k, p) in layout.positions.iter().enumerate() {
            writeln!(csv, "{},{},{}", k + 1, p[0], p[1])?;
        }
        out.text("positions.csv", &csv)?;
    }
    let degrees: Vec<usize> = graph.nodes().iter().map(|&v| graph.degree(v)).collect();
    out.json(
        "graph_report.json",
        &json!({
            "config": embedded(cfg),
            "nodes": graph.node_count(),
            "edges": graph.edge_count(),
            "connected": graph.is_connected(),
            "retries": retries,
            "min_degree": degrees.iter().min(),
            "max_degree": degrees.iter().max(),
            "mean_degree": 2.0 * graph.edge_count() as f64 / graph.node_count() as f64,
        }),
    )?;
    Ok(out.written)
}

/// Two-component planar mixture used by the synthetic dataset option.
fn synthetic_truth() -> GmmParams<f64> {
    GmmParams {
        weights: vec![0.35, 0.65],
        means: vec![vec![-2.0, 1.0], vec![2.0, -0.5]],
        covariances: vec![
            Matrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.6]]).expect("2x2"),
            Matrix::from_rows(&[vec![0.8, -0.2], vec![-0.2, 1.2]]).expect("2x2"),
        ],
    }
}

fn load_points(cfg: &Config, root: &SeedStream) -> Result<Matrix<f64>> {
    let raw: Dataset<f64> = match get(&cfg.dataset, "dataset")? {
        DatasetKind::Synthetic => {
            let count = get(&cfg.synthetic_points, "synthetic_points")?;
            return Ok(synthetic_gmm_data(&synthetic_truth(), count, root.child("data").seed())?.0);
        }
        DatasetKind::ParkinsonsLike => parkinsons_like(root.child("data").seed()),
        DatasetKind::Csv => {
            let opts = CsvOptions {
                header: cfg.csv_header,
                label_column: cfg.label_column.clone(),
                drop_columns: cfg.drop_columns.clone().unwrap_or_default(),
            };
            load_csv(&get(&cfg.csv, "csv")?, &opts)?
        }
    };
    Ok(pca(&raw.matrix, get(&cfg.pca_k, "pca_k")?, get(&cfg.standardize, "standardize")?)?.projected)
}

fn csv_lines<I: IntoIterator<Item = String>>(header: &str, rows: I) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

pub fn em_run(cfg: &Config) -> Result<Artifacts> {
    let root = SeedStream::new(get(&cfg.seed, "seed")?);
    let (graph, _) = build_graph(cfg, &root)?;
    let points = load_points(cfg, &root)?;
    let data = NodeData::contiguous(&points, graph.nodes())?;
    let em = EmOptions::for_data(&points);
    let c = get(&cfg.c, "c")?;
    let iters = get(&cfg.iters, "iters")?;
    let init = init_params(&points, c, root.child("init").seed(), &em)?;
    let central = centralized_em(&points, iters, &init, &em)?;
    let mut opts = RunOptions::new(iters, em);
    opts.record_transcript = get(&cfg.transcript, "transcript")?;
    let protocol = get(&cfg.protocol, "protocol")?;
    let run = match protocol {
        Protocol::Federated => run_federated_em(&data, &init, &opts)?,
        Protocol::SecureSum => {
            let secure = SecureSumOptions {
                mask_factor: get(&cfg.mask_factor, "mask_factor")?,
                data_scale: None,
                encrypt_relays: get(&cfg.encrypt_relays, "encrypt_relays")?,
            };
            run_secure_sum_em(&graph, &data, &init, &opts, &secure, root.child("masks"))?
        }
        Protocol::Subspace => {
            let subspace = SubspaceOptions {
                rho: get(&cfg.rho, "rho")?,
                consensus: ConsensusOptions {
                    mode: get(&cfg.mode, "mode")?,
                    sigma_lambda: get(&cfg.sigma_lambda, "sigma_lambda")?,
                    tol: get(&cfg.tol, "tol")?,
                    max_iters: get(&cfg.max_iters, "max_iters")?,
                    stop: get(&cfg.stop, "stop")?,
                    record_duals: false,
                },
            };
            run_subspace_em(&graph, &data, &init, &opts, &subspace, root.child("duals"))?
        }
    };

    let loglik_dev: Vec<f64> = run.trace.loglik.iter().zip(&central.loglik).map(|(a, b)| (a - b).abs()).collect();
    let param_dev: Vec<f64> = run
        .trace
        .params
        .iter()
        .zip(&central.params)
        .map(|(a, b)| a.max_abs_diff(b))
        .collect();
    let mut out = Output::new(&cfg.out_dir())?;
    let records: Vec<ParamsRecord<f64>> = run.trace.params.iter().cloned().map(ParamsRecord::from).collect();
    out.json(
        "trajectory.json",
        &json!({
            "config": embedded(cfg),
            "protocol": protocol,
            "loglik": run.trace.loglik,
            "params": records,
        }),
    )?;
    out.text(
        "loglik.csv",
        &csv_lines("iter,loglik", run.trace.loglik.iter().enumerate().map(|(t, l)| format!("{t},{l}"))),
    )?;
    out.text(
        "comparison.csv",
        &csv_lines(
            "iter,loglik,centralized_loglik,loglik_abs_diff,param_max_abs_diff",
            (0..=iters).map(|t| {
                format!(
                    "{t},{},{},{},{}",
                    run.trace.loglik[t], central.loglik[t], loglik_dev[t], param_dev[t]
                )
            }),
        ),
    )?;
    if opts.record_transcript {
        out.with_writer("transcript.jsonl", |w| run.transcript.write_jsonl(w))?;
    }
    let counts: BTreeMap<String, usize> = [
        MessageKind::DualInit,
        MessageKind::PrimalBroadcast,
        MessageKind::Upload,
        MessageKind::GlobalBroadcast,
        MessageKind::Relay,
        MessageKind::SumBroadcast,
    ]
    .into_iter()
    .map(|k| {
        (
            serde_json::to_value(k).expect("kind").as_str().unwrap_or_default().to_string(),
            run.transcript.count_kind(k),
        )
    })
    .filter(|(_, n)| *n > 0)
    .collect();
    out.json(
        "report.json",
        &json!({
            "config": embedded(cfg),
            "protocol": protocol,
            "points": points.rows(),
            "nodes": graph.node_count(),
            "iterations": iters,
            "max_loglik_abs_diff": loglik_dev.iter().copied().fold(0.0, f64::max),
            "max_param_abs_diff": param_dev.iter().copied().fold(0.0, f64::max),
            "loglik_abs_diff": loglik_dev,
            "param_max_abs_diff": param_dev,
            "message_counts": counts,
            "cycle": run.cycle,
            "consensus": run.consensus,
        }),
    )?;
    Ok(out.written)
}

/// Per-iteration check of `subspace < secure_sum < federated`, with each gap
/// in units of the standard error of the difference.
fn ordering(reports: &[LeakageReport]) -> Option<Value> {
    let find = |p: Protocol| reports.iter().find(|r| r.protocol == p);
    let (fed, sec, sub) = (find(Protocol::Federated)?, find(Protocol::SecureSum)?, find(Protocol::Subspace)?);
    let z = |hi: f64, lo: f64, se_hi: f64, se_lo: f64| {
        let se = (se_hi * se_hi + se_lo * se_lo).sqrt();
        if se > 0.0 {
            (hi - lo) / se
        } else if hi > lo {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut holds = true;
    let mut rows = Vec::new();
    for t in 0..fed.points.len() {
        let (f, s, u) = (&fed.points[t], &sec.points[t], &sub.points[t]);
        let upper = z(f.nmi, s.nmi, f.stderr, s.stderr);
        let lower = z(s.nmi, u.nmi, s.stderr, u.stderr);
        holds &= u.nmi < s.nmi && s.nmi < f.nmi;
        rows.push(json!({
            "iter": t,
            // infinite gaps (zero spread on both sides) are written as null
            "federated_minus_secure_sum_se": upper.is_finite().then_some(upper),
            "secure_sum_minus_subspace_se": lower.is_finite().then_some(lower),
            "min_gap_se": upper.min(lower).is_finite().then_some(upper.min(lower)),
        }));
    }
    Some(json!({ "holds": holds, "iterations": rows }))
}

pub fn privacy_audit(cfg: &Config) -> Result<Artifacts> {
    let root = SeedStream::new(get(&cfg.seed, "seed")?);
    let (graph, _) = build_graph(cfg, &root)?;
    let corrupt: BTreeSet<NodeId> = get(&cfg.corrupt, "corrupt")?.into_iter().map(NodeId).collect();
    if let Some(v) = corrupt.iter().find(|v| !graph.contains(**v)) {
        bail!(ppem_core::Error::InvalidArgument(format!("corrupt node {v} is not in the graph")));
    }
    let leak = LeakageConfig {
        protocols: get(&cfg.protocols, "protocols")?,
        graph,
        corrupt,
        target: NodeId(get(&cfg.target, "target")?),
        adversary: get(&cfg.adversary, "adversary")?,
        trials: get(&cfg.trials, "trials")?,
        em_iters: get(&cfg.iters, "iters")?,
        components: get(&cfg.c, "c")?,
        k: get(&cfg.k, "k")?,
        repeats: get(&cfg.repeats, "repeats")?,
        normalization: get(&cfg.normalization, "normalization")?,
        mask_factor: get(&cfg.mask_factor, "mask_factor")?,
        encrypt_relays: get(&cfg.encrypt_relays, "encrypt_relays")?,
        seed: root.child("trials").seed(),
    };
    let reports = monte_carlo_leakage(&leak).map_err(|e| match e {
        ppem_core::Error::HonestSubgraphDisconnected { .. } => anyhow::Error::new(e)
            .context("removing the corrupt nodes splits the honest nodes, so the subspace protocol's guarantee (leakage limited to the honest-set sums) does not apply"),
        other => other.into(),
    })?;
    let mut out = Output::new(&cfg.out_dir())?;
    for r in &reports {
        out.text(
            &format!("nmi_{}.csv", r.protocol),
            &csv_lines(
                "iter,nmi,stderr",
                r.points.iter().map(|p| format!("{},{},{}", p.iter, p.nmi, p.stderr)),
            ),
        )?;
        let header = std::iter::once("iter,trial,x".to_string())
            .chain((1..=r.feature_dim).map(|k| format!("f{k}")))
            .collect::<Vec<_>>()
            .join(",");
        out.with_writer(&format!("features_{}.csv", r.protocol), |w| {
            writeln!(w, "{header}")?;
            for (t, sample) in r.samples.iter().enumerate() {
                for (i, row) in sample.row_iter().enumerate() {
                    write!(w, "{t},{i}")?;
                    for v in row {
                        write!(w, ",{v}")?;
                    }
                    writeln!(w)?;
                }
            }
            Ok(())
        })?;
    }
    let summary: Vec<Value> = reports
        .iter()
        .map(|r| json!({ "protocol": r.protocol, "feature_dim": r.feature_dim, "points": r.points }))
        .collect();
    out.json(
        "audit_report.json",
        &json!({
            "config": embedded(cfg),
            "reports": summary,
            "ordering": ordering(&reports),
        }),
    )?;
    Ok(out.written)
}

pub fn calibrate_mi(cfg: &Config) -> Result<Artifacts> {
    let root = SeedStream::new(get(&cfg.seed, "seed")?);
    let rows = calibrate(
        &get(&cfg.rhos, "rhos")?,
        &get(&cfg.sizes, "sizes")?,
        get(&cfg.repeats, "repeats")?,
        get(&cfg.k, "k")?,
        root.child("calibration"),
    )?;
    let mut out = Output::new(&cfg.out_dir())?;
    out.text(
        "calibration.csv",
        &csv_lines(
            "rho,samples,repeats,truth,estimate,stderr,error",
            rows.iter().map(|r| {
                format!(
                    "{},{},{},{},{},{},{}",
                    r.rho, r.samples, r.repeats, r.truth, r.mean_estimate, r.stderr, r.error
                )
            }),
        ),
    )?;
    out.json("calibration_report.json", &json!({ "config": embedded(cfg), "rows": rows }))?;
    Ok(out.written)
}
