//! On-disk formats: cohort directories (per-subject CSV plus a JSON
//! manifest), ground-truth and estimated edge lists, result indexes,
//! evaluation reports and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::CohortData;
use crate::error::{Error, Result};
use crate::graph::{read_edge_tsv, write_edge_tsv, EdgeSet, NodeSet, Rule, WeightedNetwork};
use crate::mns::{MnsConfig, MnsResult, Network};
use crate::simulator::SimTruth;
use crate::tuning::{roc_curve, score_roc, tpr_fpr, RocCurve};

pub const COHORT_MANIFEST: &str = "cohort.json";
pub const RESULTS_INDEX: &str = "results.json";
pub const RUN_MANIFEST: &str = "run_manifest.json";
const TRUTH_DIR: &str = "truth";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Accepts either a cohort directory or the manifest inside it.
pub fn resolve_manifest(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(COHORT_MANIFEST)
    } else {
        path.to_path_buf()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    /// CSV path relative to the manifest.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruthFiles {
    pub id: String,
    /// Variable edges present in this subject.
    pub specific: String,
    /// Population plus variable edges.
    pub full: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFiles {
    pub population: String,
    pub variable: String,
    pub subjects: Vec<SubjectTruthFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<String>>,
    pub subjects: Vec<SubjectEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthFiles>,
    /// Generator settings when the cohort is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<serde_json::Value>,
}

/// Reads one subject CSV: a header of node labels, then numeric rows.
pub fn read_subject_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                file: path.to_path_buf(),
                line: 1,
                column: 1,
                message: format!("{other:?}"),
            },
        })?;
    let labels: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let p = labels.len();
    let mut seen = BTreeMap::new();
    for (j, l) in labels.iter().enumerate() {
        if let Some(first) = seen.insert(l.clone(), j) {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line: 1,
                column: j + 1,
                message: format!("duplicate node label {l:?} (also column {})", first + 1),
            });
        }
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(rows + 2, |p| p.line() as usize);
        if record.len() != p {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line,
                column: record.len().min(p) + 1,
                message: format!("expected {p} fields, found {}", record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                line,
                column: j + 1,
                message: format!("{field:?} is not a number"),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Ok((labels, DMatrix::from_row_slice(rows, p, &values)))
}

pub fn write_subject_csv(path: &Path, labels: &[String], data: &DMatrix<f64>) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(labels)?;
    for r in 0..data.nrows() {
        w.write_record(data.row(r).iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads and centers the cohort described by a manifest.
pub fn ingest_cohort(manifest_path: &Path) -> Result<CohortData> {
    let manifest_path = resolve_manifest(manifest_path);
    let manifest: CohortManifest = read_json(&manifest_path)?;
    if manifest.subjects.is_empty() {
        return Err(Error::Domain(format!("{}: no subjects listed", manifest_path.display())));
    }
    let base = base_dir(&manifest_path);
    let mut labels: Option<(Vec<String>, PathBuf)> = manifest
        .nodes
        .clone()
        .map(|n| (n, manifest_path.clone()));
    let mut subjects = Vec::with_capacity(manifest.subjects.len());
    let mut ids = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        let path = base.join(&entry.file);
        let (header, x) = read_subject_csv(&path)?;
        match &labels {
            Some((expected, origin)) if *expected != header => {
                return Err(Error::Dimension(if expected.len() != header.len() {
                    format!(
                        "{} has {} columns but {} has {}",
                        path.display(),
                        header.len(),
                        origin.display(),
                        expected.len()
                    )
                } else {
                    format!(
                        "{} and {} list different node labels",
                        path.display(),
                        origin.display()
                    )
                }));
            }
            Some(_) => {}
            None => labels = Some((header, path.clone())),
        }
        log::info!("subject {}: {} observations", entry.id, x.nrows());
        subjects.push(x);
        ids.push(entry.id.clone());
    }
    let (labels, _) = labels.expect("at least one subject");
    let cohort = CohortData::new(NodeSet::new(labels)?, subjects, ids)?;
    for (id, cols) in cohort.subject_ids().iter().zip(cohort.constant_columns()) {
        if !cols.is_empty() {
            log::warn!("subject {id}: {} constant column(s) dropped", cols.len());
        }
    }
    Ok(cohort)
}

fn truth_files(ids: &[String]) -> TruthFiles {
    TruthFiles {
        population: format!("{TRUTH_DIR}/population.tsv"),
        variable: format!("{TRUTH_DIR}/variable.tsv"),
        subjects: ids
            .iter()
            .map(|id| SubjectTruthFiles {
                id: id.clone(),
                specific: format!("{TRUTH_DIR}/{id}.tsv"),
                full: format!("{TRUTH_DIR}/{id}_full.tsv"),
            })
            .collect(),
    }
}

/// Writes `dir/cohort.json`, one CSV per subject and, when given, the ground
/// truth edge lists. Returns the manifest path.
pub fn export_cohort(
    dir: &Path,
    cohort: &CohortData,
    truth: Option<&SimTruth>,
    simulation: Option<serde_json::Value>,
) -> Result<PathBuf> {
    create_dir(dir)?;
    let labels = cohort.nodes().labels();
    let mut subjects = Vec::new();
    for (id, x) in cohort.subject_ids().iter().zip(cohort.subjects()) {
        let file = format!("{id}.csv");
        write_subject_csv(&dir.join(&file), labels, x)?;
        subjects.push(SubjectEntry { id: id.clone(), file });
    }
    let truth_index = match truth {
        Some(t) => {
            if t.n_subjects() != cohort.n_subjects() || t.p() != cohort.p() {
                return Err(Error::Dimension("truth does not match the cohort".into()));
            }
            let files = truth_files(cohort.subject_ids());
            let nodes = cohort.nodes();
            write_edge_tsv_at(dir, &files.population, &t.e_pop, Some(&t.theta_pop), nodes)?;
            write_edge_tsv_at(dir, &files.variable, &t.e_tilde, None, nodes)?;
            for (i, s) in files.subjects.iter().enumerate() {
                write_edge_tsv_at(dir, &s.specific, &t.e_subject[i], Some(&t.theta_subject[i]), nodes)?;
                let prec = WeightedNetwork::from_matrix(&off_diagonal(t.precisions[i].matrix()))?;
                write_edge_tsv_at(dir, &s.full, &t.e_full(i), Some(&prec), nodes)?;
            }
            Some(files)
        }
        None => None,
    };
    let manifest = CohortManifest {
        nodes: Some(labels.to_vec()),
        subjects,
        truth: truth_index,
        simulation,
    };
    let path = dir.join(COHORT_MANIFEST);
    write_json(&path, &manifest)?;
    Ok(path)
}

fn off_diagonal(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    out.fill_diagonal(0.0);
    out
}

fn write_edge_tsv_at(
    dir: &Path,
    rel: &str,
    edges: &EdgeSet,
    weights: Option<&WeightedNetwork>,
    nodes: &NodeSet,
) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    write_edge_tsv(&path, edges, weights, nodes)
}

/// Ground-truth networks read back from a cohort directory.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthNetworks {
    pub nodes: NodeSet,
    pub subject_ids: Vec<String>,
    pub population: EdgeSet,
    pub variable: EdgeSet,
    pub subject_specific: Vec<EdgeSet>,
    pub subject_full: Vec<EdgeSet>,
}

/// Reads the truth listed in a cohort manifest, checked against `nodes`.
pub fn read_truth(manifest_path: &Path, nodes: &NodeSet) -> Result<TruthNetworks> {
    let manifest_path = resolve_manifest(manifest_path);
    let manifest: CohortManifest = read_json(&manifest_path)?;
    let files = manifest.truth.ok_or_else(|| {
        Error::Domain(format!("{} lists no ground truth", manifest_path.display()))
    })?;
    if let Some(labels) = &manifest.nodes {
        if labels.len() != nodes.p() {
            return Err(Error::Dimension(format!(
                "truth in {} has p={}, results have p={}",
                manifest_path.display(),
                labels.len(),
                nodes.p()
            )));
        }
    }
    let base = base_dir(&manifest_path);
    let read = |rel: &str| -> Result<EdgeSet> { Ok(read_edge_tsv(&base.join(rel), nodes)?.0) };
    Ok(TruthNetworks {
        nodes: nodes.clone(),
        subject_ids: files.subjects.iter().map(|s| s.id.clone()).collect(),
        population: read(&files.population)?,
        variable: read(&files.variable)?,
        subject_specific: files.subjects.iter().map(|s| read(&s.specific)).collect::<Result<_>>()?,
        subject_full: files.subjects.iter().map(|s| read(&s.full)).collect::<Result<_>>()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub u: String,
    pub v: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEdges {
    pub id: String,
    pub edges: Vec<EdgeRecord>,
}

fn edge_records(net: &Network, nodes: &NodeSet) -> Vec<EdgeRecord> {
    net.edges
        .iter()
        .map(|(u, v)| EdgeRecord {
            u: nodes.labels()[u].clone(),
            v: nodes.labels()[v].clone(),
            weight: net.weights.get(u, v),
        })
        .collect()
}

/// Per-node EM output; vectors are indexed by node with 0 at the node itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFitRecord {
    pub node: String,
    pub beta: Vec<f64>,
    pub sigma_re: Vec<f64>,
    pub sigma2: f64,
    /// One row per subject.
    pub blups: Vec<Vec<f64>>,
    pub em_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnsResultDoc {
    pub nodes: Vec<String>,
    pub subject_ids: Vec<String>,
    pub config: MnsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub node_fits: Vec<NodeFitRecord>,
    pub population: Vec<EdgeRecord>,
    pub variance: Vec<EdgeRecord>,
    pub subject_specific: Vec<SubjectEdges>,
    pub subject_full: Vec<SubjectEdges>,
}

impl MnsResultDoc {
    pub fn new(result: &MnsResult, alpha: Option<f64>, lambda: Option<f64>) -> Self {
        let nodes = &result.nodes;
        let p = nodes.p();
        let spread = |node: usize, values: &dyn Fn(usize) -> f64| -> Vec<f64> {
            let mut out = vec![0.0; p];
            for k in 0..p - 1 {
                let u = if k < node { k } else { k + 1 };
                out[u] = values(k);
            }
            out
        };
        let node_fits = result
            .node_fits
            .iter()
            .map(|f| NodeFitRecord {
                node: nodes.labels()[f.node].clone(),
                beta: spread(f.node, &|k| f.beta[k]),
                sigma_re: spread(f.node, &|k| f.sigma_re[k]),
                sigma2: f.sigma2,
                blups: (0..f.blups.nrows())
                    .map(|i| spread(f.node, &|k| f.blups[(i, k)]))
                    .collect(),
                em_iterations: f.em_iterations,
                converged: f.converged,
            })
            .collect();
        let per_subject = |nets: &[Network]| -> Vec<SubjectEdges> {
            result
                .subject_ids
                .iter()
                .zip(nets)
                .map(|(id, n)| SubjectEdges { id: id.clone(), edges: edge_records(n, nodes) })
                .collect()
        };
        Self {
            nodes: nodes.labels().to_vec(),
            subject_ids: result.subject_ids.clone(),
            config: result.config,
            alpha,
            lambda,
            node_fits,
            population: edge_records(&result.population, nodes),
            variance: edge_records(&result.variance, nodes),
            subject_specific: per_subject(&result.subject_specific),
            subject_full: per_subject(&result.subject_full),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResultKind {
    Mns,
    GlassoPooled,
    GlassoSubject,
    Stability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSetEntry {
    pub index: usize,
    /// Directory relative to the index file.
    pub dir: String,
    /// Path parameter: overall `λ` for MNS, the scalar penalty for glasso.
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultIndex {
    pub kind: ResultKind,
    pub nodes: Vec<String>,
    pub subject_ids: Vec<String>,
    pub rule: Rule,
    pub sets: Vec<ResultSetEntry>,
}

/// Networks estimated at one path point; absent roles are not written.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetworkSet {
    pub population: Option<Network>,
    pub variance: Option<Network>,
    pub subject_specific: Option<Vec<Network>>,
    pub subject_full: Option<Vec<Network>>,
}

impl NetworkSet {
    pub fn from_mns(result: &MnsResult) -> Self {
        Self {
            population: Some(result.population.clone()),
            variance: Some(result.variance.clone()),
            subject_specific: Some(result.subject_specific.clone()),
            subject_full: Some(result.subject_full.clone()),
        }
    }
}

pub fn set_dir_name(index: usize) -> String {
    format!("set_{index:02}")
}

/// Writes the edge lists of one result set under `dir`.
pub fn write_network_set(dir: &Path, set: &NetworkSet, nodes: &NodeSet, subject_ids: &[String]) -> Result<()> {
    create_dir(dir)?;
    if let Some(n) = &set.population {
        write_edge_tsv(&dir.join("population.tsv"), &n.edges, Some(&n.weights), nodes)?;
    }
    if let Some(n) = &set.variance {
        write_edge_tsv(&dir.join("variance.tsv"), &n.edges, Some(&n.weights), nodes)?;
    }
    if set.subject_specific.is_some() || set.subject_full.is_some() {
        create_dir(&dir.join("subjects"))?;
    }
    for (i, id) in subject_ids.iter().enumerate() {
        if let Some(nets) = &set.subject_specific {
            let n = &nets[i];
            write_edge_tsv(&dir.join(format!("subjects/{id}.tsv")), &n.edges, Some(&n.weights), nodes)?;
        }
        if let Some(nets) = &set.subject_full {
            let n = &nets[i];
            write_edge_tsv(&dir.join(format!("subjects/{id}_full.tsv")), &n.edges, Some(&n.weights), nodes)?;
        }
    }
    Ok(())
}

fn read_optional(path: &Path, nodes: &NodeSet) -> Result<Option<Network>> {
    if !path.exists() {
        return Ok(None);
    }
    let (edges, weights) = read_edge_tsv(path, nodes)?;
    Ok(Some(Network { edges, weights }))
}

fn read_subject_networks(dir: &Path, ids: &[String], suffix: &str, nodes: &NodeSet) -> Result<Option<Vec<Network>>> {
    let nets = ids
        .iter()
        .map(|id| read_optional(&dir.join(format!("subjects/{id}{suffix}.tsv")), nodes))
        .collect::<Result<Vec<_>>>()?;
    if nets.iter().all(Option::is_none) {
        return Ok(None);
    }
    nets.into_iter()
        .map(|n| n.ok_or_else(|| Error::Domain(format!("{}: missing subject networks", dir.display()))))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn read_network_set(dir: &Path, nodes: &NodeSet, subject_ids: &[String]) -> Result<NetworkSet> {
    Ok(NetworkSet {
        population: read_optional(&dir.join("population.tsv"), nodes)?,
        variance: read_optional(&dir.join("variance.tsv"), nodes)?,
        subject_specific: read_subject_networks(dir, subject_ids, "", nodes)?,
        subject_full: read_subject_networks(dir, subject_ids, "_full", nodes)?,
    })
}

/// Symmetric matrix as TSV with a `node` header row and column.
pub fn matrix_to_tsv(m: &DMatrix<f64>, nodes: &NodeSet) -> String {
    let mut out = String::from("node");
    for l in nodes.labels() {
        out.push('\t');
        out.push_str(l);
    }
    out.push('\n');
    for (i, l) in nodes.labels().iter().enumerate() {
        out.push_str(l);
        for j in 0..m.ncols() {
            out.push('\t');
            out.push_str(&m[(i, j)].to_string());
        }
        out.push('\n');
    }
    out
}

pub fn read_matrix_tsv(path: &Path, nodes: &NodeSet) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let p = nodes.p();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split('\t').skip(1).collect();
    if header.len() != p || header.iter().zip(nodes.labels()).any(|(a, b)| *a != b) {
        return Err(Error::Dimension(format!(
            "{}: header does not match the {p} known nodes",
            path.display()
        )));
    }
    let mut m = DMatrix::zeros(p, p);
    let mut row = 0;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if row >= p {
            return Err(Error::Dimension(format!("{}: more than {p} rows", path.display())));
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != p + 1 {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line: lineno + 2,
                column: 1,
                message: format!("expected {} fields, found {}", p + 1, fields.len()),
            });
        }
        for j in 0..p {
            m[(row, j)] = fields[j + 1].parse().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                line: lineno + 2,
                column: j + 2,
                message: format!("{:?} is not a number", fields[j + 1]),
            })?;
        }
        row += 1;
    }
    if row != p {
        return Err(Error::Dimension(format!("{}: {row} rows, expected {p}", path.display())));
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetRates {
    pub index: usize,
    pub lambda: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEvaluation {
    /// `population`, `variance`, `subject_specific` or `subject_full`.
    pub network: String,
    pub auc: f64,
    pub roc: RocCurve,
    /// Rates at each result set; empty for score-ranked outputs.
    pub rates: Vec<SetRates>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub kind: ResultKind,
    /// Subject ROC curves pool confusion counts over subjects.
    pub averaging: String,
    pub networks: Vec<NetworkEvaluation>,
}

fn evaluate_path(
    name: &str,
    entries: &[ResultSetEntry],
    estimates: Vec<Vec<EdgeSet>>,
    truths: &[EdgeSet],
) -> Result<NetworkEvaluation> {
    let lambdas: Vec<f64> = entries.iter().map(|e| e.lambda).collect();
    let roc = roc_curve(&lambdas, &estimates, truths)?;
    let mut rates = Vec::new();
    for (entry, est) in entries.iter().zip(&estimates) {
        let mut pooled = crate::tuning::Confusion::default();
        for (e, t) in est.iter().zip(truths) {
            pooled = pooled.add(crate::tuning::Confusion::of(e, t)?);
        }
        let r = pooled.rates();
        rates.push(SetRates { index: entry.index, lambda: entry.lambda, tpr: r.tpr, fpr: r.fpr });
    }
    Ok(NetworkEvaluation { network: name.into(), auc: roc.auc, roc, rates })
}

/// Scores every network role present in a results directory against the truth.
pub fn evaluate_results(results_dir: &Path, truth: &TruthNetworks) -> Result<EvaluationReport> {
    let index: ResultIndex = read_json(&results_dir.join(RESULTS_INDEX))?;
    let nodes = NodeSet::new(index.nodes.clone())?;
    if nodes != truth.nodes {
        return Err(Error::Dimension(format!(
            "results have p={}, truth has p={}",
            nodes.p(),
            truth.nodes.p()
        )));
    }
    if index.kind == ResultKind::Stability {
        let mu = read_matrix_tsv(&results_dir.join("mu_pop.tsv"), &nodes)?;
        let rho = read_matrix_tsv(&results_dir.join("rho_pop.tsv"), &nodes)?;
        let score = |name: &str, m: &DMatrix<f64>, t: &EdgeSet| -> Result<NetworkEvaluation> {
            let roc = score_roc(m, t)?;
            Ok(NetworkEvaluation { network: name.into(), auc: roc.auc, roc, rates: Vec::new() })
        };
        return Ok(EvaluationReport {
            kind: index.kind,
            averaging: "none".into(),
            networks: vec![score("population", &mu, &truth.population)?, score("variance", &rho, &truth.variable)?],
        });
    }
    if index.sets.is_empty() {
        return Err(Error::Domain(format!("{}: no result sets", results_dir.display())));
    }
    let sets = index
        .sets
        .iter()
        .map(|e| read_network_set(&results_dir.join(&e.dir), &nodes, &index.subject_ids))
        .collect::<Result<Vec<_>>>()?;
    if index.subject_ids.len() != truth.subject_ids.len()
        && sets.iter().any(|s| s.subject_full.is_some() || s.subject_specific.is_some())
    {
        return Err(Error::Dimension(format!(
            "results cover {} subjects, truth covers {}",
            index.subject_ids.len(),
            truth.subject_ids.len()
        )));
    }
    let mut networks = Vec::new();
    let single = |f: &dyn Fn(&NetworkSet) -> Option<&Network>| -> Option<Vec<Vec<EdgeSet>>> {
        sets.iter().map(|s| f(s).map(|n| vec![n.edges.clone()])).collect()
    };
    let multi = |f: &dyn Fn(&NetworkSet) -> Option<&Vec<Network>>| -> Option<Vec<Vec<EdgeSet>>> {
        sets.iter()
            .map(|s| f(s).map(|v| v.iter().map(|n| n.edges.clone()).collect()))
            .collect()
    };
    if let Some(est) = single(&|s| s.population.as_ref()) {
        networks.push(evaluate_path("population", &index.sets, est, std::slice::from_ref(&truth.population))?);
    }
    if let Some(est) = single(&|s| s.variance.as_ref()) {
        networks.push(evaluate_path("variance", &index.sets, est, std::slice::from_ref(&truth.variable))?);
    }
    if let Some(est) = multi(&|s| s.subject_specific.as_ref()) {
        networks.push(evaluate_path("subject_specific", &index.sets, est, &truth.subject_specific)?);
    }
    if let Some(est) = multi(&|s| s.subject_full.as_ref()) {
        networks.push(evaluate_path("subject_full", &index.sets, est, &truth.subject_full)?);
    }
    Ok(EvaluationReport {
        kind: index.kind,
        averaging: "micro (confusion counts pooled over subjects)".into(),
        networks,
    })
}

/// Single-point rates of a network against a truth, for quick checks.
pub fn rates_line(name: &str, est: &EdgeSet, truth: &EdgeSet) -> Result<String> {
    let r = tpr_fpr(est, truth)?;
    Ok(format!("{name}\t{}\t{}", r.tpr, r.fpr))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Seconds since the epoch, or `SOURCE_DATE_EPOCH` when set.
pub fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn start(command: &str, argv: Vec<String>, config: serde_json::Value, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv,
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix: timestamp(),
            finished_unix: 0,
        }
    }

    /// Records the digest of every file under `dir` (recursively) or of a single file.
    pub fn add_inputs(&mut self, path: &Path) -> Result<()> {
        self.inputs.extend(digest_tree(path, path)?);
        Ok(())
    }

    /// Digests everything in `out_dir` and writes the manifest there.
    pub fn finish(mut self, out_dir: &Path) -> Result<PathBuf> {
        self.outputs = digest_tree(out_dir, out_dir)?
            .into_iter()
            .filter(|d| d.path != RUN_MANIFEST)
            .collect();
        self.finished_unix = timestamp();
        let path = out_dir.join(RUN_MANIFEST);
        write_json(&path, &self)?;
        Ok(path)
    }
}

fn digest_tree(root: &Path, path: &Path) -> Result<Vec<FileDigest>> {
    if path.is_file() {
        let rel = path
            .strip_prefix(root)
            .ok()
            .filter(|r| !r.as_os_str().is_empty())
            .unwrap_or(path);
        return Ok(vec![FileDigest {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_file(path)?,
        }]);
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    let mut out = Vec::new();
    for e in entries {
        out.extend(digest_tree(root, &e)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{simulate, SimConfig};

    fn small_sim() -> (SimTruth, CohortData) {
        simulate(&SimConfig { p: 6, n_subjects: 2, n: 12, e_ran: 3, seed: 1, ..SimConfig::default() }).unwrap()
    }

    #[test]
    fn export_then_ingest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (truth, cohort) = small_sim();
        let manifest = export_cohort(dir.path(), &cohort, Some(&truth), None).unwrap();
        let back = ingest_cohort(&manifest).unwrap();
        assert_eq!(back.subject_ids(), cohort.subject_ids());
        assert_eq!(back.nodes(), cohort.nodes());
        for (a, b) in back.subjects().iter().zip(cohort.subjects()) {
            assert!((a - b).amax() < 1e-12);
        }
        let t = read_truth(dir.path(), cohort.nodes()).unwrap();
        assert_eq!(t.population, truth.e_pop);
        assert_eq!(t.variable, truth.e_tilde);
        assert_eq!(t.subject_specific, truth.e_subject);
        assert_eq!(t.subject_full[1], truth.e_full(1));
    }

    fn write(dir: &Path, name: &str, text: &str) {
        fs::write(dir.join(name), text).unwrap();
    }

    #[test]
    fn ingest_two_subjects() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "x,y,z\n1,2,3\n2,3,5\n4,1,1\n");
        write(dir.path(), "b.csv", "x,y,z\n0,0,1\n1,2,0\n");
        write(dir.path(), "cohort.json", r#"{"subjects":[{"id":"a","file":"a.csv"},{"id":"b","file":"b.csv"}]}"#);
        let c = ingest_cohort(dir.path()).unwrap();
        assert_eq!(c.n_subjects(), 2);
        assert_eq!(c.n_obs(), vec![3, 2]);
        assert_eq!(c.nodes().labels(), &["x", "y", "z"]);
    }

    #[test]
    fn mismatched_columns_name_both_files() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "x,y,z\n1,2,3\n2,3,5\n");
        write(dir.path(), "b.csv", "x,y\n0,0\n1,2\n");
        write(dir.path(), "cohort.json", r#"{"subjects":[{"id":"a","file":"a.csv"},{"id":"b","file":"b.csv"}]}"#);
        let err = ingest_cohort(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Dimension(_)));
        assert!(msg.contains("a.csv") && msg.contains("b.csv"), "{msg}");
    }

    #[test]
    fn bad_token_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "x,y\n1,2\n3,oops\n");
        write(dir.path(), "cohort.json", r#"{"subjects":[{"id":"a","file":"a.csv"}]}"#);
        match ingest_cohort(dir.path()).unwrap_err() {
            Error::Parse { file, line, column, .. } => {
                assert!(file.ends_with("a.csv"));
                assert_eq!((line, column), (3, 2));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn duplicate_labels_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "x,x\n1,2\n3,4\n");
        write(dir.path(), "cohort.json", r#"{"subjects":[{"id":"a","file":"a.csv"}]}"#);
        assert!(matches!(ingest_cohort(dir.path()), Err(Error::Parse { line: 1, column: 2, .. })));
    }

    #[test]
    fn ragged_row_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "x,y\n1,2\n3\n");
        write(dir.path(), "cohort.json", r#"{"subjects":[{"id":"a","file":"a.csv"}]}"#);
        assert!(matches!(ingest_cohort(dir.path()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn matrix_tsv_round_trip() {
        let nodes = NodeSet::numbered(3).unwrap();
        let m = DMatrix::from_row_slice(3, 3, &[0.0, 0.25, 1.0 / 3.0, 0.25, 0.0, 0.5, 1.0 / 3.0, 0.5, 0.0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        fs::write(&path, matrix_to_tsv(&m, &nodes)).unwrap();
        assert_eq!(read_matrix_tsv(&path, &nodes).unwrap(), m);
        assert!(read_matrix_tsv(&path, &NodeSet::numbered(4).unwrap()).is_err());
    }

    #[test]
    fn manifest_digests_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.txt", "hello");
        let mut m = RunManifest::start("test", vec![], serde_json::Value::Null, 0);
        m.add_inputs(&dir.path().join("a.txt")).unwrap();
        assert_eq!(
            m.inputs[0].sha256,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        let path = m.finish(dir.path()).unwrap();
        let back: RunManifest = read_json(&path).unwrap();
        assert_eq!(back.outputs.len(), 1);
        assert_eq!(back.outputs[0].path, "a.txt");
    }
}
