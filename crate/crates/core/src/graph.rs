//! Undirected graph and matrix types shared by every estimator, plus the
//! symmetrization rules and the clustering coefficient.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered, uniquely labelled node set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSet {
    labels: Vec<String>,
}

impl NodeSet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Domain(format!(
                "a node set needs at least 2 nodes, got {}",
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::Domain(format!("duplicate node label {l:?}")));
            }
        }
        Ok(Self { labels })
    }

    /// Labels `V1..Vp`.
    pub fn numbered(p: usize) -> Result<Self> {
        Self::new((1..=p).map(|i| format!("V{i}")).collect())
    }

    pub fn p(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Symmetrization rule for directed neighborhood supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    #[default]
    And,
    Or,
}

impl std::str::FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "and" => Ok(Rule::And),
            "or" => Ok(Rule::Or),
            other => Err(format!("unknown rule {other:?} (expected and|or)")),
        }
    }
}

/// Set of unordered node pairs over `p` nodes, stored as `(min, max)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeSet {
    p: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl EdgeSet {
    pub fn empty(p: usize) -> Self {
        Self {
            p,
            edges: BTreeSet::new(),
        }
    }

    pub fn complete(p: usize) -> Self {
        let mut e = Self::empty(p);
        for u in 0..p {
            for v in u + 1..p {
                e.edges.insert((u, v));
            }
        }
        e
    }

    pub fn from_pairs(p: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut e = Self::empty(p);
        for (u, v) in pairs {
            e.insert(u, v)?;
        }
        Ok(e)
    }

    /// Inserts the pair; returns whether it was new.
    pub fn insert(&mut self, u: usize, v: usize) -> Result<bool> {
        if u == v {
            return Err(Error::Domain(format!("self-loop on node {u}")));
        }
        if u >= self.p || v >= self.p {
            return Err(Error::Dimension(format!(
                "edge ({u},{v}) out of range for p={}",
                self.p
            )));
        }
        Ok(self.edges.insert((u.min(v), u.max(v))))
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// Number of unordered pairs `p(p-1)/2`.
    pub fn max_edges(&self) -> usize {
        self.p * (self.p.saturating_sub(1)) / 2
    }

    pub fn is_subset(&self, other: &EdgeSet) -> bool {
        self.edges.is_subset(&other.edges)
    }

    pub fn union(&self, other: &EdgeSet) -> Result<EdgeSet> {
        check_same_p(self.p, other.p)?;
        Ok(EdgeSet {
            p: self.p,
            edges: self.edges.union(&other.edges).copied().collect(),
        })
    }

    pub fn intersection_len(&self, other: &EdgeSet) -> usize {
        self.edges.intersection(&other.edges).count()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.p];
        for (u, v) in self.iter() {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> EdgeSet {
        EdgeSet {
            p: self.p,
            edges: self
                .iter()
                .map(|(u, v)| {
                    let (a, b) = (perm[u], perm[v]);
                    (a.min(b), a.max(b))
                })
                .collect(),
        }
    }
}

fn check_same_p(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("node counts differ: {a} vs {b}")));
    }
    Ok(())
}

/// Symmetric real matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedNetwork {
    weights: DMatrix<f64>,
}

impl WeightedNetwork {
    pub fn zeros(p: usize) -> Self {
        Self {
            weights: DMatrix::zeros(p, p),
        }
    }

    /// Takes the symmetric part of `m` and zeroes the diagonal.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "weight matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut w = (m + m.transpose()) * 0.5;
        w.fill_diagonal(0.0);
        Ok(Self { weights: w })
    }

    pub fn p(&self) -> usize {
        self.weights.nrows()
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.weights[(u, v)]
    }

    pub fn set(&mut self, u: usize, v: usize, w: f64) {
        if u != v {
            self.weights[(u, v)] = w;
            self.weights[(v, u)] = w;
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.weights
    }
}

/// Symmetric precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix {
    theta: DMatrix<f64>,
}

impl PrecisionMatrix {
    pub fn new(theta: DMatrix<f64>) -> Result<Self> {
        if !theta.is_square() {
            return Err(Error::Dimension("precision matrix must be square".into()));
        }
        let p = theta.nrows();
        for i in 0..p {
            for j in i + 1..p {
                if theta[(i, j)] != theta[(j, i)] {
                    return Err(Error::Domain(format!(
                        "precision matrix not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { theta })
    }

    pub fn p(&self) -> usize {
        self.theta.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.theta
    }

    pub fn is_positive_definite(&self) -> bool {
        self.theta.clone().cholesky().is_some()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.theta
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Off-diagonal support.
    pub fn support(&self, tol: f64) -> EdgeSet {
        support_of_matrix(&self.theta, tol)
    }
}

/// Combines per-node supports (`supports[v]` = nodes selected when regressing `v`).
pub fn combine_neighborhoods(supports: &[BTreeSet<usize>], p: usize, rule: Rule) -> Result<EdgeSet> {
    if supports.len() != p {
        return Err(Error::Dimension(format!(
            "expected {p} neighborhoods, got {}",
            supports.len()
        )));
    }
    for (v, s) in supports.iter().enumerate() {
        if s.contains(&v) {
            return Err(Error::Domain(format!("neighborhood of {v} contains itself")));
        }
        if let Some(&u) = s.iter().find(|&&u| u >= p) {
            return Err(Error::Dimension(format!("node {u} out of range for p={p}")));
        }
    }
    let mut e = EdgeSet::empty(p);
    for u in 0..p {
        for v in u + 1..p {
            let uv = supports[u].contains(&v);
            let vu = supports[v].contains(&u);
            let keep = match rule {
                Rule::And => uv && vu,
                Rule::Or => uv || vu,
            };
            if keep {
                e.edges.insert((u, v));
            }
        }
    }
    Ok(e)
}

/// Average local clustering coefficient; nodes of degree < 2 count as 0.
pub fn clustering_coefficient(net: &EdgeSet) -> Result<f64> {
    let p = net.p();
    if p < 3 {
        return Err(Error::Domain(format!(
            "clustering coefficient needs p >= 3, got {p}"
        )));
    }
    let adj = adjacency(net);
    let mut total = 0.0;
    for nbrs in &adj {
        let k = nbrs.len();
        if k < 2 {
            continue;
        }
        let closed = count_links_among(&adj, nbrs);
        total += closed as f64 / (k * (k - 1) / 2) as f64;
    }
    Ok(total / p as f64)
}

/// Global transitivity: 3 x triangles / connected triples.
pub fn transitivity(net: &EdgeSet) -> Result<f64> {
    if net.p() < 3 {
        return Err(Error::Domain(format!(
            "transitivity needs p >= 3, got {}",
            net.p()
        )));
    }
    let adj = adjacency(net);
    let (mut closed, mut triples) = (0usize, 0usize);
    for nbrs in &adj {
        let k = nbrs.len();
        triples += k * k.saturating_sub(1) / 2;
        closed += count_links_among(&adj, nbrs);
    }
    Ok(if triples == 0 {
        0.0
    } else {
        closed as f64 / triples as f64
    })
}

fn adjacency(net: &EdgeSet) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); net.p()];
    for (u, v) in net.iter() {
        adj[u].push(v);
        adj[v].push(u);
    }
    adj
}

fn count_links_among(adj: &[Vec<usize>], nbrs: &[usize]) -> usize {
    let mut c = 0;
    for (i, &a) in nbrs.iter().enumerate() {
        for &b in &nbrs[i + 1..] {
            if adj[a].contains(&b) {
                c += 1;
            }
        }
    }
    c
}

/// Edges with `|weight| > tol`.
pub fn support_of(net: &WeightedNetwork, tol: f64) -> EdgeSet {
    support_of_matrix(net.matrix(), tol)
}

/// Off-diagonal support of a square matrix, either triangle counting.
pub(crate) fn support_of_matrix(m: &DMatrix<f64>, tol: f64) -> EdgeSet {
    let p = m.nrows();
    let mut e = EdgeSet::empty(p);
    for u in 0..p {
        for v in u + 1..p {
            if m[(u, v)].abs() > tol || m[(v, u)].abs() > tol {
                e.edges.insert((u, v));
            }
        }
    }
    e
}

/// One `label_u \t label_v \t weight` row per edge, canonical order, LF endings.
pub fn edges_to_tsv(edges: &EdgeSet, weights: Option<&WeightedNetwork>, nodes: &NodeSet) -> String {
    let mut out = String::new();
    for (u, v) in edges.iter() {
        let w = weights.map_or(1.0, |w| w.get(u, v));
        let _ = writeln!(out, "{}\t{}\t{}", nodes.labels()[u], nodes.labels()[v], w);
    }
    out
}

pub fn write_edge_tsv(
    path: &Path,
    edges: &EdgeSet,
    weights: Option<&WeightedNetwork>,
    nodes: &NodeSet,
) -> Result<()> {
    std::fs::write(path, edges_to_tsv(edges, weights, nodes)).map_err(|e| Error::io(path, e))
}

/// Parses an edge TSV against a known node set.
pub fn parse_edge_tsv(
    text: &str,
    nodes: &NodeSet,
    origin: &Path,
) -> Result<(EdgeSet, WeightedNetwork)> {
    let index: HashMap<&str, usize> = nodes
        .labels()
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let p = nodes.p();
    let mut edges = EdgeSet::empty(p);
    let mut weights = WeightedNetwork::zeros(p);
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse_err = |column: usize, message: String| Error::Parse {
            file: origin.to_path_buf(),
            line: lineno + 1,
            column,
            message,
        };
        if fields.len() != 3 {
            return Err(parse_err(1, format!("expected 3 fields, got {}", fields.len())));
        }
        let lookup = |col: usize| {
            index.get(fields[col]).copied().ok_or_else(|| {
                Error::Dimension(format!(
                    "{}:{}: node {:?} not among the {p} known nodes",
                    origin.display(),
                    lineno + 1,
                    fields[col]
                ))
            })
        };
        let u = lookup(0)?;
        let v = lookup(1)?;
        let w: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(3, format!("weight {:?} is not a number", fields[2])))?;
        edges.insert(u, v)?;
        weights.set(u, v, w);
    }
    Ok((edges, weights))
}

pub fn read_edge_tsv(path: &Path, nodes: &NodeSet) -> Result<(EdgeSet, WeightedNetwork)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_tsv(&text, nodes, path)
}
