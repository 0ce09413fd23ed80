use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::NodeSet;

/// Per-subject observation matrices over a shared node set, column-centered.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortData {
    nodes: NodeSet,
    subjects: Vec<DMatrix<f64>>,
    subject_ids: Vec<String>,
    constant_columns: Vec<Vec<usize>>,
}

impl CohortData {
    /// Centers every column; columns that are constant within a subject are
    /// set to exactly zero so their coefficients come out as zero.
    pub fn new(nodes: NodeSet, subjects: Vec<DMatrix<f64>>, subject_ids: Vec<String>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::Domain("a cohort needs at least one subject".into()));
        }
        if subject_ids.len() != subjects.len() {
            return Err(Error::Dimension(format!(
                "{} subject ids for {} subjects",
                subject_ids.len(),
                subjects.len()
            )));
        }
        let p = nodes.p();
        let mut centered = Vec::with_capacity(subjects.len());
        let mut constant_columns = Vec::with_capacity(subjects.len());
        for (id, mut x) in subject_ids.iter().zip(subjects) {
            if x.ncols() != p {
                return Err(Error::Dimension(format!(
                    "subject {id} has {} columns, node set has {p}",
                    x.ncols()
                )));
            }
            if x.nrows() < 2 {
                return Err(Error::Domain(format!(
                    "subject {id} has {} observations, need at least 2",
                    x.nrows()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("subject {id} contains non-finite values")));
            }
            let mut constant = Vec::new();
            for j in 0..p {
                let mut col = x.column_mut(j);
                let first = col[0];
                if col.iter().all(|v| *v == first) {
                    col.fill(0.0);
                    constant.push(j);
                    log::warn!(
                        "subject {id}: column {} is constant and is dropped from its regressions",
                        nodes.labels()[j]
                    );
                } else {
                    let mean = col.mean();
                    col.add_scalar_mut(-mean);
                }
            }
            centered.push(x);
            constant_columns.push(constant);
        }
        Ok(Self {
            nodes,
            subjects: centered,
            subject_ids,
            constant_columns,
        })
    }

    /// Subjects named `subject_01..`, nodes `V1..Vp`.
    pub fn from_matrices(subjects: Vec<DMatrix<f64>>) -> Result<Self> {
        let p = subjects
            .first()
            .map(|x| x.ncols())
            .ok_or_else(|| Error::Domain("a cohort needs at least one subject".into()))?;
        let ids = (1..=subjects.len()).map(|i| format!("subject_{i:02}")).collect();
        Self::new(NodeSet::numbered(p)?, subjects, ids)
    }

    pub fn nodes(&self) -> &NodeSet {
        &self.nodes
    }

    pub fn p(&self) -> usize {
        self.nodes.p()
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn subjects(&self) -> &[DMatrix<f64>] {
        &self.subjects
    }

    pub fn subject(&self, i: usize) -> &DMatrix<f64> {
        &self.subjects[i]
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn n_obs(&self) -> Vec<usize> {
        self.subjects.iter().map(|x| x.nrows()).collect()
    }

    pub fn total_obs(&self) -> usize {
        self.subjects.iter().map(|x| x.nrows()).sum()
    }

    /// Columns zeroed for being constant, per subject.
    pub fn constant_columns(&self) -> &[Vec<usize>] {
        &self.constant_columns
    }

    /// `XᵢᵀXᵢ` per subject.
    pub fn grams(&self) -> Vec<DMatrix<f64>> {
        self.subjects.iter().map(|x| x.tr_mul(x)).collect()
    }

    /// All subjects' rows stacked into one matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        let total = self.total_obs();
        let p = self.p();
        let mut out = DMatrix::zeros(total, p);
        let mut row = 0;
        for x in &self.subjects {
            out.rows_mut(row, x.nrows()).copy_from(x);
            row += x.nrows();
        }
        out
    }

    /// Keeps the given rows of every subject, without re-centering.
    pub(crate) fn select_rows(&self, rows: &[Vec<usize>]) -> Self {
        let subjects = self
            .subjects
            .iter()
            .zip(rows)
            .map(|(x, r)| x.select_rows(r.iter()))
            .collect();
        Self {
            nodes: self.nodes.clone(),
            subjects,
            subject_ids: self.subject_ids.clone(),
            constant_columns: self.constant_columns.clone(),
        }
    }

    /// Reorders nodes so that node `i` becomes node `perm[i]`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Self> {
        let p = self.p();
        let mut inverse = vec![0; p];
        for (i, &j) in perm.iter().enumerate() {
            inverse[j] = i;
        }
        let labels = inverse.iter().map(|&i| self.nodes.labels()[i].clone()).collect();
        let subjects = self
            .subjects
            .iter()
            .map(|x| DMatrix::from_fn(x.nrows(), p, |r, c| x[(r, inverse[c])]))
            .collect();
        Self::new(NodeSet::new(labels)?, subjects, self.subject_ids.clone())
    }
}
