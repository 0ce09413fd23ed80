//! Cyclic coordinate descent for weighted lasso problems with optional
//! per-coefficient nonnegativity.
//!
//! Everything is solved in covariance form, minimizing
//!
//! ```text
//! ½ βᵀ G β − cᵀ β + k + Σ_j w_j |β_j|
//! ```
//!
//! where `G = XᵀX`, `c = Xᵀy` and `k = ½ yᵀy`. The M-step of the mixed
//! model and the graphical lasso both produce `G` and `c` directly, so they
//! never materialize a design matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Record the objective after every sweep.
    pub track_objective: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            track_objective: false,
        }
    }
}

impl SolverOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            track_objective: false,
        }
    }
}

/// `½‖y − Xβ‖² + Σ w_j|β_j|`, with `β_j ≥ 0` where `nonneg_mask[j]`.
#[derive(Debug, Clone)]
pub struct LassoProblem {
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    pub penalty_weights: DVector<f64>,
    pub nonneg_mask: Vec<bool>,
}

impl LassoProblem {
    /// Unconstrained problem with one weight shared by every coefficient.
    pub fn uniform(design: DMatrix<f64>, response: DVector<f64>, weight: f64) -> Self {
        let q = design.ncols();
        Self {
            design,
            response,
            penalty_weights: DVector::from_element(q, weight),
            nonneg_mask: vec![false; q],
        }
    }

    pub fn objective(&self, beta: &DVector<f64>) -> f64 {
        let r = &self.response - &self.design * beta;
        0.5 * r.norm_squared() + weighted_l1(&self.penalty_weights, beta)
    }

    pub fn to_gram(&self) -> Result<GramLasso> {
        let (n, q) = self.design.shape();
        if self.response.len() != n {
            return Err(Error::Dimension(format!(
                "response has {} rows, design has {n}",
                self.response.len()
            )));
        }
        if self.penalty_weights.len() != q || self.nonneg_mask.len() != q {
            return Err(Error::Dimension(format!(
                "design has {q} columns but {} weights and {} mask entries",
                self.penalty_weights.len(),
                self.nonneg_mask.len()
            )));
        }
        check_finite(self.design.iter(), "design")?;
        check_finite(self.response.iter(), "response")?;
        let xt = self.design.transpose();
        Ok(GramLasso {
            gram: &xt * &self.design,
            linear: &xt * &self.response,
            constant: 0.5 * self.response.norm_squared(),
            weights: self.penalty_weights.clone(),
            nonneg: self.nonneg_mask.clone(),
            fixed: vec![false; q],
        })
    }
}

/// Covariance-form lasso `½βᵀGβ − cᵀβ + k + Σ w_j|β_j|`.
///
/// Coordinates flagged in `fixed` are held at their starting value.
#[derive(Debug, Clone)]
pub struct GramLasso {
    pub gram: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
    pub weights: DVector<f64>,
    pub nonneg: Vec<bool>,
    pub fixed: Vec<bool>,
}

impl GramLasso {
    pub fn new(gram: DMatrix<f64>, linear: DVector<f64>, weights: DVector<f64>) -> Self {
        let q = linear.len();
        Self {
            gram,
            linear,
            constant: 0.0,
            weights,
            nonneg: vec![false; q],
            fixed: vec![false; q],
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, beta: &DVector<f64>) -> f64 {
        let gb = &self.gram * beta;
        0.5 * beta.dot(&gb) - self.linear.dot(beta) + self.constant + weighted_l1(&self.weights, beta)
    }

    fn validate(&self) -> Result<()> {
        let q = self.dim();
        if self.gram.shape() != (q, q)
            || self.weights.len() != q
            || self.nonneg.len() != q
            || self.fixed.len() != q
        {
            return Err(Error::Dimension(format!(
                "inconsistent lasso problem: gram {:?}, {q} linear terms, {} weights, {} mask, {} fixed",
                self.gram.shape(),
                self.weights.len(),
                self.nonneg.len(),
                self.fixed.len()
            )));
        }
        check_finite(self.gram.iter(), "gram matrix")?;
        check_finite(self.linear.iter(), "linear term")?;
        if self.weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::Domain("penalty weights must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub coefficients: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each sweep, when requested.
    pub history: Vec<f64>,
}

/// `sign(z) · max(|z| − γ, 0)`.
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

pub fn solve_lasso(
    prob: &LassoProblem,
    opts: &SolverOptions,
    warm_start: Option<&DVector<f64>>,
) -> Result<LassoSolution> {
    solve_gram_lasso(&prob.to_gram()?, opts, warm_start)
}

pub fn solve_gram_lasso(
    prob: &GramLasso,
    opts: &SolverOptions,
    warm_start: Option<&DVector<f64>>,
) -> Result<LassoSolution> {
    prob.validate()?;
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Domain(format!(
            "need tol > 0 and max_iter >= 1, got tol={} max_iter={}",
            opts.tol, opts.max_iter
        )));
    }
    let q = prob.dim();
    let mut beta = match warm_start {
        Some(w) if w.len() == q => {
            check_finite(w.iter(), "warm start")?;
            w.clone()
        }
        Some(w) => {
            return Err(Error::Dimension(format!(
                "warm start has {} entries, problem has {q}",
                w.len()
            )))
        }
        None => DVector::zeros(q),
    };
    // Project the starting point onto the feasible set.
    for j in 0..q {
        if prob.fixed[j] {
            continue;
        }
        if prob.nonneg[j] && beta[j] < 0.0 {
            beta[j] = 0.0;
        }
        if prob.gram[(j, j)] <= 0.0 {
            beta[j] = 0.0;
        }
    }

    let mut g_beta = &prob.gram * &beta;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..q {
            if prob.fixed[j] {
                continue;
            }
            let gjj = prob.gram[(j, j)];
            if gjj <= 0.0 {
                continue;
            }
            let old = beta[j];
            let z = prob.linear[j] - g_beta[j] + gjj * old;
            let mut new = soft_threshold(z, prob.weights[j]) / gjj;
            if prob.nonneg[j] && new < 0.0 {
                new = 0.0;
            }
            let delta = new - old;
            if delta != 0.0 {
                beta[j] = new;
                g_beta.axpy(delta, &prob.gram.column(j), 1.0);
                max_change = max_change.max(delta.abs());
            }
        }
        if opts.track_objective {
            history.push(prob.objective(&beta));
        }
        if max_change < opts.tol {
            converged = true;
            break;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numeric("coordinate descent diverged".into()));
    }
    Ok(LassoSolution {
        objective: prob.objective(&beta),
        coefficients: beta,
        iterations,
        converged,
        history,
    })
}

fn weighted_l1(w: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    w.iter()
        .zip(beta.iter())
        .map(|(w, b)| if *b == 0.0 { 0.0 } else { w * b.abs() })
        .sum()
}

pub(crate) fn check_finite<'a>(mut values: impl Iterator<Item = &'a f64>, what: &str) -> Result<()> {
    if values.any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{what} contains non-finite values")));
    }
    Ok(())
}
