//! Mixed neighborhood selection.
//!
//! For every node `v` the time series `yᵢ = Xᵢ[:, v]` of each subject is
//! regressed on the remaining columns with a linear mixed model
//!
//! ```text
//! yᵢ = Xᵢ β + Xᵢ diag(σ) bᵢ + εᵢ,    bᵢ ~ N(0, s² I),  εᵢ ~ N(0, s² I)
//! ```
//!
//! `β` holds the population (fixed) neighborhood, `σ ≥ 0` the per-edge
//! random-effect scales and `bᵢ` the subject latent effects. The EM loop
//! alternates a weighted lasso over `(β, σ)` with the closed-form BLUP update
//! of `bᵢ`. Both steps minimize the same joint objective
//!
//! ```text
//! J = ½ Σᵢ ‖yᵢ − Xᵢβ − Xᵢ diag(σ) bᵢ‖² + ½ Σᵢ ‖bᵢ‖² + n (λ₁‖β‖₁ + λ₂‖σ‖₁)
//! ```
//!
//! (`n` = total observations), so `J` never increases across iterations.
//! Penalties are scaled by `n` so a given `λ` means the same thing for any
//! cohort size.
//!
//! All per-node work runs on the sufficient statistics `XᵢᵀXᵢ` and `Xᵢᵀyᵢ`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::CohortData;
use crate::error::{Error, Result};
use crate::graph::{combine_neighborhoods, EdgeSet, NodeSet, Rule, WeightedNetwork};
use crate::lasso::{solve_gram_lasso, GramLasso, SolverOptions};

/// BLUPs below this magnitude count as zero when building subject networks.
pub const BLUP_ZERO_TOL: f64 = 1e-8;
/// Lower bound on the noise variance estimate.
pub const SIGMA2_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MnsConfig {
    /// Fixed-effect penalty.
    pub lambda1: f64,
    /// Random-effect scale penalty.
    pub lambda2: f64,
    pub em_tol: f64,
    pub em_max_iter: usize,
    pub rule: Rule,
    #[serde(skip, default)]
    pub solver: SolverOptions,
}

impl Default for MnsConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.1,
            em_tol: 1e-4,
            em_max_iter: 200,
            rule: Rule::And,
            solver: SolverOptions::default(),
        }
    }
}

impl MnsConfig {
    pub fn with_penalties(lambda1: f64, lambda2: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Domain(format!(
                "penalties must be nonnegative, got lambda1={} lambda2={}",
                self.lambda1, self.lambda2
            )));
        }
        if !(self.em_tol > 0.0) || self.em_max_iter == 0 {
            return Err(Error::Domain("em_tol must be > 0 and em_max_iter >= 1".into()));
        }
        Ok(())
    }
}

/// Sufficient statistics for regressing node `v` on the others, per subject.
#[derive(Debug, Clone)]
pub struct NodeProblem {
    pub node: usize,
    pub p: usize,
    /// `X₋ᵥᵀX₋ᵥ`, `(p−1)×(p−1)`.
    pub grams: Vec<DMatrix<f64>>,
    /// `X₋ᵥᵀ yᵥ`.
    pub cross: Vec<DVector<f64>>,
    /// `yᵥᵀyᵥ`.
    pub yy: Vec<f64>,
    pub n_obs: Vec<usize>,
}

impl NodeProblem {
    pub fn new(cohort: &CohortData, v: usize) -> Result<Self> {
        Self::from_grams(&cohort.grams(), &cohort.n_obs(), v)
    }

    /// Builds node `v`'s statistics from each subject's full `XᵀX`.
    pub fn from_grams(grams: &[DMatrix<f64>], n_obs: &[usize], v: usize) -> Result<Self> {
        let p = grams.first().map(|g| g.nrows()).unwrap_or(0);
        if p < 2 || v >= p {
            return Err(Error::Dimension(format!("node {v} invalid for p={p}")));
        }
        if grams.len() != n_obs.len() {
            return Err(Error::Dimension("one observation count per subject required".into()));
        }
        let others: Vec<usize> = (0..p).filter(|&u| u != v).collect();
        let mut sub_grams = Vec::with_capacity(grams.len());
        let mut cross = Vec::with_capacity(grams.len());
        let mut yy = Vec::with_capacity(grams.len());
        for g in grams {
            if g.shape() != (p, p) {
                return Err(Error::Dimension("subjects disagree on p".into()));
            }
            sub_grams.push(g.select_rows(others.iter()).select_columns(others.iter()));
            cross.push(DVector::from_iterator(others.len(), others.iter().map(|&u| g[(u, v)])));
            yy.push(g[(v, v)]);
        }
        Ok(Self {
            node: v,
            p,
            grams: sub_grams,
            cross,
            yy,
            n_obs: n_obs.to_vec(),
        })
    }

    pub fn q(&self) -> usize {
        self.p - 1
    }

    pub fn n_subjects(&self) -> usize {
        self.grams.len()
    }

    pub fn total_obs(&self) -> usize {
        self.n_obs.iter().sum()
    }

    /// Node index behind coefficient `k`.
    pub fn predictor(&self, k: usize) -> usize {
        predictor_index(self.node, k)
    }

    /// `‖y − Xγ‖²` for subject `i`.
    fn rss(&self, i: usize, gamma: &DVector<f64>) -> f64 {
        let g = &self.grams[i];
        (self.yy[i] - 2.0 * self.cross[i].dot(gamma) + gamma.dot(&(g * gamma))).max(0.0)
    }

    /// Predictors with no variation in any subject.
    fn dropped(&self) -> Vec<bool> {
        (0..self.q())
            .map(|k| self.grams.iter().all(|g| g[(k, k)] == 0.0))
            .collect()
    }
}

fn predictor_index(v: usize, k: usize) -> usize {
    if k < v {
        k
    } else {
        k + 1
    }
}

fn coefficient_index(v: usize, u: usize) -> usize {
    if u < v {
        u
    } else {
        u - 1
    }
}

/// BLUP `b = (D G D + I)⁻¹ D (c − Gβ)` with `D = diag(σ)`, `G = XᵀX`, `c = Xᵀy`.
///
/// Coordinates with `σ = 0` are exactly zero.
pub fn e_step(
    gram: &DMatrix<f64>,
    cross: &DVector<f64>,
    beta: &DVector<f64>,
    sigma: &DVector<f64>,
) -> Result<DVector<f64>> {
    let q = cross.len();
    if gram.shape() != (q, q) || beta.len() != q || sigma.len() != q {
        return Err(Error::Dimension(format!(
            "e-step: gram {:?}, {q} cross terms, beta {}, sigma {}",
            gram.shape(),
            beta.len(),
            sigma.len()
        )));
    }
    let active: Vec<usize> = (0..q).filter(|&k| sigma[k] != 0.0).collect();
    let mut b = DVector::zeros(q);
    if active.is_empty() {
        return Ok(b);
    }
    let resid = cross - gram * beta;
    let a = active.len();
    let mut m = DMatrix::from_fn(a, a, |r, c| {
        sigma[active[r]] * gram[(active[r], active[c])] * sigma[active[c]]
    });
    for d in 0..a {
        m[(d, d)] += 1.0;
    }
    let rhs = DVector::from_fn(a, |r, _| sigma[active[r]] * resid[active[r]]);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Numeric("e-step system is not positive definite".into()))?;
    let sol = chol.solve(&rhs);
    if sol.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("e-step produced non-finite BLUPs".into()));
    }
    for (r, &k) in active.iter().enumerate() {
        b[k] = sol[r];
    }
    Ok(b)
}

/// [`e_step`] from a subject's design `X₋ᵥ` and response `yᵥ`.
pub fn e_step_design(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    beta: &DVector<f64>,
    sigma: &DVector<f64>,
) -> Result<DVector<f64>> {
    if design.nrows() != response.len() {
        return Err(Error::Dimension("design and response row counts differ".into()));
    }
    e_step(&design.tr_mul(design), &design.tr_mul(response), beta, sigma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub beta: DVector<f64>,
    pub sigma: DVector<f64>,
    /// Lasso objective (without the `½Σ‖b‖²` term).
    pub objective: f64,
    pub converged: bool,
    pub sweeps: usize,
    pub history: Vec<f64>,
}

/// Joint lasso over `[X | X diag(bᵢ)]` stacked across subjects, penalties
/// `n·λ₁` on `β` and `n·λ₂` on `σ`, with `σ ≥ 0`.
pub fn m_step(
    problem: &NodeProblem,
    blups: &[DVector<f64>],
    lambda1: f64,
    lambda2: f64,
    warm: Option<(&DVector<f64>, &DVector<f64>)>,
    solver: &SolverOptions,
) -> Result<MStep> {
    m_step_inner(problem, blups, lambda1, lambda2, warm, solver, false)
}

fn m_step_inner(
    problem: &NodeProblem,
    blups: &[DVector<f64>],
    lambda1: f64,
    lambda2: f64,
    warm: Option<(&DVector<f64>, &DVector<f64>)>,
    solver: &SolverOptions,
    hold_uninformative: bool,
) -> Result<MStep> {
    let q = problem.q();
    if blups.len() != problem.n_subjects() || blups.iter().any(|b| b.len() != q) {
        return Err(Error::Dimension(format!(
            "m-step expects {} BLUP vectors of length {q}",
            problem.n_subjects()
        )));
    }
    for b in blups {
        crate::lasso::check_finite(b.iter(), "BLUPs")?;
    }
    let mut gram = DMatrix::zeros(2 * q, 2 * q);
    let mut linear = DVector::zeros(2 * q);
    let mut constant = 0.0;
    for ((g, c), (b, yy)) in problem
        .grams
        .iter()
        .zip(&problem.cross)
        .zip(blups.iter().zip(&problem.yy))
    {
        for k in 0..q {
            for l in 0..q {
                let gkl = g[(k, l)];
                gram[(k, l)] += gkl;
                gram[(k, q + l)] += gkl * b[l];
                gram[(q + k, l)] += b[k] * gkl;
                gram[(q + k, q + l)] += b[k] * gkl * b[l];
            }
            linear[k] += c[k];
            linear[q + k] += b[k] * c[k];
        }
        constant += 0.5 * yy;
    }
    let n = problem.total_obs() as f64;
    let mut weights = DVector::from_element(2 * q, n * lambda1);
    weights.rows_mut(q, q).fill(n * lambda2);
    let mut nonneg = vec![false; 2 * q];
    nonneg[q..].fill(true);
    let mut fixed = vec![false; 2 * q];
    if hold_uninformative {
        for k in 0..q {
            fixed[q + k] = gram[(q + k, q + k)] == 0.0;
        }
    }
    let lasso = GramLasso {
        gram,
        linear,
        constant,
        weights,
        nonneg,
        fixed,
    };
    let start = warm.map(|(b, s)| {
        let mut v = DVector::zeros(2 * q);
        v.rows_mut(0, q).copy_from(b);
        v.rows_mut(q, q).copy_from(s);
        v
    });
    let sol = solve_gram_lasso(&lasso, solver, start.as_ref())?;
    Ok(MStep {
        beta: sol.coefficients.rows(0, q).into_owned(),
        sigma: sol.coefficients.rows(q, q).into_owned(),
        objective: sol.objective,
        converged: sol.converged,
        sweeps: sol.iterations,
        history: sol.history,
    })
}

/// Closed-form noise variance `Σᵢ(‖rᵢ‖² + ‖bᵢ‖²) / Σᵢ(nᵢ + p)`, floored at
/// [`SIGMA2_FLOOR`]. `rᵢ` is the full residual including the random effect.
pub fn update_sigma2(residuals: &[DVector<f64>], blups: &[DVector<f64>], p: usize) -> Result<f64> {
    if residuals.len() != blups.len() {
        return Err(Error::Dimension("one BLUP vector per residual vector required".into()));
    }
    let rss: Vec<f64> = residuals.iter().map(|r| r.norm_squared()).collect();
    let n: Vec<usize> = residuals.iter().map(|r| r.len()).collect();
    sigma2_from_rss(&rss, blups, &n, p)
}

fn sigma2_from_rss(rss: &[f64], blups: &[DVector<f64>], n_obs: &[usize], p: usize) -> Result<f64> {
    let denom: usize = n_obs.iter().map(|n| n + p).sum();
    if n_obs.iter().sum::<usize>() == 0 {
        return Err(Error::Domain("noise variance needs at least one observation".into()));
    }
    let num: f64 = rss.iter().sum::<f64>() + blups.iter().map(|b| b.norm_squared()).sum::<f64>();
    Ok((num / denom as f64).max(SIGMA2_FLOOR))
}

/// EM output for one node. Vectors are indexed by the `p − 1` other nodes in order.
#[derive(Debug, Clone, PartialEq)]
pub struct MnsNodeFit {
    pub node: usize,
    pub beta: DVector<f64>,
    pub sigma_re: DVector<f64>,
    pub sigma2: f64,
    /// `N × (p−1)`, row `i` holds subject `i`'s latent effects.
    pub blups: DMatrix<f64>,
    pub em_iterations: usize,
    pub converged: bool,
    /// Every inner lasso solve hit its tolerance.
    pub solver_converged: bool,
    /// Joint objective after each EM iteration.
    pub objective_trace: Vec<f64>,
}

impl MnsNodeFit {
    pub fn predictor(&self, k: usize) -> usize {
        predictor_index(self.node, k)
    }

    /// Number of estimated parameters: `β`, `σ` and the noise variance.
    pub fn n_parameters(&self) -> usize {
        self.beta.len() + self.sigma_re.len() + 1
    }

    /// Subject-level coefficients `β + σ ∘ bᵢ`.
    pub fn subject_coefficients(&self, i: usize) -> DVector<f64> {
        let b = self.blups.row(i).transpose();
        &self.beta + self.sigma_re.component_mul(&b)
    }
}

/// Runs EM for node `v` of the cohort.
pub fn fit_node(cohort: &CohortData, v: usize, cfg: &MnsConfig) -> Result<MnsNodeFit> {
    fit_node_problem(&NodeProblem::new(cohort, v)?, cfg)
}

/// Runs EM from the initial point `β = 0`, `σ = 1`, `s² = 1`, `b = 0`.
///
/// The first M-step sees `b = 0`, which leaves the `σ` columns empty; scales
/// whose stacked column is identically zero keep their current value rather
/// than being penalized to zero.
pub fn fit_node_problem(problem: &NodeProblem, cfg: &MnsConfig) -> Result<MnsNodeFit> {
    cfg.validate()?;
    let q = problem.q();
    let n_sub = problem.n_subjects();
    if problem.n_obs.iter().any(|&n| n < 2) {
        return Err(Error::Domain("every subject needs at least 2 observations".into()));
    }
    let dropped = problem.dropped();
    let mut beta = DVector::zeros(q);
    let mut sigma = DVector::from_fn(q, |k, _| if dropped[k] { 0.0 } else { 1.0 });
    let mut sigma2 = 1.0;
    let mut blups = vec![DVector::zeros(q); n_sub];
    let mut converged = false;
    let mut solver_converged = true;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let n = problem.total_obs() as f64;

    while iterations < cfg.em_max_iter {
        iterations += 1;
        let m = m_step_inner(
            problem,
            &blups,
            cfg.lambda1,
            cfg.lambda2,
            Some((&beta, &sigma)),
            &cfg.solver,
            true,
        )?;
        solver_converged &= m.converged;
        let change = (&m.beta - &beta)
            .amax()
            .max((&m.sigma - &sigma).amax());
        beta = m.beta;
        sigma = m.sigma;

        for i in 0..n_sub {
            blups[i] = e_step(&problem.grams[i], &problem.cross[i], &beta, &sigma)?;
        }
        let rss: Vec<f64> = (0..n_sub)
            .map(|i| problem.rss(i, &(&beta + sigma.component_mul(&blups[i]))))
            .collect();
        sigma2 = sigma2_from_rss(&rss, &blups, &problem.n_obs, problem.p)?;
        let penalty = n * (cfg.lambda1 * beta.lp_norm(1) + cfg.lambda2 * sigma.lp_norm(1));
        let joint = 0.5 * rss.iter().sum::<f64>()
            + 0.5 * blups.iter().map(|b| b.norm_squared()).sum::<f64>()
            + penalty;
        trace.push(joint);

        // The first M-step runs before any BLUPs exist, so it cannot signal convergence.
        if iterations > 1 && change < cfg.em_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!(
            "node {}: EM stopped after {iterations} iterations without converging",
            problem.node
        );
    }
    let mut blup_rows = DMatrix::zeros(n_sub, q);
    for (i, b) in blups.iter().enumerate() {
        blup_rows.set_row(i, &b.transpose());
    }
    Ok(MnsNodeFit {
        node: problem.node,
        beta,
        sigma_re: sigma,
        sigma2,
        blups: blup_rows,
        em_iterations: iterations,
        converged,
        solver_converged,
        objective_trace: trace,
    })
}

/// Edge set together with reported edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub edges: EdgeSet,
    pub weights: WeightedNetwork,
}

impl Network {
    /// Combines directed coefficients `directed[(v, u)]` (row = regressed node)
    /// under `rule`; weights are the mean of the two directions.
    pub fn from_directed(directed: &DMatrix<f64>, zero_tol: f64, rule: Rule) -> Result<Self> {
        let p = directed.nrows();
        let supports: Vec<BTreeSet<usize>> = (0..p)
            .map(|v| {
                (0..p)
                    .filter(|&u| u != v && directed[(v, u)].abs() > zero_tol)
                    .collect()
            })
            .collect();
        let edges = combine_neighborhoods(&supports, p, rule)?;
        let mut weights = WeightedNetwork::zeros(p);
        for (u, v) in edges.iter() {
            weights.set(u, v, 0.5 * (directed[(u, v)] + directed[(v, u)]));
        }
        Ok(Self { edges, weights })
    }
}

#[derive(Debug, Clone)]
pub struct MnsResult {
    pub nodes: NodeSet,
    pub subject_ids: Vec<String>,
    pub config: MnsConfig,
    /// Population network from the fixed effects.
    pub population: Network,
    /// Edges whose random-effect scale is nonzero.
    pub variance: Network,
    /// Per-subject random-effect networks from the BLUPs.
    pub subject_specific: Vec<Network>,
    /// Population network united with each subject's random-effect network.
    pub subject_full: Vec<Network>,
    pub node_fits: Vec<MnsNodeFit>,
}

impl MnsResult {
    pub fn all_converged(&self) -> bool {
        self.node_fits.iter().all(|f| f.converged)
    }
}

/// Fits every node (in parallel) and assembles the networks.
pub fn fit_all(cohort: &CohortData, cfg: &MnsConfig) -> Result<MnsResult> {
    let grams = cohort.grams();
    fit_all_from_grams(cohort, &grams, cfg)
}

pub(crate) fn fit_all_from_grams(
    cohort: &CohortData,
    grams: &[DMatrix<f64>],
    cfg: &MnsConfig,
) -> Result<MnsResult> {
    cfg.validate()?;
    let n_obs = cohort.n_obs();
    let fits = (0..cohort.p())
        .into_par_iter()
        .map(|v| fit_node_problem(&NodeProblem::from_grams(grams, &n_obs, v)?, cfg))
        .collect::<Result<Vec<_>>>()?;
    assemble(cohort.nodes().clone(), cohort.subject_ids().to_vec(), *cfg, fits)
}

/// Fits the cohort at each `(λ₁, λ₂)` pair, reusing the subject Gram matrices.
pub fn fit_path(cohort: &CohortData, penalties: &[(f64, f64)], base: &MnsConfig) -> Result<Vec<MnsResult>> {
    let grams = cohort.grams();
    penalties
        .par_iter()
        .map(|&(l1, l2)| {
            let cfg = MnsConfig {
                lambda1: l1,
                lambda2: l2,
                ..*base
            };
            fit_all_from_grams(cohort, &grams, &cfg)
        })
        .collect()
}

fn assemble(
    nodes: NodeSet,
    subject_ids: Vec<String>,
    config: MnsConfig,
    fits: Vec<MnsNodeFit>,
) -> Result<MnsResult> {
    let p = nodes.p();
    let n_sub = subject_ids.len();
    let mut beta = DMatrix::zeros(p, p);
    let mut sigma = DMatrix::zeros(p, p);
    let mut latent = vec![DMatrix::zeros(p, p); n_sub];
    let mut effects = vec![DMatrix::zeros(p, p); n_sub];
    let mut full = vec![DMatrix::zeros(p, p); n_sub];
    for fit in &fits {
        let v = fit.node;
        for k in 0..p - 1 {
            let u = fit.predictor(k);
            beta[(v, u)] = fit.beta[k];
            sigma[(v, u)] = fit.sigma_re[k];
            for i in 0..n_sub {
                let b = fit.blups[(i, k)];
                latent[i][(v, u)] = b;
                effects[i][(v, u)] = fit.sigma_re[k] * b;
                full[i][(v, u)] = fit.beta[k] + fit.sigma_re[k] * b;
            }
        }
    }
    let rule = config.rule;
    let population = Network::from_directed(&beta, 0.0, rule)?;
    let variance = Network::from_directed(&sigma, 0.0, rule)?;
    let mut subject_specific = Vec::with_capacity(n_sub);
    let mut subject_full = Vec::with_capacity(n_sub);
    for i in 0..n_sub {
        let support = Network::from_directed(&latent[i], BLUP_ZERO_TOL, rule)?;
        let mut specific = WeightedNetwork::zeros(p);
        for (u, v) in support.edges.iter() {
            specific.set(u, v, 0.5 * (effects[i][(u, v)] + effects[i][(v, u)]));
        }
        let edges = population.edges.union(&support.edges)?;
        let mut w = WeightedNetwork::zeros(p);
        for (u, v) in edges.iter() {
            w.set(u, v, 0.5 * (full[i][(u, v)] + full[i][(v, u)]));
        }
        subject_full.push(Network { edges, weights: w });
        subject_specific.push(Network {
            edges: support.edges,
            weights: specific,
        });
    }
    Ok(MnsResult {
        nodes,
        subject_ids,
        config,
        population,
        variance,
        subject_specific,
        subject_full,
        node_fits: fits,
    })
}

/// Largest absolute pooled covariance between distinct nodes, `max |Σᵢ XᵢᵀXᵢ| / n`.
///
/// A fixed-effect penalty at or above this value empties the population
/// neighborhood of every node in the first M-step.
pub fn pooled_cov_max(cohort: &CohortData) -> f64 {
    let p = cohort.p();
    let n = cohort.total_obs() as f64;
    let mut total = DMatrix::zeros(p, p);
    for g in cohort.grams() {
        total += g;
    }
    let mut best: f64 = 0.0;
    for u in 0..p {
        for v in u + 1..p {
            best = best.max(total[(u, v)].abs() / n);
        }
    }
    best
}

#[doc(hidden)]
pub fn coefficient_position(v: usize, u: usize) -> usize {
    coefficient_index(v, u)
}
