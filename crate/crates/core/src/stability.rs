//! Bootstrap stability approach for replicated data: each subject is tuned
//! with StARS, bootstrapped under randomized elementwise penalties, and the
//! per-subject edge frequencies are pooled through Beta-Binomial moments.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::CohortData;
use crate::error::{Error, Result};
use crate::glasso::{lambda_max, sample_covariance, solve_glasso, GlassoProblem, Penalty};
use crate::graph::{support_of_matrix, EdgeSet};
use crate::rng::{stream, Purpose};

const GLASSO_TOL: f64 = 1e-4;
const GLASSO_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    /// Bootstrap resamples per subject.
    pub b: usize,
    /// Penalty randomization amplitude.
    pub c: f64,
    pub stars_beta: f64,
    pub stars_subsamples: usize,
    pub stars_grid: usize,
    pub seed: u64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            b: 200,
            c: 0.25,
            stars_beta: 0.05,
            stars_subsamples: 20,
            stars_grid: 30,
            seed: 0,
        }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b < 2 {
            return Err(Error::Domain(format!("need at least 2 bootstraps, got {}", self.b)));
        }
        if !(self.c >= 0.0) {
            return Err(Error::Domain(format!("c must be >= 0, got {}", self.c)));
        }
        if !(self.stars_beta > 0.0 && self.stars_beta < 0.5) {
            return Err(Error::Domain(format!(
                "stars_beta must lie in (0, 0.5), got {}",
                self.stars_beta
            )));
        }
        if self.stars_subsamples < 2 || self.stars_grid < 2 {
            return Err(Error::Domain("StARS needs at least 2 subsamples and 2 grid points".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarsSelection {
    pub lambda: f64,
    pub lambda_max: f64,
    /// Descending penalty grid.
    pub grid: Vec<f64>,
    /// Running supremum of the average edge instability along the grid.
    pub instability: Vec<f64>,
    /// False when every grid point stayed below the threshold.
    pub crossed: bool,
}

/// Size of each StARS subsample: `⌊10√n⌋`, capped at `⌊0.8n⌋` so that small
/// samples still vary between draws.
pub fn stars_subsample_size(n: usize) -> usize {
    let by_root = (10.0 * (n as f64).sqrt()).floor() as usize;
    let cap = (0.8 * n as f64).floor() as usize;
    by_root.min(cap).max(2)
}

/// `count` log-spaced values from `hi` down to `lo_frac·hi`.
pub fn log_grid(hi: f64, lo_frac: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    (0..count)
        .map(|k| hi * lo_frac.powf(k as f64 / (count - 1) as f64))
        .collect()
}

fn mean_instability(freq: &DMatrix<f64>) -> f64 {
    let p = freq.nrows();
    let mut total = 0.0;
    for u in 0..p {
        for v in u + 1..p {
            let t = freq[(u, v)];
            total += 2.0 * t * (1.0 - t);
        }
    }
    total / (p * (p - 1) / 2) as f64
}

fn support_indicator(theta: &DMatrix<f64>) -> DMatrix<f64> {
    let p = theta.nrows();
    DMatrix::from_fn(p, p, |i, j| if i != j && theta[(i, j)] != 0.0 { 1.0 } else { 0.0 })
}

/// StARS: the densest penalty on a descending grid whose running-supremum
/// instability stays at or below `stars_beta`.
///
/// `subject` keys the random stream so different subjects draw different subsamples.
pub fn stars_select_lambda(data: &DMatrix<f64>, cfg: &StabilityConfig, subject: usize) -> Result<StarsSelection> {
    cfg.validate()?;
    let n = data.nrows();
    let p = data.ncols();
    if n < 20 {
        return Err(Error::Domain(format!("StARS needs n >= 20, got {n}")));
    }
    let lmax = lambda_max(&sample_covariance(data)?);
    let grid = log_grid(lmax, 0.01, cfg.stars_grid);
    let m = stars_subsample_size(n);

    let counts = (0..cfg.stars_subsamples)
        .into_par_iter()
        .map(|s| -> Result<Vec<DMatrix<f64>>> {
            let mut rng = stream(cfg.seed, Purpose::Stars, subject as u64, s as u64);
            let mut rows = index::sample(&mut rng, n, m).into_vec();
            rows.sort_unstable();
            let cov = sample_covariance(&data.select_rows(rows.iter()))?;
            grid.iter()
                .map(|&l| {
                    let sol = solve_glasso(
                        &GlassoProblem { sample_cov: cov.clone(), penalty: Penalty::Scalar(l) },
                        GLASSO_TOL,
                        GLASSO_MAX_ITER,
                    )?;
                    Ok(support_indicator(sol.theta.matrix()))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut instability = Vec::with_capacity(grid.len());
    let mut sup: f64 = 0.0;
    for k in 0..grid.len() {
        let mut freq = DMatrix::zeros(p, p);
        for sub in &counts {
            freq += &sub[k];
        }
        freq /= cfg.stars_subsamples as f64;
        sup = sup.max(mean_instability(&freq));
        instability.push(sup);
    }
    let last_ok = instability.iter().rposition(|&d| d <= cfg.stars_beta).unwrap_or(0);
    let crossed = instability.iter().any(|&d| d > cfg.stars_beta);
    if !crossed {
        log::warn!(
            "subject {subject}: StARS instability never exceeded {}; using the smallest grid penalty",
            cfg.stars_beta
        );
    }
    Ok(StarsSelection {
        lambda: grid[last_ok],
        lambda_max: lmax,
        grid,
        instability,
        crossed,
    })
}

/// Symmetric penalty `λ + c·λ_max·W` with `W = ±1` per edge and a zero
/// diagonal. Negative entries are clamped to 0; their count is returned.
pub fn randomized_penalty_matrix<R: Rng + ?Sized>(
    p: usize,
    lambda: f64,
    lambda_max: f64,
    c: f64,
    rng: &mut R,
) -> (DMatrix<f64>, usize) {
    let mut m = DMatrix::zeros(p, p);
    let mut clamped = 0;
    for j in 0..p {
        for k in j + 1..p {
            let w = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let mut v = lambda + c * lambda_max * w;
            if v < 0.0 {
                v = 0.0;
                clamped += 1;
            }
            m[(j, k)] = v;
            m[(k, j)] = v;
        }
    }
    (m, clamped)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapFrequencies {
    /// Fraction of successful bootstraps selecting each edge.
    pub freq: DMatrix<f64>,
    pub used: usize,
    pub failed: usize,
    pub clamped_penalties: usize,
}

/// Edge selection frequencies over `cfg.b` row resamples, each fitted under a
/// fresh randomized penalty. Failed solves are skipped and counted.
pub fn bootstrap_networks(
    data: &DMatrix<f64>,
    lambda: f64,
    lambda_max: f64,
    cfg: &StabilityConfig,
    subject: usize,
) -> Result<BootstrapFrequencies> {
    cfg.validate()?;
    let n = data.nrows();
    let p = data.ncols();
    let draws: Vec<(Option<DMatrix<f64>>, usize)> = (0..cfg.b)
        .into_par_iter()
        .map(|b| -> Result<(Option<DMatrix<f64>>, usize)> {
            let mut rng = stream(cfg.seed, Purpose::Bootstrap, subject as u64, b as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let cov = sample_covariance(&data.select_rows(rows.iter()))?;
            let (penalty, clamped) = randomized_penalty_matrix(p, lambda, lambda_max, cfg.c, &mut rng);
            let prob = GlassoProblem { sample_cov: cov, penalty: Penalty::Matrix(penalty) };
            match solve_glasso(&prob, GLASSO_TOL, GLASSO_MAX_ITER) {
                Ok(sol) => Ok((Some(support_indicator(sol.theta.matrix())), clamped)),
                Err(e) if e.is_numeric() => {
                    log::warn!("subject {subject}, bootstrap {b}: {e}; skipped");
                    Ok((None, clamped))
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut freq = DMatrix::zeros(p, p);
    let mut used = 0;
    let mut clamped_penalties = 0;
    for (ind, clamped) in &draws {
        clamped_penalties += clamped;
        if let Some(ind) = ind {
            freq += ind;
            used += 1;
        }
    }
    if clamped_penalties > 0 {
        log::warn!("subject {subject}: {clamped_penalties} randomized penalties were negative and clamped to 0");
    }
    if used == 0 {
        return Err(Error::Numeric(format!("subject {subject}: every bootstrap solve failed")));
    }
    freq /= used as f64;
    Ok(BootstrapFrequencies {
        freq,
        used,
        failed: cfg.b - used,
        clamped_penalties,
    })
}

/// Method-of-moments Beta-Binomial estimates for one edge: `(μ, raw ρ)`, or
/// `(μ, None)` when `μ ∈ {0, 1}` leaves ρ undefined.
pub fn beta_binomial_edge(y: &[f64], b: usize) -> Result<(f64, Option<f64>)> {
    let n = y.len();
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 subjects, got {n}")));
    }
    if b < 2 {
        return Err(Error::Domain(format!("need B >= 2, got {b}")));
    }
    let mu = y.iter().sum::<f64>() / n as f64;
    if mu <= 0.0 || mu >= 1.0 {
        return Ok((mu, None));
    }
    let bf = b as f64;
    let ss: f64 = y.iter().map(|v| (mu - v).powi(2)).sum();
    let rho = bf / (bf - 1.0) * ss / (mu * (1.0 - mu) * (n as f64 - 1.0)) - 1.0 / (bf - 1.0);
    Ok((mu, Some(rho)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaBinomialMoments {
    pub mu: DMatrix<f64>,
    /// ρ clamped to `[0, 1]`, 0 where degenerate.
    pub rho: DMatrix<f64>,
    /// Unclamped ρ, 0 where degenerate.
    pub rho_raw: DMatrix<f64>,
    /// Edges with `μ ∈ {0, 1}`.
    pub degenerate: EdgeSet,
}

/// Subject-mean frequency `μ` and overdispersion `ρ` for every edge.
pub fn beta_binomial_moments(y: &[DMatrix<f64>], b: usize) -> Result<BetaBinomialMoments> {
    let first = y
        .first()
        .ok_or_else(|| Error::Domain("need at least 2 subjects, got 0".into()))?;
    let p = first.nrows();
    if y.iter().any(|m| m.shape() != (p, p)) {
        return Err(Error::Dimension("frequency matrices disagree in shape".into()));
    }
    let mut mu = DMatrix::zeros(p, p);
    let mut rho = DMatrix::zeros(p, p);
    let mut rho_raw = DMatrix::zeros(p, p);
    let mut degenerate = EdgeSet::empty(p);
    let mut column = vec![0.0; y.len()];
    for u in 0..p {
        for v in u + 1..p {
            for (slot, m) in column.iter_mut().zip(y) {
                *slot = m[(u, v)];
            }
            let (m, r) = beta_binomial_edge(&column, b)?;
            mu[(u, v)] = m;
            mu[(v, u)] = m;
            match r {
                Some(r) => {
                    rho_raw[(u, v)] = r;
                    rho_raw[(v, u)] = r;
                    let c = r.clamp(0.0, 1.0);
                    rho[(u, v)] = c;
                    rho[(v, u)] = c;
                }
                None => {
                    degenerate.insert(u, v)?;
                }
            }
        }
    }
    Ok(BetaBinomialMoments {
        mu,
        rho,
        rho_raw,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityResult {
    pub mu_pop: DMatrix<f64>,
    pub rho_pop: DMatrix<f64>,
    pub rho_raw: DMatrix<f64>,
    pub degenerate: EdgeSet,
    pub per_subject_freq: Vec<DMatrix<f64>>,
    pub stars: Vec<StarsSelection>,
    pub bootstraps_used: Vec<usize>,
    pub clamped_penalties: usize,
}

impl StabilityResult {
    /// Edges selected in more than `threshold` of bootstraps on average.
    pub fn population_network(&self, threshold: f64) -> EdgeSet {
        support_of_matrix(&self.mu_pop, threshold)
    }
}

/// StARS tuning, bootstrapping and Beta-Binomial pooling for every subject.
pub fn run_stability(cohort: &CohortData, cfg: &StabilityConfig) -> Result<StabilityResult> {
    cfg.validate()?;
    if cohort.n_subjects() < 2 {
        return Err(Error::Domain("the stability approach needs at least 2 subjects".into()));
    }
    let mut stars = Vec::new();
    let mut freqs = Vec::new();
    let mut used = Vec::new();
    let mut clamped = 0;
    for (i, x) in cohort.subjects().iter().enumerate() {
        let sel = stars_select_lambda(x, cfg, i)?;
        let boot = bootstrap_networks(x, sel.lambda, sel.lambda_max, cfg, i)?;
        log::info!(
            "subject {}: lambda {:.4} ({} of {} bootstraps used)",
            cohort.subject_ids()[i],
            sel.lambda,
            boot.used,
            cfg.b
        );
        stars.push(sel);
        freqs.push(boot.freq);
        used.push(boot.used);
        clamped += boot.clamped_penalties;
    }
    let moments = beta_binomial_moments(&freqs, cfg.b)?;
    Ok(StabilityResult {
        mu_pop: moments.mu,
        rho_pop: moments.rho,
        rho_raw: moments.rho_raw,
        degenerate: moments.degenerate,
        per_subject_freq: freqs,
        stars,
        bootstraps_used: used,
        clamped_penalties: clamped,
    })
}
