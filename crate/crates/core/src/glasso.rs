//! Graphical lasso by block coordinate descent over the columns of the
//! covariance estimate `W`, each column subproblem handed to the shared lasso
//! kernel.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cohort::CohortData;
use crate::error::{Error, Result};
use crate::graph::{EdgeSet, PrecisionMatrix};
use crate::lasso::{solve_gram_lasso, GramLasso, SolverOptions};

pub const RIDGE: f64 = 1e-4;
const RIDGE_TRIGGER: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum Penalty {
    /// Same penalty on every off-diagonal entry; diagonal unpenalized.
    Scalar(f64),
    /// Elementwise penalty, diagonal honoured as given.
    Matrix(DMatrix<f64>),
}

impl Penalty {
    fn to_matrix(&self, p: usize) -> DMatrix<f64> {
        match self {
            Penalty::Scalar(l) => {
                let mut m = DMatrix::from_element(p, p, *l);
                m.fill_diagonal(0.0);
                m
            }
            Penalty::Matrix(m) => m.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlassoProblem {
    pub sample_cov: DMatrix<f64>,
    pub penalty: Penalty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlassoSolution {
    pub theta: PrecisionMatrix,
    pub converged: bool,
    pub iterations: usize,
    /// A ridge of [`RIDGE`]·I was added to a near-singular covariance.
    pub ridge_added: bool,
}

impl GlassoSolution {
    pub fn support(&self) -> EdgeSet {
        self.theta.support(0.0)
    }
}

/// `(1/n) XᵀX` after centering the columns.
pub fn sample_covariance(data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::Domain(format!(
            "sample covariance needs n >= 2, got {n}"
        )));
    }
    let mut x = data.clone();
    for mut col in x.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    Ok(x.tr_mul(&x) / n as f64)
}

/// Largest absolute off-diagonal entry; a scalar penalty at this level gives the empty graph.
pub fn lambda_max(cov: &DMatrix<f64>) -> f64 {
    let p = cov.nrows();
    let mut best: f64 = 0.0;
    for i in 0..p {
        for j in i + 1..p {
            best = best.max(cov[(i, j)].abs());
        }
    }
    best
}

/// `−log det Θ + tr(SΘ) + Σ|Λ ∘ Θ|`.
pub fn glasso_objective(prob: &GlassoProblem, theta: &DMatrix<f64>) -> Option<f64> {
    let p = theta.nrows();
    let chol = theta.clone().cholesky()?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let lam = prob.penalty.to_matrix(p);
    let trace = prob.sample_cov.component_mul(theta).sum();
    let pen: f64 = lam.component_mul(&theta.abs()).sum();
    Some(-logdet + trace + pen)
}

pub fn solve_glasso(prob: &GlassoProblem, tol: f64, max_iter: usize) -> Result<GlassoSolution> {
    let s = &prob.sample_cov;
    let p = s.nrows();
    if !s.is_square() || p == 0 {
        return Err(Error::Dimension("sample covariance must be square".into()));
    }
    crate::lasso::check_finite(s.iter(), "sample covariance")?;
    let lam = prob.penalty.to_matrix(p);
    if lam.shape() != (p, p) {
        return Err(Error::Dimension(format!(
            "penalty is {:?}, covariance is {p}x{p}",
            lam.shape()
        )));
    }
    if lam.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Domain("penalty entries must be nonnegative".into()));
    }
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::Domain("need tol > 0 and max_iter >= 1".into()));
    }
    for i in 0..p {
        for j in i + 1..p {
            if (s[(i, j)] - s[(j, i)]).abs() > 1e-10 * (1.0 + s[(i, j)].abs())
                || lam[(i, j)] != lam[(j, i)]
            {
                return Err(Error::Domain("covariance and penalty must be symmetric".into()));
            }
        }
    }

    let min_eig = s.clone().symmetric_eigenvalues().min();
    let ridge_added = min_eig < RIDGE_TRIGGER;
    let mut s = s.clone();
    if ridge_added {
        log::debug!("covariance min eigenvalue {min_eig:.3e}; adding {RIDGE}·I");
        for i in 0..p {
            s[(i, i)] += RIDGE;
        }
    }

    // Disconnected blocks of the thresholded covariance solve independently.
    let blocks = screen_components(&s, &lam);
    let mut theta = DMatrix::zeros(p, p);
    let mut converged = true;
    let mut iterations = 0;
    for block in &blocks {
        if block.len() == 1 {
            let j = block[0];
            theta[(j, j)] = 1.0 / (s[(j, j)] + lam[(j, j)]);
            continue;
        }
        let sb = s.select_rows(block.iter()).select_columns(block.iter());
        let lb = lam.select_rows(block.iter()).select_columns(block.iter());
        let (tb, conv, it) = solve_block(&sb, &lb, tol, max_iter)?;
        converged &= conv;
        iterations = iterations.max(it);
        for (a, &i) in block.iter().enumerate() {
            for (b, &j) in block.iter().enumerate() {
                theta[(i, j)] = tb[(a, b)];
            }
        }
    }
    if theta.clone().cholesky().is_none() {
        return Err(Error::Numeric(
            "graphical lasso estimate is not positive definite".into(),
        ));
    }
    Ok(GlassoSolution {
        theta: PrecisionMatrix::new(theta)?,
        converged,
        iterations,
        ridge_added,
    })
}

fn screen_components(s: &DMatrix<f64>, lam: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let p = s.nrows();
    let mut label = vec![usize::MAX; p];
    let mut blocks = Vec::new();
    for start in 0..p {
        if label[start] != usize::MAX {
            continue;
        }
        let id = blocks.len();
        let mut stack = vec![start];
        let mut members = Vec::new();
        label[start] = id;
        while let Some(i) = stack.pop() {
            members.push(i);
            for j in 0..p {
                if j != i && label[j] == usize::MAX && s[(i, j)].abs() > lam[(i, j)] {
                    label[j] = id;
                    stack.push(j);
                }
            }
        }
        members.sort_unstable();
        blocks.push(members);
    }
    blocks
}

fn solve_block(s: &DMatrix<f64>, lam: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<(DMatrix<f64>, bool, usize)> {
    let p = s.nrows();
    let mut w = s.clone();
    for i in 0..p {
        w[(i, i)] += lam[(i, i)];
    }
    let mut off_mean = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i != j {
                off_mean += s[(i, j)].abs();
            }
        }
    }
    off_mean /= (p * (p - 1)) as f64;
    let threshold = tol * off_mean.max(f64::MIN_POSITIVE);
    let inner = SolverOptions::new((tol * 1e-2).min(1e-6), 100_000);

    let mut betas: Vec<DVector<f64>> = vec![DVector::zeros(p - 1); p];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut change = 0.0;
        for j in 0..p {
            let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
            let w11 = w.select_rows(others.iter()).select_columns(others.iter());
            let s12 = DVector::from_iterator(p - 1, others.iter().map(|&k| s[(k, j)]));
            let weights = DVector::from_iterator(p - 1, others.iter().map(|&k| lam[(k, j)]));
            let sub = GramLasso::new(w11.clone(), s12, weights);
            let sol = solve_gram_lasso(&sub, &inner, Some(&betas[j]))?;
            let w12 = &w11 * &sol.coefficients;
            for (a, &k) in others.iter().enumerate() {
                change += (w[(k, j)] - w12[a]).abs();
                w[(k, j)] = w12[a];
                w[(j, k)] = w12[a];
            }
            betas[j] = sol.coefficients;
        }
        change /= (p * (p - 1)) as f64;
        if change < threshold {
            converged = true;
            break;
        }
    }

    let mut theta = DMatrix::zeros(p, p);
    for j in 0..p {
        let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
        let w12 = DVector::from_iterator(p - 1, others.iter().map(|&k| w[(k, j)]));
        let denom = w[(j, j)] - w12.dot(&betas[j]);
        if !(denom > 0.0) {
            return Err(Error::Numeric(format!(
                "graphical lasso column {j} has nonpositive Schur complement"
            )));
        }
        let tjj = 1.0 / denom;
        theta[(j, j)] = tjj;
        for (a, &k) in others.iter().enumerate() {
            theta[(k, j)] = -betas[j][a] * tjj;
        }
    }
    let sym = (&theta + theta.transpose()) * 0.5;
    Ok((sym, converged, iterations))
}

/// Glasso on all subjects' rows stacked together; returns the support.
pub fn fit_pooled(cohort: &CohortData, lambda: f64) -> Result<EdgeSet> {
    let s = sample_covariance(&cohort.stacked())?;
    Ok(solve_glasso(&GlassoProblem { sample_cov: s, penalty: Penalty::Scalar(lambda) }, 1e-4, 500)?.support())
}

/// Pooled glasso solutions at every penalty in `lambdas`.
pub fn pooled_path_solutions(cohort: &CohortData, lambdas: &[f64]) -> Result<Vec<GlassoSolution>> {
    let s = sample_covariance(&cohort.stacked())?;
    lambdas
        .par_iter()
        .map(|&l| solve_glasso(&GlassoProblem { sample_cov: s.clone(), penalty: Penalty::Scalar(l) }, 1e-4, 500))
        .collect()
}

/// Pooled glasso support at every penalty in `lambdas`.
pub fn fit_pooled_path(cohort: &CohortData, lambdas: &[f64]) -> Result<Vec<EdgeSet>> {
    Ok(pooled_path_solutions(cohort, lambdas)?.iter().map(|s| s.support()).collect())
}

/// Independent per-subject glasso solutions; `out[k][i]` is subject `i` at `lambdas[k]`.
pub fn per_subject_path_solutions(cohort: &CohortData, lambdas: &[f64]) -> Result<Vec<Vec<GlassoSolution>>> {
    let covs = cohort
        .subjects()
        .iter()
        .map(sample_covariance)
        .collect::<Result<Vec<_>>>()?;
    lambdas
        .par_iter()
        .map(|&l| {
            covs.iter()
                .map(|s| solve_glasso(&GlassoProblem { sample_cov: s.clone(), penalty: Penalty::Scalar(l) }, 1e-4, 500))
                .collect()
        })
        .collect()
}

/// Independent per-subject glasso supports; `out[k][i]` is subject `i` at `lambdas[k]`.
pub fn fit_per_subject_path(cohort: &CohortData, lambdas: &[f64]) -> Result<Vec<Vec<EdgeSet>>> {
    Ok(per_subject_path_solutions(cohort, lambdas)?
        .iter()
        .map(|row| row.iter().map(|s| s.support()).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_cov(seed: u64, n: usize, p: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        sample_covariance(&x).unwrap()
    }

    #[test]
    fn sample_covariance_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(10, 3, |_, _| StandardNormal.sample(&mut rng));
        let s = sample_covariance(&x).unwrap();
        let means: Vec<f64> = (0..3).map(|j| x.column(j).iter().sum::<f64>() / 10.0).collect();
        for a in 0..3 {
            for b in 0..3 {
                let mut acc = 0.0;
                for r in 0..10 {
                    acc += (x[(r, a)] - means[a]) * (x[(r, b)] - means[b]);
                }
                assert!((s[(a, b)] - acc / 10.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sample_covariance_edge_cases() {
        let n = 4.0f64;
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0]);
        let s = sample_covariance(&x).unwrap();
        assert!((s - DMatrix::identity(2, 2) * (4.0 / n)).amax() < 1e-15);
        let rep = DMatrix::from_row_slice(3, 2, &[2.0, 5.0, 2.0, 5.0, 2.0, 5.0]);
        assert!(sample_covariance(&rep).unwrap().iter().all(|v| *v == 0.0));
        assert!(sample_covariance(&DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn identity_covariance_gives_identity_precision() {
        let prob = GlassoProblem {
            sample_cov: DMatrix::identity(4, 4),
            penalty: Penalty::Scalar(0.1),
        };
        let sol = solve_glasso(&prob, 1e-6, 100).unwrap();
        assert_eq!(sol.theta.matrix(), &DMatrix::<f64>::identity(4, 4));
    }

    #[test]
    fn two_node_closed_form() {
        // For p=2 the optimal W keeps the diagonal and soft-thresholds the off-diagonal.
        for (off, lam) in [(0.6, 0.2), (-0.6, 0.2), (0.3, 0.3), (0.3, 0.5)] {
            let s = DMatrix::from_row_slice(2, 2, &[1.0, off, off, 2.0]);
            let sol = solve_glasso(&GlassoProblem { sample_cov: s, penalty: Penalty::Scalar(lam) }, 1e-10, 1000)
                .unwrap();
            let w12 = crate::lasso::soft_threshold(off, lam);
            let w = DMatrix::from_row_slice(2, 2, &[1.0, w12, w12, 2.0]);
            let expected = w.try_inverse().unwrap();
            assert!((sol.theta.matrix() - &expected).amax() < 1e-8, "off={off} lam={lam}");
            if lam >= off.abs() {
                assert!(sol.support().is_empty());
            }
        }
    }

    #[test]
    fn kkt_conditions_on_random_instances() {
        for seed in 0..10 {
            let s = random_cov(seed, 15, 3);
            let lam = 0.05;
            let prob = GlassoProblem { sample_cov: s.clone(), penalty: Penalty::Scalar(lam) };
            let sol = solve_glasso(&prob, 1e-8, 10_000).unwrap();
            let theta = sol.theta.matrix();
            let w = theta.clone().try_inverse().unwrap();
            for i in 0..3 {
                assert!((w[(i, i)] - s[(i, i)]).abs() < 1e-5);
                for j in 0..3 {
                    if i == j {
                        continue;
                    }
                    let g = s[(i, j)] - w[(i, j)];
                    if theta[(i, j)] != 0.0 {
                        assert!((g + lam * theta[(i, j)].signum()).abs() < 1e-5);
                    } else {
                        assert!(g.abs() <= lam + 1e-5);
                    }
                }
            }
            // no nearby symmetric perturbation does better
            let f0 = glasso_objective(&prob, theta).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for _ in 0..200 {
                let mut d = DMatrix::from_fn(3, 3, |_, _| {
                    1e-3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                });
                d = (&d + d.transpose()) * 0.5;
                if let Some(f) = glasso_objective(&prob, &(theta + d)) {
                    assert!(f >= f0 - 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_penalty_inverts_covariance() {
        let s = random_cov(7, 200, 4);
        let sol = solve_glasso(&GlassoProblem { sample_cov: s.clone(), penalty: Penalty::Scalar(0.0) }, 1e-10, 10_000)
            .unwrap();
        let inv = s.try_inverse().unwrap();
        assert!((sol.theta.matrix() - inv).amax() < 1e-5);
    }

    #[test]
    fn support_shrinks_along_penalty_grid() {
        let s = random_cov(11, 40, 6);
        let lmax = lambda_max(&s);
        let mut prev: Option<EdgeSet> = None;
        for k in 0..12 {
            let lam = lmax * (k as f64) / 11.0;
            let sol = solve_glasso(&GlassoProblem { sample_cov: s.clone(), penalty: Penalty::Scalar(lam) }, 1e-8, 10_000)
                .unwrap();
            assert!(sol.theta.is_positive_definite());
            let sup = sol.support();
            if let Some(prev) = &prev {
                assert!(sup.len() <= prev.len());
            }
            prev = Some(sup);
        }
        assert!(prev.unwrap().is_empty());
    }

    #[test]
    fn singular_covariance_gets_ridge() {
        let s = random_cov(5, 3, 6);
        let sol = solve_glasso(&GlassoProblem { sample_cov: s, penalty: Penalty::Scalar(0.05) }, 1e-6, 1000).unwrap();
        assert!(sol.ridge_added);
        assert!(sol.theta.is_positive_definite());
    }

    #[test]
    fn matrix_penalty_is_honoured() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.5, 0.5, 1.0, 0.5, 0.5, 0.5, 1.0]);
        let mut lam = DMatrix::from_element(3, 3, 0.1);
        lam.fill_diagonal(0.0);
        lam[(0, 1)] = 10.0;
        lam[(1, 0)] = 10.0;
        let sol = solve_glasso(&GlassoProblem { sample_cov: s, penalty: Penalty::Matrix(lam) }, 1e-8, 1000).unwrap();
        let sup = sol.support();
        assert!(!sup.contains(0, 1));
        assert!(sup.contains(0, 2) && sup.contains(1, 2));
    }

    #[test]
    fn pooled_fit_of_identical_replicates_matches_single_subject() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = DMatrix::from_fn(30, 5, |_, _| StandardNormal.sample(&mut rng));
        let single = CohortData::from_matrices(vec![x.clone()]).unwrap();
        let triple = CohortData::from_matrices(vec![x.clone(), x.clone(), x]).unwrap();
        for lam in [0.05, 0.1, 0.2] {
            assert_eq!(fit_pooled(&single, lam).unwrap(), fit_pooled(&triple, lam).unwrap());
        }
        let s = sample_covariance(&single.stacked()).unwrap();
        assert!(fit_pooled(&single, lambda_max(&s)).unwrap().is_empty());
    }
}
