//! Penalty reparameterization, cross-validation and edge-recovery metrics.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::CohortData;
use crate::error::{Error, Result};
use crate::graph::EdgeSet;
use crate::mns::{fit_all_from_grams, pooled_cov_max, MnsConfig, MnsNodeFit};
use crate::stability::log_grid;

/// Default number of penalty values on a path.
pub const DEFAULT_GRID_SIZE: usize = 25;
/// Smallest grid value as a fraction of the largest.
pub const DEFAULT_GRID_DEPTH: f64 = 1e-4;

/// Overall penalty `λ` split by `α` into `λ₁ = αλ` and `λ₂ = √2(1−α)λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaLambda {
    pub alpha: f64,
    pub lambda: f64,
}

impl AlphaLambda {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Domain(format!("alpha must lie in [0,1], got {alpha}")));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Domain(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { alpha, lambda })
    }

    pub fn to_penalties(&self) -> (f64, f64) {
        to_penalties(*self)
    }

    /// Inverse of [`to_penalties`]; `λ₁ = λ₂ = 0` maps to `α = 1, λ = 0`.
    pub fn from_penalties(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
            return Err(Error::Domain("penalties must be nonnegative".into()));
        }
        let lambda = lambda1 + lambda2 / std::f64::consts::SQRT_2;
        if lambda == 0.0 {
            return Self::new(1.0, 0.0);
        }
        Self::new(lambda1 / lambda, lambda)
    }
}

pub fn to_penalties(al: AlphaLambda) -> (f64, f64) {
    (
        al.alpha * al.lambda,
        std::f64::consts::SQRT_2 * (1.0 - al.alpha) * al.lambda,
    )
}

/// Top of the `λ` path: at this value the fixed-effect penalty alone empties
/// the population network. `α` below 0.05 is treated as 0.05.
pub fn mns_lambda_max(cohort: &CohortData, alpha: f64) -> f64 {
    pooled_cov_max(cohort) / alpha.max(0.05)
}

/// `count` log-spaced `(α, λ)` points from `λ_max` down to `depth·λ_max`.
pub fn alpha_lambda_grid(alpha: f64, lambda_max: f64, count: usize, depth: f64) -> Result<Vec<AlphaLambda>> {
    if count == 0 {
        return Err(Error::Domain("grid must have at least one point".into()));
    }
    if !(depth > 0.0 && depth <= 1.0) {
        return Err(Error::Domain(format!("grid depth must lie in (0,1], got {depth}")));
    }
    log_grid(lambda_max, depth, count)
        .into_iter()
        .map(|l| AlphaLambda::new(alpha, l))
        .collect()
}

/// [`alpha_lambda_grid`] with the default size and depth.
pub fn default_grid(cohort: &CohortData, alpha: f64) -> Result<Vec<AlphaLambda>> {
    alpha_lambda_grid(alpha, mns_lambda_max(cohort, alpha), DEFAULT_GRID_SIZE, DEFAULT_GRID_DEPTH)
}

/// Confusion counts of an estimated edge set against the truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positives: usize,
    pub false_positives: usize,
    pub positives: usize,
    pub negatives: usize,
}

impl Confusion {
    pub fn of(estimated: &EdgeSet, truth: &EdgeSet) -> Result<Self> {
        if estimated.p() != truth.p() {
            return Err(Error::Dimension(format!(
                "estimate has p={}, truth has p={}",
                estimated.p(),
                truth.p()
            )));
        }
        let tp = estimated.intersection_len(truth);
        Ok(Self {
            true_positives: tp,
            false_positives: estimated.len() - tp,
            positives: truth.len(),
            negatives: truth.max_edges() - truth.len(),
        })
    }

    pub fn add(self, other: Self) -> Self {
        Self {
            true_positives: self.true_positives + other.true_positives,
            false_positives: self.false_positives + other.false_positives,
            positives: self.positives + other.positives,
            negatives: self.negatives + other.negatives,
        }
    }

    pub fn rates(&self) -> Rates {
        let empty_truth = self.positives == 0;
        let full_truth = self.negatives == 0;
        Rates {
            tpr: if empty_truth { 1.0 } else { self.true_positives as f64 / self.positives as f64 },
            fpr: if full_truth { 0.0 } else { self.false_positives as f64 / self.negatives as f64 },
            empty_truth,
            full_truth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tpr: f64,
    pub fpr: f64,
    /// The truth had no edges; TPR reported as 1.
    pub empty_truth: bool,
    /// The truth was complete; FPR reported as 0.
    pub full_truth: bool,
}

pub fn tpr_fpr(estimated: &EdgeSet, truth: &EdgeSet) -> Result<Rates> {
    Ok(Confusion::of(estimated, truth)?.rates())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Path parameter (penalty or score threshold); `None` for the anchors.
    pub lambda: Option<f64>,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Sorted by FPR, then TPR, with `(0,0)` first and `(1,1)` last.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// Builds the curve from one pooled confusion count per path point.
    pub fn from_confusions(params: &[f64], counts: &[Confusion]) -> Result<Self> {
        if params.is_empty() || params.len() != counts.len() {
            return Err(Error::Dimension(format!(
                "{} path values for {} confusion counts",
                params.len(),
                counts.len()
            )));
        }
        let mut points: Vec<RocPoint> = params
            .iter()
            .zip(counts)
            .map(|(&lambda, c)| {
                let r = c.rates();
                RocPoint { lambda: Some(lambda), fpr: r.fpr, tpr: r.tpr }
            })
            .collect();
        points.push(RocPoint { lambda: None, fpr: 0.0, tpr: 0.0 });
        points.push(RocPoint { lambda: None, fpr: 1.0, tpr: 1.0 });
        points.sort_by(|a, b| a.fpr.total_cmp(&b.fpr).then(a.tpr.total_cmp(&b.tpr)));
        let auc = points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum();
        Ok(Self { points, auc })
    }

    /// TSV with header `lambda	fpr	tpr`; anchors have `NA` for lambda.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("lambda\tfpr\ttpr\n");
        for pt in &self.points {
            let l = pt.lambda.map_or_else(|| "NA".to_string(), |l| l.to_string());
            out.push_str(&format!("{l}\t{}\t{}\n", pt.fpr, pt.tpr));
        }
        out
    }
}

/// ROC over a path; `estimates[k][i]` is subject `i`'s estimate at `params[k]`
/// and is scored against `truths[i]`. Counts are pooled over subjects before
/// rates are taken.
pub fn roc_curve(params: &[f64], estimates: &[Vec<EdgeSet>], truths: &[EdgeSet]) -> Result<RocCurve> {
    let counts = estimates
        .iter()
        .map(|per_subject| {
            if per_subject.len() != truths.len() {
                return Err(Error::Dimension(format!(
                    "{} estimates for {} truths",
                    per_subject.len(),
                    truths.len()
                )));
            }
            per_subject
                .iter()
                .zip(truths)
                .try_fold(Confusion::default(), |acc, (e, t)| Ok(acc.add(Confusion::of(e, t)?)))
        })
        .collect::<Result<Vec<_>>>()?;
    RocCurve::from_confusions(params, &counts)
}

/// Runs `fit` at every grid value and scores the result with [`roc_curve`].
pub fn roc_sweep<F>(grid: &[f64], truths: &[EdgeSet], mut fit: F) -> Result<RocCurve>
where
    F: FnMut(f64) -> Result<Vec<EdgeSet>>,
{
    if grid.is_empty() {
        return Err(Error::Domain("ROC grid is empty".into()));
    }
    let estimates = grid.iter().map(|&l| fit(l)).collect::<Result<Vec<_>>>()?;
    roc_curve(grid, &estimates, truths)
}

/// ROC of ranking edges by a symmetric score matrix, sweeping the threshold
/// over every distinct off-diagonal score (edge kept when score ≥ threshold).
pub fn score_roc(scores: &DMatrix<f64>, truth: &EdgeSet) -> Result<RocCurve> {
    let p = scores.nrows();
    if scores.shape() != (truth.p(), truth.p()) {
        return Err(Error::Dimension("score matrix and truth disagree on p".into()));
    }
    let mut thresholds: Vec<f64> = Vec::new();
    for u in 0..p {
        for v in u + 1..p {
            thresholds.push(scores[(u, v)]);
        }
    }
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    roc_sweep(&thresholds, std::slice::from_ref(truth), |t| {
        let mut e = EdgeSet::empty(p);
        for u in 0..p {
            for v in u + 1..p {
                if scores[(u, v)] >= t {
                    e.insert(u, v)?;
                }
            }
        }
        Ok(vec![e])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub grid: Vec<AlphaLambda>,
    pub folds: usize,
    /// Held-out error per grid point and fold.
    pub fold_mse: Vec<Vec<f64>>,
    /// Mean over folds per grid point.
    pub mse: Vec<f64>,
    pub best_index: usize,
    pub best: AlphaLambda,
}

/// Contiguous block boundaries splitting `n` rows into `k` folds.
pub fn fold_bounds(n: usize, k: usize) -> Vec<(usize, usize)> {
    (0..k).map(|f| (f * n / k, (f + 1) * n / k)).collect()
}

fn held_out_mse(test: &[DMatrix<f64>], fits: &[MnsNodeFit]) -> f64 {
    let p = fits.len();
    let n_sub = test.len();
    let mut total = 0.0;
    for fit in fits {
        let v = fit.node;
        for (i, x) in test.iter().enumerate() {
            let gamma = fit.subject_coefficients(i);
            let mut full = DVector::zeros(p);
            for k in 0..p - 1 {
                full[fit.predictor(k)] = gamma[k];
            }
            let resid = x.column(v) - x * &full;
            total += resid.norm_squared() / x.nrows() as f64;
        }
    }
    total / (p * n_sub) as f64
}

/// K-fold cross-validation over contiguous blocks of each subject's rows.
///
/// Held-out rows of subject `i` are predicted with the training fit's
/// `β + σ ∘ bᵢ`; errors are averaged over nodes and subjects, then folds.
pub fn cross_validate(
    cohort: &CohortData,
    grid: &[AlphaLambda],
    k: usize,
    base: &MnsConfig,
) -> Result<CvReport> {
    if k < 2 {
        return Err(Error::Domain(format!("need at least 2 folds, got {k}")));
    }
    if grid.is_empty() {
        return Err(Error::Domain("CV grid is empty".into()));
    }
    for (id, n) in cohort.subject_ids().iter().zip(cohort.n_obs()) {
        if n < k {
            return Err(Error::Domain(format!(
                "subject {id} has {n} observations, fewer than {k} folds"
            )));
        }
        if n - n.div_ceil(k) < 2 {
            return Err(Error::Domain(format!(
                "subject {id} would keep fewer than 2 training rows per fold"
            )));
        }
    }
    let bounds: Vec<Vec<(usize, usize)>> = cohort.n_obs().iter().map(|&n| fold_bounds(n, k)).collect();
    let splits: Vec<(CohortData, Vec<DMatrix<f64>>)> = (0..k)
        .map(|f| {
            let train_rows: Vec<Vec<usize>> = bounds
                .iter()
                .zip(cohort.n_obs())
                .map(|(b, n)| (0..n).filter(|r| *r < b[f].0 || *r >= b[f].1).collect())
                .collect();
            let test = cohort
                .subjects()
                .iter()
                .zip(&bounds)
                .map(|(x, b)| x.rows(b[f].0, b[f].1 - b[f].0).into_owned())
                .collect();
            (cohort.select_rows(&train_rows), test)
        })
        .collect();
    let grams: Vec<Vec<DMatrix<f64>>> = splits.iter().map(|(train, _)| train.grams()).collect();

    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..k).map(move |f| (g, f))).collect();
    let errors = jobs
        .par_iter()
        .map(|&(g, f)| {
            let (l1, l2) = grid[g].to_penalties();
            let cfg = MnsConfig { lambda1: l1, lambda2: l2, ..*base };
            let (train, test) = &splits[f];
            let fit = fit_all_from_grams(train, &grams[f], &cfg)?;
            Ok(held_out_mse(test, &fit.node_fits))
        })
        .collect::<Result<Vec<f64>>>()?;

    let fold_mse: Vec<Vec<f64>> = errors.chunks(k).map(|c| c.to_vec()).collect();
    let mse: Vec<f64> = fold_mse.iter().map(|row| row.iter().sum::<f64>() / k as f64).collect();
    if let Some(bad) = mse.iter().position(|m| !m.is_finite()) {
        return Err(Error::Numeric(format!(
            "cross-validation error is not finite at grid point {bad}"
        )));
    }
    let best_index = mse
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("grid is nonempty");
    Ok(CvReport {
        grid: grid.to_vec(),
        folds: k,
        fold_mse,
        mse,
        best_index,
        best: grid[best_index],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};

    fn edges(p: usize, pairs: &[(usize, usize)]) -> EdgeSet {
        EdgeSet::from_pairs(p, pairs.iter().copied()).unwrap()
    }

    #[test]
    fn penalty_split_reference_values() {
        assert_eq!(to_penalties(AlphaLambda::new(1.0, 2.0).unwrap()), (2.0, 0.0));
        let (l1, l2) = to_penalties(AlphaLambda::new(0.0, 2.0).unwrap());
        assert_eq!(l1, 0.0);
        assert!((l2 - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        let (l1, l2) = AlphaLambda::new(0.25, 1.0).unwrap().to_penalties();
        assert_eq!(l1, 0.25);
        assert!((l2 - 3.0 * 2f64.sqrt() / 4.0).abs() < 1e-15);
        assert!((l2 - 1.0607).abs() < 1e-4);
        assert!(AlphaLambda::new(1.2, 1.0).is_err());
        assert!(AlphaLambda::new(0.5, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn penalty_split_round_trips(alpha in 0.0f64..=1.0, lambda in 1e-6f64..1e3) {
            let al = AlphaLambda::new(alpha, lambda).unwrap();
            let (l1, l2) = al.to_penalties();
            let back = AlphaLambda::from_penalties(l1, l2).unwrap();
            prop_assert!((back.alpha - alpha).abs() < 1e-12);
            prop_assert!((back.lambda - lambda).abs() < 1e-12 * lambda.max(1.0));
        }

        #[test]
        fn rates_bounded_and_permutation_invariant(
            p in 3usize..9,
            seed in any::<u64>(),
        ) {
            let mut rng = StreamRng::seed_from_u64(seed);
            let mut est = EdgeSet::empty(p);
            let mut truth = EdgeSet::empty(p);
            for u in 0..p {
                for v in u + 1..p {
                    if rng.random_bool(0.4) { est.insert(u, v).unwrap(); }
                    if rng.random_bool(0.4) { truth.insert(u, v).unwrap(); }
                }
            }
            let r = tpr_fpr(&est, &truth).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.tpr) && (0.0..=1.0).contains(&r.fpr));
            let mut perm: Vec<usize> = (0..p).collect();
            perm.rotate_left(1);
            let rp = tpr_fpr(&est.permuted(&perm), &truth.permuted(&perm)).unwrap();
            prop_assert_eq!(r, rp);
        }

        #[test]
        fn auc_ignores_duplicate_points(seed in any::<u64>(), n in 1usize..8) {
            let mut rng = StreamRng::seed_from_u64(seed);
            let counts: Vec<Confusion> = (0..n).map(|_| {
                let tp = rng.random_range(0..=5);
                let fp = rng.random_range(0..=10);
                Confusion { true_positives: tp, false_positives: fp, positives: 5, negatives: 10 }
            }).collect();
            let params: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let a = RocCurve::from_confusions(&params, &counts).unwrap().auc;
            let mut c2 = counts.clone();
            c2.extend_from_slice(&counts);
            let mut p2 = params.clone();
            p2.extend_from_slice(&params);
            let b = RocCurve::from_confusions(&p2, &c2).unwrap().auc;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_counted_rates() {
        let truth = edges(4, &[(0, 1), (2, 3)]);
        let est = edges(4, &[(0, 1), (0, 2)]);
        let r = tpr_fpr(&est, &truth).unwrap();
        assert_eq!((r.tpr, r.fpr), (0.5, 0.25));
        let r = tpr_fpr(&truth, &truth).unwrap();
        assert_eq!((r.tpr, r.fpr), (1.0, 0.0));
        let r = tpr_fpr(&EdgeSet::empty(4), &truth).unwrap();
        assert_eq!((r.tpr, r.fpr), (0.0, 0.0));
        let r = tpr_fpr(&est, &EdgeSet::empty(4)).unwrap();
        assert!(r.empty_truth && r.tpr == 1.0);
        let r = tpr_fpr(&est, &EdgeSet::complete(4)).unwrap();
        assert!(r.full_truth && r.fpr == 0.0);
        assert!(tpr_fpr(&EdgeSet::empty(5), &truth).is_err());
    }

    #[test]
    fn roc_boundary_estimators() {
        let truth = edges(5, &[(0, 1), (1, 2), (3, 4)]);
        let perfect = roc_sweep(&[1.0, 0.5, 0.1], std::slice::from_ref(&truth), |_| Ok(vec![truth.clone()])).unwrap();
        assert_eq!(perfect.auc, 1.0);
        let diag = roc_sweep(&[1.0, 0.0], std::slice::from_ref(&truth), |l| {
            Ok(vec![if l > 0.5 { EdgeSet::empty(5) } else { EdgeSet::complete(5) }])
        })
        .unwrap();
        assert_eq!(diag.auc, 0.5);
        assert!(diag.points.windows(2).all(|w| w[0].fpr <= w[1].fpr));
        assert!(roc_sweep(&[], std::slice::from_ref(&truth), |_| Ok(vec![truth.clone()])).is_err());
    }

    #[test]
    fn random_guessing_is_near_half() {
        let p = 30;
        let mut truth_rng = StreamRng::seed_from_u64(0);
        let mut truth = EdgeSet::empty(p);
        for u in 0..p {
            for v in u + 1..p {
                if truth_rng.random_bool(0.1) {
                    truth.insert(u, v).unwrap();
                }
            }
        }
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        for seed in 0..20 {
            let mut rng = StreamRng::seed_from_u64(seed + 1);
            let roc = roc_sweep(&grid, std::slice::from_ref(&truth), |q| {
                let mut e = EdgeSet::empty(p);
                for u in 0..p {
                    for v in u + 1..p {
                        if rng.random_bool(q) {
                            e.insert(u, v)?;
                        }
                    }
                }
                Ok(vec![e])
            })
            .unwrap();
            assert!((roc.auc - 0.5).abs() < 0.1, "seed {seed}: {}", roc.auc);
        }
    }

    #[test]
    fn micro_averaging_pools_counts() {
        let t1 = edges(4, &[(0, 1)]);
        let t2 = edges(4, &[(0, 1), (1, 2), (2, 3)]);
        let e1 = EdgeSet::empty(4);
        let e2 = t2.clone();
        let roc = roc_curve(&[0.5], &[vec![e1, e2]], &[t1, t2]).unwrap();
        let pt = roc.points.iter().find(|p| p.lambda == Some(0.5)).unwrap();
        assert_eq!(pt.tpr, 3.0 / 4.0);
        assert_eq!(pt.fpr, 0.0);
    }

    #[test]
    fn score_ranking_roc() {
        let truth = edges(3, &[(0, 1)]);
        let s = DMatrix::from_row_slice(3, 3, &[0.0, 0.9, 0.1, 0.9, 0.0, 0.2, 0.1, 0.2, 0.0]);
        assert_eq!(score_roc(&s, &truth).unwrap().auc, 1.0);
        let flipped = s.map(|v| 1.0 - v);
        assert_eq!(score_roc(&flipped, &truth).unwrap().auc, 0.0);
    }

    fn noise_cohort(n_sub: usize, n: usize, p: usize, seed: u64) -> CohortData {
        let mut rng = StreamRng::seed_from_u64(seed);
        let subjects = (0..n_sub)
            .map(|_| DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        CohortData::from_matrices(subjects).unwrap()
    }

    #[test]
    fn cv_prefers_heavy_penalties_on_noise() {
        let mut top = 0;
        for seed in 0..10 {
            let cohort = noise_cohort(4, 60, 5, seed);
            let grid = alpha_lambda_grid(0.25, mns_lambda_max(&cohort, 0.25), 12, 1e-3).unwrap();
            let rep = cross_validate(&cohort, &grid, 5, &MnsConfig::default()).unwrap();
            if rep.best_index < grid.len() / 4 {
                top += 1;
            }
        }
        assert!(top >= 8, "{top}/10");
    }

    #[test]
    fn cv_prefers_light_penalties_on_noiseless_signal() {
        let mut rng = StreamRng::seed_from_u64(3);
        let subjects = (0..3)
            .map(|_| {
                let mut x = DMatrix::from_fn(40, 2, |_, _| StandardNormal.sample(&mut rng));
                for r in 0..40 {
                    x[(r, 1)] = 2.0 * x[(r, 0)];
                }
                x
            })
            .collect();
        let cohort = CohortData::from_matrices(subjects).unwrap();
        let grid = alpha_lambda_grid(0.25, mns_lambda_max(&cohort, 0.25), 12, 1e-3).unwrap();
        let rep = cross_validate(&cohort, &grid, 4, &MnsConfig::default()).unwrap();
        assert!(rep.best_index >= grid.len() * 3 / 4, "best {}", rep.best_index);
    }

    #[test]
    fn cv_leave_one_out_and_errors() {
        let cohort = noise_cohort(2, 6, 3, 1);
        let grid = alpha_lambda_grid(0.5, 1.0, 3, 0.1).unwrap();
        let rep = cross_validate(&cohort, &grid, 6, &MnsConfig::default()).unwrap();
        assert!(rep.mse.iter().all(|m| m.is_finite()));
        assert_eq!(rep.fold_mse[0].len(), 6);
        assert!(cross_validate(&cohort, &grid, 7, &MnsConfig::default()).is_err());
        assert!(cross_validate(&cohort, &grid, 1, &MnsConfig::default()).is_err());
    }

    #[test]
    fn cv_ignores_subject_order_and_threads() {
        let cohort = noise_cohort(3, 30, 4, 5);
        let reversed = CohortData::new(
            cohort.nodes().clone(),
            cohort.subjects().iter().rev().cloned().collect(),
            cohort.subject_ids().iter().rev().cloned().collect(),
        )
        .unwrap();
        let grid = alpha_lambda_grid(0.25, mns_lambda_max(&cohort, 0.25), 5, 1e-2).unwrap();
        let a = cross_validate(&cohort, &grid, 3, &MnsConfig::default()).unwrap();
        let b = cross_validate(&reversed, &grid, 3, &MnsConfig::default()).unwrap();
        for (x, y) in a.mse.iter().zip(&b.mse) {
            assert!((x - y).abs() < 1e-9 * x.abs().max(1.0));
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| cross_validate(&cohort, &grid, 3, &MnsConfig::default()).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn fold_bounds_cover_rows() {
        let b = fold_bounds(10, 3);
        assert_eq!(b, vec![(0, 3), (3, 6), (6, 10)]);
    }
}
