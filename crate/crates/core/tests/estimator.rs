use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use mns::cohort::CohortData;
use mns::graph::{combine_neighborhoods, EdgeSet, Rule};
use mns::lasso::{solve_lasso, LassoProblem, SolverOptions};
use mns::mns::{fit_all, fit_node, MnsConfig};
use mns::simulator::{simulate, SimConfig};
use mns::tuning::{cross_validate, default_grid, mns_lambda_max, tpr_fpr};

const HUGE: f64 = 1e12;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
}

fn tight(lambda1: f64, lambda2: f64) -> MnsConfig {
    let mut cfg = MnsConfig::with_penalties(lambda1, lambda2);
    cfg.solver = SolverOptions::new(1e-13, 100_000);
    cfg.em_tol = 1e-10;
    cfg.em_max_iter = 1000;
    cfg
}

/// Columns other than `v` of `x`, and column `v`.
fn split(x: &DMatrix<f64>, v: usize) -> (DMatrix<f64>, DVector<f64>) {
    let others: Vec<usize> = (0..x.ncols()).filter(|&u| u != v).collect();
    (x.select_columns(&others), x.column(v).into_owned())
}

#[test]
fn independent_node_gets_no_edges() {
    // λ_max here is the top of the default α = 0.25 grid.
    let mut all_zero = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cohort = CohortData::from_matrices((0..5).map(|_| gaussian(&mut rng, 500, 5)).collect()).unwrap();
        let half = 0.5 * mns_lambda_max(&cohort, 0.25);
        let fit = fit_node(&cohort, 0, &MnsConfig::with_penalties(half, half)).unwrap();
        if fit.beta.iter().all(|&b| b == 0.0) && fit.sigma_re.iter().all(|&s| s == 0.0) {
            all_zero += 1;
        }
    }
    assert!(all_zero >= 18, "{all_zero}/20 all-zero fits");
}

#[test]
fn single_subject_without_penalties_is_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut x = gaussian(&mut rng, 200, 4);
    for r in 0..200 {
        x[(r, 0)] += 0.8 * x[(r, 1)] - 0.5 * x[(r, 3)];
    }
    let cohort = CohortData::from_matrices(vec![x]).unwrap();
    let fit = fit_node(&cohort, 0, &tight(0.0, HUGE)).unwrap();
    let (design, y) = split(cohort.subject(0), 0);
    let ols = design.clone().svd(true, true).solve(&y, 1e-14).unwrap();
    assert!(fit.sigma_re.iter().all(|&s| s == 0.0));
    assert!((&fit.beta - &ols).amax() < 1e-6, "{} vs {}", fit.beta, ols);
}

#[test]
fn huge_scale_penalty_reduces_to_stacked_lasso() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let subjects: Vec<_> = (0..3)
        .map(|_| {
            let mut x = gaussian(&mut rng, 40, 5);
            for r in 0..40 {
                x[(r, 2)] += 0.7 * x[(r, 0)];
            }
            x
        })
        .collect();
    let cohort = CohortData::from_matrices(subjects).unwrap();
    let n = cohort.total_obs() as f64;
    for lambda1 in [0.3, 0.1, 0.02, 0.001] {
        for v in 0..5 {
            let fit = fit_node(&cohort, v, &tight(lambda1, HUGE)).unwrap();
            let (design, y) = split(&cohort.stacked(), v);
            let lasso = solve_lasso(
                &LassoProblem::uniform(design, y, n * lambda1),
                &SolverOptions::new(1e-13, 100_000),
                None,
            )
            .unwrap();
            assert!((&fit.beta - &lasso.coefficients).amax() < 1e-6, "lambda1 {lambda1} node {v}");
        }
    }
}

#[test]
fn one_subject_population_matches_neighborhood_selection() {
    let (_, cohort) = simulate(&SimConfig { p: 8, n_subjects: 1, n: 150, e_ran: 0, seed: 5, ..SimConfig::default() })
        .unwrap();
    let lambda1 = 0.05;
    for rule in [Rule::And, Rule::Or] {
        let res = fit_all(&cohort, &MnsConfig { rule, ..tight(lambda1, HUGE) }).unwrap();
        let supports: Vec<_> = (0..8)
            .map(|v| {
                let (design, y) = split(cohort.subject(0), v);
                let sol = solve_lasso(
                    &LassoProblem::uniform(design, y, 150.0 * lambda1),
                    &SolverOptions::new(1e-13, 100_000),
                    None,
                )
                .unwrap();
                (0..7)
                    .filter(|&k| sol.coefficients[k] != 0.0)
                    .map(|k| if k < v { k } else { k + 1 })
                    .collect()
            })
            .collect();
        assert_eq!(res.population.edges, combine_neighborhoods(&supports, 8, rule).unwrap());
        assert!(res.variance.edges.is_empty());
    }
}

#[test]
fn strong_penalties_on_independent_data_give_empty_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cohort = CohortData::from_matrices((0..4).map(|_| gaussian(&mut rng, 60, 6)).collect()).unwrap();
    let top = mns_lambda_max(&cohort, 0.25);
    let res = fit_all(&cohort, &MnsConfig::with_penalties(top, top)).unwrap();
    assert!(res.population.edges.is_empty());
    assert!(res.variance.edges.is_empty());
    assert!(res.subject_specific.iter().all(|n| n.edges.is_empty()));
}

#[test]
fn relabeling_nodes_relabels_every_network() {
    let (_, cohort) = simulate(&SimConfig { p: 9, n_subjects: 3, n: 80, e_ran: 3, seed: 8, ..SimConfig::default() })
        .unwrap();
    let perm = [4, 0, 7, 1, 8, 2, 6, 3, 5];
    let permuted = cohort.permute_nodes(&perm).unwrap();
    // Coordinate order changes with the labels; solve tightly so both fits sit at the optimum.
    let cfg = tight(0.02, 0.02);
    let a = fit_all(&cohort, &cfg).unwrap();
    let b = fit_all(&permuted, &cfg).unwrap();
    let moved = |e: &EdgeSet| e.permuted(&perm);
    assert_eq!(moved(&a.population.edges), b.population.edges);
    assert_eq!(moved(&a.variance.edges), b.variance.edges);
    for (x, y) in a.subject_full.iter().zip(&b.subject_full) {
        assert_eq!(moved(&x.edges), y.edges);
    }
    for v in 0..9 {
        let (fa, fb) = (&a.node_fits[v], &b.node_fits[perm[v]]);
        assert!((fa.sigma2 - fb.sigma2).abs() < 1e-6 * fa.sigma2.max(1.0), "node {v}: {} vs {}", fa.sigma2, fb.sigma2);
    }
}

#[test]
fn subject_variable_edges_lie_in_the_variance_network() {
    let (_, cohort) = simulate(&SimConfig { p: 12, n_subjects: 4, n: 100, e_ran: 5, seed: 9, ..SimConfig::default() })
        .unwrap();
    for rule in [Rule::And, Rule::Or] {
        let res = fit_all(&cohort, &MnsConfig { rule, ..MnsConfig::with_penalties(0.01, 0.01) }).unwrap();
        for s in &res.subject_specific {
            assert!(s.edges.is_subset(&res.variance.edges));
        }
        for (full, s) in res.subject_full.iter().zip(&res.subject_specific) {
            assert_eq!(full.edges, res.population.edges.union(&s.edges).unwrap());
        }
    }
}

#[test]
fn cv_selected_variance_network_recovers_variable_edges() {
    let (truth, cohort) =
        simulate(&SimConfig { p: 20, n_subjects: 8, n: 200, e_ran: 8, tau: 1.0, seed: 0, ..SimConfig::default() })
            .unwrap();
    let grid = default_grid(&cohort, 0.25).unwrap();
    let report = cross_validate(&cohort, &grid, 5, &MnsConfig::default()).unwrap();
    let (l1, l2) = report.best.to_penalties();
    let res = fit_all(&cohort, &MnsConfig::with_penalties(l1, l2)).unwrap();
    let r = tpr_fpr(&res.variance.edges, &truth.e_tilde).unwrap();
    assert!(r.tpr >= 0.6 && r.fpr <= 0.1, "TPR {} FPR {}", r.tpr, r.fpr);
}
