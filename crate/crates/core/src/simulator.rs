//! Synthetic cohorts with a shared scale-free population network, a set of
//! variable edges whose weights change from subject to subject, and Gaussian
//! data drawn from each subject's precision matrix.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::CohortData;
use crate::error::{Error, Result};
use crate::graph::{EdgeSet, PrecisionMatrix, WeightedNetwork};
use crate::rng::{stream, Purpose};

/// Initial divisor applied to each row's absolute off-diagonal sum.
pub const PD_SAFETY: f64 = 1.1;
const PD_MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub p: usize,
    pub n_subjects: usize,
    /// Observations per subject.
    pub n: usize,
    /// Number of variable edges.
    pub e_ran: usize,
    /// Probability that a variable edge is present in a given subject.
    pub tau: f64,
    /// Edge weights have magnitude in `[r/2, r]`.
    pub r: f64,
    /// Preferential-attachment edges per arriving node.
    pub ba_m: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            p: 50,
            n_subjects: 10,
            n: 200,
            e_ran: 20,
            tau: 1.0,
            r: 1.0,
            ba_m: 1,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::Domain(format!("p must be >= 2, got {}", self.p)));
        }
        if self.e_ran > self.p * (self.p - 1) / 2 {
            return Err(Error::Domain(format!(
                "e_ran={} exceeds the {} possible edges",
                self.e_ran,
                self.p * (self.p - 1) / 2
            )));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Domain(format!("tau must lie in [0,1], got {}", self.tau)));
        }
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::Domain(format!("r must be positive, got {}", self.r)));
        }
        if self.ba_m == 0 || self.ba_m >= self.p {
            return Err(Error::Domain(format!(
                "ba_m must satisfy 1 <= ba_m < p, got {}",
                self.ba_m
            )));
        }
        if self.n_subjects == 0 {
            return Err(Error::Domain("need at least one subject".into()));
        }
        Ok(())
    }
}

/// Ground truth of a simulated cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub e_pop: EdgeSet,
    pub e_tilde: EdgeSet,
    /// Variable edges present in each subject (subset of `e_tilde`).
    pub e_subject: Vec<EdgeSet>,
    pub theta_pop: WeightedNetwork,
    pub theta_subject: Vec<WeightedNetwork>,
    /// `PD(I + Θ_pop + Θ_i)` per subject.
    pub precisions: Vec<PrecisionMatrix>,
}

impl SimTruth {
    pub fn p(&self) -> usize {
        self.e_pop.p()
    }

    pub fn n_subjects(&self) -> usize {
        self.precisions.len()
    }

    /// Full network of subject `i`: population edges plus its variable edges.
    pub fn e_full(&self, i: usize) -> EdgeSet {
        self.e_pop
            .union(&self.e_subject[i])
            .expect("truth networks share p")
    }
}

/// Preferential attachment: a complete seed graph on `m + 1` nodes, then each
/// new node links to `m` distinct existing nodes chosen with probability
/// proportional to degree.
pub fn gen_barabasi_albert<R: Rng + ?Sized>(p: usize, m: usize, rng: &mut R) -> Result<EdgeSet> {
    if m == 0 || m >= p {
        return Err(Error::Domain(format!("need 1 <= m < p, got m={m}, p={p}")));
    }
    let mut edges = EdgeSet::empty(p);
    // Each node appears once per incident edge.
    let mut endpoints: Vec<usize> = Vec::new();
    for u in 0..=m {
        for v in u + 1..=m {
            edges.insert(u, v)?;
            endpoints.push(u);
            endpoints.push(v);
        }
    }
    for new in m + 1..p {
        let mut targets: Vec<usize> = Vec::with_capacity(m);
        while targets.len() < m {
            let t = endpoints[rng.random_range(0..endpoints.len())];
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for t in targets {
            edges.insert(new, t)?;
            endpoints.push(new);
            endpoints.push(t);
        }
    }
    Ok(edges)
}

/// Exactly `e_ran` distinct pairs drawn uniformly.
pub fn gen_erdos_renyi<R: Rng + ?Sized>(p: usize, e_ran: usize, rng: &mut R) -> Result<EdgeSet> {
    let total = p * p.saturating_sub(1) / 2;
    if e_ran > total {
        return Err(Error::Domain(format!(
            "cannot draw {e_ran} edges from {total} pairs"
        )));
    }
    let mut pairs = Vec::with_capacity(total);
    for u in 0..p {
        for v in u + 1..p {
            pairs.push((u, v));
        }
    }
    let mut picked: Vec<usize> = index::sample(rng, total, e_ran).into_vec();
    picked.sort_unstable();
    EdgeSet::from_pairs(p, picked.into_iter().map(|k| pairs[k]))
}

/// One weight per edge, uniform on `[−r, −r/2] ∪ [r/2, r]`.
pub fn sample_edge_weights<R: Rng + ?Sized>(edges: &EdgeSet, r: f64, rng: &mut R) -> Result<WeightedNetwork> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("r must be positive, got {r}")));
    }
    let mut w = WeightedNetwork::zeros(edges.p());
    for (u, v) in edges.iter() {
        let magnitude = rng.random_range(r / 2.0..=r);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        w.set(u, v, sign * magnitude);
    }
    Ok(w)
}

/// Divides each off-diagonal entry by `s` times its row's absolute off-diagonal
/// sum, then averages with the transpose. `s` starts at [`PD_SAFETY`] and
/// grows by 0.1 until the result is positive definite.
pub fn pd_repair(theta: &DMatrix<f64>) -> Result<PrecisionMatrix> {
    let p = theta.nrows();
    if !theta.is_square() {
        return Err(Error::Dimension("pd_repair needs a square matrix".into()));
    }
    if (0..p).any(|i| theta[(i, i)] != 1.0) {
        return Err(Error::Domain("pd_repair expects a unit diagonal".into()));
    }
    let row_sums: Vec<f64> = (0..p)
        .map(|i| (0..p).filter(|&j| j != i).map(|j| theta[(i, j)].abs()).sum())
        .collect();
    let mut safety = PD_SAFETY;
    for _ in 0..PD_MAX_RETRIES {
        let scaled = DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                1.0
            } else if row_sums[i] > 0.0 {
                theta[(i, j)] / (safety * row_sums[i])
            } else {
                theta[(i, j)]
            }
        });
        let sym = (&scaled + scaled.transpose()) * 0.5;
        if sym.clone().cholesky().is_some() {
            return PrecisionMatrix::new(sym);
        }
        safety += 0.1;
    }
    Err(Error::Numeric(format!(
        "no positive definite rescaling found up to safety factor {safety:.1}"
    )))
}

/// `n` rows from `N(0, Θ⁻¹)`: solves `Lᵀx = z` with `LLᵀ = Θ`.
pub fn sample_mvn<R: Rng + ?Sized>(precision: &PrecisionMatrix, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = precision.p();
    let chol = precision
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("precision matrix is not positive definite".into()))?;
    let lt = chol.l().transpose();
    let mut out = DMatrix::zeros(n, p);
    for row in 0..n {
        let z = nalgebra::DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
        let x = lt
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
        out.set_row(row, &x.transpose());
    }
    Ok(out)
}

fn with_unit_diagonal(parts: &[&WeightedNetwork]) -> DMatrix<f64> {
    let p = parts[0].p();
    let mut m = DMatrix::identity(p, p);
    for w in parts {
        m += w.matrix();
    }
    m
}

/// Population network, variable edges and subject precisions.
pub fn gen_cohort(cfg: &SimConfig) -> Result<SimTruth> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, Purpose::Network, 0, 0);
    let e_pop = gen_barabasi_albert(cfg.p, cfg.ba_m, &mut rng)?;
    let theta_pop = sample_edge_weights(&e_pop, cfg.r, &mut rng)?;
    let e_tilde = gen_erdos_renyi(cfg.p, cfg.e_ran, &mut rng)?;

    let mut e_subject = Vec::with_capacity(cfg.n_subjects);
    let mut theta_subject = Vec::with_capacity(cfg.n_subjects);
    let mut precisions = Vec::with_capacity(cfg.n_subjects);
    for i in 0..cfg.n_subjects {
        let mut srng = stream(cfg.seed, Purpose::Subject, i as u64, 0);
        let mut present = EdgeSet::empty(cfg.p);
        for (u, v) in e_tilde.iter() {
            if srng.random_bool(cfg.tau) {
                present.insert(u, v)?;
            }
        }
        let weights = sample_edge_weights(&present, cfg.r, &mut srng)?;
        precisions.push(pd_repair(&with_unit_diagonal(&[&theta_pop, &weights]))?);
        e_subject.push(present);
        theta_subject.push(weights);
    }
    Ok(SimTruth {
        e_pop,
        e_tilde,
        e_subject,
        theta_pop,
        theta_subject,
        precisions,
    })
}

/// Draws `n` observations per subject on independent streams.
pub fn sample_cohort(truth: &SimTruth, n: usize, seed: u64) -> Result<CohortData> {
    let subjects = truth
        .precisions
        .par_iter()
        .enumerate()
        .map(|(i, prec)| sample_mvn(prec, n, &mut stream(seed, Purpose::Sampling, i as u64, 0)))
        .collect::<Result<Vec<_>>>()?;
    CohortData::from_matrices(subjects)
}

/// Ground truth plus data for `cfg`.
pub fn simulate(cfg: &SimConfig) -> Result<(SimTruth, CohortData)> {
    let truth = gen_cohort(cfg)?;
    let data = sample_cohort(&truth, cfg.n, cfg.seed)?;
    Ok((truth, data))
}

pub const COMPONENT_COUNT: usize = 10;
pub const COMPONENT_SUBJECTS: usize = 3;

/// Three subjects over ten disconnected scale-free components: eight shared
/// by all, one present in subjects 1 and 2, one only in subject 1.
pub fn gen_component_cohort(p: usize, ba_m: usize, r: f64, seed: u64) -> Result<SimTruth> {
    if p % COMPONENT_COUNT != 0 || p == 0 {
        return Err(Error::Domain(format!(
            "p={p} is not divisible into {COMPONENT_COUNT} equal components"
        )));
    }
    let size = p / COMPONENT_COUNT;
    let mut rng = stream(seed, Purpose::Network, 1, 0);
    let mut components = Vec::with_capacity(COMPONENT_COUNT);
    for c in 0..COMPONENT_COUNT {
        let local = gen_barabasi_albert(size, ba_m.min(size - 1).max(1), &mut rng)?;
        let offset = c * size;
        let global = EdgeSet::from_pairs(p, local.iter().map(|(u, v)| (u + offset, v + offset)))?;
        let weights = sample_edge_weights(&global, r, &mut rng)?;
        components.push((global, weights));
    }
    let union = |idx: &[usize]| -> Result<(EdgeSet, WeightedNetwork)> {
        let mut e = EdgeSet::empty(p);
        let mut w = WeightedNetwork::zeros(p);
        for &c in idx {
            let (ce, cw) = &components[c];
            e = e.union(ce)?;
            for (u, v) in ce.iter() {
                w.set(u, v, cw.get(u, v));
            }
        }
        Ok((e, w))
    };
    let (e_pop, theta_pop) = union(&[0, 1, 2, 3, 4, 5, 6, 7])?;
    let (e_tilde, _) = union(&[8, 9])?;
    let extras: [&[usize]; COMPONENT_SUBJECTS] = [&[8, 9], &[8], &[]];
    let mut e_subject = Vec::new();
    let mut theta_subject = Vec::new();
    let mut precisions = Vec::new();
    for idx in extras {
        let (e, w) = union(idx)?;
        precisions.push(pd_repair(&with_unit_diagonal(&[&theta_pop, &w]))?);
        e_subject.push(e);
        theta_subject.push(w);
    }
    Ok(SimTruth {
        e_pop,
        e_tilde,
        e_subject,
        theta_pop,
        theta_subject,
        precisions,
    })
}
