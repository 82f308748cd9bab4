//! Exhaustive checks of the reverse-loss robustness results on small,
//! fully enumerable distributions.
//!
//! A hypothesis assigns every input a pair `(p, τ)` drawn from a finite grid.
//! The reverse loss of a one-hot label `j` is `−Aτ(1 − p_j)`, so every risk
//! decomposes over inputs and is minimized input by input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{one_hot, rcace, LossParams, DEFAULT_EPS};
use crate::numerics::SeededRng;

pub const MAX_INPUTS: usize = 6;
pub const MAX_CLASSES: usize = 4;
/// Default simplex grid step.
pub const DEFAULT_RESOLUTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Each label flips to every other class with probability `eta / (K-1)`.
    Symmetric { eta: f64 },
    /// Row-stochastic `K x K` matrix; entry `(i, j)` is `P(noisy = j | clean = i)`.
    Transition { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDistribution {
    pub k: usize,
    /// Marginal probability of each input.
    pub input_probs: Vec<f64>,
    /// Deterministic clean label of each input.
    pub labels: Vec<usize>,
    pub noise: NoiseModel,
}

const SUM_TOL: f64 = 1e-9;

impl ToyDistribution {
    pub fn new(k: usize, input_probs: Vec<f64>, labels: Vec<usize>, noise: NoiseModel) -> Result<Self> {
        let dist = Self {
            k,
            input_probs,
            labels,
            noise,
        };
        dist.validate()?;
        Ok(dist)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.input_probs.len();
        if !(2..=MAX_CLASSES).contains(&self.k) {
            return Err(Error::invalid(format!(
                "K must lie in 2..={MAX_CLASSES}, got {}",
                self.k
            )));
        }
        if !(1..=MAX_INPUTS).contains(&n) {
            return Err(Error::invalid(format!(
                "input count must lie in 1..={MAX_INPUTS}, got {n}"
            )));
        }
        if self.labels.len() != n {
            return Err(Error::shape("ToyDistribution labels", n, self.labels.len()));
        }
        if self.labels.iter().any(|&y| y >= self.k) {
            return Err(Error::invalid("clean label out of range"));
        }
        if self.input_probs.iter().any(|&p| !(p >= 0.0 && p.is_finite()))
            || (self.input_probs.iter().sum::<f64>() - 1.0).abs() > SUM_TOL
        {
            return Err(Error::invalid("input probabilities must be non-negative and sum to 1"));
        }
        match &self.noise {
            NoiseModel::Symmetric { eta } => {
                let limit = (self.k - 1) as f64 / self.k as f64;
                if !(*eta >= 0.0 && *eta < limit) {
                    return Err(Error::invalid(format!(
                        "symmetric noise rate must satisfy 0 <= eta < (K-1)/K = {limit}, got {eta}"
                    )));
                }
            }
            NoiseModel::Transition { matrix } => {
                if matrix.len() != self.k || matrix.iter().any(|r| r.len() != self.k) {
                    return Err(Error::shape("transition matrix", self.k, matrix.len()));
                }
                for row in matrix {
                    if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (row.iter().sum::<f64>() - 1.0).abs() > SUM_TOL {
                        return Err(Error::invalid("transition rows must be probability vectors"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn num_inputs(&self) -> usize {
        self.input_probs.len()
    }

    /// `P(noisy = j | clean = i)` for all `i, j`.
    pub fn transition(&self) -> Vec<Vec<f64>> {
        match &self.noise {
            NoiseModel::Symmetric { eta } => {
                let off = eta / (self.k - 1) as f64;
                (0..self.k)
                    .map(|i| (0..self.k).map(|j| if i == j { 1.0 - eta } else { off }).collect())
                    .collect()
            }
            NoiseModel::Transition { matrix } => matrix.clone(),
        }
    }

    /// Total flip probability `η_i` of each clean class.
    pub fn flip_rates(&self) -> Vec<f64> {
        self.transition()
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum())
            .collect()
    }

    /// Every off-diagonal entry must stay below its row's keep probability.
    pub fn check_class_conditional(&self) -> Result<()> {
        let t = self.transition();
        let eta = self.flip_rates();
        for i in 0..self.k {
            for j in 0..self.k {
                if i != j && t[i][j] >= 1.0 - eta[i] {
                    return Err(Error::invalid(format!(
                        "need eta_ij < 1 - eta_i, but eta_{i}{j} = {} and 1 - eta_{i} = {}",
                        t[i][j],
                        1.0 - eta[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-input candidate outputs: simplex points with coordinates on a
/// `1/divisions` lattice, crossed with a list of confidence values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisGrid {
    pub divisions: usize,
    pub taus: Vec<f64>,
}

impl Default for HypothesisGrid {
    fn default() -> Self {
        Self::with_resolution(DEFAULT_RESOLUTION).expect("default resolution is valid")
    }
}

impl HypothesisGrid {
    /// Simplex step `resolution` (must divide 1) and `τ ∈ {0.05, 0.10, …, 0.95}`.
    pub fn with_resolution(resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution <= 1.0) {
            return Err(Error::invalid(format!(
                "resolution must lie in (0, 1], got {resolution}"
            )));
        }
        let divisions = (1.0 / resolution).round();
        if (divisions * resolution - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("resolution {resolution} does not divide 1")));
        }
        Ok(Self {
            divisions: divisions as usize,
            taus: (1..20).map(|i| i as f64 / 20.0).collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.divisions == 0 || self.taus.is_empty() {
            return Err(Error::invalid("hypothesis grid is empty"));
        }
        if self.taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::invalid("grid confidences must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Simplex points in lexicographic order of their lattice coordinates.
    pub fn simplex_points(&self, k: usize) -> Vec<Vec<f64>> {
        fn rec(left: usize, slots: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if slots == 1 {
                prefix.push(left);
                out.push(prefix.clone());
                prefix.pop();
                return;
            }
            for c in 0..=left {
                prefix.push(c);
                rec(left - c, slots - 1, prefix, out);
                prefix.pop();
            }
        }
        let mut counts = Vec::new();
        rec(self.divisions, k, &mut Vec::with_capacity(k), &mut counts);
        let m = self.divisions as f64;
        counts
            .into_iter()
            .map(|c| c.into_iter().map(|v| v as f64 / m).collect())
            .collect()
    }

    pub fn size(&self, k: usize) -> usize {
        self.simplex_points(k).len() * self.taus.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub p: Vec<f64>,
    pub tau: f64,
}

/// Reverse-loss theorem bound `−Aη(K−1) / (K(1−η) − 1)`.
pub fn theorem1_bound(eta: f64, k: usize, log_zero: f64) -> Result<f64> {
    if k < 2 {
        return Err(Error::invalid("K must be at least 2"));
    }
    if log_zero >= 0.0 {
        return Err(Error::invalid(format!("A must be negative, got {log_zero}")));
    }
    let kf = k as f64;
    if !(eta >= 0.0 && eta < (kf - 1.0) / kf) {
        return Err(Error::invalid(format!(
            "noise rate must satisfy 0 <= eta < (K-1)/K = {}, got {eta}",
            (kf - 1.0) / kf
        )));
    }
    Ok(-log_zero * eta * (kf - 1.0) / (kf * (1.0 - eta) - 1.0))
}

/// Expected reverse loss at one input whose label distribution is `label_probs`.
fn pointwise_risk(h: &Hypothesis, label_probs: &[f64], log_zero: f64) -> f64 {
    label_probs
        .iter()
        .zip(&h.p)
        .map(|(&q, &p)| q * (-log_zero * h.tau * (1.0 - p)))
        .sum()
}

fn label_distribution(dist: &ToyDistribution, transition: &[Vec<f64>], x: usize, noisy: bool) -> Vec<f64> {
    if noisy {
        transition[dist.labels[x]].clone()
    } else {
        one_hot(dist.labels[x], dist.k)
    }
}

/// Risk of a full hypothesis under the clean or the noisy label distribution.
pub fn risk(dist: &ToyDistribution, hyp: &[Hypothesis], noisy: bool, log_zero: f64) -> Result<f64> {
    if hyp.len() != dist.num_inputs() {
        return Err(Error::shape("risk", dist.num_inputs(), hyp.len()));
    }
    let transition = dist.transition();
    Ok((0..dist.num_inputs())
        .map(|x| {
            dist.input_probs[x] * pointwise_risk(&hyp[x], &label_distribution(dist, &transition, x, noisy), log_zero)
        })
        .sum())
}

/// Exact grid minimizer; ties go to the earliest hypothesis in grid order.
pub fn minimize_risk(
    dist: &ToyDistribution,
    grid: &HypothesisGrid,
    noisy: bool,
    log_zero: f64,
) -> Result<(Vec<Hypothesis>, f64)> {
    dist.validate()?;
    grid.validate()?;
    let transition = dist.transition();
    let points = grid.simplex_points(dist.k);
    let mut best = Vec::with_capacity(dist.num_inputs());
    for x in 0..dist.num_inputs() {
        let labels = label_distribution(dist, &transition, x, noisy);
        let mut choice: Option<(f64, Hypothesis)> = None;
        for p in &points {
            for &tau in &grid.taus {
                let h = Hypothesis { p: p.clone(), tau };
                let r = pointwise_risk(&h, &labels, log_zero);
                if choice.as_ref().is_none_or(|(best_r, _)| r < *best_r) {
                    choice = Some((r, h));
                }
            }
        }
        best.push(choice.expect("grid is nonempty").1);
    }
    let value = risk(dist, &best, noisy, log_zero)?;
    Ok((best, value))
}

/// Measured risks of the clean minimizer `f*` and the noisy minimizer `f*_η`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskPair {
    pub clean_star: Vec<Hypothesis>,
    pub noisy_star: Vec<Hypothesis>,
    /// `R(f*)`
    pub clean_of_clean_star: f64,
    /// `R(f*_η)`
    pub clean_of_noisy_star: f64,
    /// `R^η(f*)`
    pub noisy_of_clean_star: f64,
    /// `R^η(f*_η)`
    pub noisy_of_noisy_star: f64,
}

fn risk_pair(dist: &ToyDistribution, grid: &HypothesisGrid, log_zero: f64) -> Result<RiskPair> {
    let (clean_star, clean_of_clean_star) = minimize_risk(dist, grid, false, log_zero)?;
    let (noisy_star, noisy_of_noisy_star) = minimize_risk(dist, grid, true, log_zero)?;
    Ok(RiskPair {
        clean_of_noisy_star: risk(dist, &noisy_star, false, log_zero)?,
        noisy_of_clean_star: risk(dist, &clean_star, true, log_zero)?,
        clean_star,
        noisy_star,
        clean_of_clean_star,
        noisy_of_noisy_star,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem1Report {
    pub distribution: ToyDistribution,
    pub log_zero: f64,
    pub bound: f64,
    /// `R(f*_η) − R(f*)`
    pub clean_gap: f64,
    /// `R^η(f*_η) − R^η(f*)`
    pub noisy_gap: f64,
    pub risks: RiskPair,
    pub passed: bool,
    pub violation: Option<String>,
}

/// Checks `0 ≤ R(f*_η) − R(f*) < bound` and `Aη < R^η(f*_η) − R^η(f*) ≤ 0`.
/// At `η = 0` both strict inequalities degenerate, so both gaps must be 0.
pub fn verify_theorem1(dist: &ToyDistribution, grid: &HypothesisGrid, log_zero: f64) -> Result<Theorem1Report> {
    dist.validate()?;
    let NoiseModel::Symmetric { eta } = dist.noise else {
        return Err(Error::invalid("theorem 1 needs symmetric noise"));
    };
    let bound = theorem1_bound(eta, dist.k, log_zero)?;
    let risks = risk_pair(dist, grid, log_zero)?;
    let clean_gap = risks.clean_of_noisy_star - risks.clean_of_clean_star;
    let noisy_gap = risks.noisy_of_noisy_star - risks.noisy_of_clean_star;
    let violation = if eta == 0.0 {
        (clean_gap != 0.0 || noisy_gap != 0.0)
            .then(|| format!("noise-free gaps must vanish, got {clean_gap} and {noisy_gap}"))
    } else if !(0.0 <= clean_gap && clean_gap < bound) {
        Some(format!("clean gap {clean_gap} outside [0, {bound})"))
    } else if !(log_zero * eta < noisy_gap && noisy_gap <= 0.0) {
        Some(format!("noisy gap {noisy_gap} outside ({}, 0]", log_zero * eta))
    } else {
        None
    };
    Ok(Theorem1Report {
        distribution: dist.clone(),
        log_zero,
        bound,
        clean_gap,
        noisy_gap,
        risks,
        passed: violation.is_none(),
        violation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem2Report {
    pub distribution: ToyDistribution,
    pub log_zero: f64,
    /// `A(1−K)·E[1 − η_y]`
    pub bound: f64,
    /// `R^η(f*) − R^η(f*_η)`
    pub gap: f64,
    pub risks: RiskPair,
    pub passed: bool,
    pub violation: Option<String>,
}

/// Checks `0 ≤ R^η(f*) − R^η(f*_η) < A(1−K)·E[1 − η_y]` for class-conditional noise.
pub fn verify_theorem2(dist: &ToyDistribution, grid: &HypothesisGrid, log_zero: f64) -> Result<Theorem2Report> {
    dist.validate()?;
    dist.check_class_conditional()?;
    if log_zero >= 0.0 {
        return Err(Error::invalid(format!("A must be negative, got {log_zero}")));
    }
    // The clean vertex must be on the grid for R(f*) = 0 to be attainable.
    let risks = risk_pair(dist, grid, log_zero)?;
    if risks.clean_of_clean_star != 0.0 {
        return Err(Error::invalid(format!(
            "clean risk minimum {} is not 0; the grid cannot realize the clean labels",
            risks.clean_of_clean_star
        )));
    }
    let eta = dist.flip_rates();
    let keep: f64 = (0..dist.num_inputs())
        .map(|x| dist.input_probs[x] * (1.0 - eta[dist.labels[x]]))
        .sum();
    let bound = log_zero * (1.0 - dist.k as f64) * keep;
    let gap = risks.noisy_of_clean_star - risks.noisy_of_noisy_star;
    let violation = (!(0.0 <= gap && gap < bound)).then(|| format!("gap {gap} outside [0, {bound})"));
    Ok(Theorem2Report {
        distribution: dist.clone(),
        log_zero,
        bound,
        gap,
        risks,
        passed: violation.is_none(),
        violation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma2Report {
    pub k: usize,
    pub tau: f64,
    pub log_zero: f64,
    /// Sum of the reverse loss over all one-hot labels, as evaluated by the loss code.
    pub sum: f64,
    /// `Aτ(1−K)`
    pub expected: f64,
    pub abs_error: f64,
    pub in_range: bool,
    pub passed: bool,
}

pub const LEMMA2_TOL: f64 = 1e-12;

/// Sums the reverse loss over every one-hot label and compares with `Aτ(1−K)`.
pub fn lemma2_check(p: &[f64], tau: f64, log_zero: f64) -> Result<Lemma2Report> {
    let k = p.len();
    let params = LossParams {
        lambda: 0.0,
        beta: 1.0,
        log_zero,
        eps: DEFAULT_EPS,
    };
    params.validate()?;
    let sum = (0..k)
        .map(|j| rcace(p, tau, &one_hot(j, k), &params).map(|g| g.value))
        .sum::<Result<f64>>()?;
    let expected = log_zero * tau * (1.0 - k as f64);
    let abs_error = (sum - expected).abs();
    let in_range = sum > 0.0 && sum < log_zero * (1.0 - k as f64);
    Ok(Lemma2Report {
        k,
        tau,
        log_zero,
        sum,
        expected,
        abs_error,
        in_range,
        passed: abs_error <= LEMMA2_TOL && in_range,
    })
}

fn random_simplex(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.uniform()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn random_shape(rng: &mut SeededRng) -> (usize, Vec<f64>, usize) {
    let k = 2 + rng.below(MAX_CLASSES - 1);
    let n = 1 + rng.below(MAX_INPUTS);
    (k, random_simplex(rng, n), n)
}

/// Random symmetric-noise distribution with `η` drawn below `(K−1)/K`.
pub fn random_symmetric(seed: u64) -> ToyDistribution {
    let mut rng = SeededRng::new(seed);
    let (k, probs, n) = random_shape(&mut rng);
    let labels = (0..n).map(|_| rng.below(k)).collect();
    let limit = (k - 1) as f64 / k as f64;
    let eta = rng.uniform() * limit * 0.999;
    ToyDistribution::new(k, probs, labels, NoiseModel::Symmetric { eta }).expect("generated distribution is valid")
}

/// Random class-conditional distribution whose diagonal strictly dominates every row.
pub fn random_class_conditional(seed: u64) -> ToyDistribution {
    let mut rng = SeededRng::new(seed);
    let (k, probs, n) = random_shape(&mut rng);
    let labels = (0..n).map(|_| rng.below(k)).collect();
    let matrix = (0..k)
        .map(|i| {
            let mut row: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
            let top = row.iter().copied().fold(0.0, f64::max);
            row[i] = top + 0.05 + rng.uniform();
            let s: f64 = row.iter().sum();
            row.into_iter().map(|v| v / s).collect()
        })
        .collect();
    ToyDistribution::new(k, probs, labels, NoiseModel::Transition { matrix }).expect("generated distribution is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub log_zero: f64,
    pub resolution: f64,
    pub fixed_theorem1: Vec<Theorem1Report>,
    pub fixed_theorem2: Vec<Theorem2Report>,
    pub lemma2: Vec<Lemma2Report>,
    pub random_theorem1_checked: usize,
    pub random_theorem2_checked: usize,
    pub theorem1_violations: Vec<Theorem1Report>,
    pub theorem2_violations: Vec<Theorem2Report>,
    pub lemma2_violations: usize,
    pub passed: bool,
}

/// Settings for the combined verification run.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    pub seeds: usize,
    pub log_zero: f64,
    pub resolution: f64,
    /// Extra symmetric check at this rate and class count.
    pub eta: Option<f64>,
    pub classes: Option<usize>,
    pub base_seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seeds: 100,
            log_zero: crate::losses::DEFAULT_LOG_ZERO,
            resolution: DEFAULT_RESOLUTION,
            eta: None,
            classes: None,
            base_seed: 0,
        }
    }
}

fn circular(k: usize, eta: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            let mut row = vec![0.0; k];
            row[i] = 1.0 - eta;
            row[(i + 1) % k] += eta;
            row
        })
        .collect()
}

/// Fixed examples plus `seeds` random distributions per theorem.
pub fn run_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    let grid = HypothesisGrid::with_resolution(opts.resolution)?;
    let a = opts.log_zero;
    let uniform3 = vec![1.0 / 3.0; 3];

    let mut fixed_theorem1 = vec![
        verify_theorem1(
            &ToyDistribution::new(3, uniform3.clone(), vec![0, 1, 2], NoiseModel::Symmetric { eta: 0.4 })?,
            &grid,
            a,
        )?,
        verify_theorem1(
            &ToyDistribution::new(3, uniform3.clone(), vec![0, 1, 2], NoiseModel::Symmetric { eta: 0.0 })?,
            &grid,
            a,
        )?,
    ];
    if opts.eta.is_some() || opts.classes.is_some() {
        let k = opts.classes.unwrap_or(3);
        let eta = opts.eta.unwrap_or(0.4);
        theorem1_bound(eta, k, a)?;
        let labels = (0..k.min(MAX_INPUTS)).collect::<Vec<_>>();
        let probs = vec![1.0 / labels.len() as f64; labels.len()];
        let dist = ToyDistribution::new(k, probs, labels, NoiseModel::Symmetric { eta })?;
        fixed_theorem1.push(verify_theorem1(&dist, &grid, a)?);
    }
    let fixed_theorem2 = vec![
        verify_theorem2(
            &ToyDistribution::new(
                3,
                uniform3.clone(),
                vec![0, 1, 2],
                NoiseModel::Transition {
                    matrix: circular(3, 0.3),
                },
            )?,
            &grid,
            a,
        )?,
        verify_theorem2(
            &ToyDistribution::new(
                3,
                uniform3,
                vec![0, 1, 2],
                NoiseModel::Transition {
                    matrix: circular(3, 0.0),
                },
            )?,
            &grid,
            a,
        )?,
    ];

    let mut rng = SeededRng::stream(opts.base_seed, 7);
    let mut lemma2 = vec![lemma2_check(&[0.2, 0.3, 0.5], 0.5, a)?];
    for _ in 0..opts.seeds {
        let k = 2 + rng.below(9);
        let p = random_simplex(&mut rng, k);
        let tau = 0.01 + 0.98 * rng.uniform();
        lemma2.push(lemma2_check(&p, tau, a)?);
    }

    let mut theorem1_violations: Vec<Theorem1Report> = fixed_theorem1.iter().filter(|r| !r.passed).cloned().collect();
    let mut theorem2_violations: Vec<Theorem2Report> = fixed_theorem2.iter().filter(|r| !r.passed).cloned().collect();
    for s in 0..opts.seeds as u64 {
        let r = verify_theorem1(&random_symmetric(opts.base_seed.wrapping_add(s)), &grid, a)?;
        if !r.passed {
            theorem1_violations.push(r);
        }
        let r = verify_theorem2(&random_class_conditional(opts.base_seed.wrapping_add(s)), &grid, a)?;
        if !r.passed {
            theorem2_violations.push(r);
        }
    }
    let lemma2_violations = lemma2.iter().filter(|r| !r.passed).count();
    let passed = theorem1_violations.is_empty() && theorem2_violations.is_empty() && lemma2_violations == 0;
    Ok(SuiteReport {
        log_zero: a,
        resolution: opts.resolution,
        fixed_theorem1,
        fixed_theorem2,
        lemma2,
        random_theorem1_checked: opts.seeds,
        random_theorem2_checked: opts.seeds,
        theorem1_violations,
        theorem2_violations,
        lemma2_violations,
        passed,
    })
}
