//! Randomized gradient verification for the loss functions.
//!
//! Two suites: central finite differences on the logits and on the
//! pre-sigmoid confidence, and agreement of the chain-rule logit gradients
//! with the one-hot closed forms.

use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::{
    cace, cal, cal_grad_logits_onehot, car, car_grad_logits_onehot, ce, one_hot, penalty, rcace, LossGrad, LossParams,
    DEFAULT_EPS, DEFAULT_LOG_ZERO,
};
use crate::numerics::{sigmoid, softmax, SeededRng};

pub const DEFAULT_CASES: usize = 1000;
pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const CLOSED_FORM_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_CLASSES: [usize; 4] = [2, 3, 5, 10];
/// Denominator floor of the relative error, so that vanishing components
/// are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckedLoss {
    Ce,
    Cace,
    Penalty,
    Rcace,
    Cal,
    Car,
}

impl CheckedLoss {
    pub const ALL: [CheckedLoss; 6] = [
        CheckedLoss::Ce,
        CheckedLoss::Cace,
        CheckedLoss::Penalty,
        CheckedLoss::Rcace,
        CheckedLoss::Cal,
        CheckedLoss::Car,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckedLoss::Ce => "ce",
            CheckedLoss::Cace => "cace",
            CheckedLoss::Penalty => "penalty",
            CheckedLoss::Rcace => "rcace",
            CheckedLoss::Cal => "cal",
            CheckedLoss::Car => "car",
        }
    }

    pub fn evaluate(self, p: &[f64], tau: f64, t: &[f64], params: &LossParams) -> Result<LossGrad> {
        match self {
            CheckedLoss::Ce => ce(p, t, params.eps),
            CheckedLoss::Cace => cace(p, tau, t, params),
            CheckedLoss::Penalty => penalty(tau, p.len()),
            CheckedLoss::Rcace => rcace(p, tau, t, params),
            CheckedLoss::Cal => cal(p, tau, t, params),
            CheckedLoss::Car => car(p, tau, t, params),
        }
    }
}

impl FromStr for CheckedLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CheckedLoss::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown loss '{s}'")))
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub cases: usize,
    pub step: f64,
    pub tolerance: f64,
    pub classes: Vec<usize>,
    pub losses: Vec<CheckedLoss>,
    pub params: LossParams,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            cases: DEFAULT_CASES,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            classes: DEFAULT_CLASSES.to_vec(),
            losses: CheckedLoss::ALL.to_vec(),
            params: LossParams {
                lambda: 0.5,
                beta: 1.0,
                log_zero: DEFAULT_LOG_ZERO,
                eps: DEFAULT_EPS,
            },
            seed: 0,
        }
    }
}

/// One random evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub logits: Vec<f64>,
    /// Pre-sigmoid confidence.
    pub h: f64,
    pub target: Vec<f64>,
}

fn random_case(rng: &mut SeededRng, classes: &[usize]) -> Case {
    let k = classes[rng.below(classes.len())];
    let logits = (0..k).map(|_| rng.uniform_range(-4.0, 4.0)).collect();
    let h = rng.uniform_range(-4.0, 4.0);
    let target = if rng.uniform() < 0.5 {
        one_hot(rng.below(k), k)
    } else {
        let raw: Vec<f64> = (0..k).map(|_| 0.05 + rng.uniform()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    };
    Case { logits, h, target }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteDifferenceResult {
    pub loss: CheckedLoss,
    pub cases: usize,
    pub max_rel_err_logits: f64,
    pub max_rel_err_h: f64,
    /// Largest `|dL/dτ|` seen; identically 0 for losses that ignore confidence.
    pub max_abs_d_tau: f64,
    pub passed: bool,
}

fn value_at(loss: CheckedLoss, logits: &[f64], h: f64, t: &[f64], params: &LossParams) -> Result<f64> {
    Ok(loss.evaluate(&softmax(logits), sigmoid(h), t, params)?.value)
}

pub fn finite_difference_suite(loss: CheckedLoss, opts: &GradcheckOptions) -> Result<FiniteDifferenceResult> {
    validate(opts)?;
    let mut rng = SeededRng::stream(opts.seed, 11);
    let s = opts.step;
    let (mut max_z, mut max_h, mut max_tau) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..opts.cases {
        let c = random_case(&mut rng, &opts.classes);
        let tau = sigmoid(c.h);
        let g = loss.evaluate(&softmax(&c.logits), tau, &c.target, &opts.params)?;
        let mut z = c.logits.clone();
        for j in 0..z.len() {
            let orig = z[j];
            z[j] = orig + s;
            let up = value_at(loss, &z, c.h, &c.target, &opts.params)?;
            z[j] = orig - s;
            let down = value_at(loss, &z, c.h, &c.target, &opts.params)?;
            z[j] = orig;
            max_z = max_z.max(rel_err((up - down) / (2.0 * s), g.d_logits[j]));
        }
        let up = value_at(loss, &c.logits, c.h + s, &c.target, &opts.params)?;
        let down = value_at(loss, &c.logits, c.h - s, &c.target, &opts.params)?;
        max_h = max_h.max(rel_err((up - down) / (2.0 * s), g.d_tau * tau * (1.0 - tau)));
        max_tau = max_tau.max(g.d_tau.abs());
    }
    Ok(FiniteDifferenceResult {
        loss,
        cases: opts.cases,
        max_rel_err_logits: max_z,
        max_rel_err_h: max_h,
        max_abs_d_tau: max_tau,
        passed: max_z <= opts.tolerance && max_h <= opts.tolerance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedFormResult {
    /// `cal`, or `car` with the reverse weight fixed at 1.
    pub loss: &'static str,
    pub cases: usize,
    pub max_abs_err: f64,
    /// Entries with the wrong sign: positive at the label or negative elsewhere.
    pub sign_violations: usize,
    pub passed: bool,
}

fn sign_violations(g: &[f64], y: usize) -> usize {
    g.iter()
        .enumerate()
        .filter(|&(j, &v)| if j == y { v > 0.0 } else { v < 0.0 })
        .count()
}

/// Compares chain-rule logit gradients on one-hot targets with the closed forms.
pub fn closed_form_suite(opts: &GradcheckOptions) -> Result<Vec<ClosedFormResult>> {
    validate(opts)?;
    let a = opts.params.log_zero;
    let cal_params = LossParams {
        beta: 0.0,
        ..opts.params
    };
    let car_params = LossParams {
        beta: 1.0,
        ..opts.params
    };
    let mut rng = SeededRng::stream(opts.seed, 12);
    let mut out = [("cal", 0.0f64, 0usize), ("car", 0.0f64, 0usize)];
    for _ in 0..opts.cases {
        let c = random_case(&mut rng, &opts.classes);
        let p = softmax(&c.logits);
        let tau = sigmoid(c.h);
        let y = rng.below(p.len());
        let t = one_hot(y, p.len());
        let chains = [
            (
                cal(&p, tau, &t, &cal_params)?.d_logits,
                cal_grad_logits_onehot(&p, tau, y),
            ),
            (
                car(&p, tau, &t, &car_params)?.d_logits,
                car_grad_logits_onehot(&p, tau, y, a),
            ),
        ];
        for (slot, (chain, closed)) in out.iter_mut().zip(chains) {
            for (u, v) in chain.iter().zip(&closed) {
                slot.1 = slot.1.max((u - v).abs());
            }
            slot.2 += sign_violations(&chain, y) + sign_violations(&closed, y);
        }
    }
    Ok(out
        .into_iter()
        .map(|(loss, err, signs)| ClosedFormResult {
            loss,
            cases: opts.cases,
            max_abs_err: err,
            sign_violations: signs,
            passed: err <= CLOSED_FORM_TOLERANCE && signs == 0,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub cases: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub finite_difference: Vec<FiniteDifferenceResult>,
    pub closed_form: Vec<ClosedFormResult>,
    pub passed: bool,
}

fn validate(opts: &GradcheckOptions) -> Result<()> {
    if opts.classes.is_empty() || opts.classes.iter().any(|&k| k < 2) {
        return Err(Error::invalid("class counts must all be at least 2"));
    }
    if !(opts.step > 0.0 && opts.tolerance > 0.0) {
        return Err(Error::invalid("step and tolerance must be positive"));
    }
    opts.params.validate()
}

pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let finite_difference = opts
        .losses
        .iter()
        .map(|&l| finite_difference_suite(l, opts))
        .collect::<Result<Vec<_>>>()?;
    let closed_form = closed_form_suite(opts)?;
    let passed = finite_difference.iter().all(|r| r.passed) && closed_form.iter().all(|r| r.passed);
    Ok(GradcheckReport {
        cases: opts.cases,
        step: opts.step,
        tolerance: opts.tolerance,
        seed: opts.seed,
        finite_difference,
        closed_form,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes() {
        let opts = GradcheckOptions {
            cases: 200,
            ..GradcheckOptions::default()
        };
        let report = run(&opts).unwrap();
        for r in &report.finite_difference {
            assert!(r.passed, "{r:?}");
        }
        for r in &report.closed_form {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn ce_has_no_confidence_gradient() {
        let opts = GradcheckOptions {
            cases: 50,
            ..GradcheckOptions::default()
        };
        let r = finite_difference_suite(CheckedLoss::Ce, &opts).unwrap();
        assert_eq!(r.max_abs_d_tau, 0.0);
        assert_eq!(r.max_rel_err_h, 0.0);
    }

    #[test]
    fn loss_names_roundtrip() {
        for l in CheckedLoss::ALL {
            assert_eq!(l.name().parse::<CheckedLoss>().unwrap(), l);
        }
        assert!("mse".parse::<CheckedLoss>().is_err());
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let g = [0.1, -0.2];
        assert_eq!(sign_violations(&g, 0), 2);
        assert_eq!(sign_violations(&g, 1), 0);
        assert!(rel_err(1.0, 1.001) > DEFAULT_TOLERANCE);
    }
}
