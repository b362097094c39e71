//! Classical-style sensitivity sweep: a binary unmeasured confounder u
//! with four parameters (prevalence, a treatment odds multiplier, and one
//! outcome odds multiplier per arm), swept over a grid to produce min/max
//! policy-value envelopes.
//!
//! The structural model: u ~ Bernoulli(p) independent of x; treatment and
//! outcome logits shift by log(gamma) and log(delta_t) when u = 1.
//! Per-unit intercepts are calibrated by root-finding so the
//! u-marginalized treatment probability reproduces e-hat(x) and the
//! u-marginalized arm-t outcome probability reproduces mu_t-hat(x) under
//! Pr(u | x, T = t). Counterfactuals are imputed under the Bayes posterior
//! Pr(u | x, t, y).

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::NuisanceEstimates;
use crate::mathutil::{logistic, logit};
use crate::policy::Policy;

/// Four sweep parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RRParams {
    /// prevalence Pr(u = 1)
    pub p: f64,
    /// treatment odds multiplier, >= 1
    pub gamma: f64,
    /// outcome odds multiplier in the untreated arm, >= 1
    pub delta0: f64,
    /// outcome odds multiplier in the treated arm, >= 1
    pub delta1: f64,
}

impl RRParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Domain(format!("prevalence must be in (0,1), got {}", self.p)));
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("delta0", self.delta0),
            ("delta1", self.delta1),
        ] {
            if v < 1.0 {
                return Err(Error::Domain(format!("{name} must be >= 1, got {v}")));
            }
        }
        Ok(())
    }
}

/// Finite sorted parameter grids defining one sweep regime.
#[derive(Debug, Clone)]
pub struct RRGrid {
    pub p_values: Vec<f64>,
    pub gamma_values: Vec<f64>,
    pub delta0_values: Vec<f64>,
    pub delta1_values: Vec<f64>,
}

impl RRGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [
            ("p_values", &self.p_values),
            ("gamma_values", &self.gamma_values),
            ("delta0_values", &self.delta0_values),
            ("delta1_values", &self.delta1_values),
        ] {
            if g.is_empty() {
                return Err(Error::Domain(format!("{name} grid is empty")));
            }
        }
        for &p in &self.p_values {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Domain(format!("prevalence {p} outside (0,1)")));
            }
        }
        Ok(())
    }

    /// Default regime: p in 0.1..=0.9 step 0.1, multipliers on 5
    /// log-spaced points from 1 to `odds_cap`.
    pub fn regime(odds_cap: f64) -> Self {
        let p_values: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let mults: Vec<f64> = (0..5)
            .map(|i| (odds_cap.ln() * i as f64 / 4.0).exp())
            .collect();
        Self {
            p_values,
            gamma_values: mults.clone(),
            delta0_values: mults.clone(),
            delta1_values: mults,
        }
    }

    pub fn points(&self) -> Vec<RRParams> {
        let mut out = Vec::new();
        for &p in &self.p_values {
            for &gamma in &self.gamma_values {
                for &delta0 in &self.delta0_values {
                    for &delta1 in &self.delta1_values {
                        out.push(RRParams { p, gamma, delta0, delta1 });
                    }
                }
            }
        }
        out
    }
}

/// Solve (1-q)*sigmoid(a) + q*sigmoid(a + shift) = target for a.
/// The mixture is strictly increasing in a, so bisection always lands;
/// targets at the clamp boundary are flagged by clamping a to the bracket.
fn solve_mixture_intercept(target: f64, q: f64, shift: f64) -> f64 {
    if shift == 0.0 {
        return logit(target);
    }
    let f = |a: f64| (1.0 - q) * logistic(a) + q * logistic(a + shift) - target;
    let (mut lo, mut hi) = (-60.0, 60.0);
    if f(lo) > 0.0 {
        return lo;
    }
    if f(hi) < 0.0 {
        return hi;
    }
    for _ in 0..90 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

struct UnitCalibration {
    /// Pr(u = 1 | x, T = t) for t = 0, 1
    q_t: [f64; 2],
    /// calibrated outcome intercepts for arms 0 and 1
    b: [f64; 2],
}

fn calibrate_unit(e: f64, mu0: f64, mu1: f64, params: &RRParams) -> UnitCalibration {
    let lg = params.gamma.ln();
    let a = solve_mixture_intercept(e, params.p, lg);
    let p1_u1 = logistic(a + lg);
    let p1_u0 = logistic(a);
    let e_model = (1.0 - params.p) * p1_u0 + params.p * p1_u1;
    let q1 = (params.p * p1_u1 / e_model).clamp(0.0, 1.0);
    let q0 = (params.p * (1.0 - p1_u1) / (1.0 - e_model)).clamp(0.0, 1.0);
    let b0 = solve_mixture_intercept(mu0, q0, params.delta0.ln());
    let b1 = solve_mixture_intercept(mu1, q1, params.delta1.ln());
    UnitCalibration { q_t: [q0, q1], b: [b0, b1] }
}

/// Per-unit imputed counterfactual probabilities under one parameter
/// setting. Policy-independent; shared across a sweep's policies.
pub fn rr_imputations(d: &Dataset, nz: &NuisanceEstimates, params: &RRParams) -> Result<Vec<f64>> {
    params.validate()?;
    let n = d.len();
    if nz.len() != n {
        return Err(Error::Alignment(format!(
            "nuisance has {} units, dataset {n}",
            nz.len()
        )));
    }
    let mut out = Vec::with_capacity(n);
    for (i, r) in d.records().iter().enumerate() {
        let cal = calibrate_unit(nz.e_hat[i], nz.mu0_hat[i], nz.mu1_hat[i], params);
        let t = r.treatment as usize;
        let y = r.outcome as f64;
        let ld_obs = if t == 0 { params.delta0.ln() } else { params.delta1.ln() };
        // posterior over u given (t, y)
        let q_prior = cal.q_t[t];
        let lik = |u: usize| -> f64 {
            let prob = logistic(cal.b[t] + if u == 1 { ld_obs } else { 0.0 });
            if y == 1.0 {
                prob
            } else {
                1.0 - prob
            }
        };
        let w1 = q_prior * lik(1);
        let w0 = (1.0 - q_prior) * lik(0);
        let q_post = if w0 + w1 > 0.0 { w1 / (w0 + w1) } else { q_prior };
        // impute the counterfactual arm
        let cf = 1 - t;
        let ld_cf = if cf == 0 { params.delta0.ln() } else { params.delta1.ln() };
        let y_mis =
            (1.0 - q_post) * logistic(cal.b[cf]) + q_post * logistic(cal.b[cf] + ld_cf);
        out.push(y_mis);
    }
    Ok(out)
}

fn value_with_imputations(d: &Dataset, pi: &Policy, y_mis: &[f64]) -> f64 {
    let n = d.len();
    let total: f64 = d
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if pi.decisions()[i] == r.treatment {
                r.outcome as f64
            } else {
                y_mis[i]
            }
        })
        .sum();
    total / n as f64
}

/// Adjusted policy value at one parameter setting.
pub fn rr_adjusted_value(
    d: &Dataset,
    nz: &NuisanceEstimates,
    pi: &Policy,
    params: &RRParams,
) -> Result<f64> {
    if pi.len() != d.len() {
        return Err(Error::Alignment("policy/dataset length mismatch".into()));
    }
    let y_mis = rr_imputations(d, nz, params)?;
    Ok(value_with_imputations(d, pi, &y_mis))
}

/// Min/max policy value over a grid, with the parameter tuples attaining
/// them.
#[derive(Debug, Clone)]
pub struct RREnvelope {
    pub min: f64,
    pub max: f64,
    pub argmin: RRParams,
    pub argmax: RRParams,
}

/// Exhaustive sweep over the Cartesian grid; one envelope per policy.
pub fn rr_sweep(
    d: &Dataset,
    nz: &NuisanceEstimates,
    policies: &[Policy],
    grid: &RRGrid,
) -> Result<Vec<RREnvelope>> {
    grid.validate()?;
    for pi in policies {
        if pi.len() != d.len() {
            return Err(Error::Alignment("policy/dataset length mismatch".into()));
        }
    }
    let points = grid.points();
    let per_point: Vec<(RRParams, Vec<f64>)> = points
        .par_iter()
        .map(|params| {
            let y_mis = rr_imputations(d, nz, params)?;
            let values: Vec<f64> = policies
                .iter()
                .map(|pi| value_with_imputations(d, pi, &y_mis))
                .collect();
            Ok((*params, values))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut envelopes: Vec<RREnvelope> = Vec::with_capacity(policies.len());
    for pi_idx in 0..policies.len() {
        let mut env = RREnvelope {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            argmin: points[0],
            argmax: points[0],
        };
        // first occurrence wins, so results are independent of thread order
        for (params, values) in &per_point {
            let v = values[pi_idx];
            if v < env.min {
                env.min = v;
                env.argmin = *params;
            }
            if v > env.max {
                env.max = v;
                env.argmax = *params;
            }
        }
        envelopes.push(env);
    }
    Ok(envelopes)
}
