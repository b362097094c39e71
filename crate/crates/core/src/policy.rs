//! Threshold and quantile policy families, the direct policy-value
//! estimator, and subgroup treatment effects via the policy-value identity.

use std::collections::HashSet;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::NuisanceEstimates;
use crate::synth::SyntheticTruth;

/// How the cutoff is interpreted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyMode {
    /// Treat iff risk score > s.
    AbsoluteThreshold(f64),
    /// Release the floor(p*n) lowest-risk units; treat the rest.
    /// Ties in the score are broken by unit id ascending.
    Quantile(f64),
}

/// A deterministic treatment rule over a fixed set of units, realized as a
/// risk-score vector plus a threshold.
#[derive(Debug, Clone)]
pub struct Policy {
    pub risk_scores: Vec<f64>,
    pub mode: PolicyMode,
    /// Unit ids aligned to `risk_scores`, used for tie-breaking.
    pub unit_ids: Vec<u64>,
    decisions: Vec<u8>,
}

impl Policy {
    pub fn new(risk_scores: Vec<f64>, unit_ids: Vec<u64>, mode: PolicyMode) -> Result<Self> {
        if risk_scores.len() != unit_ids.len() {
            return Err(Error::Alignment(format!(
                "{} scores for {} unit ids",
                risk_scores.len(),
                unit_ids.len()
            )));
        }
        let cutoff = match mode {
            PolicyMode::AbsoluteThreshold(s) => s,
            PolicyMode::Quantile(p) => p,
        };
        if !(0.0..=1.0).contains(&cutoff) {
            return Err(Error::Domain(format!("policy cutoff {cutoff} outside [0,1]")));
        }
        let decisions = match mode {
            PolicyMode::AbsoluteThreshold(s) => {
                risk_scores.iter().map(|&r| u8::from(r > s)).collect()
            }
            PolicyMode::Quantile(p) => {
                let n = risk_scores.len();
                let n_release = (p * n as f64).floor() as usize;
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| {
                    risk_scores[a]
                        .partial_cmp(&risk_scores[b])
                        .unwrap()
                        .then(unit_ids[a].cmp(&unit_ids[b]))
                });
                let mut decisions = vec![1u8; n];
                for &i in order.iter().take(n_release) {
                    decisions[i] = 0;
                }
                decisions
            }
        };
        Ok(Self { risk_scores, mode, unit_ids, decisions })
    }

    /// Treat-everyone / treat-no-one and other explicit rules.
    pub fn from_decisions(decisions: Vec<u8>, unit_ids: Vec<u64>) -> Result<Self> {
        if decisions.len() != unit_ids.len() {
            return Err(Error::Alignment("decision/id length mismatch".into()));
        }
        let risk_scores = decisions.iter().map(|&d| d as f64).collect();
        Ok(Self {
            risk_scores,
            mode: PolicyMode::AbsoluteThreshold(0.5),
            unit_ids,
            decisions,
        })
    }

    /// 1 = treat (set bail), 0 = release, aligned to unit order.
    pub fn decisions(&self) -> &[u8] {
        &self.decisions
    }

    pub fn release_rate(&self) -> f64 {
        let released = self.decisions.iter().filter(|&&d| d == 0).count();
        released as f64 / self.decisions.len() as f64
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }
}

/// One policy per threshold, ordered by threshold.
pub fn make_policy_family(
    risk_scores: &[f64],
    unit_ids: &[u64],
    thresholds: &[f64],
) -> Result<Vec<Policy>> {
    if thresholds.is_empty() {
        return Err(Error::Domain("empty threshold list".into()));
    }
    thresholds
        .iter()
        .map(|&s| {
            Policy::new(
                risk_scores.to_vec(),
                unit_ids.to_vec(),
                PolicyMode::AbsoluteThreshold(s),
            )
        })
        .collect()
}

/// Direct estimate of the policy value.
#[derive(Debug, Clone, Copy)]
pub struct PolicyValueEstimate {
    pub value: f64,
    pub n_agree: usize,
    pub n_disagree: usize,
    pub release_rate: f64,
}

/// V-hat = (1/n) [sum over agreeing units of observed outcomes + sum over
/// disagreeing units of model-imputed counterfactual probabilities].
pub fn direct_policy_value(
    d: &Dataset,
    pi: &Policy,
    nz: &NuisanceEstimates,
) -> Result<PolicyValueEstimate> {
    let n = d.len();
    if pi.len() != n || nz.len() != n {
        return Err(Error::Alignment(format!(
            "policy has {} units, nuisance {}, dataset {}",
            pi.len(),
            nz.len(),
            n
        )));
    }
    let mut total = 0.0;
    let mut n_agree = 0;
    for (i, r) in d.records().iter().enumerate() {
        let decision = pi.decisions()[i];
        if decision == r.treatment {
            total += r.outcome as f64;
            n_agree += 1;
        } else {
            total += if decision == 0 { nz.mu0_hat[i] } else { nz.mu1_hat[i] };
        }
    }
    Ok(PolicyValueEstimate {
        value: total / n as f64,
        n_agree,
        n_disagree: n - n_agree,
        release_rate: pi.release_rate(),
    })
}

/// Subgroup average treatment effect via the policy-value identity:
/// (V(pi_G) - V(pi_empty)) / Pr(X in G), where pi_G treats exactly G.
pub fn subgroup_ate<F>(d: &Dataset, group: &HashSet<u64>, value_fn: F) -> Result<f64>
where
    F: Fn(&Policy) -> Result<f64>,
{
    let ids = d.ids();
    let in_group: Vec<bool> = ids.iter().map(|id| group.contains(id)).collect();
    let g_count = in_group.iter().filter(|&&b| b).count();
    if g_count == 0 {
        return Err(Error::EmptyGroup);
    }
    let n = d.len();
    let pi_g = Policy::from_decisions(
        in_group.iter().map(|&b| u8::from(b)).collect(),
        ids.clone(),
    )?;
    let pi_empty = Policy::from_decisions(vec![0u8; n], ids)?;
    let v_g = value_fn(&pi_g)?;
    let v_empty = value_fn(&pi_empty)?;
    Ok((v_g - v_empty) / (g_count as f64 / n as f64))
}

/// Exact policy value from stored potential outcomes; no estimation.
pub fn oracle_policy_value(truth: &SyntheticTruth, pi: &Policy) -> Result<f64> {
    let n = truth.len();
    if pi.len() != n {
        return Err(Error::Alignment(format!(
            "policy has {} units, truth has {n}",
            pi.len()
        )));
    }
    let total: f64 = (0..n)
        .map(|i| {
            if pi.decisions()[i] == 1 {
                truth.y1[i] as f64
            } else {
                truth.y0[i] as f64
            }
        })
        .sum();
    Ok(total / n as f64)
}

/// Oracle value restricted to a subset of unit positions.
pub fn oracle_policy_value_on(truth: &SyntheticTruth, pi: &Policy, idx: &[usize]) -> Result<f64> {
    if pi.len() != idx.len() {
        return Err(Error::Alignment("policy/index length mismatch".into()));
    }
    let total: f64 = idx
        .iter()
        .enumerate()
        .map(|(j, &i)| {
            if pi.decisions()[j] == 1 {
                truth.y1[i] as f64
            } else {
                truth.y0[i] as f64
            }
        })
        .sum();
    Ok(total / idx.len() as f64)
}
