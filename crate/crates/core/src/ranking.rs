//! Ranking-robustness experiment: compare quantile policies built from a
//! risk model fit only on released units (what an analyst can actually do)
//! against policies built from a model fit on everyone's no-treatment
//! potential outcome (the unattainable benchmark), both scored against
//! exact ground truth.

use std::collections::HashSet;

use crate::data::{CaseRecord, Dataset};
use crate::error::Result;
use crate::glm::{fit_cv, predict, FitTarget, LambdaRule, NuisanceConfig};
use crate::policy::{oracle_policy_value, Policy, PolicyMode};
use crate::synth::{censor, SyntheticTruth};

/// One quantile point of the paired policy curves.
#[derive(Debug, Clone, Copy)]
pub struct RankPoint {
    pub quantile: f64,
    pub release_rate: f64,
    pub learned_value: f64,
    pub oracle_value: f64,
}

/// Evenly spaced release-fraction grid over (0, 1].
pub fn default_quantile_grid(points: usize) -> Vec<f64> {
    (1..=points).map(|i| i as f64 / points as f64).collect()
}

/// Fit the learned (released-units-only) and oracle (full-information)
/// risk models on the censored covariates, rank all units with each, and
/// evaluate the induced quantile policies against the exact truth.
pub fn ranking_robustness(
    truth: &SyntheticTruth,
    keep: &[String],
    quantile_grid: &[f64],
    cfg: &NuisanceConfig,
) -> Result<Vec<RankPoint>> {
    let observed = censor(truth, keep)?;

    let released: HashSet<u64> = observed
        .records()
        .iter()
        .filter(|r| r.treatment == 0)
        .map(|r| r.id)
        .collect();
    let rank_cfg = cfg.clone().with_rule(LambdaRule::MinLoss);
    let learned_fit = fit_cv(&observed, FitTarget::Outcome, &released, &rank_cfg)?;
    let learned_scores = predict(&learned_fit, &observed)?;

    // oracle: same covariates, but the target is y(0) for every unit
    let oracle_records: Vec<CaseRecord> = observed
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| CaseRecord {
            id: r.id,
            covariates: r.covariates.clone(),
            treatment: r.treatment,
            outcome: truth.y0[i],
        })
        .collect();
    let oracle_ds = Dataset::new(
        observed.schema().to_vec(),
        oracle_records,
        format!("{} (oracle outcomes)", observed.provenance),
    )?;
    let all_ids: HashSet<u64> = observed.ids().into_iter().collect();
    let oracle_fit = fit_cv(&oracle_ds, FitTarget::Outcome, &all_ids, &rank_cfg)?;
    let oracle_scores = predict(&oracle_fit, &oracle_ds)?;

    let ids = observed.ids();
    let mut out = Vec::with_capacity(quantile_grid.len());
    for &p in quantile_grid {
        let learned_pi =
            Policy::new(learned_scores.clone(), ids.clone(), PolicyMode::Quantile(p))?;
        let oracle_pi =
            Policy::new(oracle_scores.clone(), ids.clone(), PolicyMode::Quantile(p))?;
        out.push(RankPoint {
            quantile: p,
            release_rate: learned_pi.release_rate(),
            learned_value: oracle_policy_value(truth, &learned_pi)?,
            oracle_value: oracle_policy_value(truth, &oracle_pi)?,
        });
    }
    Ok(out)
}

/// The four-cell pathology population: young men are detained, everyone
/// else is released, and only age is observed. Frequencies are encoded
/// exactly (200 units) so group means are exact rationals.
///
/// Cells (proportion, mu0): young men (0.4, 0.2, detained), young women
/// (0.1, 0.05), old men (0.4, 0.1), old women (0.1, 0.1).
pub fn table_one_truth() -> SyntheticTruth {
    // per 200 units: 80 young men, 20 young women, 80 old men, 20 old women
    let cells: [(f64, f64, usize, usize, u8); 4] = [
        // (age, gender, count, y0_ones, treated)
        (25.0, 1.0, 80, 16, 1), // young men: mu0 = 0.2
        (25.0, 0.0, 20, 1, 0),  // young women: mu0 = 0.05
        (60.0, 1.0, 80, 8, 0),  // old men: mu0 = 0.1
        (60.0, 0.0, 20, 2, 0),  // old women: mu0 = 0.1
    ];
    let mut covariates = Vec::new();
    let mut y0 = Vec::new();
    let mut y1 = Vec::new();
    let mut t = Vec::new();
    let mut probs = Vec::new();
    for (age, gender, count, ones, treated) in cells {
        for j in 0..count {
            covariates.push(vec![age, gender]);
            let y = u8::from(j < ones);
            y0.push(y);
            y1.push(y); // treated-arm outcomes play no role in this example
            t.push(treated);
            probs.push((ones as f64 / count as f64, ones as f64 / count as f64, treated as f64));
        }
    }
    let records: Vec<CaseRecord> = covariates
        .iter()
        .enumerate()
        .map(|(i, c)| CaseRecord {
            id: i as u64 + 1,
            covariates: c.clone(),
            treatment: t[i],
            outcome: if t[i] == 1 { y1[i] } else { y0[i] },
        })
        .collect();
    let base = Dataset::new(
        vec!["age".into(), "gender".into()],
        records,
        "four-cell pathology population".into(),
    )
    .unwrap();
    SyntheticTruth { base, y0, y1, t, generator_probs: probs, seed: 0 }
}

/// Group mean of y0 among units matching a predicate on (age, released).
/// Returns (numerator, denominator) so callers can check exact rationals.
pub fn table_one_group_risk(
    truth: &SyntheticTruth,
    age: f64,
    released_only: bool,
) -> (u64, u64) {
    let mut num = 0u64;
    let mut den = 0u64;
    for (i, r) in truth.base.records().iter().enumerate() {
        if r.covariates[0] != age {
            continue;
        }
        if released_only && truth.t[i] != 0 {
            continue;
        }
        den += 1;
        num += truth.y0[i] as u64;
    }
    (num, den)
}
