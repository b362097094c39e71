//! Synthetic-data lab: generates uncensored potential-outcome datasets
//! from preset probability models, censors covariates to induce known
//! confounding, and runs the full validation pipeline against ground
//! truth.
//!
//! The default scenario is calibrated by bisection so the realized
//! status-quo marginals match the published ones: 69% released, 15% FTA
//! among released, 9% among detained (13% overall).

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::confound::{fit_sensitivity, SensitivitySpec};
use crate::data::{write_results, CaseRecord, Cell, Dataset, ResultsTable};
use crate::error::{Error, Result};
use crate::glm::{fit_cv, fit_nuisance, predict, FitTarget, LambdaRule, NuisanceConfig};
use crate::mathutil::{logistic, quantile_of};
use crate::policy::{
    direct_policy_value, make_policy_family, oracle_policy_value_on,
};
use crate::rr::{rr_sweep, RRGrid};

/// Marginal generator for one covariate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateKind {
    /// Two-component normal mixture, rounded to integers and clamped.
    IntegerMixture {
        weight_a: f64,
        mean_a: f64,
        sd_a: f64,
        mean_b: f64,
        sd_b: f64,
        min: f64,
        max: f64,
    },
    Bernoulli { p: f64 },
    /// Zero with probability p_zero, otherwise 1 + Poisson(rate), clamped.
    ZeroInflatedCount { p_zero: f64, rate: f64, max: f64 },
    Normal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
}

/// Scenario: covariate marginals, logistic slopes for the three generator
/// models, and status-quo targets the intercepts are calibrated to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n: usize,
    pub covariates: Vec<CovariateSpec>,
    pub mu0_slopes: Vec<f64>,
    pub mu1_slopes: Vec<f64>,
    pub e_slopes: Vec<f64>,
    /// target Pr(T = 0)
    pub target_release_rate: f64,
    /// target E[Y | T = 0]
    pub target_fta_released: f64,
    /// target E[Y | T = 1]
    pub target_fta_detained: f64,
}

impl ScenarioSpec {
    /// Paper-mimicking default: age, gender, prior FTA count, and one
    /// continuous severity score; older units are released more and fail
    /// to appear less, prior failures push both detention and risk up.
    pub fn default_scenario(n: usize) -> Self {
        Self {
            n,
            covariates: vec![
                CovariateSpec {
                    name: "age".into(),
                    kind: CovariateKind::IntegerMixture {
                        weight_a: 0.55,
                        mean_a: 28.0,
                        sd_a: 7.0,
                        mean_b: 46.0,
                        sd_b: 11.0,
                        min: 18.0,
                        max: 75.0,
                    },
                },
                CovariateSpec {
                    name: "gender".into(),
                    kind: CovariateKind::Bernoulli { p: 0.8 },
                },
                CovariateSpec {
                    name: "prior_fta".into(),
                    kind: CovariateKind::ZeroInflatedCount {
                        p_zero: 0.55,
                        rate: 1.3,
                        max: 12.0,
                    },
                },
                CovariateSpec {
                    name: "severity".into(),
                    kind: CovariateKind::Normal { mean: 0.0, sd: 1.0 },
                },
            ],
            mu0_slopes: vec![-0.030, 0.35, 0.45, 0.30],
            mu1_slopes: vec![-0.022, 0.25, 0.32, 0.20],
            e_slopes: vec![-0.018, 0.45, 0.50, 0.40],
            target_release_rate: 0.69,
            target_fta_released: 0.15,
            target_fta_detained: 0.09,
        }
    }

    pub fn schema(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name.clone()).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::Domain("scenario needs n >= 10".into()));
        }
        let m = self.covariates.len();
        for (name, s) in [
            ("mu0_slopes", &self.mu0_slopes),
            ("mu1_slopes", &self.mu1_slopes),
            ("e_slopes", &self.e_slopes),
        ] {
            if s.len() != m {
                return Err(Error::Domain(format!(
                    "{name} has {} entries for {m} covariates",
                    s.len()
                )));
            }
        }
        for (name, t) in [
            ("target_release_rate", self.target_release_rate),
            ("target_fta_released", self.target_fta_released),
            ("target_fta_detained", self.target_fta_detained),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Domain(format!("{name} must be in (0,1), got {t}")));
            }
        }
        Ok(())
    }
}

/// Uncensored dataset: both potential outcomes per unit plus the
/// generator probabilities that produced them.
#[derive(Debug, Clone)]
pub struct SyntheticTruth {
    /// observational view with the full covariate schema
    pub base: Dataset,
    pub y0: Vec<u8>,
    pub y1: Vec<u8>,
    pub t: Vec<u8>,
    /// per-unit (mu0, mu1, e)
    pub generator_probs: Vec<(f64, f64, f64)>,
    pub seed: u64,
}

impl SyntheticTruth {
    pub fn len(&self) -> usize {
        self.y0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y0.is_empty()
    }

    /// True per-unit treatment effect y(1) - y(0), averaged over a group.
    pub fn mean_effect(&self, positions: &[usize]) -> f64 {
        positions
            .iter()
            .map(|&i| self.y1[i] as f64 - self.y0[i] as f64)
            .sum::<f64>()
            / positions.len() as f64
    }

    /// Draw (y0, y1, t) from explicit per-unit probabilities using three
    /// independent random streams.
    pub fn draw_from_probs(
        schema: Vec<String>,
        covariates: Vec<Vec<f64>>,
        probs: Vec<(f64, f64, f64)>,
        seed: u64,
        provenance: String,
    ) -> Result<Self> {
        let n = covariates.len();
        if probs.len() != n {
            return Err(Error::Alignment("probs/covariates length mismatch".into()));
        }
        let mut rng_y0 = ChaCha20Rng::seed_from_u64(seed);
        rng_y0.set_stream(1);
        let mut rng_y1 = ChaCha20Rng::seed_from_u64(seed);
        rng_y1.set_stream(2);
        let mut rng_t = ChaCha20Rng::seed_from_u64(seed);
        rng_t.set_stream(3);

        let mut y0 = Vec::with_capacity(n);
        let mut y1 = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        for &(mu0, mu1, e) in &probs {
            y0.push(u8::from(rng_y0.random::<f64>() < mu0));
            y1.push(u8::from(rng_y1.random::<f64>() < mu1));
            t.push(u8::from(rng_t.random::<f64>() < e));
        }
        let records: Vec<CaseRecord> = covariates
            .into_iter()
            .enumerate()
            .map(|(i, c)| CaseRecord {
                id: i as u64 + 1,
                covariates: c,
                treatment: t[i],
                outcome: if t[i] == 1 { y1[i] } else { y0[i] },
            })
            .collect();
        let base = Dataset::new(schema, records, provenance)?;
        Ok(Self { base, y0, y1, t, generator_probs: probs, seed })
    }
}

fn draw_covariate(kind: &CovariateKind, rng: &mut ChaCha20Rng) -> f64 {
    match kind {
        CovariateKind::IntegerMixture {
            weight_a,
            mean_a,
            sd_a,
            mean_b,
            sd_b,
            min,
            max,
        } => {
            let (mean, sd) = if rng.random::<f64>() < *weight_a {
                (*mean_a, *sd_a)
            } else {
                (*mean_b, *sd_b)
            };
            let v: f64 = Normal::new(mean, sd).unwrap().sample(rng);
            v.round().clamp(*min, *max)
        }
        CovariateKind::Bernoulli { p } => f64::from(rng.random::<f64>() < *p),
        CovariateKind::ZeroInflatedCount { p_zero, rate, max } => {
            if rng.random::<f64>() < *p_zero {
                0.0
            } else {
                let v: f64 = Poisson::new(*rate).unwrap().sample(rng);
                (1.0 + v).min(*max)
            }
        }
        CovariateKind::Normal { mean, sd } => Normal::new(*mean, *sd).unwrap().sample(rng),
    }
}

/// Bisection on an increasing function of the intercept.
fn calibrate_intercept<F>(target: f64, what: &str, marginal: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (mut lo, mut hi) = (-30.0, 30.0);
    if marginal(lo) > target || marginal(hi) < target {
        return Err(Error::Calibration(format!(
            "target {what} = {target} unreachable (range [{}, {}])",
            marginal(lo),
            marginal(hi)
        )));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if marginal(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Generate a truth dataset: covariates from the scenario marginals,
/// intercepts calibrated to the status-quo targets, and (y0, y1, t) drawn
/// from independent Bernoulli streams.
pub fn generate_truth(spec: &ScenarioSpec, seed: u64) -> Result<SyntheticTruth> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(0);

    let covariates: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            spec.covariates
                .iter()
                .map(|c| draw_covariate(&c.kind, &mut rng))
                .collect()
        })
        .collect();

    let score = |slopes: &[f64], x: &[f64]| -> f64 {
        slopes.iter().zip(x).map(|(s, v)| s * v).sum()
    };
    let s_e: Vec<f64> = covariates.iter().map(|x| score(&spec.e_slopes, x)).collect();
    let s_mu0: Vec<f64> = covariates.iter().map(|x| score(&spec.mu0_slopes, x)).collect();
    let s_mu1: Vec<f64> = covariates.iter().map(|x| score(&spec.mu1_slopes, x)).collect();

    // detention probability first; outcome targets are conditional on arm
    let target_detained = 1.0 - spec.target_release_rate;
    let c_e = calibrate_intercept(target_detained, "detention rate", |c| {
        s_e.iter().map(|s| logistic(c + s)).sum::<f64>() / n as f64
    })?;
    let e: Vec<f64> = s_e.iter().map(|s| logistic(c_e + s)).collect();

    let w_released: f64 = e.iter().map(|ei| 1.0 - ei).sum();
    let c_mu0 = calibrate_intercept(spec.target_fta_released, "FTA among released", |c| {
        s_mu0
            .iter()
            .zip(&e)
            .map(|(s, ei)| logistic(c + s) * (1.0 - ei))
            .sum::<f64>()
            / w_released
    })?;
    let w_detained: f64 = e.iter().sum();
    let c_mu1 = calibrate_intercept(spec.target_fta_detained, "FTA among detained", |c| {
        s_mu1
            .iter()
            .zip(&e)
            .map(|(s, ei)| logistic(c + s) * ei)
            .sum::<f64>()
            / w_detained
    })?;

    let probs: Vec<(f64, f64, f64)> = (0..n)
        .map(|i| {
            (logistic(c_mu0 + s_mu0[i]), logistic(c_mu1 + s_mu1[i]), e[i])
        })
        .collect();

    SyntheticTruth::draw_from_probs(
        spec.schema(),
        covariates,
        probs,
        seed,
        format!("synthetic, seed={seed}, n={n}"),
    )
}

/// Restrict the observed covariates to `keep`, producing the censored
/// observational dataset. Unit order and ids are preserved.
pub fn censor(truth: &SyntheticTruth, keep: &[String]) -> Result<Dataset> {
    if keep.is_empty() {
        return Err(Error::Domain(
            "censoring must keep at least one covariate".into(),
        ));
    }
    let idx: Vec<usize> = keep
        .iter()
        .map(|name| truth.base.covariate_index(name))
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<CaseRecord> = truth
        .base
        .records()
        .iter()
        .map(|r| CaseRecord {
            id: r.id,
            covariates: idx.iter().map(|&j| r.covariates[j]).collect(),
            treatment: r.treatment,
            outcome: r.outcome,
        })
        .collect();
    Dataset::new(
        keep.to_vec(),
        records,
        format!("{}, censored to {}", truth.base.provenance, keep.join("+")),
    )
}

/// Load a truth export written by `write_truth`. Generator probabilities
/// are not persisted, so the loaded truth has an empty `generator_probs`.
pub fn load_truth(path: &Path, schema: &[String]) -> Result<SyntheticTruth> {
    let path_str = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Csv { path: path_str.clone(), source: e })?;
    let mut expected: Vec<String> = vec!["id".into()];
    expected.extend(schema.iter().cloned());
    expected.extend(["t".to_string(), "y0".to_string(), "y1".to_string()]);
    let got: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Csv { path: path_str.clone(), source: e })?
        .iter()
        .map(String::from)
        .collect();
    if got != expected {
        return Err(Error::Schema(format!(
            "truth header mismatch in {path_str}: expected {expected:?}, got {got:?}"
        )));
    }
    let m = schema.len();
    let mut records = Vec::new();
    let mut y0 = Vec::new();
    let mut y1 = Vec::new();
    let mut t = Vec::new();
    for (row_idx, rec) in rdr.records().enumerate() {
        let row = row_idx + 1;
        let rec = rec.map_err(|e| Error::Csv { path: path_str.clone(), source: e })?;
        let cell = |col: usize| -> Result<f64> {
            rec.get(col)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("truth row {row}, column {col}")))
        };
        let id = cell(0)? as u64;
        let covariates: Vec<f64> = (0..m).map(|j| cell(1 + j)).collect::<Result<_>>()?;
        let ti = cell(1 + m)? as u8;
        let y0i = cell(2 + m)? as u8;
        let y1i = cell(3 + m)? as u8;
        t.push(ti);
        y0.push(y0i);
        y1.push(y1i);
        records.push(CaseRecord {
            id,
            covariates,
            treatment: ti,
            outcome: if ti == 1 { y1i } else { y0i },
        });
    }
    let base = Dataset::new(schema.to_vec(), records, format!("loaded from {path_str}"))?;
    Ok(SyntheticTruth { base, y0, y1, t, generator_probs: Vec::new(), seed: 0 })
}

/// Export the uncensored truth: id, covariates..., t, y0, y1.
pub fn write_truth(truth: &SyntheticTruth, path: &Path) -> Result<()> {
    let mut headers: Vec<String> = vec!["id".into()];
    headers.extend(truth.base.schema().iter().cloned());
    headers.extend(["t".to_string(), "y0".to_string(), "y1".to_string()]);
    let header_refs: Vec<&str> = headers.iter().map(|s| s.as_str()).collect();
    let mut table = ResultsTable::new(&header_refs);
    for (i, r) in truth.base.records().iter().enumerate() {
        let mut row = vec![Cell::Int(r.id as i64)];
        row.extend(r.covariates.iter().map(|&c| Cell::Float(c)));
        row.push(Cell::Int(truth.t[i] as i64));
        row.push(Cell::Int(truth.y0[i] as i64));
        row.push(Cell::Int(truth.y1[i] as i64));
        table.push(row);
    }
    write_results(&table, path)
}

/// Policy-threshold grid specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ThresholdGrid {
    Absolute(Vec<f64>),
    /// Levels are quantiles of the eval-fold risk scores, so release
    /// rates approximately match the levels.
    QuantileLevels(Vec<f64>),
}

impl ThresholdGrid {
    pub fn default_levels(points: usize) -> Self {
        let lo = 0.02;
        let hi = 0.98;
        ThresholdGrid::QuantileLevels(
            (0..points)
                .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
                .collect(),
        )
    }

    pub fn resolve(&self, scores: &[f64]) -> Vec<f64> {
        match self {
            ThresholdGrid::Absolute(v) => v.clone(),
            ThresholdGrid::QuantileLevels(levels) => {
                levels.iter().map(|&q| quantile_of(scores, q)).collect()
            }
        }
    }
}

/// Validation pipeline configuration.
#[derive(Debug, Clone)]
pub struct ValidationConfig {
    pub seed: u64,
    pub fractions: (f64, f64, f64),
    pub thresholds: ThresholdGrid,
    pub nuisance: NuisanceConfig,
    pub sens: SensitivitySpec,
    /// (regime label, grid) pairs; empty to skip the sweep baseline
    pub rr_regimes: Vec<(String, RRGrid)>,
    pub with_subgroups: bool,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            fractions: (0.45, 0.45, 0.10),
            thresholds: ThresholdGrid::default_levels(15),
            nuisance: NuisanceConfig::default(),
            sens: SensitivitySpec::default(),
            rr_regimes: vec![
                ("double_odds".into(), RRGrid::regime(2.0)),
                ("triple_odds".into(), RRGrid::regime(3.0)),
            ],
            with_subgroups: true,
        }
    }
}

/// Per-threshold outcome of one censoring run.
#[derive(Debug, Clone)]
pub struct PolicyRow {
    pub threshold: f64,
    pub release_rate: f64,
    pub direct: f64,
    pub oracle: f64,
    pub q025: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q975: f64,
    /// (regime, min, max) per sweep regime
    pub rr: Vec<(String, f64, f64)>,
    pub covered: bool,
    pub band_width: f64,
}

#[derive(Debug, Clone)]
pub struct SubgroupRow {
    pub name: String,
    pub n_units: usize,
    pub direct: f64,
    pub oracle: f64,
    pub q025: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q975: f64,
    pub covered: bool,
}

#[derive(Debug, Clone)]
pub struct CensoringReport {
    pub censoring: String,
    pub rows: Vec<PolicyRow>,
    pub subgroup_rows: Vec<SubgroupRow>,
    pub max_rhat: f64,
    pub divergence_rate: f64,
    pub rhat_ok: bool,
}

impl CensoringReport {
    pub fn coverage_fraction(&self) -> f64 {
        let covered = self.rows.iter().filter(|r| r.covered).count();
        covered as f64 / self.rows.len() as f64
    }

    pub fn mean_band_width(&self) -> f64 {
        self.rows.iter().map(|r| r.band_width).sum::<f64>() / self.rows.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub censorings: Vec<CensoringReport>,
}

/// Subgroups for heterogeneous-effect reporting: age bands, gender, and
/// prior-FTA bands, whichever covariates exist in the truth schema.
pub fn default_subgroups(truth: &SyntheticTruth) -> Vec<(String, HashSet<u64>)> {
    let mut out = Vec::new();
    let ids = truth.base.ids();
    if let Ok(age) = truth.base.covariate_column("age") {
        let bands: [(f64, f64, &str); 4] = [
            (0.0, 25.0, "age_18_25"),
            (26.0, 35.0, "age_26_35"),
            (36.0, 50.0, "age_36_50"),
            (51.0, f64::INFINITY, "age_51_plus"),
        ];
        for (lo, hi, name) in bands {
            let set: HashSet<u64> = ids
                .iter()
                .zip(&age)
                .filter(|(_, &a)| a >= lo && a <= hi)
                .map(|(&id, _)| id)
                .collect();
            out.push((name.to_string(), set));
        }
    }
    if let Ok(gender) = truth.base.covariate_column("gender") {
        for (v, name) in [(1.0, "gender_male"), (0.0, "gender_female")] {
            let set: HashSet<u64> = ids
                .iter()
                .zip(&gender)
                .filter(|(_, &g)| g == v)
                .map(|(&id, _)| id)
                .collect();
            out.push((name.to_string(), set));
        }
    }
    if let Ok(prior) = truth.base.covariate_column("prior_fta") {
        let bands: [(f64, f64, &str); 4] = [
            (0.0, 0.0, "prior_fta_0"),
            (1.0, 1.0, "prior_fta_1"),
            (2.0, 2.0, "prior_fta_2"),
            (3.0, f64::INFINITY, "prior_fta_3_plus"),
        ];
        for (lo, hi, name) in bands {
            let set: HashSet<u64> = ids
                .iter()
                .zip(&prior)
                .filter(|(_, &p)| p >= lo && p <= hi)
                .map(|(&id, _)| id)
                .collect();
            out.push((name.to_string(), set));
        }
    }
    out
}

fn quantiles_of(values: &[f64]) -> (f64, f64, f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (
        crate::mathutil::quantile(&v, 0.025),
        crate::mathutil::quantile(&v, 0.25),
        crate::mathutil::quantile(&v, 0.50),
        crate::mathutil::quantile(&v, 0.75),
        crate::mathutil::quantile(&v, 0.975),
    )
}

/// Full pipeline for one censoring: folds, nuisance fits, policy family,
/// direct values, sensitivity bands, sweep envelopes, and oracle values.
pub fn run_censoring(
    truth: &SyntheticTruth,
    keep: &[String],
    cfg: &ValidationConfig,
) -> Result<CensoringReport> {
    let observed = censor(truth, keep)?;
    let folds = crate::data::split_folds(&observed, cfg.seed, cfg.fractions)?;

    // policy-fold risk model: outcome regression on released units only
    let policy_released: HashSet<u64> = observed
        .records()
        .iter()
        .filter(|r| folds.policy_fold.contains(&r.id) && r.treatment == 0)
        .map(|r| r.id)
        .collect();
    let risk_cfg = cfg.nuisance.clone().with_rule(LambdaRule::MinLoss);
    let risk_fit = fit_cv(&observed, FitTarget::Outcome, &policy_released, &risk_cfg)?;

    let eval_ds = observed.subset(&folds.eval_fold);
    let nz = fit_nuisance(&observed, &folds.nuisance_fold, &eval_ds, &cfg.nuisance)?;
    let scores = predict(&risk_fit, &eval_ds)?;
    let eval_ids = eval_ds.ids();

    // positions of eval units within the truth arrays
    let eval_positions: Vec<usize> =
        eval_ids.iter().map(|&id| (id - 1) as usize).collect();

    let thresholds = cfg.thresholds.resolve(&scores);
    let policies = make_policy_family(&scores, &eval_ids, &thresholds)?;

    let fit = fit_sensitivity(&eval_ds, &nz, &cfg.sens)?;

    let mut rr_envelopes = Vec::new();
    for (label, grid) in &cfg.rr_regimes {
        let env = rr_sweep(&eval_ds, &nz, &policies, grid)?;
        rr_envelopes.push((label.clone(), env));
    }

    let mut rows = Vec::with_capacity(policies.len());
    for (pi_idx, pi) in policies.iter().enumerate() {
        let direct = direct_policy_value(&eval_ds, pi, &nz)?;
        let oracle = oracle_policy_value_on(truth, pi, &eval_positions)?;
        let post = fit.policy_values(pi)?;
        let (q025, q25, q50, q75, q975) = quantiles_of(&post);
        let rr: Vec<(String, f64, f64)> = rr_envelopes
            .iter()
            .map(|(label, env)| (label.clone(), env[pi_idx].min, env[pi_idx].max))
            .collect();
        rows.push(PolicyRow {
            threshold: thresholds[pi_idx],
            release_rate: pi.release_rate(),
            direct: direct.value,
            oracle,
            q025,
            q25,
            q50,
            q75,
            q975,
            rr,
            covered: q025 <= oracle && oracle <= q975,
            band_width: q975 - q025,
        });
    }

    let mut subgroup_rows = Vec::new();
    if cfg.with_subgroups {
        for (name, group) in default_subgroups(truth) {
            let in_eval: HashSet<u64> =
                group.intersection(&folds.eval_fold).copied().collect();
            if in_eval.is_empty() {
                continue;
            }
            let positions: Vec<usize> =
                in_eval.iter().map(|&id| (id - 1) as usize).collect();
            let oracle = truth.mean_effect(&positions);
            let direct = crate::policy::subgroup_ate(&eval_ds, &in_eval, |pi| {
                Ok(direct_policy_value(&eval_ds, pi, &nz)?.value)
            })?;
            let post = fit.subgroup_ate(&in_eval)?;
            let (q025, q25, q50, q75, q975) = quantiles_of(&post);
            subgroup_rows.push(SubgroupRow {
                name,
                n_units: in_eval.len(),
                direct,
                oracle,
                q025,
                q25,
                q50,
                q75,
                q975,
                covered: q025 <= oracle && oracle <= q975,
            });
        }
    }

    Ok(CensoringReport {
        censoring: keep.join("+"),
        rows,
        subgroup_rows,
        max_rhat: fit.draws.max_rhat(),
        divergence_rate: fit.draws.divergence_rate(),
        rhat_ok: fit.rhat_ok,
    })
}

/// Run the pipeline for every censoring.
pub fn run_validation_suite(
    truth: &SyntheticTruth,
    censorings: &[Vec<String>],
    cfg: &ValidationConfig,
) -> Result<ValidationReport> {
    let censorings_reports: Vec<CensoringReport> = censorings
        .iter()
        .map(|keep| run_censoring(truth, keep, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(ValidationReport { censorings: censorings_reports })
}

impl ValidationReport {
    /// Tidy per-threshold table (one row per censoring x threshold).
    pub fn policy_table(&self) -> ResultsTable {
        let mut headers = vec![
            "censoring",
            "threshold",
            "release_rate",
            "direct",
            "oracle",
            "q025",
            "q25",
            "q50",
            "q75",
            "q975",
            "covered",
            "band_width",
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        if let Some(first) = self.censorings.first().and_then(|c| c.rows.first()) {
            for (label, _, _) in &first.rr {
                headers.push(format!("rr_{label}_min"));
                headers.push(format!("rr_{label}_max"));
            }
        }
        let header_refs: Vec<&str> = headers.iter().map(|s| s.as_str()).collect();
        let mut table = ResultsTable::new(&header_refs);
        for c in &self.censorings {
            for r in &c.rows {
                let mut row = vec![
                    Cell::Text(c.censoring.clone()),
                    Cell::Float(r.threshold),
                    Cell::Float(r.release_rate),
                    Cell::Float(r.direct),
                    Cell::Float(r.oracle),
                    Cell::Float(r.q025),
                    Cell::Float(r.q25),
                    Cell::Float(r.q50),
                    Cell::Float(r.q75),
                    Cell::Float(r.q975),
                    Cell::Int(i64::from(r.covered)),
                    Cell::Float(r.band_width),
                ];
                for (_, min, max) in &r.rr {
                    row.push(Cell::Float(*min));
                    row.push(Cell::Float(*max));
                }
                table.push(row);
            }
        }
        table
    }

    pub fn subgroup_table(&self) -> ResultsTable {
        let mut table = ResultsTable::new(&[
            "censoring",
            "subgroup",
            "n_units",
            "direct",
            "oracle",
            "q025",
            "q25",
            "q50",
            "q75",
            "q975",
            "covered",
        ]);
        for c in &self.censorings {
            for r in &c.subgroup_rows {
                table.push(vec![
                    Cell::Text(c.censoring.clone()),
                    Cell::Text(r.name.clone()),
                    Cell::Int(r.n_units as i64),
                    Cell::Float(r.direct),
                    Cell::Float(r.oracle),
                    Cell::Float(r.q025),
                    Cell::Float(r.q25),
                    Cell::Float(r.q50),
                    Cell::Float(r.q75),
                    Cell::Float(r.q975),
                    Cell::Int(i64::from(r.covered)),
                ]);
            }
        }
        table
    }
}

/// The three published censorings: age; age+gender; age+gender+prior FTA.
pub fn paper_censorings() -> Vec<Vec<String>> {
    vec![
        vec!["age".into()],
        vec!["age".into(), "gender".into()],
        vec!["age".into(), "gender".into(), "prior_fta".into()],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{oracle_policy_value, Policy, PolicyMode};

    #[test]
    fn deterministic_draws_from_probs() {
        let probs = vec![(0.0, 1.0, 1.0); 50];
        let covs = vec![vec![0.0]; 50];
        let t1 = SyntheticTruth::draw_from_probs(
            vec!["x".into()],
            covs.clone(),
            probs.clone(),
            9,
            "p".into(),
        )
        .unwrap();
        assert!(t1.y0.iter().all(|&v| v == 0));
        assert!(t1.y1.iter().all(|&v| v == 1));
        assert!(t1.t.iter().all(|&v| v == 1));
        // observed outcome follows the treated arm
        assert!(t1.base.records().iter().all(|r| r.outcome == 1));
    }

    #[test]
    fn same_spec_and_seed_identical() {
        let spec = ScenarioSpec::default_scenario(400);
        let a = generate_truth(&spec, 3).unwrap();
        let b = generate_truth(&spec, 3).unwrap();
        assert_eq!(a.y0, b.y0);
        assert_eq!(a.y1, b.y1);
        assert_eq!(a.t, b.t);
        assert_eq!(a.base, b.base);
        let c = generate_truth(&spec, 4).unwrap();
        assert_ne!(a.t, c.t);
    }

    #[test]
    fn default_scenario_hits_published_marginals() {
        let spec = ScenarioSpec::default_scenario(50_000);
        let truth = generate_truth(&spec, 1).unwrap();
        let n = truth.len() as f64;
        let released: Vec<usize> =
            (0..truth.len()).filter(|&i| truth.t[i] == 0).collect();
        let release_rate = released.len() as f64 / n;
        assert!((release_rate - 0.69).abs() < 0.02, "release rate {release_rate}");
        let fta_released = released
            .iter()
            .map(|&i| truth.base.records()[i].outcome as f64)
            .sum::<f64>()
            / released.len() as f64;
        assert!((fta_released - 0.15).abs() < 0.02, "fta released {fta_released}");
        let detained: Vec<usize> =
            (0..truth.len()).filter(|&i| truth.t[i] == 1).collect();
        let fta_detained = detained
            .iter()
            .map(|&i| truth.base.records()[i].outcome as f64)
            .sum::<f64>()
            / detained.len() as f64;
        assert!((fta_detained - 0.09).abs() < 0.02, "fta detained {fta_detained}");
    }

    #[test]
    fn residual_correlation_vanishes() {
        // ignorability by construction: residuals of t and y0 against
        // their generator probabilities are uncorrelated
        let spec = ScenarioSpec::default_scenario(50_000);
        let truth = generate_truth(&spec, 2).unwrap();
        let rt: Vec<f64> = (0..truth.len())
            .map(|i| truth.t[i] as f64 - truth.generator_probs[i].2)
            .collect();
        let ry: Vec<f64> = (0..truth.len())
            .map(|i| truth.y0[i] as f64 - truth.generator_probs[i].0)
            .collect();
        let mt = crate::mathutil::mean(&rt);
        let my = crate::mathutil::mean(&ry);
        let cov: f64 = rt
            .iter()
            .zip(&ry)
            .map(|(a, b)| (a - mt) * (b - my))
            .sum::<f64>()
            / (rt.len() - 1) as f64;
        let corr = cov
            / (crate::mathutil::variance(&rt) * crate::mathutil::variance(&ry)).sqrt();
        assert!(corr.abs() < 0.02, "residual correlation {corr}");
    }

    #[test]
    fn censor_restricts_and_preserves_order() {
        let spec = ScenarioSpec::default_scenario(200);
        let truth = generate_truth(&spec, 7).unwrap();
        let full = censor(&truth, &spec.schema()).unwrap();
        assert_eq!(full.records(), truth.base.records());

        for keep in paper_censorings() {
            let c = censor(&truth, &keep).unwrap();
            assert_eq!(c.schema(), keep.as_slice());
            assert_eq!(c.ids(), truth.base.ids());
            for (a, b) in c.records().iter().zip(truth.base.records()) {
                assert_eq!(a.treatment, b.treatment);
                assert_eq!(a.outcome, b.outcome);
            }
        }

        assert!(censor(&truth, &[]).is_err());
        assert!(censor(&truth, &["nope".to_string()]).is_err());
    }

    #[test]
    fn oracle_consistency_with_policy_eval() {
        let spec = ScenarioSpec::default_scenario(300);
        let truth = generate_truth(&spec, 11).unwrap();
        let scores: Vec<f64> = truth.generator_probs.iter().map(|p| p.0).collect();
        let pi = Policy::new(scores, truth.base.ids(), PolicyMode::AbsoluteThreshold(0.15))
            .unwrap();
        let v = oracle_policy_value(&truth, &pi).unwrap();
        let manual: f64 = (0..truth.len())
            .map(|i| {
                if pi.decisions()[i] == 1 {
                    truth.y1[i] as f64
                } else {
                    truth.y0[i] as f64
                }
            })
            .sum::<f64>()
            / truth.len() as f64;
        assert_eq!(v, manual);
    }

    #[test]
    fn out_of_range_target_rejected() {
        let mut spec = ScenarioSpec::default_scenario(100);
        spec.target_fta_released = 1.5;
        assert!(generate_truth(&spec, 0).is_err());
    }

    #[test]
    fn unreachable_target_is_calibration_error() {
        // the marginal saturates below the target over the whole bracket
        let err = calibrate_intercept(0.999_999_999, "test target", |c| {
            logistic(c - 40.0)
        })
        .unwrap_err();
        assert!(matches!(err, Error::Calibration(_)), "{err}");
        assert!(err.to_string().contains("test target"));
    }

    #[test]
    fn truth_export_has_expected_shape() {
        let spec = ScenarioSpec::default_scenario(20);
        let truth = generate_truth(&spec, 5).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_truth(&truth, f.path()).unwrap();
        let content = std::fs::read_to_string(f.path()).unwrap();
        let lines: Vec<&str> = content.lines().collect();
        assert_eq!(lines.len(), 21);
        assert_eq!(lines[0], "id,age,gender,prior_fta,severity,t,y0,y1");
    }
}
