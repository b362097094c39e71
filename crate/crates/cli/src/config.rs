//! JSON run configuration with CLI flag overrides (flags win).

use serde::{Deserialize, Serialize};

use polsens::confound::SensitivitySpec;
use polsens::glm::NuisanceConfig;
use polsens::mcmc::SamplerConfig;
use polsens::rr::RRGrid;
use polsens::synth::{ScenarioSpec, ThresholdGrid, ValidationConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityCfg {
    pub k: usize,
    pub sigma_tau: f64,
    pub chains: usize,
    pub warmup_iters: usize,
    pub draw_iters: usize,
    pub target_accept: f64,
}

impl Default for SensitivityCfg {
    fn default() -> Self {
        Self {
            k: 10,
            sigma_tau: 1.0,
            chains: 4,
            warmup_iters: 1000,
            draw_iters: 1000,
            target_accept: 0.8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeCfg {
    pub label: String,
    pub odds_cap: f64,
}

impl Default for RegimeCfg {
    fn default() -> Self {
        Self { label: "double_odds".into(), odds_cap: 2.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: String,
    /// units in the generated truth
    pub n: usize,
    /// (policy, nuisance, eval) fold fractions
    pub fractions: (f64, f64, f64),
    pub censorings: Vec<Vec<String>>,
    /// policy grid: quantile levels of the eval-fold risk scores
    pub threshold_points: usize,
    /// rank-check grid size
    pub quantile_points: usize,
    pub cv_folds: usize,
    pub lambda_grid: Option<Vec<f64>>,
    pub sensitivity: SensitivityCfg,
    pub rr_regimes: Vec<RegimeCfg>,
    /// inline scenario; None uses the default calibrated scenario
    pub scenario: Option<ScenarioSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: "out".into(),
            n: 20_000,
            fractions: (0.45, 0.45, 0.10),
            censorings: polsens::synth::paper_censorings(),
            threshold_points: 15,
            quantile_points: 21,
            cv_folds: 5,
            lambda_grid: None,
            sensitivity: SensitivityCfg::default(),
            rr_regimes: vec![
                RegimeCfg { label: "double_odds".into(), odds_cap: 2.0 },
                RegimeCfg { label: "triple_odds".into(), odds_cap: 3.0 },
            ],
            scenario: None,
        }
    }
}

impl RunConfig {
    pub fn scenario_spec(&self) -> ScenarioSpec {
        self.scenario.clone().unwrap_or_else(|| ScenarioSpec::default_scenario(self.n))
    }

    pub fn nuisance_config(&self) -> NuisanceConfig {
        NuisanceConfig {
            lambda_grid: self.lambda_grid.clone(),
            cv_folds: self.cv_folds,
            seed: self.seed,
            lambda_rule: polsens::glm::LambdaRule::OneSe,
        }
    }

    pub fn sensitivity_spec(&self) -> SensitivitySpec {
        self.sensitivity_spec_with(self.sensitivity.k, self.sensitivity.sigma_tau)
    }

    pub fn sensitivity_spec_with(&self, k: usize, sigma_tau: f64) -> SensitivitySpec {
        SensitivitySpec {
            k,
            sigma_tau,
            sampler: SamplerConfig {
                chains: self.sensitivity.chains,
                warmup_iters: self.sensitivity.warmup_iters,
                draw_iters: self.sensitivity.draw_iters,
                seed: self.seed,
                target_accept: self.sensitivity.target_accept,
                ..SamplerConfig::default()
            },
        }
    }

    pub fn regimes(&self) -> Vec<(String, RRGrid)> {
        self.rr_regimes
            .iter()
            .map(|r| (r.label.clone(), RRGrid::regime(r.odds_cap)))
            .collect()
    }

    pub fn validation_config(&self) -> ValidationConfig {
        ValidationConfig {
            seed: self.seed,
            fractions: self.fractions,
            thresholds: ThresholdGrid::default_levels(self.threshold_points),
            nuisance: self.nuisance_config(),
            sens: self.sensitivity_spec(),
            rr_regimes: self.regimes(),
            with_subgroups: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let (a, b, c) = self.fractions;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(format!("fractions must be positive and sum to 1, got {:?}", self.fractions));
        }
        if self.n < 100 {
            return Err(format!("n must be at least 100, got {}", self.n));
        }
        if self.threshold_points < 2 || self.quantile_points < 2 {
            return Err("threshold_points and quantile_points must be >= 2".into());
        }
        if self.sensitivity.chains < 2 {
            return Err("sensitivity.chains must be >= 2".into());
        }
        if self.censorings.is_empty() {
            return Err("at least one censoring is required".into());
        }
        if self.sensitivity.sigma_tau <= 0.0 || self.sensitivity.k == 0 {
            return Err("sensitivity.k must be >= 1 and sigma_tau positive".into());
        }
        Ok(())
    }
}

/// Filename-safe label for a censoring.
pub fn censoring_label(keep: &[String]) -> String {
    keep.join("_")
}
