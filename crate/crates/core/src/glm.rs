//! L1-regularized logistic regression by cyclic coordinate descent.
//!
//! Features are standardized internally and the intercept is left
//! unpenalized. Each coordinate step minimizes a quadratic majorizer of the
//! penalized negative log-likelihood (curvature bound 1/4), so the
//! objective is non-increasing sweep over sweep; this is checked on every
//! sweep. Coefficients are reported on the original scale.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mathutil::{log1pexp, logistic, logit};

pub const PROB_CLAMP: f64 = 1e-6;
const COEF_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 10_000;

/// Which column of the dataset is the regression target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitTarget {
    Treatment,
    Outcome,
}

/// A fitted lasso-logit model.
#[derive(Debug, Clone)]
pub struct GlmFit {
    pub intercept: f64,
    /// Original-scale slope coefficients, aligned to `schema`.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    /// Per-feature (mean, sd) used for internal standardization.
    pub standardization: Vec<(f64, f64)>,
    pub converged: bool,
    /// Final penalized negative log-likelihood per observation.
    pub objective: f64,
    pub schema: Vec<String>,
    /// Standardized-scale coefficients (for KKT reporting).
    pub(crate) std_intercept: f64,
    pub(crate) std_coefficients: Vec<f64>,
}

impl GlmFit {
    /// Max KKT stationarity violation on the standardized scale:
    /// active features should have |gradient| = lambda, inactive
    /// |gradient| <= lambda.
    pub fn kkt_residual(&self, x: &DesignMatrix, y: &[f64]) -> f64 {
        let eta = x.linear_predictor(self.std_intercept, &self.std_coefficients);
        let n = y.len() as f64;
        let mut worst: f64 = 0.0;
        // intercept: unpenalized, gradient should vanish
        let g0: f64 =
            eta.iter().zip(y).map(|(&e, &yi)| logistic(e) - yi).sum::<f64>() / n;
        worst = worst.max(g0.abs());
        for j in 0..x.m {
            let g: f64 = (0..x.n)
                .map(|i| x.z[i * x.m + j] * (logistic(eta[i]) - y[i]))
                .sum::<f64>()
                / n;
            let beta = self.std_coefficients[j];
            let viol = if beta != 0.0 {
                (g + self.lambda * beta.signum()).abs()
            } else {
                (g.abs() - self.lambda).max(0.0)
            };
            worst = worst.max(viol);
        }
        worst
    }
}

/// Row-major standardized design matrix (columns: mean 0, sd 1).
pub struct DesignMatrix {
    pub n: usize,
    pub m: usize,
    /// standardized values, n x m row-major
    z: Vec<f64>,
    pub standardization: Vec<(f64, f64)>,
}

impl DesignMatrix {
    pub fn build(raw: &[Vec<f64>]) -> Self {
        let n = raw.len();
        let m = if n == 0 { 0 } else { raw[0].len() };
        let mut means = vec![0.0; m];
        let mut sds = vec![0.0; m];
        for j in 0..m {
            let mean = raw.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var = raw.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
            means[j] = mean;
            sds[j] = var.sqrt();
        }
        let mut z = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                z[i * m + j] = if sds[j] > 1e-12 {
                    (raw[i][j] - means[j]) / sds[j]
                } else {
                    0.0 // constant column carries no signal
                };
            }
        }
        let standardization = means.into_iter().zip(sds).collect();
        DesignMatrix { n, m, z, standardization }
    }

    fn linear_predictor(&self, intercept: f64, beta: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                intercept
                    + beta
                        .iter()
                        .enumerate()
                        .map(|(j, b)| b * self.z[i * self.m + j])
                        .sum::<f64>()
            })
            .collect()
    }

    fn column_norm_sq_mean(&self, j: usize) -> f64 {
        (0..self.n).map(|i| self.z[i * self.m + j].powi(2)).sum::<f64>() / self.n as f64
    }
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Penalized negative log-likelihood per observation, standardized scale.
fn penalized_objective(eta: &[f64], y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let n = y.len() as f64;
    let nll: f64 = eta.iter().zip(y).map(|(&e, &yi)| log1pexp(e) - yi * e).sum::<f64>() / n;
    nll + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

struct CdState {
    intercept: f64,
    beta: Vec<f64>,
    converged: bool,
    objective: f64,
}

/// Cyclic coordinate descent on the standardized problem, warm-startable.
fn coordinate_descent(
    x: &DesignMatrix,
    y: &[f64],
    lambda: f64,
    warm: Option<(f64, Vec<f64>)>,
) -> CdState {
    let n = x.n;
    let nf = n as f64;
    let (mut intercept, mut beta) = warm.unwrap_or_else(|| {
        let rate = y.iter().sum::<f64>() / nf;
        (logit(rate.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)), vec![0.0; x.m])
    });
    let mut eta = x.linear_predictor(intercept, &beta);
    let h: Vec<f64> = (0..x.m).map(|j| 0.25 * x.column_norm_sq_mean(j)).collect();

    let mut prev_obj = penalized_objective(&eta, y, &beta, lambda);
    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut max_delta: f64 = 0.0;

        // unpenalized intercept (majorized Newton step, curvature bound 1/4)
        let g0: f64 = eta.iter().zip(y).map(|(&e, &yi)| logistic(e) - yi).sum::<f64>() / nf;
        let d0 = -g0 / 0.25;
        if d0 != 0.0 {
            intercept += d0;
            for e in eta.iter_mut() {
                *e += d0;
            }
            max_delta = max_delta.max(d0.abs());
        }

        for j in 0..x.m {
            if h[j] <= 0.0 {
                continue;
            }
            let g: f64 = (0..n)
                .map(|i| x.z[i * x.m + j] * (logistic(eta[i]) - y[i]))
                .sum::<f64>()
                / nf;
            let new_b = soft_threshold(h[j] * beta[j] - g, lambda) / h[j];
            let delta = new_b - beta[j];
            if delta != 0.0 {
                beta[j] = new_b;
                for i in 0..n {
                    eta[i] += delta * x.z[i * x.m + j];
                }
                max_delta = max_delta.max(delta.abs());
            }
        }

        let obj = penalized_objective(&eta, y, &beta, lambda);
        assert!(
            obj <= prev_obj + 1e-10 * (1.0 + prev_obj.abs()),
            "coordinate descent objective increased: {prev_obj} -> {obj}"
        );
        prev_obj = obj;

        if max_delta < COEF_TOL {
            converged = true;
            break;
        }
    }
    CdState { intercept, beta, converged, objective: prev_obj }
}

fn extract_rows(d: &Dataset, target: FitTarget, subset: &HashSet<u64>) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut raw = Vec::new();
    let mut y = Vec::new();
    for r in d.records() {
        if subset.contains(&r.id) {
            raw.push(r.covariates.clone());
            y.push(match target {
                FitTarget::Treatment => r.treatment as f64,
                FitTarget::Outcome => r.outcome as f64,
            });
        }
    }
    (raw, y)
}

fn check_two_classes(y: &[f64], what: &str) -> Result<()> {
    if y.is_empty() {
        return Err(Error::InsufficientData(format!("empty subset for {what} fit")));
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::DegenerateTarget(format!(
            "{what} target has a single class in the given subset ({} of {} positive)",
            ones,
            y.len()
        )));
    }
    Ok(())
}

fn to_original_scale(
    state: &CdState,
    x: &DesignMatrix,
    lambda: f64,
    schema: &[String],
) -> GlmFit {
    let mut coefficients = vec![0.0; x.m];
    let mut intercept = state.intercept;
    for j in 0..x.m {
        let (mean, sd) = x.standardization[j];
        if sd > 1e-12 {
            coefficients[j] = state.beta[j] / sd;
            intercept -= state.beta[j] * mean / sd;
        }
    }
    GlmFit {
        intercept,
        coefficients,
        lambda,
        standardization: x.standardization.clone(),
        converged: state.converged,
        objective: state.objective,
        schema: schema.to_vec(),
        std_intercept: state.intercept,
        std_coefficients: state.beta.clone(),
    }
}

/// Fit a single lasso-logit model on the given id subset.
pub fn fit_lasso_logit(
    d: &Dataset,
    target: FitTarget,
    subset: &HashSet<u64>,
    lambda: f64,
) -> Result<GlmFit> {
    if lambda < 0.0 {
        return Err(Error::Domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    let (raw, y) = extract_rows(d, target, subset);
    check_two_classes(&y, target_name(target))?;
    let x = DesignMatrix::build(&raw);
    let state = coordinate_descent(&x, &y, lambda, None);
    Ok(to_original_scale(&state, &x, lambda, d.schema()))
}

fn target_name(t: FitTarget) -> &'static str {
    match t {
        FitTarget::Treatment => "treatment",
        FitTarget::Outcome => "outcome",
    }
}

/// Predicted probabilities on a dataset, clamped to [1e-6, 1-1e-6].
pub fn predict(fit: &GlmFit, d: &Dataset) -> Result<Vec<f64>> {
    if d.schema() != fit.schema.as_slice() {
        return Err(Error::Schema(format!(
            "prediction schema {:?} does not match fit schema {:?}",
            d.schema(),
            fit.schema
        )));
    }
    Ok(d.records()
        .iter()
        .map(|r| {
            let eta = fit.intercept
                + fit
                    .coefficients
                    .iter()
                    .zip(&r.covariates)
                    .map(|(b, x)| b * x)
                    .sum::<f64>();
            logistic(eta).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
        })
        .collect())
}

/// Smallest lambda that zeros all slopes, for the given subproblem.
fn lambda_max(x: &DesignMatrix, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let rate = y.iter().sum::<f64>() / n;
    let mut lmax: f64 = 0.0;
    for j in 0..x.m {
        let g: f64 = (0..x.n).map(|i| x.z[i * x.m + j] * (rate - y[i])).sum::<f64>() / n;
        lmax = lmax.max(g.abs());
    }
    lmax.max(1e-6)
}

/// 50 log-spaced lambdas from lambda_max down by a factor of 1e-4.
pub fn default_lambda_grid(x: &DesignMatrix, y: &[f64]) -> Vec<f64> {
    let lmax = lambda_max(x, y);
    let lmin = lmax * 1e-4;
    let k = 50;
    (0..k)
        .map(|i| {
            let t = i as f64 / (k - 1) as f64;
            (lmax.ln() * (1.0 - t) + lmin.ln() * t).exp()
        })
        .collect()
}

/// Held-out mean log-loss with clamped probabilities.
fn log_loss(probs: &[f64], y: &[f64]) -> f64 {
    let n = y.len() as f64;
    probs
        .iter()
        .zip(y)
        .map(|(&p, &yi)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(yi * p.ln() + (1.0 - yi) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

fn fit_path(
    x: &DesignMatrix,
    y: &[f64],
    lambdas: &[f64],
) -> Vec<CdState> {
    let mut out = Vec::with_capacity(lambdas.len());
    let mut warm: Option<(f64, Vec<f64>)> = None;
    for &lam in lambdas {
        let st = coordinate_descent(x, y, lam, warm.clone());
        warm = Some((st.intercept, st.beta.clone()));
        out.push(st);
    }
    out
}

/// Result of cross-validated lambda selection.
pub struct CvChoice {
    pub lambda: f64,
    pub mean_loss: Vec<f64>,
    pub se_loss: Vec<f64>,
    pub grid: Vec<f64>,
}

/// K-fold cross-validated lambda with the one-standard-error rule:
/// the largest lambda whose mean loss is within one SE of the minimum.
pub fn cv_select_lambda(
    raw: &[Vec<f64>],
    y: &[f64],
    grid: &[f64],
    cv_folds: usize,
    seed: u64,
    rule: LambdaRule,
) -> Result<CvChoice> {
    let n = raw.len();
    if cv_folds < 2 || cv_folds > n {
        return Err(Error::Domain(format!("cv_folds {cv_folds} out of range for n={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    // descending lambdas for warm-started paths
    let mut lambdas = grid.to_vec();
    lambdas.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let mut fold_losses = vec![vec![0.0; cv_folds]; lambdas.len()];
    for fold in 0..cv_folds {
        let held: HashSet<usize> =
            order.iter().copied().skip(fold).step_by(cv_folds).collect();
        let mut train_raw = Vec::new();
        let mut train_y = Vec::new();
        let mut test_raw = Vec::new();
        let mut test_y = Vec::new();
        for i in 0..n {
            if held.contains(&i) {
                test_raw.push(raw[i].clone());
                test_y.push(y[i]);
            } else {
                train_raw.push(raw[i].clone());
                train_y.push(y[i]);
            }
        }
        check_two_classes(&train_y, "cross-validation")?;
        let x = DesignMatrix::build(&train_raw);
        let path = fit_path(&x, &train_y, &lambdas);
        for (li, st) in path.iter().enumerate() {
            // predict on held-out rows using the train standardization
            let probs: Vec<f64> = test_raw
                .iter()
                .map(|row| {
                    let mut eta = st.intercept;
                    for j in 0..x.m {
                        let (mean, sd) = x.standardization[j];
                        if sd > 1e-12 {
                            eta += st.beta[j] * (row[j] - mean) / sd;
                        }
                    }
                    logistic(eta)
                })
                .collect();
            fold_losses[li][fold] = log_loss(&probs, &test_y);
        }
    }

    let mean_loss: Vec<f64> = fold_losses
        .iter()
        .map(|fl| fl.iter().sum::<f64>() / cv_folds as f64)
        .collect();
    let se_loss: Vec<f64> = fold_losses
        .iter()
        .zip(&mean_loss)
        .map(|(fl, &m)| {
            let var =
                fl.iter().map(|l| (l - m) * (l - m)).sum::<f64>() / (cv_folds as f64 - 1.0);
            (var / cv_folds as f64).sqrt()
        })
        .collect();

    let best = mean_loss
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let chosen = match rule {
        LambdaRule::MinLoss => best,
        LambdaRule::OneSe => {
            let cutoff = mean_loss[best] + se_loss[best];
            // lambdas are descending; the first index within the cutoff is
            // the largest acceptable lambda
            (0..lambdas.len()).find(|&i| mean_loss[i] <= cutoff).unwrap_or(best)
        }
    };
    Ok(CvChoice {
        lambda: lambdas[chosen],
        mean_loss,
        se_loss,
        grid: lambdas,
    })
}

/// The three fitted nuisance models.
#[derive(Debug, Clone)]
pub struct NuisanceFits {
    pub mu0: GlmFit,
    pub mu1: GlmFit,
    pub e: GlmFit,
}

/// Per-unit nuisance probabilities on a target dataset. `fits` is None
/// when the estimates were loaded from disk rather than fit in-process.
#[derive(Debug, Clone)]
pub struct NuisanceEstimates {
    pub mu0_hat: Vec<f64>,
    pub mu1_hat: Vec<f64>,
    pub e_hat: Vec<f64>,
    pub fits: Option<NuisanceFits>,
}

impl NuisanceEstimates {
    /// Wrap precomputed probability vectors, clamping into [1e-6, 1-1e-6].
    pub fn from_probabilities(
        mu0_hat: Vec<f64>,
        mu1_hat: Vec<f64>,
        e_hat: Vec<f64>,
    ) -> Result<Self> {
        if mu0_hat.len() != mu1_hat.len() || mu0_hat.len() != e_hat.len() {
            return Err(Error::Alignment("nuisance vectors have unequal lengths".into()));
        }
        let clamp = |v: Vec<f64>| -> Result<Vec<f64>> {
            v.into_iter()
                .map(|p| {
                    if !p.is_finite() {
                        Err(Error::Validation("non-finite nuisance probability".into()))
                    } else {
                        Ok(p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
                    }
                })
                .collect()
        };
        Ok(Self {
            mu0_hat: clamp(mu0_hat)?,
            mu1_hat: clamp(mu1_hat)?,
            e_hat: clamp(e_hat)?,
            fits: None,
        })
    }
}

/// How the cross-validated lambda is picked from the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaRule {
    /// Largest lambda within one standard error of the minimum loss.
    #[default]
    OneSe,
    /// Lambda with the minimum mean loss. Used for policy-construction
    /// fits, where over-shrinking to a constant score would collapse the
    /// whole policy family.
    MinLoss,
}

/// Configuration for nuisance fitting.
#[derive(Debug, Clone)]
pub struct NuisanceConfig {
    /// None selects the default 50-point grid per model.
    pub lambda_grid: Option<Vec<f64>>,
    pub cv_folds: usize,
    pub seed: u64,
    pub lambda_rule: LambdaRule,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self { lambda_grid: None, cv_folds: 5, seed: 0, lambda_rule: LambdaRule::OneSe }
    }
}

impl NuisanceConfig {
    pub fn with_rule(mut self, rule: LambdaRule) -> Self {
        self.lambda_rule = rule;
        self
    }
}

/// Single cross-validated lasso-logit fit on an id subset.
pub fn fit_cv(
    d: &Dataset,
    target: FitTarget,
    subset: &HashSet<u64>,
    cfg: &NuisanceConfig,
) -> Result<GlmFit> {
    cv_fit(d, target, subset, cfg, 0)
}

fn cv_fit(
    d: &Dataset,
    target: FitTarget,
    subset: &HashSet<u64>,
    cfg: &NuisanceConfig,
    salt: u64,
) -> Result<GlmFit> {
    if let Some(grid) = &cfg.lambda_grid {
        if grid.iter().any(|&l| l <= 0.0) {
            return Err(Error::Domain("lambda grid entries must be positive".into()));
        }
    }
    let (raw, y) = extract_rows(d, target, subset);
    check_two_classes(&y, target_name(target))?;
    let x = DesignMatrix::build(&raw);
    let grid = match &cfg.lambda_grid {
        Some(g) => g.clone(),
        None => default_lambda_grid(&x, &y),
    };
    let choice = cv_select_lambda(
        &raw,
        &y,
        &grid,
        cfg.cv_folds,
        cfg.seed.wrapping_add(salt),
        cfg.lambda_rule,
    )?;
    let state = coordinate_descent(&x, &y, choice.lambda, None);
    Ok(to_original_scale(&state, &x, choice.lambda, d.schema()))
}

/// Fit the three nuisance models on `fold` and predict on `target_ds`.
///
/// mu0 is fit on untreated fold units (outcome target), mu1 on treated
/// units, and the propensity on all fold units (treatment target). Each
/// lambda is chosen by cross-validated log-loss with the one-SE rule.
pub fn fit_nuisance(
    d: &Dataset,
    fold: &HashSet<u64>,
    target_ds: &Dataset,
    cfg: &NuisanceConfig,
) -> Result<NuisanceEstimates> {
    let untreated: HashSet<u64> = d
        .records()
        .iter()
        .filter(|r| fold.contains(&r.id) && r.treatment == 0)
        .map(|r| r.id)
        .collect();
    let treated: HashSet<u64> = d
        .records()
        .iter()
        .filter(|r| fold.contains(&r.id) && r.treatment == 1)
        .map(|r| r.id)
        .collect();

    let mu0_fit = cv_fit(d, FitTarget::Outcome, &untreated, cfg, 1)?;
    let mu1_fit = cv_fit(d, FitTarget::Outcome, &treated, cfg, 2)?;
    let e_fit = cv_fit(d, FitTarget::Treatment, fold, cfg, 3)?;

    let mu0_hat = predict(&mu0_fit, target_ds)?;
    let mu1_hat = predict(&mu1_fit, target_ds)?;
    let e_hat = predict(&e_fit, target_ds)?;
    Ok(NuisanceEstimates {
        mu0_hat,
        mu1_hat,
        e_hat,
        fits: Some(NuisanceFits { mu0: mu0_fit, mu1: mu1_fit, e: e_fit }),
    })
}

impl NuisanceEstimates {
    pub fn len(&self) -> usize {
        self.mu0_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu0_hat.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CaseRecord;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn make_dataset(xs: &[Vec<f64>], t: &[u8], y: &[u8], names: &[&str]) -> Dataset {
        let records: Vec<CaseRecord> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| CaseRecord {
                id: i as u64 + 1,
                covariates: x.clone(),
                treatment: t[i],
                outcome: y[i],
            })
            .collect();
        Dataset::new(names.iter().map(|s| s.to_string()).collect(), records, "test".into())
            .unwrap()
    }

    fn all_ids(d: &Dataset) -> HashSet<u64> {
        d.ids().into_iter().collect()
    }

    fn random_logistic_dataset(
        n: usize,
        coefs: &[f64],
        intercept: f64,
        seed: u64,
    ) -> Dataset {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let m = coefs.len();
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..m).map(|_| rng.random_range(-1.5..1.5)).collect();
            let eta: f64 =
                intercept + coefs.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
            let y = u8::from(rng.random::<f64>() < logistic(eta));
            xs.push(x);
            ys.push(y);
        }
        let names: Vec<String> = (0..m).map(|j| format!("x{j}")).collect();
        let records: Vec<CaseRecord> = xs
            .into_iter()
            .enumerate()
            .map(|(i, x)| CaseRecord {
                id: i as u64 + 1,
                covariates: x,
                treatment: 0,
                outcome: ys[i],
            })
            .collect();
        Dataset::new(names, records, "logistic sim".into()).unwrap()
    }

    #[test]
    fn huge_lambda_gives_intercept_only() {
        let d = random_logistic_dataset(300, &[1.0, -0.5], 0.3, 5);
        let fit = fit_lasso_logit(&d, FitTarget::Outcome, &all_ids(&d), 1e6).unwrap();
        assert!(fit.coefficients.iter().all(|&c| c == 0.0));
        let rate =
            d.records().iter().map(|r| r.outcome as f64).sum::<f64>() / d.len() as f64;
        assert_relative_eq!(fit.intercept, logit(rate), epsilon = 1e-6);
    }

    #[test]
    fn balanced_independent_feature_gets_zero_slope() {
        // feature perfectly balanced and independent of target: within each
        // feature level the outcome rate is identical by construction
        let mut xs = Vec::new();
        let mut y = Vec::new();
        for i in 0..400 {
            let f = (i % 2) as f64;
            let o = u8::from((i / 2) % 2 == 0);
            xs.push(vec![f]);
            y.push(o);
        }
        let t = vec![0u8; 400];
        let d = make_dataset(&xs, &t, &y, &["f"]);
        let fit = fit_lasso_logit(&d, FitTarget::Outcome, &all_ids(&d), 0.0).unwrap();
        // exact MLE slope is 0; allow well under 3 SE (~0.2 here)
        assert!(fit.coefficients[0].abs() < 1e-6, "slope {}", fit.coefficients[0]);
    }

    #[test]
    fn predict_hand_computed() {
        let d = make_dataset(&[vec![1.0, 1.0]], &[0], &[0], &["a", "b"]);
        let fit = GlmFit {
            intercept: 0.5,
            coefficients: vec![1.0, -2.0],
            lambda: 0.0,
            standardization: vec![(0.0, 1.0); 2],
            converged: true,
            objective: 0.0,
            schema: vec!["a".into(), "b".into()],
            std_intercept: 0.5,
            std_coefficients: vec![1.0, -2.0],
        };
        let p = predict(&fit, &d).unwrap();
        assert_relative_eq!(p[0], 0.3775406687981454, epsilon = 1e-10);
    }

    #[test]
    fn predict_clamps_and_handles_zero() {
        let d = make_dataset(&[vec![0.0]], &[0], &[0], &["a"]);
        let mut fit = fit_lasso_logit(&d0(), FitTarget::Outcome, &all_ids(&d0()), 1e6).unwrap();
        fit.intercept = 50.0;
        fit.coefficients = vec![0.0];
        let p = predict(&fit, &d).unwrap();
        assert_eq!(p[0], 1.0 - 1e-6);
        fit.intercept = 0.0;
        let p = predict(&fit, &d).unwrap();
        assert_eq!(p[0], 0.5);
    }

    fn d0() -> Dataset {
        make_dataset(
            &[vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            &[0, 0, 0, 0],
            &[0, 1, 0, 1],
            &["a"],
        )
    }

    #[test]
    fn schema_mismatch_rejected() {
        let d = make_dataset(&[vec![0.0, 1.0]], &[0], &[0], &["a", "b"]);
        let fit = fit_lasso_logit(&d0(), FitTarget::Outcome, &all_ids(&d0()), 0.1).unwrap();
        assert!(predict(&fit, &d).is_err());
    }

    #[test]
    fn single_class_subset_rejected() {
        let d = make_dataset(
            &[vec![0.0], vec![1.0], vec![2.0]],
            &[0, 0, 0],
            &[1, 1, 1],
            &["a"],
        );
        match fit_lasso_logit(&d, FitTarget::Outcome, &all_ids(&d), 0.1) {
            Err(Error::DegenerateTarget(_)) => {}
            other => panic!("expected degenerate target, got {other:?}"),
        }
    }

    #[test]
    fn negative_lambda_rejected() {
        match fit_lasso_logit(&d0(), FitTarget::Outcome, &all_ids(&d0()), -0.1) {
            Err(Error::Domain(_)) => {}
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    // ---- independent proximal-gradient oracle --------------------------

    /// FISTA on the same standardized problem, with backtracking line
    /// search; an implementation independent of coordinate descent.
    fn proximal_oracle(x: &DesignMatrix, y: &[f64], lambda: f64) -> (f64, Vec<f64>, f64) {
        let n = x.n;
        let nf = n as f64;
        let m = x.m;
        let grad = |b0: f64, beta: &[f64]| -> (f64, Vec<f64>, f64) {
            let mut g0 = 0.0;
            let mut g = vec![0.0; m];
            let mut nll = 0.0;
            for i in 0..n {
                let mut eta = b0;
                for j in 0..m {
                    eta += beta[j] * x.z[i * m + j];
                }
                let p = logistic(eta);
                nll += log1pexp(eta) - y[i] * eta;
                let r = p - y[i];
                g0 += r;
                for j in 0..m {
                    g[j] += r * x.z[i * m + j];
                }
            }
            (g0 / nf, g.iter().map(|v| v / nf).collect(), nll / nf)
        };
        let mut b0 = 0.0;
        let mut beta = vec![0.0; m];
        let mut vb0 = b0;
        let mut vbeta = beta.clone();
        let mut tk = 1.0f64;
        let mut step = 1.0f64;
        for _iter in 0..200_000 {
            let (g0, g, nll_v) = grad(vb0, &vbeta);
            // backtracking on the smooth part
            loop {
                let nb0 = vb0 - step * g0;
                let nbeta: Vec<f64> = vbeta
                    .iter()
                    .zip(&g)
                    .map(|(b, gj)| soft_threshold(b - step * gj, step * lambda))
                    .collect();
                let mut nll_new = 0.0;
                for i in 0..n {
                    let mut eta = nb0;
                    for j in 0..m {
                        eta += nbeta[j] * x.z[i * m + j];
                    }
                    nll_new += log1pexp(eta) - y[i] * eta;
                }
                nll_new /= nf;
                let mut quad = nll_v + g0 * (nb0 - vb0) + (nb0 - vb0).powi(2) / (2.0 * step);
                for j in 0..m {
                    let dj = nbeta[j] - vbeta[j];
                    quad += g[j] * dj + dj * dj / (2.0 * step);
                }
                if nll_new <= quad + 1e-14 {
                    let t_next = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
                    let mom = (tk - 1.0) / t_next;
                    let prev_b0 = b0;
                    let prev_beta = beta.clone();
                    b0 = nb0;
                    beta = nbeta;
                    vb0 = b0 + mom * (b0 - prev_b0);
                    vbeta = beta
                        .iter()
                        .zip(&prev_beta)
                        .map(|(nb, pb)| nb + mom * (nb - pb))
                        .collect();
                    tk = t_next;
                    let change = (b0 - prev_b0)
                        .abs()
                        .max(
                            beta.iter()
                                .zip(&prev_beta)
                                .map(|(a, b)| (a - b).abs())
                                .fold(0.0, f64::max),
                        );
                    if change < 1e-13 {
                        let eta = x.linear_predictor(b0, &beta);
                        return (b0, beta.clone(), penalized_objective(&eta, y, &beta, lambda));
                    }
                    break;
                }
                step *= 0.5;
            }
        }
        let eta = x.linear_predictor(b0, &beta);
        (b0, beta.clone(), penalized_objective(&eta, y, &beta, lambda))
    }

    #[test]
    fn matches_proximal_gradient_oracle() {
        let d = random_logistic_dataset(200, &[1.2, -0.8, 0.0, 0.4], -0.3, 11);
        let subset = all_ids(&d);
        let (raw, y) = extract_rows(&d, FitTarget::Outcome, &subset);
        let x = DesignMatrix::build(&raw);
        for lambda in [0.01, 0.05] {
            let fit = fit_lasso_logit(&d, FitTarget::Outcome, &subset, lambda).unwrap();
            let (_, _, obj_oracle) = proximal_oracle(&x, &y, lambda);
            assert!(
                (fit.objective - obj_oracle).abs() < 1e-6,
                "lambda={lambda}: cd objective {} vs oracle {}",
                fit.objective,
                obj_oracle
            );
            assert!(fit.converged);
            assert!(fit.kkt_residual(&x, &y) < 1e-6, "kkt {}", fit.kkt_residual(&x, &y));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = random_logistic_dataset(60, &[0.7, -1.1], 0.2, 3);
        let subset = all_ids(&d);
        let (raw, y) = extract_rows(&d, FitTarget::Outcome, &subset);
        let x = DesignMatrix::build(&raw);
        let nll = |b0: f64, beta: &[f64]| -> f64 {
            let eta = x.linear_predictor(b0, beta);
            eta.iter().zip(&y).map(|(&e, &yi)| log1pexp(e) - yi * e).sum::<f64>()
                / y.len() as f64
        };
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for _ in 0..5 {
            let b0: f64 = rng.random_range(-1.0..1.0);
            let beta: Vec<f64> = (0..x.m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let eta = x.linear_predictor(b0, &beta);
            let h = 1e-5;
            for j in 0..x.m {
                let analytic: f64 = (0..x.n)
                    .map(|i| x.z[i * x.m + j] * (logistic(eta[i]) - y[i]))
                    .sum::<f64>()
                    / y.len() as f64;
                let mut bp = beta.clone();
                bp[j] += h;
                let mut bm = beta.clone();
                bm[j] -= h;
                let fd = (nll(b0, &bp) - nll(b0, &bm)) / (2.0 * h);
                assert_relative_eq!(analytic, fd, max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn standardization_invariance_at_lambda_zero() {
        let d = random_logistic_dataset(150, &[0.9, -0.6], 0.1, 21);
        // scale the first feature by 100 in a copy
        let scaled_records: Vec<CaseRecord> = d
            .records()
            .iter()
            .map(|r| {
                let mut c = r.covariates.clone();
                c[0] *= 100.0;
                CaseRecord { id: r.id, covariates: c, treatment: r.treatment, outcome: r.outcome }
            })
            .collect();
        let d_scaled = Dataset::new(d.schema().to_vec(), scaled_records, "scaled".into()).unwrap();
        let subset = all_ids(&d);
        let f1 = fit_lasso_logit(&d, FitTarget::Outcome, &subset, 0.0).unwrap();
        let f2 = fit_lasso_logit(&d_scaled, FitTarget::Outcome, &subset, 0.0).unwrap();
        let p1 = predict(&f1, &d).unwrap();
        let p2 = predict(&f2, &d_scaled).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn cv_lambda_close_to_validation_oracle() {
        // generated-from-logistic data; the oracle lambda is the grid point
        // with the best log-loss on a large independent validation set
        let train = random_logistic_dataset(5_000, &[1.0, -0.7, 0.5, 0.0, 0.0], -1.0, 77);
        let valid = random_logistic_dataset(40_000, &[1.0, -0.7, 0.5, 0.0, 0.0], -1.0, 78);
        let subset = all_ids(&train);
        let (raw, y) = extract_rows(&train, FitTarget::Outcome, &subset);
        let x = DesignMatrix::build(&raw);
        let grid = default_lambda_grid(&x, &y);
        let choice = cv_select_lambda(&raw, &y, &grid, 5, 42, LambdaRule::OneSe).unwrap();

        let (_, y_valid) = extract_rows(&valid, FitTarget::Outcome, &all_ids(&valid));
        let eval_loss = |lambda: f64| -> f64 {
            let fit = fit_lasso_logit(&train, FitTarget::Outcome, &subset, lambda).unwrap();
            let probs = predict(&fit, &valid).unwrap();
            log_loss(&probs, &y_valid)
        };
        let chosen_loss = eval_loss(choice.lambda);
        let oracle_loss = grid
            .iter()
            .map(|&l| eval_loss(l))
            .fold(f64::INFINITY, f64::min);
        assert!(
            chosen_loss - oracle_loss < 0.01,
            "chosen {chosen_loss} vs oracle {oracle_loss}"
        );
    }

    #[test]
    fn nuisance_propensity_near_half_for_coin_flip_treatment() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let n = 2_500;
        let records: Vec<CaseRecord> = (0..n)
            .map(|i| {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let t = u8::from(rng.random::<f64>() < 0.5);
                let y = u8::from(rng.random::<f64>() < 0.3 + 0.1 * x[0]);
                CaseRecord { id: i as u64, covariates: x, treatment: t, outcome: y }
            })
            .collect();
        let d = Dataset::new(
            vec!["a".into(), "b".into(), "c".into()],
            records,
            "coin".into(),
        )
        .unwrap();
        let fold = all_ids(&d);
        let nz = fit_nuisance(&d, &fold, &d, &NuisanceConfig::default()).unwrap();
        let mean_e = nz.e_hat.iter().sum::<f64>() / nz.e_hat.len() as f64;
        assert!((mean_e - 0.5).abs() < 0.03, "mean e_hat {mean_e}");
        assert!(nz.e_hat.iter().all(|&p| p >= PROB_CLAMP && p <= 1.0 - PROB_CLAMP));
    }
}
