//! Bayesian unmeasured-confounding model for policy evaluation.
//!
//! Units are ranked by the estimated no-treatment outcome mu0-hat and cut
//! into K near-equal groups. Within each group, treatment and both
//! potential-outcome arms are Bernoulli-logit in the reduced covariates
//! (mu0-hat, mu1-hat, e-hat) plus a per-unit latent confounder u_i with
//! group-specific positive loadings. Adjacent groups are tied together by
//! random-walk priors; positive-constrained chains use truncated-normal
//! steps. All constrained parameters are log-transformed for the sampler,
//! with Jacobians included in the density.
//!
//! Sampler chart: the six unconstrained coefficient chains are
//! non-centered — the sampler sees the first element and standardized
//! steps z_j, with values reconstructed as v_j = v_1 + tau * sum(z). This
//! is the same posterior in a better-conditioned chart (it removes the
//! random-walk scale funnels). The positive chains stay centered because
//! their truncation point moves with the previous element.

use std::collections::HashSet;
use std::f64::consts::LN_2;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::NuisanceEstimates;
use crate::mathutil::{
    bernoulli_loglik, ln_norm_cdf, ln_norm_pdf, logistic, pdf_over_cdf,
};
use crate::mcmc::{self, LogDensityModel, PosteriorDraws, SamplerConfig};
use crate::policy::Policy;

/// Per-unit group indices (0-based), K groups.
#[derive(Debug, Clone)]
pub struct BinAssignment {
    pub k: usize,
    /// group index per unit, aligned to the unit order used to build it
    pub groups: Vec<usize>,
}

/// Rank units by mu0-hat (ties broken by unit id ascending) and split
/// into K contiguous blocks whose sizes differ by at most one; the first
/// n mod K blocks take the extra unit.
pub fn bin_by_risk(mu0_hat: &[f64], unit_ids: &[u64], k: usize) -> Result<BinAssignment> {
    let n = mu0_hat.len();
    if k == 0 {
        return Err(Error::Domain("K must be >= 1".into()));
    }
    if k > n {
        return Err(Error::Domain(format!("K = {k} exceeds number of units {n}")));
    }
    if unit_ids.len() != n {
        return Err(Error::Alignment("mu0_hat and unit_ids length mismatch".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        mu0_hat[a]
            .partial_cmp(&mu0_hat[b])
            .unwrap()
            .then(unit_ids[a].cmp(&unit_ids[b]))
    });
    let base = n / k;
    let extra = n % k;
    let mut groups = vec![0usize; n];
    let mut pos = 0;
    for g in 0..k {
        let size = base + usize::from(g < extra);
        for _ in 0..size {
            groups[order[pos]] = g;
            pos += 1;
        }
    }
    Ok(BinAssignment { k, groups })
}

/// Settings of the sensitivity model.
#[derive(Debug, Clone)]
pub struct SensitivitySpec {
    pub k: usize,
    pub sigma_tau: f64,
    pub sampler: SamplerConfig,
}

impl Default for SensitivitySpec {
    fn default() -> Self {
        Self { k: 10, sigma_tau: 1.0, sampler: SamplerConfig::default() }
    }
}

// Chain indices into the coefficient block.
const CH_ALPHA_0: usize = 0;
const CH_ALPHA_MU0: usize = 1;
const CH_ALPHA_U: usize = 2;
const CH_BETA_0: usize = 3;
const CH_BETA_MU1: usize = 4;
const CH_BETA_U: usize = 5;
const CH_GAMMA_0: usize = 6;
const CH_GAMMA_E: usize = 7;
const CH_GAMMA_U: usize = 8;
const N_CHAINS: usize = 9;

const CHAIN_NAMES: [&str; N_CHAINS] = [
    "alpha_0", "alpha_mu0", "alpha_u", "beta_0", "beta_mu1", "beta_u", "gamma_0", "gamma_e",
    "gamma_u",
];

fn chain_is_positive(c: usize) -> bool {
    matches!(c, CH_ALPHA_U | CH_BETA_U | CH_GAMMA_U)
}

/// Constrained-scale parameters decoded from one unconstrained draw.
#[derive(Debug, Clone)]
pub struct ConfoundParams {
    pub alpha_0: Vec<f64>,
    pub alpha_mu0: Vec<f64>,
    pub alpha_u: Vec<f64>,
    pub beta_0: Vec<f64>,
    pub beta_mu1: Vec<f64>,
    pub beta_u: Vec<f64>,
    pub gamma_0: Vec<f64>,
    pub gamma_ehat: Vec<f64>,
    pub gamma_u: Vec<f64>,
    pub tau: Vec<f64>,
    pub u: Vec<f64>,
}

/// The joint log-posterior as a differentiable density over unconstrained
/// parameters: 9 coefficient chains of length K, 9 random-walk scales,
/// and n per-unit confounders.
#[derive(Debug, Clone)]
pub struct ConfoundModel {
    t: Vec<u8>,
    y: Vec<u8>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    e: Vec<f64>,
    bins: Vec<usize>,
    pub k: usize,
    pub sigma_tau: f64,
    unit_ids: Vec<u64>,
    /// Test-only mode: treat all u-loadings as exactly zero.
    pin_u_loadings: bool,
}

impl ConfoundModel {
    pub fn new(
        d: &Dataset,
        nz: &NuisanceEstimates,
        bins: &BinAssignment,
        k: usize,
        sigma_tau: f64,
    ) -> Result<Self> {
        let n = d.len();
        if nz.len() != n || bins.groups.len() != n {
            return Err(Error::Alignment(format!(
                "dataset has {n} units, nuisance {}, bins {}",
                nz.len(),
                bins.groups.len()
            )));
        }
        if bins.k != k {
            return Err(Error::Alignment(format!(
                "bin assignment has K={}, spec K={k}",
                bins.k
            )));
        }
        if sigma_tau <= 0.0 {
            return Err(Error::Domain("sigma_tau must be positive".into()));
        }
        Ok(Self {
            t: d.treatments(),
            y: d.outcomes(),
            mu0: nz.mu0_hat.clone(),
            mu1: nz.mu1_hat.clone(),
            e: nz.e_hat.clone(),
            bins: bins.groups.clone(),
            k,
            sigma_tau,
            unit_ids: d.ids(),
            pin_u_loadings: false,
        })
    }

    /// Raw-vector constructor for tests and simulation.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        t: Vec<u8>,
        y: Vec<u8>,
        mu0: Vec<f64>,
        mu1: Vec<f64>,
        e: Vec<f64>,
        bins: BinAssignment,
        unit_ids: Vec<u64>,
        sigma_tau: f64,
    ) -> Self {
        let k = bins.k;
        Self {
            t,
            y,
            mu0,
            mu1,
            e,
            bins: bins.groups,
            k,
            sigma_tau,
            unit_ids,
            pin_u_loadings: false,
        }
    }

    /// Test-only: pin all u-loadings to zero so the likelihood ignores u.
    pub fn with_pinned_loadings(mut self) -> Self {
        self.pin_u_loadings = true;
        self
    }

    pub fn n_units(&self) -> usize {
        self.t.len()
    }

    pub fn unit_ids(&self) -> &[u64] {
        &self.unit_ids
    }

    fn coef_offset(&self, chain: usize) -> usize {
        chain * self.k
    }

    fn tau_offset(&self) -> usize {
        N_CHAINS * self.k
    }

    fn u_offset(&self) -> usize {
        N_CHAINS * self.k + N_CHAINS
    }

    /// Decode a sampler-chart draw into constrained-scale parameters.
    pub fn decode(&self, x: &[f64]) -> ConfoundParams {
        let k = self.k;
        let tau: Vec<f64> = (0..N_CHAINS)
            .map(|c| x[self.tau_offset() + c].exp())
            .collect();
        let take = |c: usize| -> Vec<f64> {
            let off = self.coef_offset(c);
            let raw = &x[off..off + k];
            if chain_is_positive(c) {
                if self.pin_u_loadings {
                    vec![0.0; k]
                } else {
                    raw.iter().map(|v| v.exp()).collect()
                }
            } else {
                // non-centered: raw = (v_1, z_2, ..., z_K)
                let mut vals = Vec::with_capacity(k);
                let mut cur = raw[0];
                vals.push(cur);
                for &z in &raw[1..] {
                    cur += tau[c] * z;
                    vals.push(cur);
                }
                vals
            }
        };
        let u = x[self.u_offset()..].to_vec();
        ConfoundParams {
            alpha_0: take(CH_ALPHA_0),
            alpha_mu0: take(CH_ALPHA_MU0),
            alpha_u: take(CH_ALPHA_U),
            beta_0: take(CH_BETA_0),
            beta_mu1: take(CH_BETA_MU1),
            beta_u: take(CH_BETA_U),
            gamma_0: take(CH_GAMMA_0),
            gamma_ehat: take(CH_GAMMA_E),
            gamma_u: take(CH_GAMMA_U),
            tau,
            u,
        }
    }

    /// Encode constrained chain values into the sampler chart (tests and
    /// simulation): inverse of `decode` for one unconstrained chain.
    pub fn encode_unconstrained_chain(vals: &[f64], tau: f64) -> Vec<f64> {
        let mut raw = Vec::with_capacity(vals.len());
        raw.push(vals[0]);
        for j in 1..vals.len() {
            raw.push((vals[j] - vals[j - 1]) / tau);
        }
        raw
    }

    /// Likelihood part only (used by collapse tests).
    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        let p = self.decode(x);
        let mut val = 0.0;
        for i in 0..self.n_units() {
            let k = self.bins[i];
            let eta_t = p.gamma_0[k] + p.gamma_ehat[k] * self.e[i] + p.gamma_u[k] * p.u[i];
            val += bernoulli_loglik(self.t[i] as f64, eta_t);
            if self.t[i] == 1 {
                let eta = p.beta_0[k] + p.beta_mu1[k] * self.mu1[i] + p.beta_u[k] * p.u[i];
                val += bernoulli_loglik(self.y[i] as f64, eta);
            } else {
                let eta = p.alpha_0[k] + p.alpha_mu0[k] * self.mu0[i] + p.alpha_u[k] * p.u[i];
                val += bernoulli_loglik(self.y[i] as f64, eta);
            }
        }
        val
    }
}

/// Random-walk prior on an unconstrained chain: first element N(0,1),
/// subsequent steps N(prev, tau^2). Returns the log-density; accumulates
/// gradients wrt the (constrained) values and tau.
pub fn rw_normal_logp(vals: &[f64], tau: f64) -> f64 {
    let mut val = ln_norm_pdf(vals[0]);
    for j in 1..vals.len() {
        let d = vals[j] - vals[j - 1];
        val += -tau.ln() + ln_norm_pdf(d / tau);
    }
    val
}

/// Sign-constrained random-walk prior: first element half-normal N+(0,1),
/// subsequent steps truncated-normal N+(prev, tau^2) with the normalizing
/// constant Phi(prev/tau) included.
pub fn rw_halfnormal_logp(vals: &[f64], tau: f64) -> f64 {
    let mut val = LN_2 + ln_norm_pdf(vals[0]);
    for j in 1..vals.len() {
        let d = vals[j] - vals[j - 1];
        let r = vals[j - 1] / tau;
        val += -tau.ln() + ln_norm_pdf(d / tau) - ln_norm_cdf(r);
    }
    val
}

fn rw_halfnormal_grad(vals: &[f64], tau: f64, g_vals: &mut [f64], g_tau: &mut f64) -> f64 {
    let mut val = LN_2 + ln_norm_pdf(vals[0]);
    g_vals[0] += -vals[0];
    for j in 1..vals.len() {
        let d = vals[j] - vals[j - 1];
        let r = vals[j - 1] / tau;
        let mills = pdf_over_cdf(r);
        val += -tau.ln() + ln_norm_pdf(d / tau) - ln_norm_cdf(r);
        g_vals[j] += -d / (tau * tau);
        g_vals[j - 1] += d / (tau * tau) - mills / tau;
        *g_tau += -1.0 / tau + d * d / (tau * tau * tau) + mills * r / tau;
    }
    val
}

impl LogDensityModel for ConfoundModel {
    fn dimension(&self) -> usize {
        N_CHAINS * self.k + N_CHAINS + self.n_units()
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let k = self.k;
        let n = self.n_units();
        let p = self.decode(x);
        let mut grad = vec![0.0; self.dimension()];
        let mut val = 0.0;

        // gradients wrt constrained coefficients, chain-major
        let mut g_coef = vec![0.0; N_CHAINS * k];
        let mut g_tau_con = vec![0.0; N_CHAINS];
        let u_off = self.u_offset();

        // likelihood
        for i in 0..n {
            let b = self.bins[i];
            let ui = p.u[i];

            let eta_t = p.gamma_0[b] + p.gamma_ehat[b] * self.e[i] + p.gamma_u[b] * ui;
            val += bernoulli_loglik(self.t[i] as f64, eta_t);
            let r_t = self.t[i] as f64 - logistic(eta_t);
            g_coef[CH_GAMMA_0 * k + b] += r_t;
            g_coef[CH_GAMMA_E * k + b] += r_t * self.e[i];
            g_coef[CH_GAMMA_U * k + b] += r_t * ui;
            grad[u_off + i] += r_t * p.gamma_u[b];

            if self.t[i] == 1 {
                let eta = p.beta_0[b] + p.beta_mu1[b] * self.mu1[i] + p.beta_u[b] * ui;
                val += bernoulli_loglik(self.y[i] as f64, eta);
                let r = self.y[i] as f64 - logistic(eta);
                g_coef[CH_BETA_0 * k + b] += r;
                g_coef[CH_BETA_MU1 * k + b] += r * self.mu1[i];
                g_coef[CH_BETA_U * k + b] += r * ui;
                grad[u_off + i] += r * p.beta_u[b];
            } else {
                let eta = p.alpha_0[b] + p.alpha_mu0[b] * self.mu0[i] + p.alpha_u[b] * ui;
                val += bernoulli_loglik(self.y[i] as f64, eta);
                let r = self.y[i] as f64 - logistic(eta);
                g_coef[CH_ALPHA_0 * k + b] += r;
                g_coef[CH_ALPHA_MU0 * k + b] += r * self.mu0[i];
                g_coef[CH_ALPHA_U * k + b] += r * ui;
                grad[u_off + i] += r * p.alpha_u[b];
            }
        }

        // random-walk priors and chart mapping per coefficient chain
        let chain_vals = |c: usize| -> &[f64] {
            match c {
                CH_ALPHA_0 => &p.alpha_0,
                CH_ALPHA_MU0 => &p.alpha_mu0,
                CH_ALPHA_U => &p.alpha_u,
                CH_BETA_0 => &p.beta_0,
                CH_BETA_MU1 => &p.beta_mu1,
                CH_BETA_U => &p.beta_u,
                CH_GAMMA_0 => &p.gamma_0,
                CH_GAMMA_E => &p.gamma_ehat,
                _ => &p.gamma_u,
            }
        };
        for c in 0..N_CHAINS {
            let tau = p.tau[c];
            let off = c * k;
            let raw = &x[off..off + k];
            if chain_is_positive(c) {
                if self.pin_u_loadings {
                    // pinned loadings drop out entirely; keep their
                    // coordinates stationary under a standard-normal prior
                    // on the raw coordinates so the sampler stays proper
                    for (j, &w) in raw.iter().enumerate() {
                        val += ln_norm_pdf(w);
                        grad[off + j] = -w;
                    }
                    continue;
                }
                // centered truncated-normal walk on the constrained scale
                val += rw_halfnormal_grad(
                    chain_vals(c),
                    tau,
                    &mut g_coef[off..off + k],
                    &mut g_tau_con[c],
                );
                let vals = chain_vals(c);
                for j in 0..k {
                    // log transform: dval/dw = a * dval/da + 1 (Jacobian)
                    grad[off + j] = vals[j] * g_coef[off + j] + 1.0;
                    val += raw[j]; // log-Jacobian
                }
            } else {
                // non-centered: raw = (v_1, z_2..z_K), all N(0,1) a priori;
                // likelihood gradients map back through v_j = v_1 + tau*sum z
                let mut suffix = 0.0;
                for m in (1..k).rev() {
                    suffix += g_coef[off + m];
                    grad[off + m] = tau * suffix - raw[m];
                    g_tau_con[c] += raw[m] * suffix;
                    val += ln_norm_pdf(raw[m]);
                }
                grad[off] = suffix + g_coef[off] - raw[0];
                val += ln_norm_pdf(raw[0]);
            }
        }

        // half-normal priors on the scales, log-transformed
        let tau_off = self.tau_offset();
        for c in 0..N_CHAINS {
            let tau = p.tau[c];
            let st = self.sigma_tau;
            val += LN_2 - st.ln() + ln_norm_pdf(tau / st);
            let g_con = g_tau_con[c] - tau / (st * st);
            grad[tau_off + c] = tau * g_con + 1.0;
            val += x[tau_off + c]; // log-Jacobian
        }

        // standard-normal prior on the unit confounders
        for i in 0..n {
            val += ln_norm_pdf(p.u[i]);
            grad[u_off + i] += -p.u[i];
        }

        (val, grad)
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dimension());
        for (c, chain) in CHAIN_NAMES.iter().enumerate() {
            for j in 1..=self.k {
                if j > 1 && !chain_is_positive(c) {
                    names.push(format!("{chain}_z[{j}]"));
                } else {
                    names.push(format!("{chain}[{j}]"));
                }
            }
        }
        for chain in CHAIN_NAMES {
            names.push(format!("tau_{chain}"));
        }
        for i in 0..self.n_units() {
            names.push(format!("u[{i}]"));
        }
        names
    }
}

/// A completed sensitivity fit: the model, its posterior draws, and the
/// convergence gate.
pub struct SensitivityFit {
    pub model: ConfoundModel,
    pub bins: BinAssignment,
    pub draws: PosteriorDraws,
    /// false when any R-hat exceeds 1.1
    pub rhat_ok: bool,
}

/// Fit the sensitivity model on an evaluation dataset with nuisance
/// estimates from a disjoint fold.
pub fn fit_sensitivity(
    d: &Dataset,
    nz: &NuisanceEstimates,
    spec: &SensitivitySpec,
) -> Result<SensitivityFit> {
    let bins = bin_by_risk(&nz.mu0_hat, &d.ids(), spec.k)?;
    let model = ConfoundModel::new(d, nz, &bins, spec.k, spec.sigma_tau)?;
    let draws = mcmc::sample(&model, &spec.sampler)?;
    let max_rhat = draws.rhat.iter().copied().filter(|r| r.is_finite()).fold(0.0, f64::max);
    let rhat_ok = max_rhat <= 1.1;
    Ok(SensitivityFit { model, bins, draws, rhat_ok })
}

fn counterfactual_prob(model: &ConfoundModel, p: &ConfoundParams, i: usize, arm: u8) -> f64 {
    let b = model.bins[i];
    let eta = if arm == 0 {
        p.alpha_0[b] + p.alpha_mu0[b] * model.mu0[i] + p.alpha_u[b] * p.u[i]
    } else {
        p.beta_0[b] + p.beta_mu1[b] * model.mu1[i] + p.beta_u[b] * p.u[i]
    };
    logistic(eta)
}

/// One policy value per posterior draw: observed outcomes where the policy
/// agrees with the data, model-implied counterfactual probabilities
/// (Rao-Blackwellized) where it disagrees.
pub fn posterior_policy_value(
    draws: &PosteriorDraws,
    model: &ConfoundModel,
    pi: &Policy,
) -> Result<Vec<f64>> {
    let n = model.n_units();
    if pi.len() != n {
        return Err(Error::Alignment(format!(
            "policy has {} units, model has {n}",
            pi.len()
        )));
    }
    let total_draws = draws.n_draws();
    let values: Vec<f64> = (0..total_draws)
        .into_par_iter()
        .map(|idx| {
            let (c, it) = (idx / draws.iters, idx % draws.iters);
            let p = model.decode(draws.draw(c, it));
            let mut total = 0.0;
            for i in 0..n {
                let decision = pi.decisions()[i];
                if decision == model.t[i] {
                    total += model.y[i] as f64;
                } else {
                    total += counterfactual_prob(model, &p, i, decision);
                }
            }
            total / n as f64
        })
        .collect();
    Ok(values)
}

/// One subgroup-ATE sample per posterior draw, via the policy-value
/// identity with the posterior policy value as the functional.
pub fn posterior_subgroup_ate(
    draws: &PosteriorDraws,
    model: &ConfoundModel,
    group: &HashSet<u64>,
) -> Result<Vec<f64>> {
    let n = model.n_units();
    let in_group: Vec<bool> =
        model.unit_ids.iter().map(|id| group.contains(id)).collect();
    let g_count = in_group.iter().filter(|&&b| b).count();
    if g_count == 0 {
        return Err(Error::EmptyGroup);
    }
    let pi_g = Policy::from_decisions(
        in_group.iter().map(|&b| u8::from(b)).collect(),
        model.unit_ids.clone(),
    )?;
    let pi_empty = Policy::from_decisions(vec![0u8; n], model.unit_ids.clone())?;
    let v_g = posterior_policy_value(draws, model, &pi_g)?;
    let v_empty = posterior_policy_value(draws, model, &pi_empty)?;
    let scale = n as f64 / g_count as f64;
    Ok(v_g.iter().zip(&v_empty).map(|(a, b)| (a - b) * scale).collect())
}

impl SensitivityFit {
    pub fn policy_values(&self, pi: &Policy) -> Result<Vec<f64>> {
        posterior_policy_value(&self.draws, &self.model, pi)
    }

    pub fn subgroup_ate(&self, group: &HashSet<u64>) -> Result<Vec<f64>> {
        posterior_subgroup_ate(&self.draws, &self.model, group)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathutil::logit;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn bins_k1_and_split_rule() {
        let scores: Vec<f64> = vec![0.5, 0.1, 0.9, 0.3];
        let ids: Vec<u64> = vec![1, 2, 3, 4];
        let b = bin_by_risk(&scores, &ids, 1).unwrap();
        assert!(b.groups.iter().all(|&g| g == 0));

        // n=10, K=3, distinct scores -> sizes (4,3,3), block-sorted
        let scores: Vec<f64> = (0..10).map(|i| (10 - i) as f64 / 10.0).collect();
        let ids: Vec<u64> = (0..10).collect();
        let b = bin_by_risk(&scores, &ids, 3).unwrap();
        let mut sizes = vec![0usize; 3];
        for &g in &b.groups {
            sizes[g] += 1;
        }
        assert_eq!(sizes, vec![4, 3, 3]);
        // scores are descending, so the last 4 units form group 0
        assert_eq!(b.groups, vec![2, 2, 2, 1, 1, 1, 0, 0, 0, 0]);

        assert!(bin_by_risk(&scores, &ids, 11).is_err());
    }

    #[test]
    fn bins_break_ties_by_id() {
        let scores = vec![0.5, 0.5, 0.5, 0.5];
        let ids = vec![40, 10, 30, 20];
        let b = bin_by_risk(&scores, &ids, 2).unwrap();
        // ascending-id order 10,30? no: 10,20,30,40 -> units at positions 1,3 first
        assert_eq!(b.groups, vec![1, 0, 1, 0]);
    }

    fn random_model(n: usize, k: usize, seed: u64) -> ConfoundModel {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let t: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
        let y: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.2)).collect();
        let mu0: Vec<f64> = (0..n).map(|_| rng.random_range(0.02..0.5)).collect();
        let mu1: Vec<f64> = (0..n).map(|_| rng.random_range(0.02..0.4)).collect();
        let e: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
        let ids: Vec<u64> = (0..n as u64).collect();
        let bins = bin_by_risk(&mu0, &ids, k).unwrap();
        ConfoundModel::from_parts(t, y, mu0, mu1, e, bins, ids, 1.0)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = random_model(50, 3, 8);
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        for _ in 0..3 {
            let point: Vec<f64> =
                (0..model.dimension()).map(|_| rng.random_range(-1.5..1.5)).collect();
            let err = mcmc::check_gradient(&model, &point, 1e-5);
            assert!(err < 1e-5, "gradient error {err}");
        }
    }

    #[test]
    fn gradient_ok_with_pinned_loadings() {
        let model = random_model(30, 2, 9).with_pinned_loadings();
        let mut rng = ChaCha20Rng::seed_from_u64(18);
        let point: Vec<f64> =
            (0..model.dimension()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = mcmc::check_gradient(&model, &point, 1e-5);
        assert!(err < 1e-5, "gradient error {err}");
    }

    #[test]
    fn k1_collapse_to_three_logistic_regressions() {
        let model = random_model(40, 1, 12);
        let mut x = vec![0.0; model.dimension()];
        // coefficients: alpha_0=-1, alpha_mu0=2, beta_0=-0.5, beta_mu1=1.5,
        // gamma_0=0.3, gamma_e=-0.7; u-loadings at the bottom of the
        // transformed range; u = 0
        x[CH_ALPHA_0] = -1.0;
        x[CH_ALPHA_MU0] = 2.0;
        x[CH_ALPHA_U] = -40.0;
        x[CH_BETA_0] = -0.5;
        x[CH_BETA_MU1] = 1.5;
        x[CH_BETA_U] = -40.0;
        x[CH_GAMMA_0] = 0.3;
        x[CH_GAMMA_E] = -0.7;
        x[CH_GAMMA_U] = -40.0;
        let got = model.log_likelihood(&x);

        let mut want = 0.0;
        for i in 0..model.n_units() {
            want += bernoulli_loglik(model.t[i] as f64, 0.3 - 0.7 * model.e[i]);
            if model.t[i] == 1 {
                want += bernoulli_loglik(model.y[i] as f64, -0.5 + 1.5 * model.mu1[i]);
            } else {
                want += bernoulli_loglik(model.y[i] as f64, -1.0 + 2.0 * model.mu0[i]);
            }
        }
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn random_walk_prior_hand_value() {
        // alpha_0 = (0, 1), tau = 1: logN(0|0,1) + logN(1|0,1)
        let got = rw_normal_logp(&[0.0, 1.0], 1.0);
        let want = ln_norm_pdf(0.0) + ln_norm_pdf(1.0);
        assert_relative_eq!(got, want, epsilon = 1e-14);
        assert_relative_eq!(got, -(2.0 * std::f64::consts::PI).ln() - 0.5, epsilon = 1e-12);
    }

    #[test]
    fn halfnormal_first_element_is_doubled_normal() {
        let got = rw_halfnormal_logp(&[0.7], 1.0);
        assert_relative_eq!(got, LN_2 + ln_norm_pdf(0.7), epsilon = 1e-14);
    }

    #[test]
    fn zero_units_is_prior_only() {
        let bins = BinAssignment { k: 2, groups: vec![] };
        let model =
            ConfoundModel::from_parts(vec![], vec![], vec![], vec![], vec![], bins, vec![], 1.0);
        let x = vec![0.1; model.dimension()];
        let (v, g) = model.value_and_gradient(&x);
        assert!(v.is_finite());
        assert_eq!(g.len(), model.dimension());
        let err = mcmc::check_gradient(&model, &x, 1e-5);
        assert!(err < 1e-6, "prior-only gradient error {err}");
    }

    #[test]
    fn zero_units_prior_matches_hand_sum() {
        // all taus at 1 so the non-centered chart coincides with the
        // centered random walk; unconstrained chains at (0, 1), positive
        // chains at (0.5, 0.7)
        let k = 2;
        let bins = BinAssignment { k, groups: vec![] };
        let model =
            ConfoundModel::from_parts(vec![], vec![], vec![], vec![], vec![], bins, vec![], 1.0);
        let mut x = vec![0.0; model.dimension()];
        let pos = [0.5f64, 0.7];
        for c in 0..9 {
            let off = c * k;
            if matches!(c, 2 | 5 | 8) {
                x[off] = pos[0].ln();
                x[off + 1] = pos[1].ln();
            } else {
                let enc = ConfoundModel::encode_unconstrained_chain(&[0.0, 1.0], 1.0);
                x[off] = enc[0];
                x[off + 1] = enc[1];
            }
        }
        // log-tau already 0 => tau = 1
        let (got, _) = model.value_and_gradient(&x);

        let tau_prior = LN_2 + ln_norm_pdf(1.0); // N+(1 | 0, 1)
        let want = 6.0 * rw_normal_logp(&[0.0, 1.0], 1.0)
            + 3.0 * (rw_halfnormal_logp(&pos, 1.0) + pos[0].ln() + pos[1].ln())
            + 9.0 * tau_prior; // tau log-Jacobian ln(1) = 0
        assert_relative_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn observed_treatment_policy_is_point_mass() {
        let model = random_model(25, 2, 30);
        let spec_sampler = SamplerConfig {
            chains: 2,
            warmup_iters: 150,
            draw_iters: 60,
            seed: 4,
            target_accept: 0.8,
            trajectory_length: 1.0,
        };
        let draws = mcmc::sample(&model, &spec_sampler).unwrap();
        let pi =
            Policy::from_decisions(model.t.clone(), model.unit_ids.clone()).unwrap();
        let values = posterior_policy_value(&draws, &model, &pi).unwrap();
        let obs_mean =
            model.y.iter().map(|&v| v as f64).sum::<f64>() / model.n_units() as f64;
        for v in values {
            assert_eq!(v, obs_mean);
        }
    }

    #[test]
    fn single_draw_hand_value() {
        // 3 units; one disagrees with counterfactual probability 0.25;
        // observed outcomes for the agreeing units are 1 and 0
        let bins = BinAssignment { k: 1, groups: vec![0, 0, 0] };
        let model = ConfoundModel::from_parts(
            vec![0, 0, 1],
            vec![1, 0, 1],
            vec![0.2, 0.2, 0.2],
            vec![0.3, 0.3, 0.3],
            vec![0.5, 0.5, 0.5],
            bins,
            vec![1, 2, 3],
            1.0,
        );
        // policy agrees with units 1,2 (release), disagrees on unit 3
        // (policy releases, observed treated): impute y(0) at logit^-1(eta)
        // eta = alpha_0 + alpha_mu0*0.2 + alpha_u*u = ?
        // choose alpha_0 = logit(0.25), alpha_mu0 = 0, alpha_u ~ 0, u = 0
        let mut x = vec![0.0; model.dimension()];
        x[CH_ALPHA_0] = logit(0.25);
        x[CH_ALPHA_U] = -45.0;
        x[CH_BETA_U] = -45.0;
        x[CH_GAMMA_U] = -45.0;
        let p = model.decode(&x);
        let pi = Policy::from_decisions(vec![0, 0, 0], vec![1, 2, 3]).unwrap();
        let mut total = 0.0;
        for i in 0..3 {
            if pi.decisions()[i] == model.t[i] {
                total += model.y[i] as f64;
            } else {
                total += counterfactual_prob(&model, &p, i, 0);
            }
        }
        assert_relative_eq!(total / 3.0, (1.0 + 0.0 + 0.25) / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn decoded_draws_respect_sign_constraints() {
        let model = random_model(20, 2, 31);
        let cfg = SamplerConfig {
            chains: 2,
            warmup_iters: 100,
            draw_iters: 40,
            seed: 2,
            target_accept: 0.8,
            trajectory_length: 1.0,
        };
        let draws = mcmc::sample(&model, &cfg).unwrap();
        for c in 0..draws.chains {
            for it in 0..draws.iters {
                let p = model.decode(draws.draw(c, it));
                assert!(p.alpha_u.iter().all(|&v| v > 0.0));
                assert!(p.beta_u.iter().all(|&v| v > 0.0));
                assert!(p.gamma_u.iter().all(|&v| v > 0.0));
                assert!(p.tau.iter().all(|&v| v > 0.0));
            }
        }
    }

    #[test]
    fn single_unit_subgroup_identity() {
        let model = random_model(10, 1, 32);
        let cfg = SamplerConfig {
            chains: 2,
            warmup_iters: 100,
            draw_iters: 30,
            seed: 3,
            target_accept: 0.8,
            trajectory_length: 1.0,
        };
        let draws = mcmc::sample(&model, &cfg).unwrap();
        let target_id = model.unit_ids[4];
        let group: HashSet<u64> = [target_id].into_iter().collect();
        let ate = posterior_subgroup_ate(&draws, &model, &group).unwrap();
        // per draw the identity reduces to the unit's own y(1)-y(0)
        // contribution: (V(pi_{unit}) - V(pi_empty)) * n
        let pi_unit = Policy::from_decisions(
            (0..10).map(|i| u8::from(i == 4)).collect(),
            model.unit_ids.clone(),
        )
        .unwrap();
        let pi_empty =
            Policy::from_decisions(vec![0; 10], model.unit_ids.clone()).unwrap();
        let v1 = posterior_policy_value(&draws, &model, &pi_unit).unwrap();
        let v0 = posterior_policy_value(&draws, &model, &pi_empty).unwrap();
        for ((a, b), got) in v1.iter().zip(&v0).zip(&ate) {
            assert_relative_eq!((a - b) * 10.0, *got, epsilon = 1e-12);
        }
    }
}
