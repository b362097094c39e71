//! Gradient-based posterior sampling over a differentiable log-density
//! interface: adaptive Hamiltonian proposals with leapfrog integration,
//! dual-averaging step-size adaptation, diagonal mass-matrix estimation
//! from the later part of warmup, and split rank-normalized R-hat /
//! bulk-ESS diagnostics.
//!
//! Models with constrained parameters must transform them to unconstrained
//! space internally (with the log-Jacobian included in the density).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::mathutil::inv_norm_cdf;

/// A differentiable log-density, up to an additive constant.
pub trait LogDensityModel: Sync {
    fn dimension(&self) -> usize;
    /// Log-density and its gradient at `x`.
    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>);
    fn parameter_names(&self) -> Vec<String> {
        (0..self.dimension()).map(|j| format!("x[{j}]")).collect()
    }
}

/// Sampler configuration.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup_iters: usize,
    pub draw_iters: usize,
    pub seed: u64,
    pub target_accept: f64,
    /// Target trajectory length in mass-scaled units; the per-iteration
    /// step count is drawn uniformly from [1, round(len/step_size)].
    pub trajectory_length: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup_iters: 1000,
            draw_iters: 1000,
            seed: 0,
            target_accept: 0.8,
            trajectory_length: 1.0,
        }
    }
}

/// Post-warmup draws with convergence diagnostics.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub chains: usize,
    pub iters: usize,
    pub dim: usize,
    /// chains x iters x dim, row-major
    draws: Vec<f64>,
    pub parameter_names: Vec<String>,
    /// mean acceptance probability per chain
    pub accept_rate: Vec<f64>,
    pub divergences: usize,
    /// adapted step size per chain
    pub step_sizes: Vec<f64>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
}

impl PosteriorDraws {
    pub fn draw(&self, chain: usize, iter: usize) -> &[f64] {
        let start = (chain * self.iters + iter) * self.dim;
        &self.draws[start..start + self.dim]
    }

    /// All draws of one parameter, chain-major.
    pub fn param_draws(&self, j: usize) -> Vec<f64> {
        (0..self.chains)
            .flat_map(|c| (0..self.iters).map(move |i| self.draw(c, i)[j]))
            .collect()
    }

    /// Per-chain vectors for one parameter.
    pub fn param_chains(&self, j: usize) -> Vec<Vec<f64>> {
        (0..self.chains)
            .map(|c| (0..self.iters).map(|i| self.draw(c, i)[j]).collect())
            .collect()
    }

    pub fn n_draws(&self) -> usize {
        self.chains * self.iters
    }

    pub fn divergence_rate(&self) -> f64 {
        self.divergences as f64 / (self.chains * (self.iters)) as f64
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// More than 1% divergent transitions is flagged as a warning.
    pub fn divergence_flag(&self) -> bool {
        self.divergence_rate() > 0.01
    }
}

struct ChainOutput {
    draws: Vec<f64>,
    accept_sum: f64,
    divergences: usize,
    step_size: f64,
}

struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    t: f64,
    target: f64,
}

impl DualAveraging {
    fn new(eps0: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            h_bar: 0.0,
            t: 0.0,
            target,
        }
    }

    fn update(&mut self, accept_prob: f64) {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.t += 1.0;
        let w = 1.0 / (self.t + T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        self.log_eps = self.mu - self.t.sqrt() / GAMMA * self.h_bar;
        let eta = self.t.powf(-KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn averaged(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// One leapfrog trajectory of `l` steps; exposed for integrator tests.
/// `inv_mass` is the diagonal of the inverse mass matrix.
pub fn leapfrog(
    model: &dyn LogDensityModel,
    x: &mut Vec<f64>,
    p: &mut Vec<f64>,
    grad: &mut Vec<f64>,
    value: &mut f64,
    inv_mass: &[f64],
    eps: f64,
    l: usize,
) {
    for _ in 0..l {
        for j in 0..x.len() {
            p[j] += 0.5 * eps * grad[j];
        }
        for j in 0..x.len() {
            x[j] += eps * inv_mass[j] * p[j];
        }
        let (v, g) = model.value_and_gradient(x);
        *value = v;
        *grad = g;
        for j in 0..x.len() {
            p[j] += 0.5 * eps * grad[j];
        }
    }
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(pi, mi)| pi * pi * mi).sum::<f64>()
}

fn find_reasonable_eps(
    model: &dyn LogDensityModel,
    x: &[f64],
    inv_mass: &[f64],
    rng: &mut ChaCha20Rng,
) -> f64 {
    let dim = x.len();
    let mut eps = 0.1;
    let p0: Vec<f64> = (0..dim)
        .map(|j| rng.sample::<f64, _>(rand_distr::StandardNormal) / inv_mass[j].sqrt())
        .collect();
    let (v0, g0) = model.value_and_gradient(x);
    let h0 = -v0 + kinetic(&p0, inv_mass);
    let ratio_at = |eps: f64| -> f64 {
        let mut xt = x.to_vec();
        let mut pt = p0.clone();
        let mut g = g0.clone();
        let mut v = v0;
        leapfrog(model, &mut xt, &mut pt, &mut g, &mut v, inv_mass, eps, 1);
        let h1 = -v + kinetic(&pt, inv_mass);
        (-(h1 - h0)).exp()
    };
    let r = ratio_at(eps);
    if !r.is_finite() {
        return 0.001;
    }
    let dir: f64 = if r > 0.5 { 1.0 } else { -1.0 };
    for _ in 0..50 {
        let r = ratio_at(eps);
        if !r.is_finite() {
            eps *= 0.5;
            continue;
        }
        if (dir > 0.0 && r <= 0.5) || (dir < 0.0 && r >= 0.5) {
            break;
        }
        eps *= 2.0f64.powf(dir);
    }
    eps.clamp(1e-8, 10.0)
}

// Online mean/variance accumulator for mass adaptation.
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let nf = self.n as f64;
        for j in 0..x.len() {
            let d = x[j] - self.mean[j];
            self.mean[j] += d / nf;
            self.m2[j] += d * (x[j] - self.mean[j]);
        }
    }

    /// Regularized variance estimate (shrunk toward 1e-3, as is standard
    /// for warmup mass estimation).
    fn shrunk_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|m2| {
                let var = if self.n > 1 { m2 / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .map(|v| v.max(1e-10))
            .collect()
    }
}

const DIVERGENCE_THRESHOLD: f64 = 1000.0;

fn run_chain(
    model: &dyn LogDensityModel,
    cfg: &SamplerConfig,
    chain_idx: usize,
) -> Result<ChainOutput> {
    let dim = model.dimension();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain_idx as u64 + 1);

    // initialize uniformly in [-2, 2] until the density is finite
    let mut x = vec![0.0; dim];
    let mut value = f64::NEG_INFINITY;
    let mut grad = vec![0.0; dim];
    let mut ok = false;
    for _ in 0..100 {
        for xj in x.iter_mut() {
            *xj = rng.random_range(-2.0..2.0);
        }
        let (v, g) = model.value_and_gradient(&x);
        if v.is_finite() && g.iter().all(|gj| gj.is_finite()) {
            value = v;
            grad = g;
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(Error::Initialization(
            "log-density non-finite after 100 initialization draws".into(),
        ));
    }

    let mut inv_mass = vec![1.0; dim];
    let mut eps = find_reasonable_eps(model, &x, &inv_mass, &mut rng);
    let mut da = DualAveraging::new(eps, cfg.target_accept);

    // Stan-style warmup: a fast start buffer for step-size adaptation,
    // expanding mass-estimation windows, and a terminal buffer that
    // re-settles the step size under the final metric.
    let warmup = cfg.warmup_iters;
    let init_buffer = (warmup / 10).clamp(1, 75);
    let term_buffer = (warmup / 20).clamp(1, 50);
    let mut window_ends = Vec::new();
    {
        let mut start = init_buffer;
        let mut size = (warmup / 40).max(25);
        let limit = warmup.saturating_sub(term_buffer);
        while start < limit {
            let mut end = start + size;
            // extend the last window to the terminal buffer
            if end + 2 * size > limit {
                end = limit;
            }
            window_ends.push(end.min(limit));
            start = end;
            size *= 2;
        }
    }
    let mut welford = Welford::new(dim);

    let mut draws = Vec::with_capacity(cfg.draw_iters * dim);
    let mut accept_sum = 0.0;
    let mut divergences = 0usize;

    for iter in 0..warmup + cfg.draw_iters {
        let in_warmup = iter < warmup;
        let cur_eps = if in_warmup { da.current().clamp(1e-10, 10.0) } else { eps };
        let l_max = ((cfg.trajectory_length / cur_eps).round() as usize).clamp(1, 1024);
        let l = rng.random_range(1..=l_max);

        let p0: Vec<f64> = (0..dim)
            .map(|j| rng.sample::<f64, _>(rand_distr::StandardNormal) / inv_mass[j].sqrt())
            .collect();
        let h0 = -value + kinetic(&p0, &inv_mass);

        let mut xt = x.clone();
        let mut pt = p0;
        let mut gt = grad.clone();
        let mut vt = value;
        leapfrog(model, &mut xt, &mut pt, &mut gt, &mut vt, &inv_mass, cur_eps, l);
        let h1 = -vt + kinetic(&pt, &inv_mass);
        let delta_h = h1 - h0;

        let divergent = !delta_h.is_finite() || delta_h > DIVERGENCE_THRESHOLD;
        let accept_prob = if divergent { 0.0 } else { (-delta_h).exp().min(1.0) };
        if divergent && !in_warmup {
            divergences += 1;
        }
        if !divergent && rng.random::<f64>() < accept_prob {
            x = xt;
            value = vt;
            grad = gt;
        }

        if in_warmup {
            da.update(accept_prob);
            if iter >= init_buffer && window_ends.last().is_some_and(|&e| iter < e) {
                welford.push(&x);
            }
            if window_ends.contains(&(iter + 1)) && welford.n >= 10 {
                inv_mass = welford.shrunk_variance();
                welford = Welford::new(dim);
                // restart step-size adaptation under the new metric
                let eps_now = find_reasonable_eps(model, &x, &inv_mass, &mut rng);
                da = DualAveraging::new(eps_now, cfg.target_accept);
            }
            if iter + 1 == warmup {
                eps = da.averaged().clamp(1e-10, 10.0);
            }
        } else {
            accept_sum += accept_prob;
            draws.extend_from_slice(&x);
        }
    }

    Ok(ChainOutput {
        draws,
        accept_sum: accept_sum / cfg.draw_iters as f64,
        divergences,
        step_size: eps,
    })
}

/// Run the sampler. Deterministic given (model, config).
pub fn sample(model: &dyn LogDensityModel, cfg: &SamplerConfig) -> Result<PosteriorDraws> {
    if model.dimension() == 0 {
        return Err(Error::Domain("model dimension must be >= 1".into()));
    }
    if cfg.chains < 2 {
        return Err(Error::Domain(
            "need at least 2 chains for convergence diagnostics".into(),
        ));
    }
    let outputs: Vec<Result<ChainOutput>> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(model, cfg, c))
        .collect();
    let mut draws = Vec::with_capacity(cfg.chains * cfg.draw_iters * model.dimension());
    let mut accept_rate = Vec::new();
    let mut step_sizes = Vec::new();
    let mut divergences = 0;
    for out in outputs {
        let out = out?;
        draws.extend_from_slice(&out.draws);
        accept_rate.push(out.accept_sum);
        step_sizes.push(out.step_size);
        divergences += out.divergences;
    }
    let mut result = PosteriorDraws {
        chains: cfg.chains,
        iters: cfg.draw_iters,
        dim: model.dimension(),
        draws,
        parameter_names: model.parameter_names(),
        accept_rate,
        divergences,
        step_sizes,
        rhat: Vec::new(),
        ess: Vec::new(),
    };
    result.rhat = rhat(&result)?;
    result.ess = ess(&result)?;
    Ok(result)
}

fn check_diag_preconditions(d: &PosteriorDraws) -> Result<()> {
    if d.chains < 2 {
        return Err(Error::InsufficientDraws("need >= 2 chains".into()));
    }
    if d.iters < 4 {
        return Err(Error::InsufficientDraws("need >= 4 draws per chain".into()));
    }
    Ok(())
}

/// Split-chain rank-normalized R-hat per parameter. Zero-variance
/// parameters yield NaN.
pub fn rhat(d: &PosteriorDraws) -> Result<Vec<f64>> {
    check_diag_preconditions(d)?;
    Ok((0..d.dim)
        .into_par_iter()
        .map(|j| split_rank_rhat(&d.param_chains(j)))
        .collect())
}

/// Bulk effective sample size per parameter.
pub fn ess(d: &PosteriorDraws) -> Result<Vec<f64>> {
    check_diag_preconditions(d)?;
    Ok((0..d.dim)
        .into_par_iter()
        .map(|j| bulk_ess(&d.param_chains(j)))
        .collect())
}

fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[half..2 * half].to_vec());
    }
    out
}

/// Rank-normalize pooled values: average ranks for ties, mapped through
/// the normal quantile function with the (rank - 3/8)/(S + 1/4) offset.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let mut indexed: Vec<(f64, usize)> = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(chains.len());
    let mut pos = 0;
    for c in chains {
        offsets.push(pos);
        for &v in c {
            indexed.push((v, pos));
            pos += 1;
        }
    }
    indexed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut ranks = vec![0.0; total];
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j + 1 < total && indexed[j + 1].0 == indexed[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[indexed[k].1] = avg_rank;
        }
        i = j + 1;
    }
    let s = total as f64;
    let mut out = Vec::with_capacity(chains.len());
    let mut pos = 0;
    for c in chains {
        let z: Vec<f64> = (0..c.len())
            .map(|k| inv_norm_cdf((ranks[pos + k] - 0.375) / (s + 0.25)))
            .collect();
        pos += c.len();
        out.push(z);
    }
    out
}

fn classic_rhat(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w < 1e-300 {
        return f64::NAN;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Split-chain rank-normalized R-hat for one parameter.
pub fn split_rank_rhat(chains: &[Vec<f64>]) -> f64 {
    let split = split_chains(chains);
    if split.iter().any(|c| c.len() < 2) {
        return f64::NAN;
    }
    // constant input has no rank information
    let first = chains[0][0];
    if chains.iter().all(|c| c.iter().all(|&v| v == first)) {
        return f64::NAN;
    }
    let z = rank_normalize(&split);
    classic_rhat(&z)
}

fn autocovariance_fft(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let m = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = (0..m)
        .map(|i| {
            if i < n {
                Complex::new(x[i] - mean, 0.0)
            } else {
                Complex::new(0.0, 0.0)
            }
        })
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for v in buf.iter_mut() {
        *v = Complex::new(v.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    (0..n).map(|t| buf[t].re / m as f64 / n as f64).collect()
}

/// Bulk effective sample size for one parameter (rank-normalized split
/// chains, Geyer initial monotone sequence).
pub fn bulk_ess(chains: &[Vec<f64>]) -> f64 {
    let split = split_chains(chains);
    if split.iter().any(|c| c.len() < 2) {
        return f64::NAN;
    }
    let first = chains[0][0];
    if chains.iter().all(|c| c.iter().all(|&v| v == first)) {
        return f64::NAN;
    }
    let z = rank_normalize(&split);
    let m = z.len() as f64;
    let n = z[0].len();
    let nf = n as f64;

    let acov: Vec<Vec<f64>> = z.iter().map(|c| autocovariance_fft(c)).collect();
    let chain_var: Vec<f64> = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).collect();
    let w = chain_var.iter().sum::<f64>() / m;
    let means: Vec<f64> = z.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = if z.len() > 1 {
        nf / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>()
    } else {
        0.0
    };
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    if var_plus <= 0.0 {
        return f64::NAN;
    }

    let mean_acov = |t: usize| acov.iter().map(|a| a[t]).sum::<f64>() / m;
    let rho = |t: usize| 1.0 - (w - mean_acov(t)) / var_plus;

    // Geyer initial monotone positive sequence over lag pairs
    let mut tau = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = if t == 0 { 1.0 + rho(1) } else { rho(t) + rho(t + 1) };
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = (2.0 * tau - 1.0).max(1.0 / (m * nf));
    m * nf / tau
}

/// Central finite-difference gradient check; returns the worst relative
/// error across coordinates.
pub fn check_gradient(model: &dyn LogDensityModel, point: &[f64], step: f64) -> f64 {
    let (_, grad) = model.value_and_gradient(point);
    let mut worst: f64 = 0.0;
    for j in 0..point.len() {
        let mut xp = point.to_vec();
        xp[j] += step;
        let mut xm = point.to_vec();
        xm[j] -= step;
        let (vp, _) = model.value_and_gradient(&xp);
        let (vm, _) = model.value_and_gradient(&xm);
        let fd = (vp - vm) / (2.0 * step);
        let rel = (fd - grad[j]).abs() / (fd.abs().max(grad[j].abs()) + 1e-10);
        worst = worst.max(rel);
    }
    worst
}

#[cfg(test)]
pub(crate) mod test_models {
    use super::*;

    /// Independent standard normal in `dim` dimensions.
    pub struct StdNormal {
        pub dim: usize,
    }

    impl LogDensityModel for StdNormal {
        fn dimension(&self) -> usize {
            self.dim
        }
        fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
            let v = -0.5 * x.iter().map(|xi| xi * xi).sum::<f64>();
            let g = x.iter().map(|xi| -xi).collect();
            (v, g)
        }
    }

    /// Bivariate Gaussian with unit variances and correlation rho.
    pub struct CorrGaussian {
        pub rho: f64,
    }

    impl LogDensityModel for CorrGaussian {
        fn dimension(&self) -> usize {
            2
        }
        fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
            let r = self.rho;
            let det = 1.0 - r * r;
            let q = (x[0] * x[0] - 2.0 * r * x[0] * x[1] + x[1] * x[1]) / det;
            let v = -0.5 * q;
            let g = vec![-(x[0] - r * x[1]) / det, -(x[1] - r * x[0]) / det];
            (v, g)
        }
    }
}
