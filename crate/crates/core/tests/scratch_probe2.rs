// temporary scale probe; removed before delivery
use std::collections::HashSet;

use polsens::confound::{fit_sensitivity, SensitivitySpec};
use polsens::data::split_folds;
use polsens::glm::{fit_cv, fit_nuisance, predict, FitTarget, NuisanceConfig};
use polsens::mcmc::SamplerConfig;
use polsens::synth::{censor, generate_truth, ScenarioSpec};

#[test]
#[ignore]
fn probe_acceptance_scale() {
    let t0 = std::time::Instant::now();
    let spec = ScenarioSpec::default_scenario(20_000);
    let truth = generate_truth(&spec, 11).unwrap();
    let observed = censor(&truth, &["age".to_string()]).unwrap();
    let folds = split_folds(&observed, 11, (0.45, 0.45, 0.10)).unwrap();
    let ncfg = NuisanceConfig::default();

    let released: HashSet<u64> = observed
        .records()
        .iter()
        .filter(|r| folds.policy_fold.contains(&r.id) && r.treatment == 0)
        .map(|r| r.id)
        .collect();
    println!("policy fold released: {}", released.len());
    let risk_fit = fit_cv(&observed, FitTarget::Outcome, &released, &ncfg).unwrap();
    println!(
        "risk fit: intercept {:.4}, coefs {:?}, lambda {:.6}",
        risk_fit.intercept, risk_fit.coefficients, risk_fit.lambda
    );
    let eval_ds = observed.subset(&folds.eval_fold);
    let scores = predict(&risk_fit, &eval_ds).unwrap();
    let mut uniq = scores.clone();
    uniq.sort_by(|a, b| a.partial_cmp(b).unwrap());
    uniq.dedup();
    println!(
        "eval scores: {} distinct of {}, range [{:.4}, {:.4}]",
        uniq.len(),
        scores.len(),
        uniq.first().unwrap(),
        uniq.last().unwrap()
    );
    println!("t(fits so far): {:?}", t0.elapsed());

    let nz = fit_nuisance(&observed, &folds.nuisance_fold, &eval_ds, &ncfg).unwrap();
    println!("t(nuisance): {:?}", t0.elapsed());

    let traj: f64 = std::env::var("TRAJ").ok().and_then(|v| v.parse().ok()).unwrap_or(1.0);
    let ta: f64 = std::env::var("TA").ok().and_then(|v| v.parse().ok()).unwrap_or(0.8);
    println!("trajectory_length {traj}, target_accept {ta}");
    let spec_s = SensitivitySpec {
        k: 10,
        sigma_tau: 1.0,
        sampler: SamplerConfig {
            chains: 4,
            warmup_iters: 1000,
            draw_iters: 1000,
            seed: 11,
            target_accept: ta,
            trajectory_length: traj,
        },
    };
    let fit = fit_sensitivity(&eval_ds, &nz, &spec_s).unwrap();
    println!("t(mcmc): {:?}", t0.elapsed());
    println!(
        "max rhat {:.4}, div rate {:.4}, accept {:?}, steps {:?}",
        fit.draws.max_rhat(),
        fit.draws.divergence_rate(),
        fit.draws.accept_rate,
        fit.draws.step_sizes
    );
    // worst parameters by rhat
    let mut worst: Vec<(f64, &String)> = fit
        .draws
        .rhat
        .iter()
        .copied()
        .zip(&fit.draws.parameter_names)
        .map(|(r, n)| (r, n))
        .collect();
    worst.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for (r, name) in worst.iter().take(15) {
        println!("  rhat {r:.4} {name}");
    }
}
