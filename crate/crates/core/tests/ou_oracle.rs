//! Monte Carlo check of the filter-function forward model against sampled
//! Ornstein–Uhlenbeck field paths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use nvmag::constants::GAMMA_E;
use nvmag::dd::{coherence_eval, DdSequence, Family, ForwardOptions};
use nvmag::noise::Lorentzian;

/// Phase of one path: γ ∫ y(t) B(t) dt with exact OU steps and the
/// toggling function sampled at interval midpoints.
fn sampled_phase(
    seq: &DdSequence,
    sigma: f64,
    tau_c: f64,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let dt = seq.total_time / steps as f64;
    let a = (-dt / tau_c).exp();
    let kick = sigma * (1.0 - a * a).sqrt();
    let z0: f64 = StandardNormal.sample(rng);
    let mut b = sigma * z0;
    let mut phi = 0.0;
    for i in 0..steps {
        let z: f64 = StandardNormal.sample(rng);
        let next = a * b + kick * z;
        let t_mid = (i as f64 + 0.5) * dt;
        phi += seq.toggling(t_mid) * 0.5 * (b + next) * dt;
        b = next;
    }
    GAMMA_E * phi
}

fn check(family: Family, n: usize, total: f64, tau_c: f64) {
    let seq = DdSequence::new(family, n, total).unwrap();
    let unit = coherence_eval(
        &Lorentzian::ornstein_uhlenbeck(1.0, tau_c),
        &seq,
        ForwardOptions::default(),
    )
    .unwrap()
    .phase_variance;
    // Scale the field so the predicted phase variance is 1 rad².
    let sigma2 = 1.0 / unit;
    let predicted = coherence_eval(
        &Lorentzian::ornstein_uhlenbeck(sigma2, tau_c),
        &seq,
        ForwardOptions::default(),
    )
    .unwrap();
    let paths = 40_000;
    let phases: Vec<f64> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            rng.set_stream(i);
            sampled_phase(&seq, sigma2.sqrt(), tau_c, 64 * n.max(8), &mut rng)
        })
        .collect();
    let var = phases.iter().map(|p| p * p).sum::<f64>() / paths as f64;
    let coh = phases.iter().map(|p| p.cos()).sum::<f64>() / paths as f64;
    let rel_var = var / predicted.phase_variance - 1.0;
    let rel_coh = coh / predicted.coherence - 1.0;
    println!(
        "{} N={n}: var {var:.4} vs {:.4}, C {coh:.4} vs {:.4}",
        family, predicted.phase_variance, predicted.coherence
    );
    assert!(rel_var.abs() < 0.03, "variance off by {rel_var}");
    assert!(rel_coh.abs() < 0.03, "coherence off by {rel_coh}");
}

#[test]
fn cpmg_matches_sampled_paths() {
    check(Family::Cpmg, 8, 40e-6, 10e-6);
}

#[test]
fn xy16_matches_sampled_paths() {
    check(Family::Xy16, 32, 100e-6, 2e-6);
}

#[test]
fn free_evolution_matches_sampled_paths() {
    check(Family::Free, 0, 5e-6, 3e-6);
}
