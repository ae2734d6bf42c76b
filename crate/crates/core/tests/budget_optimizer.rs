use nvmag::constants::GAMMA_E;
use nvmag::io::{read_nv_results, BUNDLED_NV_RESULTS};
use nvmag::protocol::{readout_curve, ProtocolConfig, ReadoutChainModel};
use nvmag::sensitivity::{optimize_budget, BudgetOptimum, TradeOffModels};

fn optimum_for(
    chain: &ReadoutChainModel,
    t_c_grid: &[f64],
    other_overhead: f64,
    coherence: &dyn Fn(f64) -> f64,
) -> BudgetOptimum {
    let curve = readout_curve(chain, 8000, 25).unwrap();
    let f_r = |n: usize| curve.iter().find(|c| c.0 == n).map_or(0.0, |c| c.2);
    let f_i = |_: usize| 0.92;
    let overhead = |_: usize, n_ro: usize| other_overhead + n_ro as f64 * chain.cycle_s;
    let models = TradeOffModels {
        coherence,
        f_i: &f_i,
        f_r: &f_r,
        overhead: &overhead,
        gamma_e: GAMMA_E,
    };
    let n_ro: Vec<usize> = (1..=320).map(|i| i * 25).collect();
    optimize_budget(&models, t_c_grid, &[1], &n_ro).unwrap()
}

#[test]
fn readout_optimum_tracks_reported_cycles() {
    let chain = ReadoutChainModel::default();
    let coherence = |t: f64| (-t / 2.0e-3).exp();
    for nv in read_nv_results(BUNDLED_NV_RESULTS.as_bytes()).unwrap() {
        let other = nv.total_time_s - nv.t_c_s - nv.readout_cycles as f64 * chain.cycle_s;
        let opt = optimum_for(&chain, &[nv.t_c_s], other, &coherence);
        let rel = opt.n_ro as f64 / nv.readout_cycles as f64 - 1.0;
        println!(
            "NV{}: reported {} cycles, optimum {} ({:+.0}%)",
            nv.nv,
            nv.readout_cycles,
            opt.n_ro,
            100.0 * rel
        );
        assert!(rel.abs() <= 0.3);
    }
}

#[test]
fn nv3_optimum_near_default_cycles() {
    let base = ProtocolConfig::nv3();
    let chain = ReadoutChainModel::default();
    let other = base.fixed_overhead_s + base.mean_charge_time();
    let coherence = move |t: f64| base.coherence.eval(t);
    let opt = optimum_for(&chain, &[base.t_c], other, &coherence);
    assert!(
        (opt.n_ro as f64 - 2500.0).abs() <= 0.3 * 2500.0,
        "{}",
        opt.n_ro
    );
    // Flat bottom: 2500 cycles costs little against the optimum.
    let at_2500 = opt.n_ro_slice.iter().find(|(n, _)| *n == 2500).unwrap().1;
    assert!(at_2500 / opt.eta < 1.02);

    let t_c: Vec<f64> = (1..=30).map(|i| i as f64 * 0.1e-3).collect();
    let free = optimum_for(&chain, &t_c, other, &coherence);
    assert!(free.eta <= opt.eta);
    assert!(free.t_c > 0.5e-3 && free.t_c < 2.0e-3, "{}", free.t_c);
}

#[test]
fn flat_models_pick_the_first_point() {
    let one = |_: f64| 1.0;
    let fi = |_: usize| 0.9;
    let ov = |_: usize, _: usize| 1e-3;
    let models = TradeOffModels {
        coherence: &one,
        f_i: &fi,
        f_r: &fi,
        overhead: &ov,
        gamma_e: GAMMA_E,
    };
    let opt = optimize_budget(&models, &[1e-3], &[3, 2, 1], &[7, 5]).unwrap();
    assert_eq!((opt.n_fb, opt.n_ro), (3, 7));

    // No decay and no overhead: longest accumulation wins.
    let zero = |_: usize, _: usize| 0.0;
    let models = TradeOffModels {
        overhead: &zero,
        ..models
    };
    let opt = optimize_budget(&models, &[1e-4, 1e-3, 5e-4], &[1], &[1]).unwrap();
    assert_eq!(opt.t_c, 1e-3);
}
