use fasnoma_core::ao::{optimize, AoOptions, AoStatus};
use fasnoma_core::baselines::run_fpa;
use fasnoma_core::geometry::{sample_realization, PlacementRegion, SystemParams};

#[test]
fn small_region_fas_usually_beats_fixed_array() {
    let mut params = SystemParams::defaults(2, 10.0);
    params.region = PlacementRegion::square(params.wavelength).unwrap();
    let opts = AoOptions::default();
    let (mut wins, mut trials) = (0, 0);
    let (mut fas_sum, mut fpa_sum) = (0.0, 0.0);
    for seed in 0..100 {
        let real = sample_realization(&params, seed);
        let fas = optimize(&real, &params, &opts).unwrap();
        let fpa = run_fpa(&real, &params, &opts).unwrap();
        if fas.status == AoStatus::InitFailed && fpa.status == AoStatus::InitFailed {
            continue;
        }
        trials += 1;
        fas_sum += fas.secrecy_rate.max(0.0);
        fpa_sum += fpa.secrecy_rate.max(0.0);
        if fas.secrecy_rate >= fpa.secrecy_rate - 1e-9 {
            wins += 1;
        }
    }
    assert!(trials >= 90, "only {trials} trials initialized");
    println!("FAS >= FPA in {wins}/{trials}, means {:.4} vs {:.4}", fas_sum / trials as f64, fpa_sum / trials as f64);
    // Both runs stop at local optima from different starts, so a per-seed
    // win is not guaranteed.
    assert!(fas_sum > fpa_sum);
    assert!(wins * 3 >= trials * 2, "FAS matched FPA in {wins}/{trials}");
}

#[test]
fn rerun_from_output_stays_put() {
    let params = SystemParams::defaults(4, 10.0);
    let opts = AoOptions { max_outer: 60, ..AoOptions::default() };
    let real = sample_realization(&params, 3);
    let first = optimize(&real, &params, &opts).unwrap();
    let again = fasnoma_core::ao::optimize_from(first.candidate.clone(), &real, &params, &opts).unwrap();
    assert!(again.secrecy_rate >= first.secrecy_rate - 1e-6);
}
