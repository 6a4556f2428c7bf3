use deskew::io::report_to_string;
use deskew::simulation::{
    episode_rng, exact_correction, generate_episode, run_monte_carlo, SimConfig,
};

#[test]
fn ground_truth_replay_recovers_the_scene() {
    let cfg = SimConfig::default();
    let mut worst: f64 = 0.0;
    for episode in 0..20 {
        let ep = generate_episode(&cfg, &mut episode_rng(7, episode)).unwrap();
        let t_last = *ep.true_packet_times.last().unwrap();
        for (t_ref, truth) in [
            (t_last, &ep.truth_last),
            (ep.true_image_time, &ep.truth_image),
        ] {
            let corrected = exact_correction(&ep, &cfg, t_ref).unwrap();
            assert_eq!(corrected.len(), truth.len());
            for p in &corrected {
                worst = worst.max((p.mean - truth[p.packet_index]).amax());
            }
        }
    }
    assert!(worst <= 1e-9, "replay error {worst:e} m");
}

#[test]
fn uncorrected_scan_is_distorted() {
    // sanity check that the replay test above is not vacuous
    let cfg = SimConfig::default();
    let ep = generate_episode(&cfg, &mut episode_rng(7, 0)).unwrap();
    let first = ep.scan.packets()[0].points()[0].xyz();
    assert!((first - ep.truth_last[0]).norm() > 0.05);
}

#[test]
fn reports_depend_only_on_the_seed() {
    let cfg = SimConfig {
        runs: 12,
        ..SimConfig::default()
    };
    let a = report_to_string(&run_monte_carlo(&cfg).unwrap().report);
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let b = single.install(|| report_to_string(&run_monte_carlo(&cfg).unwrap().report));
    let wide = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let c = wide.install(|| report_to_string(&run_monte_carlo(&cfg).unwrap().report));
    assert_eq!(a, b);
    assert_eq!(a, c);
    let other = SimConfig {
        rng_seed: 43,
        ..cfg
    };
    assert_ne!(
        a,
        report_to_string(&run_monte_carlo(&other).unwrap().report)
    );
}

/// Without timestamp jitter the estimator's noise model is exact and the
/// mean 3-D NEES sits at its chi-square expectation of 3.
#[test]
fn consistent_estimator_has_expected_mean_nees() {
    let cfg = SimConfig {
        jitter_std: 0.0,
        ..SimConfig::default()
    };
    let r = run_monte_carlo(&cfg).unwrap().report;
    assert_eq!(r.nees_3d.dof, 3);
    assert!(
        (r.nees_3d.mean_nees - 3.0).abs() <= 0.3,
        "mean NEES {}",
        r.nees_3d.mean_nees
    );
}

#[test]
fn correction_reduces_error() {
    let cfg = SimConfig {
        runs: 20,
        ..SimConfig::default()
    };
    let r = run_monte_carlo(&cfg).unwrap().report;
    assert!(r.mean_error_3d < 0.2 * r.mean_uncorrected_error_3d);
}
