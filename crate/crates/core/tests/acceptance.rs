//! End-to-end acceptance checks, one test per shipped guarantee. Each test
//! prints the measured statistic so `--nocapture` shows the margins.

use std::time::Instant;

use mvot_core::{
    build_instance, check_exact_against_brute_force, check_gradients, check_ipot_against_exact,
    check_local_permutation_displacements, check_plan_feasibility, default_prototype_init,
    emit_report, make_deformation, make_scene, nmse, recover, run_method, run_sweep,
    BaselineConfig, Grid, Letter, LinearMeasurementOp, Method, PerturbSpec, RecoveryConfig,
    RecoveryTuning, SceneSpec, SweepConfig, ViewData, NOISELESS_SNR_DB,
};

const SEED: u64 = 20260823;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("NMSE values must be comparable"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("comparable"));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    cov / (vx * vy).sqrt()
}

/// Mean NMSE of the proposed method over `seeds` paired instances per cell.
fn proposed_mean_nmse(scene: &SceneSpec, rate: f64, snr_db: f64, views: usize, seeds: u64) -> f64 {
    let perturb = PerturbSpec::new(2, 1);
    let tuning = RecoveryTuning::default();
    let baseline = BaselineConfig::default();
    let mut total = 0.0;
    for seed in 1..=seeds {
        let instance = build_instance(scene, &perturb, views, rate, snr_db, seed)
            .expect("standard instances generate");
        let (err, _) = run_method(Method::Proposed, &instance, scene, &tuning, &baseline)
            .expect("proposed method runs");
        total += err;
    }
    total / seeds as f64
}

#[test]
fn c01_exact_solver_matches_permutation_enumeration() {
    let start = Instant::now();
    let worst = check_exact_against_brute_force(100, SEED).expect("check runs");
    let elapsed = start.elapsed().as_secs_f64();
    println!("exact vs enumeration: max abs gap {worst:.3e} in {elapsed:.2}s");
    assert!(worst <= 1e-9, "max abs gap {worst} exceeds 1e-9");
    assert!(elapsed < 10.0, "enumeration check took {elapsed:.2}s, budget 10s");
}

#[test]
fn c02_proximal_solver_tracks_exact_values() {
    let start = Instant::now();
    let worst = check_ipot_against_exact(100, SEED).expect("check runs");
    let elapsed = start.elapsed().as_secs_f64();
    println!("proximal vs exact: max rel gap {worst:.3e} in {elapsed:.2}s");
    assert!(worst <= 1e-3, "max rel gap {worst} exceeds 1e-3");
    assert!(elapsed < 30.0, "proximal check took {elapsed:.2}s, budget 30s");
}

#[test]
fn c03_plans_are_nonnegative_with_tight_marginals() {
    let worst = check_plan_feasibility(100, SEED).expect("no negative entries");
    println!("plan feasibility: max marginal violation {worst:.3e}");
    assert!(worst <= 1e-8, "marginal violation {worst} exceeds 1e-8");
}

#[test]
fn c04_analytic_gradients_match_finite_differences() {
    let worst = check_gradients(20, SEED).expect("check runs");
    println!("gradients vs central differences: max rel error {worst:.3e}");
    assert!(worst <= 1e-5, "max rel error {worst} exceeds 1e-5");
}

#[test]
fn c05_degenerate_instance_recovers_exactly() {
    // Known deformations, identity measurements, no scramble, no noise:
    // the truth is a fixed point and must be attained within 20 rounds.
    let scene = SceneSpec::standard(Letter::E);
    let mut rng = mvot_core::seeds::rng_from_seed(SEED);
    let x_true = make_scene(&scene, &mut rng);
    let n = x_true.len();
    let perturb = PerturbSpec::new(0, 1);
    let views: Vec<ViewData> = (0..2)
        .map(|_| {
            let f = make_deformation(&scene, &perturb, &mut rng).expect("shifts fit the grid");
            let y = f.apply(x_true.values());
            ViewData::new(y, LinearMeasurementOp::identity(n), f).expect("dimensions agree")
        })
        .collect();
    let support = scene.support();
    let k_s = support.len();
    let mut cfg = RecoveryConfig::new(support, k_s);
    cfg.outer_tmax = 20;
    let x_init = default_prototype_init(&views, x_true.grid(), &cfg.support).expect("views exist");
    let (x_hat, _) = recover(&views, &cfg, &x_init).expect("recovery runs");
    let err = nmse(&x_hat, &x_true).expect("reference is nonzero");
    println!("degenerate instance: NMSE {err:.3e}");
    assert!(err <= 1e-6, "NMSE {err} exceeds 1e-6");
}

#[test]
fn c06_proposed_method_beats_both_baselines() {
    let scene = SceneSpec::standard(Letter::E);
    let perturb = PerturbSpec::new(2, 1);
    let tuning = RecoveryTuning::default();
    let baseline = BaselineConfig::default();
    let mut errs = [Vec::new(), Vec::new(), Vec::new()];
    for seed in 1..=10u64 {
        let instance = build_instance(&scene, &perturb, 2, 0.8, NOISELESS_SNR_DB, seed)
            .expect("standard instances generate");
        for (slot, method) in Method::ALL.iter().enumerate() {
            let (err, _) = run_method(*method, &instance, &scene, &tuning, &baseline)
                .unwrap_or_else(|e| panic!("{method} failed on seed {seed}: {e}"));
            assert!(err.is_finite(), "{method} produced non-finite NMSE on seed {seed}");
            errs[slot].push(err);
        }
    }
    let proposed = median(&mut errs[0]);
    let gradient = median(&mut errs[1]);
    let ignore_p = median(&mut errs[2]);
    println!(
        "median NMSE: proposed {proposed:.4}, relaxed-gradient {gradient:.4}, \
         scramble-blind {ignore_p:.4}"
    );
    assert!(
        proposed < gradient,
        "proposed median {proposed} not below relaxed-gradient median {gradient}"
    );
    assert!(
        proposed < ignore_p,
        "proposed median {proposed} not below scramble-blind median {ignore_p}"
    );
}

#[test]
fn c07_error_decreases_as_measurement_rate_grows() {
    let scene = SceneSpec::standard(Letter::E);
    let rates = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
    for snr_db in [NOISELESS_SNR_DB, 25.0] {
        let means: Vec<f64> = rates
            .iter()
            .map(|&rate| proposed_mean_nmse(&scene, rate, snr_db, 2, 10))
            .collect();
        let rho = spearman(&rates, &means);
        println!("snr {snr_db}: mean NMSE by rate {means:.4?}, spearman {rho:.3}");
        assert!(
            rho <= -0.8,
            "spearman {rho} above -0.8 at snr {snr_db}; means {means:?}"
        );
    }
}

#[test]
fn c08_more_views_do_not_hurt_reconstruction() {
    let scene =
        SceneSpec::new(Letter::T, Grid::new(16, 32).expect("static"), 1.0).expect("letter fits");
    let perturb = PerturbSpec::new(2, 1);
    let tuning = RecoveryTuning::default();
    let baseline = BaselineConfig::default();
    let mut medians = Vec::new();
    for views in [2usize, 4] {
        let mut errs: Vec<f64> = (1..=10u64)
            .map(|seed| {
                let instance = build_instance(&scene, &perturb, views, 0.7, 20.0, seed)
                    .expect("standard instances generate");
                run_method(Method::Proposed, &instance, &scene, &tuning, &baseline)
                    .expect("proposed method runs")
                    .0
            })
            .collect();
        medians.push(median(&mut errs));
    }
    println!("median NMSE: 2 views {:.4}, 4 views {:.4}", medians[0], medians[1]);
    assert!(
        medians[1] <= medians[0],
        "4-view median {} above 2-view median {}",
        medians[1],
        medians[0]
    );
}

#[test]
fn c09_single_worker_sweeps_are_byte_identical() {
    let mut cfg = SweepConfig::single_cell(Method::Proposed, 0.8, NOISELESS_SNR_DB, 2, vec![5, 6]);
    cfg.methods = Method::ALL.to_vec();
    cfg.rates = vec![0.6, 0.8];
    cfg.snrs_db = vec![NOISELESS_SNR_DB, 20.0];
    cfg.views = vec![1, 2];
    cfg.letter = Letter::T;
    cfg.grid_rows = 16;
    cfg.grid_cols = 12;
    cfg.recovery.inner_tmax = 4;
    cfg.recovery.outer_tmax = 3;
    cfg.baseline.inner_tmax = 3;
    cfg.baseline.outer_tmax = 3;
    let base = std::env::temp_dir().join(format!("mvot-acceptance-{}", std::process::id()));
    let mut outputs = Vec::new();
    for run in 0..2 {
        let dir = base.join(format!("run{run}"));
        let result = run_sweep(&cfg).expect("sweep runs");
        let (records, summary) = emit_report(&result, &dir).expect("report writes");
        outputs.push((
            std::fs::read(records).expect("records readable"),
            std::fs::read(summary).expect("summary readable"),
        ));
    }
    let identical = outputs[0] == outputs[1];
    std::fs::remove_dir_all(&base).ok();
    println!(
        "sweep reports: {} record bytes, {} summary bytes, identical {identical}",
        outputs[0].0.len(),
        outputs[0].1.len()
    );
    assert!(identical, "repeated single-worker sweeps differ");
}

#[test]
fn c10_local_scrambles_respect_displacement_radius() {
    let checked = check_local_permutation_displacements(1000, &[0, 1, 2, 3], SEED)
        .expect("no displacement violations");
    println!("scramble displacements: {checked} permutations within bound");
    assert_eq!(checked, 4000, "expected 4000 checked permutations");
}
