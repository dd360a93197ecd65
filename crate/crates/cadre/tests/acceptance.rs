//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured values (visible with `--nocapture`; the per-test ok/FAILED
//! line doubles as the criterion verdict).
//!
//! The three training-based criteria share one set of fitted runs, built on
//! first use and reused by the other tests in this binary.

use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{array, Array1, Array2};
use rand::Rng;

use cadre::config::ExperimentConfig;
use cadre::dgp::{SparsitySetting, Violation};
use cadre::graphs::{
    functional_equivalence_residual, observation_graph, observation_graph_raw, SemSpec,
};
use cadre::harness::{cmd_experiment, RunRecord};
use cadre::linalg::has_cycle_bruteforce;
use cadre::metrics::{mcc, r2_kernel, shd, smcc, spearman, tpr_precision, wshd_wtpr};
use cadre::model::{flow_z_logprob, ModelConfig, ModelParams};
use cadre::nn::Mlp;
use cadre::objective::{dag_penalty, loss_and_grads, total_loss, TrainConfig};

#[test]
fn criterion_1_functional_equivalence_identity() {
    let t0 = Instant::now();
    let mut r = cadre::rng::derive(11, 1);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    'outer: loop {
        for d in 2..=10usize {
            let j_m = Array2::from_shape_fn((d, d), |(i, j)| {
                let v: f64 = r.gen_range(-1.0..1.0);
                if i == j {
                    v + 3.0
                } else {
                    v
                }
            });
            let j_g = observation_graph_raw(&j_m, 0.0).unwrap();
            let res = functional_equivalence_residual(&j_g, &j_m).unwrap();
            worst = worst.max(res);
            count += 1;
            if count == 100 {
                break 'outer;
            }
        }
    }
    println!(
        "criterion 1: PASS (100 mixings, worst residual {worst:.2e}, {:.0} ms)",
        t0.elapsed().as_secs_f64() * 1e3
    );
    assert!(worst <= 1e-8, "worst residual {worst}");
}

#[test]
fn criterion_2_sem_ica_round_trip() {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for d in 2..=10usize {
        for trial in 0..20u64 {
            let sem = SemSpec::random_linear_lower_triangular(d, 2, trial * 31 + d as u64);
            let mixing = sem.unroll().unwrap();
            let j_m = mixing.jacobian_s(&Array1::zeros(2), &Array1::zeros(d));
            let j_g = observation_graph(&j_m, 0.0).unwrap();
            let b = sem.linear_adjacency();
            let err = (&j_g - &b)
                .iter()
                .cloned()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            worst = worst.max(err);
        }
    }
    println!(
        "criterion 2: PASS (180 SEMs, worst recovery error {worst:.2e}, {:.0} ms)",
        t0.elapsed().as_secs_f64() * 1e3
    );
    assert!(worst <= 1e-8, "worst recovery error {worst}");
}

#[test]
fn criterion_3_dag_penalty_oracle_equivalence() {
    let t0 = Instant::now();
    for bits in 0..64u32 {
        let mut a = Array2::zeros((3, 3));
        let mut k = 0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    a[[i, j]] = f64::from((bits >> k) & 1);
                    k += 1;
                }
            }
        }
        let pen = dag_penalty(&a).unwrap();
        let acyclic = !has_cycle_bruteforce(&a);
        assert_eq!(
            pen.abs() < 1e-9,
            acyclic,
            "support {bits:06b}: penalty {pen} vs oracle acyclic {acyclic}"
        );
    }
    let two_cycle = dag_penalty(&array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
    assert!(
        (two_cycle - 0.5).abs() <= 1e-9,
        "2-cycle penalty {two_cycle}"
    );
    println!(
        "criterion 3: PASS (64 supports match the cycle oracle; 2-cycle = {two_cycle:.9}, {:.0} ms)",
        t0.elapsed().as_secs_f64() * 1e3
    );
}

#[test]
fn criterion_4_gradient_correctness() {
    let t0 = Instant::now();
    let cfg = TrainConfig {
        penalty_points: 4,
        ..TrainConfig::default()
    };
    let mut r = cadre::rng::derive(21, 2);
    let x = Array2::from_shape_fn((4, 3), |_| {
        let v: f64 = rand::Rng::sample(&mut r, rand_distr::StandardNormal);
        v
    });
    let mut worst: f64 = 0.0;
    for point in 0..5u64 {
        let mut params = ModelParams::init(&ModelConfig::new(3, 2, 300 + point));
        let (_, grads) = loss_and_grads(&x, true, &params, &cfg, 7 + point, None).unwrap();
        let mut flat = Vec::new();
        grads.for_each(|g| flat.push(g));
        let n = params.n_params();
        let stride = (n / 60).max(1);
        let h = 1e-5;
        for idx in (0..n).step_by(stride) {
            let perturb = |p: &mut ModelParams, delta: f64| {
                let mut k = 0;
                p.for_each_param_mut(|v| {
                    if k == idx {
                        *v += delta;
                    }
                    k += 1;
                });
            };
            perturb(&mut params, h);
            let lp = total_loss(&x, true, &params, &cfg, 7 + point, None)
                .unwrap()
                .total;
            perturb(&mut params, -2.0 * h);
            let lm = total_loss(&x, true, &params, &cfg, 7 + point, None)
                .unwrap()
                .total;
            perturb(&mut params, h);
            let fd = (lp - lm) / (2.0 * h);
            let an = flat[idx];
            let denom = fd.abs().max(an.abs());
            if denom < 1e-7 || (fd - an).abs() < 1e-9 {
                continue; // below finite-difference resolution
            }
            let rel = (fd - an).abs() / denom;
            worst = worst.max(rel);
            assert!(
                rel <= 1e-3,
                "point {point}, param {idx}: fd {fd:.6e} vs {an:.6e} (rel {rel:.2e})"
            );
        }
    }
    println!(
        "criterion 4: PASS (5 points, worst relative gradient error {worst:.2e}, {:.1} s)",
        t0.elapsed().as_secs_f64()
    );
}

struct HeavyRuns {
    independent: RunRecord,
    small_graph: RunRecord,
    violated_a5: RunRecord,
}

fn heavy_runs() -> &'static HeavyRuns {
    static RUNS: OnceLock<HeavyRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let base = std::env::temp_dir().join("cadre_acceptance_runs");
        let _ = std::fs::remove_dir_all(&base);

        let mut independent = ExperimentConfig::default();
        independent.seeds = vec![0, 1, 2];

        let mut small_graph = ExperimentConfig::default();
        small_graph.dgp.d_x = 3;
        small_graph.seeds = vec![0, 1, 2];

        let mut violated = ExperimentConfig::default();
        violated.dgp.violation = Violation::A5;
        violated.seeds = vec![0, 1, 2];

        let t0 = Instant::now();
        let independent = cmd_experiment(&independent, &base.join("independent"), true)
            .expect("independent experiment");
        let small_graph = cmd_experiment(&small_graph, &base.join("small_graph"), true)
            .expect("small-graph experiment");
        let violated_a5 =
            cmd_experiment(&violated, &base.join("violated_a5"), true).expect("A5 experiment");
        eprintln!(
            "[acceptance] trained 9 runs in {:.1} min",
            t0.elapsed().as_secs_f64() / 60.0
        );
        HeavyRuns {
            independent,
            small_graph,
            violated_a5,
        }
    })
}

fn seed_values(record: &RunRecord, pick: impl Fn(&cadre::metrics::MetricsReport) -> Option<f64>) -> Vec<(u64, f64)> {
    record
        .records
        .iter()
        .filter(|r| r.status == "ok")
        .filter_map(|r| r.metrics.as_ref().and_then(&pick).map(|v| (r.seed, v)))
        .collect()
}

#[test]
fn criterion_5_independent_setting_recovery() {
    let runs = heavy_runs();
    let per_seed: Vec<(u64, f64, f64)> = runs
        .independent
        .records
        .iter()
        .filter(|r| r.status == "ok")
        .filter_map(|r| {
            let m = r.metrics.as_ref()?;
            Some((r.seed, m.mcc_z?, m.r2?))
        })
        .collect();
    let best = per_seed
        .iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .copied();
    println!("criterion 5: per-seed (seed, mcc_z, r2) = {per_seed:?}");
    let (seed, mcc_z, r2) = best.expect("at least one successful seed");
    println!(
        "criterion 5: {} (best seed {seed}: MCC(z) {mcc_z:.4} >= 0.90, R2 {r2:.4} >= 0.85)",
        if mcc_z >= 0.90 && r2 >= 0.85 { "PASS" } else { "FAIL" }
    );
    assert!(
        per_seed.iter().any(|&(_, m, r)| m >= 0.90 && r >= 0.85),
        "no seed reached MCC(z) >= 0.90 and R2 >= 0.85: {per_seed:?}"
    );
}

#[test]
fn criterion_6_small_graph_structure_recovery() {
    let runs = heavy_runs();
    let per_seed: Vec<(u64, f64, f64)> = runs
        .small_graph
        .records
        .iter()
        .filter(|r| r.status == "ok")
        .filter_map(|r| {
            let m = r.metrics.as_ref()?;
            Some((r.seed, m.shd_norm?, m.tpr?))
        })
        .collect();
    println!("criterion 6: per-seed (seed, shd_norm, tpr) = {per_seed:?}");
    let ok = per_seed.iter().any(|&(_, s, t)| s <= 0.10 && t >= 0.90);
    println!(
        "criterion 6: {} (best structure recovery over 3 seeds at d_x = 3)",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "no seed reached SHD <= 0.10 and TPR >= 0.90: {per_seed:?}");
}

#[test]
fn criterion_7_a5_violation_degrades_noise_recovery() {
    let runs = heavy_runs();
    let clean = seed_values(&runs.independent, |m| m.mcc_s);
    let violated = seed_values(&runs.violated_a5, |m| m.mcc_s);
    assert!(!clean.is_empty() && !violated.is_empty());
    let mean = |v: &[(u64, f64)]| v.iter().map(|x| x.1).sum::<f64>() / v.len() as f64;
    let (m_clean, m_violated) = (mean(&clean), mean(&violated));
    let drop = m_clean - m_violated;
    println!(
        "criterion 7: {} (mean MCC(s) {m_clean:.4} unviolated vs {m_violated:.4} under A5; drop {drop:.4} >= 0.05)",
        if drop >= 0.05 { "PASS" } else { "FAIL" }
    );
    assert!(
        drop >= 0.05,
        "A5 violation dropped MCC(s) by only {drop:.4}: clean {clean:?} violated {violated:?}"
    );
}

#[test]
fn criterion_8_flow_prior_normalization() {
    let t0 = Instant::now();
    let mut params = ModelParams::init(&ModelConfig::new(3, 2, 0));
    params.config.d_z = 1;
    params.r_flows = vec![Mlp::identity_on(2, 1, 128, 3, 0.2)];
    for scale in [1.0, 1.3] {
        let mut p = params.clone();
        p.r_flows[0].scale_output(scale);
        let step = 0.01;
        let mut integral = 0.0;
        let mut prev_density: Option<f64> = None;
        let mut v = -8.0;
        while v <= 8.0 + 1e-12 {
            let (lp, _, _) = flow_z_logprob(&array![0.3], &array![v], &p).unwrap();
            let dens = lp.exp();
            if let Some(prev) = prev_density {
                integral += 0.5 * (prev + dens) * step;
            }
            prev_density = Some(dens);
            v += step;
        }
        assert!(
            (integral - 1.0).abs() <= 0.01,
            "scale {scale}: integral {integral}"
        );
        println!(
            "criterion 8: density integral at scale {scale} = {integral:.5}"
        );
    }
    println!(
        "criterion 8: PASS ({:.0} ms)",
        t0.elapsed().as_secs_f64() * 1e3
    );
}

#[test]
fn criterion_9_metric_unit_suite() {
    let t0 = Instant::now();
    // structure metrics
    let truth = array![[0.0, 1.0], [0.0, 0.0]];
    let empty = Array2::<f64>::zeros((2, 2));
    assert_eq!(shd(&truth, &truth, false).unwrap(), 0.0);
    assert_eq!(shd(&empty, &truth, false).unwrap(), 1.0);
    assert_eq!(shd(&empty, &truth, true).unwrap(), 0.5);
    assert_eq!(
        shd(&empty, &truth, true).unwrap(),
        shd(&truth, &empty, true).unwrap()
    );
    let (tpr, prec) = tpr_precision(&empty, &truth).unwrap();
    assert_eq!((tpr, prec), (0.0, 1.0));

    // representation metrics
    let mut r = cadre::rng::derive(77, 5);
    let z = Array2::from_shape_fn((5000, 3), |_| {
        let v: f64 = rand::Rng::sample(&mut r, rand_distr::StandardNormal);
        v
    });
    let (m, _) = mcc(&z.mapv(f64::exp), &z, true).unwrap();
    assert!((m - 1.0).abs() < 1e-12, "monotone invariance of MCC");
    let (r2, _) = r2_kernel(&z, &z, 0).unwrap();
    assert!(r2 >= 0.99, "identical-data R2 {r2}");
    let noise = Array2::from_shape_fn((5000, 3), |_| {
        let v: f64 = rand::Rng::sample(&mut r, rand_distr::StandardNormal);
        v
    });
    let (r2_noise, _) = r2_kernel(&noise, &z, 0).unwrap();
    assert!(r2_noise <= 0.1, "independent-noise R2 {r2_noise}");

    // wind metrics hand case: ref {0->1, 1->2} vs est {0->1, 0->2} disagree
    // on exactly the two entries (0,2) and (1,2)
    let mut reference = Array2::<f64>::zeros((3, 3));
    reference[[0, 1]] = 1.0;
    reference[[1, 2]] = 1.0;
    let mut est = Array2::<f64>::zeros((3, 3));
    est[[0, 1]] = 1.0;
    est[[0, 2]] = 1.0;
    let (wshd_n, wtpr, wshd_raw) = wshd_wtpr(&est, &reference).unwrap();
    assert_eq!(wshd_raw, 2.0);
    assert!((wshd_n - 2.0 / 6.0).abs() < 1e-12 && (wtpr - 0.5).abs() < 1e-12);

    // smcc
    let target = z.column(1).to_owned();
    assert!((smcc(&z, &target, 1).unwrap() - 1.0).abs() < 1e-9);

    // Spearman invariance over 100 random monotone transforms
    let mut rr = cadre::rng::derive(9, 6);
    for trial in 0..100 {
        let a: Vec<f64> = (0..300)
            .map(|_| rr.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let b: Vec<f64> = (0..300)
            .map(|_| rr.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let base = spearman(&a, &b).unwrap();
        let scale: f64 = rr.gen_range(0.2..2.0);
        let shift: f64 = rr.gen_range(-1.0..1.0);
        let warped: Vec<f64> = a
            .iter()
            .map(|&v| match trial % 3 {
                0 => (v * scale + shift).exp(),
                1 => v.powi(3) + scale * v + shift,
                _ => (v * scale).atan() + shift,
            })
            .collect();
        let after = spearman(&warped, &b).unwrap();
        assert!(
            (base - after).abs() < 1e-12,
            "transform {trial} broke rank correlation: {base} vs {after}"
        );
    }
    println!(
        "criterion 9: PASS (metric examples and 100 monotone transforms, {:.1} s)",
        t0.elapsed().as_secs_f64()
    );
}
