//! End-to-end acceptance gate for the exposure-control system. Each
//! criterion checks one shipping requirement and prints a single PASS/FAIL
//! line; the target runs without the libtest harness so the scorecard is
//! always visible in plain `cargo test` output. Budgets are asserted so
//! regressions in runtime are caught together with regressions in behavior.

use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aaec::camera::{make_scene, Crf, MotionKind, ScenarioKind};
use aaec::controller::ControllerKind;
use aaec::eval::{convergence_frame, covariance_determinant, summarize};
use aaec::imgproc::{sobel_gradients, Image8, ImageF, Rect};
use aaec::marker::{detect, project_corners, roi_from_corners};
use aaec::metric::{
    eval_metric_real, m_softperc, percentile_weights, DerivSource, MetricParams,
};
use aaec::report::{plot_svgs, read_run_csv, run_csv_bytes, summary_csv_bytes, write_run_csv};
use aaec::sim::{exposure_sweep, run, RunSpec};

fn verdict(idx: u32, label: &str, ok: bool, detail: &str, t0: Instant) {
    println!(
        "[criterion {}] {}: {} — {} ({:.1}s)",
        idx,
        label,
        if ok { "PASS" } else { "FAIL" },
        detail,
        t0.elapsed().as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// 1. Percentile weight profile and metric cross-check.
// ---------------------------------------------------------------------------

fn c1_weight_profile_and_metric_brute_force() {
    let t0 = Instant::now();
    let mut ok = true;
    let mut detail = String::new();

    for s in [10usize, 100, 4096] {
        for p in [0.6, 0.75, 0.9] {
            for k in [1.0, 5.0] {
                let w = percentile_weights(s, p, k).unwrap();
                let sum: f64 = w.iter().sum();
                let m = (p * s as f64).floor() as usize;
                let argmax = w
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                // Unimodal: nondecreasing up to the peak, nonincreasing after.
                let eps = 1e-12;
                let rising = w[..=m].windows(2).all(|v| v[1] >= v[0] - eps);
                let falling = w[m..].windows(2).all(|v| v[1] <= v[0] + eps);
                if (sum - 1.0).abs() > 1e-12
                    || w[0].abs() > 1e-12
                    || argmax != m
                    || !rising
                    || !falling
                {
                    ok = false;
                    detail = format!("weight profile broken at S={s} p={p} k={k}");
                }
            }
        }
    }

    // Independent evaluation of the metric definition on random images:
    // Sobel magnitudes over the interior, ranked ascending, reduced by the
    // weight profile computed from scratch here.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = MetricParams::default();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let img = Image8::from_fn(32, 32, |_, _| rng.gen::<u8>()).unwrap();
        let roi = img.bounds();
        let got = m_softperc(&img, roi, &params).unwrap();

        let g = sobel_gradients(&img.to_f64()).unwrap();
        let mut vals = Vec::new();
        for y in 1..31u32 {
            for x in 1..31u32 {
                vals.push(g.mag.get(x, y));
            }
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let s = vals.len();
        let m = (params.p * s as f64).floor() as usize;
        let mut w: Vec<f64> = (0..s)
            .map(|i| {
                let base = if i <= m {
                    (std::f64::consts::PI * i as f64 / (2.0 * m as f64)).sin()
                } else {
                    (std::f64::consts::PI * (i - m) as f64 / (2.0 * (s - m) as f64)).cos()
                };
                base.powf(params.k)
            })
            .collect();
        let wsum: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= wsum);
        let want: f64 = vals.iter().zip(&w).map(|(v, wi)| v * wi).sum();

        worst = worst.max((got - want).abs());
    }
    if worst > 1e-9 {
        ok = false;
        detail = format!("metric deviates from direct evaluation by {worst:.2e}");
    }
    if ok {
        detail = format!("54 weight profiles + 20 random images, max dev {worst:.2e}");
    }

    verdict(1, "percentile weights & metric cross-check", ok, &detail, t0);
    assert!(ok, "{detail}");
    assert!(t0.elapsed().as_secs_f64() < 5.0, "budget exceeded");
}

// ---------------------------------------------------------------------------
// 2. Analytic exposure derivative vs. frozen-order finite differences.
// ---------------------------------------------------------------------------

fn c2_exposure_derivative_matches_finite_differences() {
    let t0 = Instant::now();
    let params = MetricParams::default();
    let mut ok = true;
    let mut detail = String::new();
    let mut checked = 0usize;
    let mut worst = 0.0f64;

    for kind in ScenarioKind::all() {
        let scene = make_scene(kind, MotionKind::Static, 10.0, 0).unwrap();
        let pose = scene.trajectory.pose_at(0.0);
        let field = scene.irradiance(&pose).unwrap();
        let corners = project_corners(&scene.marker, &pose, &scene.camera.intrinsics).unwrap();
        let roi = roi_from_corners(&corners, field.bounds()).unwrap();
        let e_crop = field.crop(roi).unwrap();
        let local = Rect::new(0, 0, roi.w, roi.h).unwrap();

        for crf in [Crf::Linear, Crf::gamma(2.2).unwrap()] {
            for i in 0..16 {
                // Log-spaced exposures across the sensor range.
                let dt = 0.02 * (40.0f64 / 0.02).powf(i as f64 / 15.0);
                let render = |d: f64| {
                    ImageF::from_fn(e_crop.width(), e_crop.height(), |x, y| {
                        crf.apply(e_crop.get(x, y) * d)
                    })
                    .unwrap()
                };
                let img = render(dt);
                let eval = eval_metric_real(
                    &img,
                    local,
                    &params,
                    &crf,
                    dt,
                    DerivSource::SceneIrradiance(&e_crop),
                )
                .unwrap();

                // Finite differences with the rank order and weights frozen
                // at the center exposure, matching what the analytic form
                // differentiates.
                let g0 = sobel_gradients(&img).unwrap();
                let iw = img.width() - 2;
                let ih = img.height() - 2;
                let mut order: Vec<(f64, usize)> = Vec::with_capacity((iw * ih) as usize);
                let mut idx = 0usize;
                for y in 1..img.height() - 1 {
                    for x in 1..img.width() - 1 {
                        order.push((g0.mag.get(x, y), idx));
                        idx += 1;
                    }
                }
                order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let w = percentile_weights(order.len(), params.p, params.k).unwrap();
                let h = dt * 1e-5;
                let frozen_sum = |d: f64| -> f64 {
                    let g = sobel_gradients(&render(d)).unwrap();
                    order
                        .iter()
                        .enumerate()
                        .map(|(rank, &(_, idx))| {
                            let x = (idx as u32 % iw) + 1;
                            let y = (idx as u32 / iw) + 1;
                            w[rank] * g.mag.get(x, y)
                        })
                        .sum()
                };
                let fd = (frozen_sum(dt + h) - frozen_sum(dt - h)) / (2.0 * h);

                if fd.abs() > 1e-6 {
                    checked += 1;
                    let rel = (eval.dm_ddt - fd).abs() / fd.abs();
                    worst = worst.max(rel);
                    if rel > 0.02 {
                        ok = false;
                        detail = format!(
                            "{} {:?} dt={dt:.4}: analytic {:.6e} vs fd {:.6e} ({:.2}%)",
                            kind.name(),
                            crf,
                            eval.dm_ddt,
                            fd,
                            rel * 100.0
                        );
                    }
                }
            }
        }
    }
    if ok {
        detail = format!("{checked} points with |fd|>1e-6, worst rel dev {:.3e}", worst);
    }

    verdict(2, "analytic d(metric)/d(exposure) vs frozen-order FD", ok, &detail, t0);
    assert!(ok, "{detail}");
    assert!(t0.elapsed().as_secs_f64() < 30.0, "budget exceeded");
}

// ---------------------------------------------------------------------------
// 3. Noise-free convergence to the sweep optimum from both range limits.
// ---------------------------------------------------------------------------

fn c3_clean_convergence_from_both_rails() {
    let t0 = Instant::now();
    let params = MetricParams::default();
    let sweep = exposure_sweep(ScenarioKind::Adversarial, 256, &params).unwrap();
    let oracle = sweep
        .iter()
        .max_by(|a, b| a.m_roi.partial_cmp(&b.m_roi).unwrap())
        .unwrap()
        .dt_ms;

    let mut ok = true;
    let mut finals = Vec::new();
    for dt0 in [0.01, 50.0] {
        let mut spec = RunSpec::new(ScenarioKind::Adversarial, ControllerKind::Aaec, 400, 1);
        spec.noise = false;
        spec.dt0_ms = dt0;
        let res = run(&spec).unwrap();
        let dts: Vec<f64> = res.records.iter().map(|r| r.dt_ms).collect();
        let conv = convergence_frame(&dts);
        let dt_final = summarize(&res).dt_final_ms;
        let rel = (dt_final - oracle).abs() / oracle;
        finals.push(format!("dt0={dt0}: conv={conv:?} final={dt_final:.4} ({:.1}%)", rel * 100.0));
        if conv.is_none() || rel > 0.10 {
            ok = false;
        }
    }
    let detail = format!("oracle {oracle:.4} ms; {}", finals.join("; "));

    verdict(3, "noise-free convergence from both exposure rails", ok, &detail, t0);
    assert!(ok, "{detail}");
    assert!(t0.elapsed().as_secs_f64() < 60.0, "budget exceeded");
}

// ---------------------------------------------------------------------------
// 4. Momentum ablation: tracker with momentum beats plain ascent beats
//    full-frame ascent, per scenario, at matched step size and threshold.
// ---------------------------------------------------------------------------

fn c4_momentum_ablation_ordering() {
    let t0 = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();

    // The full-frame controller only develops a measurable gradient on the
    // glare scene once exposure sits near the saturation shoulder, so that
    // scenario starts below the shoulder instead of at the benchmark
    // default; all three controllers share the start in every comparison.
    let cases = [
        (ScenarioKind::Normal, None),
        (ScenarioKind::Lowlight, None),
        (ScenarioKind::Adversarial, Some(0.1)),
    ];
    let mut ratio_normal = 0.0;
    for (kind, dt0) in cases {
        let conv_of = |ctrl: ControllerKind, momentum: f64| -> Option<usize> {
            let mut spec = RunSpec::new(kind, ctrl, 1200, 1);
            spec.params.momentum = momentum;
            if let Some(d) = dt0 {
                spec.dt0_ms = d;
            }
            let res = run(&spec).unwrap();
            let dts: Vec<f64> = res.records.iter().map(|r| r.dt_ms).collect();
            convergence_frame(&dts)
        };
        let mom = conv_of(ControllerKind::Aaec, 0.9);
        let plain = conv_of(ControllerKind::Aaec, 0.0);
        let aec = conv_of(ControllerKind::AecGlobal, 0.0);
        lines.push(format!("{}: mom={mom:?} plain={plain:?} aec={aec:?}", kind.name()));
        // None (never settled) ranks worst.
        let key = |c: Option<usize>| c.map_or(usize::MAX, |v| v);
        if !(key(mom) < key(plain) && key(plain) < key(aec)) {
            ok = false;
        }
        if kind == ScenarioKind::Normal {
            if let (Some(m), Some(p)) = (mom, plain) {
                ratio_normal = p as f64 / m as f64;
            }
        }
    }
    if ratio_normal < 2.0 {
        ok = false;
    }
    let detail = format!("{}; normal plain/mom ratio {ratio_normal:.2}", lines.join("; "));

    verdict(4, "momentum < plain < full-frame convergence ordering", ok, &detail, t0);
    assert!(ok, "{detail}");
    assert!(t0.elapsed().as_secs_f64() < 300.0, "budget exceeded");
}

// ---------------------------------------------------------------------------
// 5. Pose stability on the static glare scene across seeds.
// ---------------------------------------------------------------------------

fn c5_glare_pose_stability_across_seeds() {
    let t0 = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();

    for seed in 1..=3u64 {
        let stats = |ctrl: ControllerKind| {
            let spec = RunSpec::new(ScenarioKind::Adversarial, ctrl, 1200, seed);
            summarize(&run(&spec).unwrap())
        };
        let ours = stats(ControllerKind::Aaec);
        let baselines = [
            stats(ControllerKind::AecGlobal),
            stats(ControllerKind::Gec),
            stats(ControllerKind::DefaultAe),
        ];
        // A baseline that cannot produce 4 detections has no measurable
        // covariance; that counts as unbounded scatter.
        let min_base = baselines
            .iter()
            .map(|s| s.cov_det.unwrap_or(f64::INFINITY))
            .fold(f64::INFINITY, f64::min);
        let cov = ours.cov_det.unwrap_or(f64::INFINITY);
        let cov_ok = cov <= 0.1 * min_base;
        let rate_ok = ours.detection_rate >= 0.95;
        lines.push(format!(
            "seed {seed}: cov {cov:.2e} vs min-baseline {min_base:.2e}, rate {:.3}",
            ours.detection_rate
        ));
        if !(cov_ok && rate_ok) {
            ok = false;
        }
    }
    let detail = lines.join("; ");

    verdict(5, "glare-scene pose covariance & detection rate", ok, &detail, t0);
    assert!(ok, "{detail}");
    assert!(t0.elapsed().as_secs_f64() < 600.0, "budget exceeded");
}

// ---------------------------------------------------------------------------
// 6. Moving camera under glare: global controllers lose the marker, the
//    tracker keeps it.
// ---------------------------------------------------------------------------

fn c6_glare_lateral_detection_rates() {
    let t0 = Instant::now();
    let rate = |ctrl: ControllerKind| {
        let mut spec = RunSpec::new(ScenarioKind::Adversarial, ctrl, 1200, 1);
        spec.motion = MotionKind::Lateral;
        summarize(&run(&spec).unwrap()).detection_rate
    };
    let ours = rate(ControllerKind::Aaec);
    let aec = rate(ControllerKind::AecGlobal);
    let default_ae = rate(ControllerKind::DefaultAe);

    let ok = ours >= 0.95 && aec <= 0.10 && default_ae <= 0.10;
    let detail =
        format!("tracker {ours:.3}, full-frame {aec:.3}, mid-gray servo {default_ae:.3}");

    verdict(6, "lateral glare detection rates", ok, &detail, t0);
    assert!(ok, "{detail}");
    assert!(t0.elapsed().as_secs_f64() < 600.0, "budget exceeded");
}

// ---------------------------------------------------------------------------
// 7. Benign scenes: the tracker gives up nothing on trajectory quality.
// ---------------------------------------------------------------------------

fn c7_benign_scene_trajectory_parity() {
    let t0 = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();

    for kind in [ScenarioKind::Normal, ScenarioKind::Lowlight] {
        let stats = |ctrl: ControllerKind| {
            let mut spec = RunSpec::new(kind, ctrl, 1200, 1);
            spec.motion = MotionKind::Lateral;
            summarize(&run(&spec).unwrap())
        };
        let ours = stats(ControllerKind::Aaec);
        let best_baseline = [
            stats(ControllerKind::AecGlobal),
            stats(ControllerKind::Gec),
            stats(ControllerKind::DefaultAe),
        ]
        .iter()
        .filter_map(|s| s.traj_dist_m)
        .fold(f64::INFINITY, f64::min);
        let traj = ours.traj_dist_m.unwrap_or(f64::INFINITY);
        lines.push(format!(
            "{}: traj {traj:.2e} vs best baseline {best_baseline:.2e}, rate {:.3}",
            kind.name(),
            ours.detection_rate
        ));
        if !(ours.detection_rate >= 0.95 && traj <= 2.0 * best_baseline) {
            ok = false;
        }
    }
    let detail = lines.join("; ");

    verdict(7, "benign-scene trajectory parity", ok, &detail, t0);
    assert!(ok, "{detail}");
    assert!(t0.elapsed().as_secs_f64() < 600.0, "budget exceeded");
}

// ---------------------------------------------------------------------------
// 8. Pose recovery accuracy over random viewpoints, plus the covariance
//    determinant against an eigenvalue oracle.
// ---------------------------------------------------------------------------

fn c8_pose_accuracy_and_covariance_oracle() {
    let t0 = Instant::now();
    let scene = make_scene(ScenarioKind::Normal, MotionKind::Static, 10.0, 0).unwrap();
    let cam = &scene.camera;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut ok = true;
    let mut detail = String::new();
    let mut worst_mm = 0.0f64;

    for i in 0..50 {
        let z = rng.gen_range(0.7..1.3);
        let x = rng.gen_range(-0.12..0.12) * z;
        let y = rng.gen_range(-0.08..0.08) * z;
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let angle = rng.gen_range(-0.3..0.3);
        let pose = if axis.norm() > 1e-6 {
            aaec::geom::Pose::tilted(axis, angle, Vector3::new(x, y, z))
        } else {
            aaec::geom::Pose::fronto(Vector3::new(x, y, z))
        };
        let field = scene.irradiance(&pose).unwrap();
        let img = cam.capture_clean(&field, 3.0).unwrap();
        let det = detect(&img, img.bounds(), &scene.marker, &cam.intrinsics).unwrap();
        if !det.found {
            ok = false;
            detail = format!("pose {i} not detected (t = {x:.3},{y:.3},{z:.3})");
            break;
        }
        let err_m = (det.translation - pose.t).norm();
        worst_mm = worst_mm.max(err_m * 1e3);
        if err_m > 1e-3 {
            ok = false;
            detail = format!("pose {i}: translation error {:.2} mm", err_m * 1e3);
            break;
        }
    }

    // Covariance determinant vs the product of eigenvalues of the same
    // sample covariance, built independently here.
    let mut worst_cov = 0.0f64;
    if ok {
        for _ in 0..100 {
            let n = rng.gen_range(4..40);
            let pts: Vec<Vector3<f64>> = (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ) * 1e-3
                })
                .collect();
            let got = covariance_determinant(&pts).unwrap();
            let mean: Vector3<f64> = pts.iter().sum::<Vector3<f64>>() / n as f64;
            let mut cov = Matrix3::zeros();
            for p in &pts {
                let d = p - mean;
                cov += d * d.transpose();
            }
            cov /= (n - 1) as f64;
            let eig = cov.symmetric_eigen();
            let want: f64 = eig.eigenvalues.iter().product();
            let rel = (got - want).abs() / want.abs().max(1e-300);
            worst_cov = worst_cov.max(rel);
            if rel > 1e-12 {
                ok = false;
                detail = format!("covariance determinant off by {rel:.2e}");
                break;
            }
        }
    }
    if ok {
        detail = format!(
            "50/50 poses, worst translation {worst_mm:.3} mm; cov oracle worst dev {worst_cov:.1e}"
        );
    }

    verdict(8, "random-pose recovery & covariance oracle", ok, &detail, t0);
    assert!(ok, "{detail}");
    assert!(t0.elapsed().as_secs_f64() < 60.0, "budget exceeded");
}

// ---------------------------------------------------------------------------
// 9. Bit-exact reproducibility of runs, summaries, and plots.
// ---------------------------------------------------------------------------

fn c9_outputs_are_bit_exact_across_reruns() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();

    let render = |tag: &str| -> (Vec<u8>, Vec<u8>, Vec<(String, String)>) {
        let mut spec = RunSpec::new(ScenarioKind::Adversarial, ControllerKind::Aaec, 150, 3);
        spec.motion = MotionKind::Lateral;
        let res = run(&spec).unwrap();
        let run_bytes = run_csv_bytes(&res);
        let summary_bytes = summary_csv_bytes(&[summarize(&res)]);
        let path = dir.path().join(format!("run_{tag}.csv"));
        write_run_csv(&path, &res).unwrap();
        let parsed = read_run_csv(&path).unwrap();
        let svgs = plot_svgs(&[parsed])
            .into_iter()
            .map(|(name, body)| (name.to_string(), body))
            .collect();
        (run_bytes, summary_bytes, svgs)
    };

    let (r1, s1, p1) = render("a");
    let (r2, s2, p2) = render("b");
    let ok = r1 == r2 && s1 == s2 && p1 == p2;
    let detail = format!(
        "run csv {} B, summary csv {} B, {} svg plot(s) identical across reruns",
        r1.len(),
        s1.len(),
        p1.len()
    );

    verdict(9, "bit-exact reruns (csv + svg)", ok, &detail, t0);
    assert!(ok, "{detail}");
    assert!(t0.elapsed().as_secs_f64() < 120.0, "budget exceeded");
}

fn main() {
    let criteria: [fn(); 9] = [
        c1_weight_profile_and_metric_brute_force,
        c2_exposure_derivative_matches_finite_differences,
        c3_clean_convergence_from_both_rails,
        c4_momentum_ablation_ordering,
        c5_glare_pose_stability_across_seeds,
        c6_glare_lateral_detection_rates,
        c7_benign_scene_trajectory_parity,
        c8_pose_accuracy_and_covariance_oracle,
        c9_outputs_are_bit_exact_across_reruns,
    ];
    let mut failed = 0;
    for criterion in criteria {
        if std::panic::catch_unwind(criterion).is_err() {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all 9 criteria passed");
}
