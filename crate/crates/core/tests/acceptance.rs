//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so every line is printed even when an
//! earlier criterion fails. Exits nonzero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use evgs::camera::{Intrinsics, Pose};
use evgs::config::Config;
use evgs::event_io::{accumulate_events, accumulate_frame, slice_by_count, Event, EventStream};
use evgs::image::Image;
use evgs::losses::{event_loss, log_affine_align, psnr, ssim, total_loss, LossWeights, DEFAULT_LOG_EPSILON};
use evgs::math::{quat_from_axis_angle, Vec3};
use evgs::pipeline::{evaluate_views, held_out_orbit, mean_psnr, naive_priors, simulate_capture};
use evgs::render::{render, render_backward, RenderSettings};
use evgs::scene::{Gaussian, GaussianScene};
use evgs::simulator::{demo_scene, render_orbit, simulate_events, OrbitSpec, SimConfig};
use evgs::trainer::{evaluate_event_loss, initial_scene, progressive_k, Schedule, TrainData, TrainOutputs, Trainer};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> GaussianScene {
    let gaussians = (0..n)
        .map(|_| Gaussian {
            position: Vec3::new(
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(2.5..4.0),
            ),
            log_scale: Vec3::from_fn(|_, _| rng.gen_range(-2.6..-1.6)),
            rotation: [0; 4].map(|_| rng.gen_range(-1.0..1.0)),
            opacity_logit: rng.gen_range(-1.0..1.0),
            color_coeffs: (0..3).map(|_| rng.gen_range(-0.8..0.8)).collect(),
        })
        .collect();
    let background = [0; 3].map(|_| rng.gen_range(0.0..1.0));
    GaussianScene::new(gaussians, background, 0)
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let intr = Intrinsics::centered(32, 32, 40.0);
    let settings = RenderSettings::default();
    let pose = Pose::identity();
    let h = 1e-4;
    let (mut ok, mut total) = (0usize, 0usize);
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let scene = random_scene(&mut rng, 5);
        let weights: Vec<f64> = (0..32 * 32 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |s: &GaussianScene| -> f64 {
            render(s, &pose, &intr, &settings)
                .image
                .data
                .iter()
                .zip(&weights)
                .map(|(a, b)| a * b)
                .sum()
        };
        let forward = render(&scene, &pose, &intr, &settings);
        let grads = render_backward(&scene, &pose, &intr, &forward, &weights).expect("backward");
        let flat = scene.flatten();
        for i in 0..flat.len() {
            let (mut plus, mut minus) = (scene.clone(), scene.clone());
            let (mut fp, mut fm) = (flat.clone(), flat.clone());
            fp[i] += h;
            fm[i] -= h;
            plus.unflatten(&fp);
            minus.unflatten(&fm);
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let an = grads.data[i];
            let scale = an.abs().max(fd.abs());
            let good = if scale < 1e-4 {
                (an - fd).abs() < 1e-6
            } else {
                (an - fd).abs() / scale < 1e-3
            };
            ok += good as usize;
            total += 1;
        }
    }
    let elapsed = start.elapsed();
    let frac = ok as f64 / total as f64;
    outcome(
        frac >= 0.99 && elapsed < Duration::from_secs(120),
        format!(
            "{ok}/{total} parameters agree ({:.2}%), {:.1}s",
            100.0 * frac,
            elapsed.as_secs_f64()
        ),
    )
}

/// Random stream; `min_gap` 0 allows shared timestamps.
fn random_stream(rng: &mut ChaCha8Rng, n: usize, w: u16, h: u16, min_gap: i64, threshold: f64) -> EventStream {
    let mut t = rng.gen_range(0..1000i64);
    let events = (0..n)
        .map(|_| {
            t += rng.gen_range(min_gap..4);
            Event::new(
                t,
                rng.gen_range(0..w),
                rng.gen_range(0..h),
                if rng.gen_bool(0.5) { 1 } else { -1 },
            )
        })
        .collect();
    EventStream::new(events, w, h, threshold).expect("valid stream")
}

fn brute_force(s: &EventStream, t1: i64, t2: i64) -> Vec<f64> {
    let w = s.width();
    let mut out = vec![0.0; w * s.height()];
    for e in s.events().iter().filter(|e| e.t > t1 && e.t <= t2) {
        out[e.y as usize * w + e.x as usize] += e.p as f64 * s.threshold();
    }
    out
}

fn accumulation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut exact = true;
    for _ in 0..100 {
        let n = rng.gen_range(1..=100_000);
        let (w, h) = (rng.gen_range(1..48), rng.gen_range(1..48));
        let threshold = rng.gen_range(0.05..0.5);
        let s = random_stream(&mut rng, n, w, h, 0, threshold);
        let ev = s.events();
        // Frames are integer counts times the threshold; additivity is exact in counts.
        let counts = |v: &[f64]| v.iter().map(|x| (x / threshold).round() as i64).collect::<Vec<_>>();
        let (lo, hi) = (ev[0].t - 1, ev[n - 1].t + 1);
        let mut cuts = [rng.gen_range(lo..=hi), rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)];
        cuts.sort();
        let [t1, t2, t3] = cuts;
        if t1 < t3 {
            let frame = accumulate_frame(&s, t1, t3).unwrap();
            for (a, b) in frame.values.iter().zip(brute_force(&s, t1, t3)) {
                worst = worst.max((a - b).abs());
            }
            if t1 < t2 && t2 < t3 {
                let (a, b) = (
                    accumulate_frame(&s, t1, t2).unwrap(),
                    accumulate_frame(&s, t2, t3).unwrap(),
                );
                let (ca, cb, cf) = (counts(&a.values), counts(&b.values), counts(&frame.values));
                exact &= ca.iter().zip(&cb).zip(&cf).all(|((x, y), z)| x + y == *z);
                exact &= a
                    .values
                    .iter()
                    .zip(&b.values)
                    .zip(&frame.values)
                    .all(|((x, y), z)| (x + y - z).abs() <= 1e-12);
            }
        }
        // Windows starting or ending exactly on an event timestamp.
        let at = ev[rng.gen_range(0..n)].t;
        for (a, b) in [(at - 1, at), (at, at + 1), (at, hi), (lo, at)] {
            let (got, want) = (accumulate_frame(&s, a, b).unwrap().values, brute_force(&s, a, b));
            exact &= counts(&got) == counts(&want);
            worst = got.iter().zip(&want).fold(worst, |m, (x, y)| m.max((x - y).abs()));
        }
    }
    outcome(
        worst <= 1e-12 && exact,
        format!("max deviation {worst:.1e}, additivity and boundaries exact: {exact}"),
    )
}

fn simulator_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let intr = Intrinsics::centered(32, 32, 40.0);
    let settings = RenderSettings::default();
    let sim = SimConfig::default();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let gaussians = (0..6)
            .map(|_| {
                let mut g = Gaussian::isotropic(
                    Vec3::new(
                        rng.gen_range(-0.7..0.7),
                        rng.gen_range(-0.7..0.7),
                        rng.gen_range(-0.7..0.7),
                    ),
                    rng.gen_range(0.1..0.4),
                    rng.gen_range(0.3..0.95),
                    [0; 3].map(|_| rng.gen_range(0.0..1.0)),
                    0,
                );
                g.rotation = quat_from_axis_angle(Vec3::new(0.3, 1.0, 0.2).normalize(), rng.gen_range(0.0..3.0));
                g
            })
            .collect();
        let scene = GaussianScene::new(gaussians, [0; 3].map(|_| rng.gen_range(0.1..0.9)), 0);
        let orbit = OrbitSpec {
            n_frames: 30,
            duration_us: 300_000,
            start_angle_deg: rng.gen_range(0.0..360.0),
            ..OrbitSpec::default()
        };
        let (frames, _) = render_orbit(&scene, &orbit, &intr, &settings).expect("orbit");
        let stream = simulate_events(&frames, &sim).expect("simulate");
        let t0 = frames[0].0;
        let full = accumulate_events(&stream, stream.events(), t0 - 1, frames[frames.len() - 1].0);
        let first = frames[0].1.luminance();
        let last = frames[frames.len() - 1].1.luminance();
        for ((v, a), b) in full.values.iter().zip(&first).zip(&last) {
            let diff = (b + sim.log_epsilon).ln() - (a + sim.log_epsilon).ln();
            worst = worst.max((v - diff).abs());
        }
    }
    outcome(
        worst < sim.threshold,
        format!("max residual {worst:.6} < threshold {}", sim.threshold),
    )
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (w, h) = (24, 20);
    let eps = DEFAULT_LOG_EPSILON;
    let s = random_stream(&mut rng, 200, w as u16, h as u16, 0, 0.1);
    let ev = s.events();
    let frame = accumulate_frame(&s, ev[0].t - 1, ev[ev.len() - 1].t).unwrap();
    let base: Vec<f64> = (0..w * h).map(|_| rng.gen_range(0.05..0.2)).collect();
    let shifted: Vec<f64> = base
        .iter()
        .zip(&frame.values)
        .map(|(l, e)| ((l + eps) * e.exp() - eps).clamp(0.0, 1.0))
        .collect();
    let consistent = shifted
        .iter()
        .zip(&base)
        .zip(&frame.values)
        .all(|((b, a), e)| ((b + eps).ln() - (a + eps).ln() - e).abs() < 1e-12);
    let (i1, i2) = (Image::from_gray(w, h, &base), Image::from_gray(w, h, &shifted));
    let event = event_loss(&i1, &i2, &frame, eps).unwrap();
    let noise = Image::from_fn(32, 32, |_, _| [0; 3].map(|_| rng.gen_range(0.0..1.0)));
    let self_ssim = ssim(&noise, &noise).unwrap();
    let total = total_loss(1.0, 1.0, &LossWeights::default());
    outcome(
        consistent && event <= 1e-12 && (self_ssim - 1.0).abs() <= 1e-9 && (total - 0.022).abs() < 1e-15,
        format!("event loss {event:.1e}, ssim(I,I) = {self_ssim}, total(1,1) = {total}"),
    )
}

fn schedule_contract() -> Outcome {
    let s = Schedule::default();
    let last = s.event_iters - 1;
    let k0 = progressive_k(0, &s).unwrap();
    let kl = progressive_k(last, &s).unwrap();
    let monotone = (1..s.event_iters).all(|i| progressive_k(i, &s).unwrap() <= progressive_k(i - 1, &s).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let stream = random_stream(&mut rng, 50_000, 40, 30, 1, 0.1);
    let mut exact = true;
    for k in [1, 7, 1000, 30_000, 50_000] {
        let windows = slice_by_count(&stream, k).unwrap();
        exact &= windows.len() == 50_000 / k;
        exact &= windows
            .iter()
            .all(|w| w.range.len() == k && stream.index_range(w.t1, w.t2).len() == k);
    }
    outcome(
        k0 == 150_000 && kl == 30_000 && monotone && exact,
        format!("k(0) = {k0}, k({last}) = {kl}, nonincreasing: {monotone}, windows exact: {exact}"),
    )
}

fn ablation() -> Outcome {
    let start = Instant::now();
    let fixture: Value = serde_json::from_str(
        &fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ablation_pilot.json")).unwrap(),
    )
    .unwrap();
    let config = Config::from_json_str(&fixture["config"].to_string(), &[]).expect("fixture config");
    let n_views = fixture["held_out_views"].as_u64().unwrap() as usize;
    let intr = config.camera.intrinsics();
    let settings = config.render_settings();
    let truth = demo_scene();
    let capture = simulate_capture(&truth, &config.orbit, &intr, &config.sim, &settings).unwrap();
    let priors = naive_priors(
        &capture.events,
        &capture.trajectory,
        config.prior.stride,
        config.prior.half_life_us,
    )
    .unwrap();
    let held: Vec<Pose> = held_out_orbit(&config.orbit, n_views)
        .poses()
        .unwrap()
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    let data = TrainData {
        events: &capture.events,
        trajectory: &capture.trajectory,
        intrinsics: &intr,
        priors: Some(&priors),
    };
    let none = TrainOutputs::default();

    let full_cfg = config.train_config();
    let mut init_cfg = full_cfg.clone();
    init_cfg.loss.lambda_reg = 0.0;
    let mut fixed_cfg = full_cfg.clone();
    fixed_cfg.schedule.k_start = fixed_cfg.schedule.k_end;
    let mut noprior_cfg = init_cfg.clone();
    noprior_cfg.schedule.warm_up_iters = 0;

    let score = |scene: &GaussianScene| mean_psnr(&evaluate_views(scene, &truth, &held, &intr, &settings).unwrap());
    let k_end = full_cfg.schedule.k_end;
    let eval_loss = |scene: &GaussianScene| {
        evaluate_event_loss(
            scene,
            &capture.events,
            k_end,
            &capture.trajectory,
            &intr,
            &settings,
            config.loss.log_epsilon,
        )
        .unwrap()
    };

    let mut warm = Trainer::new(&full_cfg, data, initial_scene(&full_cfg).unwrap(), &none).unwrap();
    warm.warm_up().unwrap();
    let run = |cfg| {
        let mut t = warm.fork(cfg).unwrap();
        t.event_phase().unwrap();
        t.finish().unwrap().0
    };
    let full = run(&full_cfg);
    let init = run(&init_cfg);
    let fixed = run(&fixed_cfg);
    let mut t = Trainer::new(&noprior_cfg, data, initial_scene(&noprior_cfg).unwrap(), &none).unwrap();
    t.event_phase().unwrap();
    let noprior = t.finish().unwrap().0;

    let (p_full, p_init, p_none) = (score(&full), score(&init), score(&noprior));
    let (l_prog, l_fixed) = (eval_loss(&full), eval_loss(&fixed));
    let elapsed = start.elapsed();

    let pilot = &fixture["pilot"];
    let drift = [(p_full, "full_psnr"), (p_init, "init_psnr"), (p_none, "noprior_psnr")]
        .iter()
        .map(|(v, k)| (v - pilot[*k].as_f64().unwrap()).abs())
        .fold(0.0, f64::max);

    let ordering = p_full >= p_init && p_init >= p_none;
    let margin = p_full - p_none >= 2.0;
    let slicing = l_prog <= l_fixed;
    let in_time = elapsed < Duration::from_secs(15 * 60);
    outcome(
        ordering && margin && slicing && in_time,
        format!(
            "PSNR full {p_full:.2} / init {p_init:.2} / no-prior {p_none:.2} dB (ordering {ordering}, margin {:+.2} dB {margin}); \
             event loss progressive {l_prog:.5} vs fixed {l_fixed:.5} ({slicing}); {} events; pilot drift {drift:.3} dB; {:.0}s",
            p_full - p_none,
            capture.events.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn metric_alignment() -> Outcome {
    let intr = Intrinsics::centered(64, 64, 80.0);
    let settings = RenderSettings::default();
    let mut worst = f64::INFINITY;
    let orbit = OrbitSpec {
        n_frames: 6,
        ..OrbitSpec::default()
    };
    for (_, pose) in orbit.poses().unwrap() {
        let reference = render(&demo_scene(), &pose, &intr, &settings)
            .image
            .map(|v| 0.15 + 0.8 * v);
        let distortions: [&dyn Fn(f64) -> f64; 4] =
            [&|v| 0.5 * v, &|v| 1.05 * v, &|v| v.powf(2.2), &|v| 0.7 * v.powf(0.6)];
        for d in distortions {
            let aligned = log_affine_align(&reference.map(d), &reference).unwrap();
            worst = worst.min(psnr(&aligned.image, &reference).unwrap());
        }
    }
    outcome(
        worst >= 60.0,
        format!("worst aligned PSNR {worst:.1} dB over exposure and gamma distortions"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_evgs");
    let config = serde_json::json!({
        "paths": { "out_dir": dir.path().join("sim") },
        "scene": { "n_init": 400 },
        "schedule": { "warm_up_iters": 40, "event_iters": 60, "k_start": 8000, "k_end": 1600,
                      "densify_interval": 20, "checkpoint_interval": 25 }
    });
    let cfg_path = dir.path().join("config.json");
    fs::write(&cfg_path, config.to_string()).unwrap();
    let evgs = |args: &[&str]| Command::new(bin).args(args).output().unwrap();
    let cfg = cfg_path.to_str().unwrap();
    if !evgs(&["simulate", "--config", cfg]).status.success() {
        return outcome(false, "simulate failed");
    }
    let sim = dir.path().join("sim");
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let status = evgs(&[
            "train",
            "--config",
            cfg,
            "--set",
            &format!("paths.out_dir={}", out.display()),
            "--set",
            &format!("paths.events={}", sim.join("events.bin").display()),
            "--set",
            &format!("paths.trajectory={}", sim.join("trajectory.json").display()),
        ])
        .status;
        if !status.success() {
            return outcome(false, format!("train run {name} failed"));
        }
        let mut files: Vec<_> = fs::read_dir(out.join("checkpoints"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        files.push(out.join("final.json"));
        files.push(out.join("train.jsonl"));
        runs.push(files.iter().map(|f| fs::read(f).unwrap()).collect::<Vec<_>>());
    }
    let identical = runs[0] == runs[1];
    outcome(
        identical,
        format!("{} files per run, byte-identical: {identical}", runs[0].len()),
    )
}

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 8] = [
        ("gradient oracle", gradient_oracle),
        ("event accumulation oracle", accumulation_oracle),
        ("simulator round trip", simulator_round_trip),
        ("loss identities", loss_identities),
        ("schedule contract", schedule_contract),
        ("desk-scale ablation", ablation),
        ("metric alignment", metric_alignment),
        ("determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let r = check();
        println!(
            "criterion {n} {name}: {} ({})",
            if r.pass { "PASS" } else { "FAIL" },
            r.detail
        );
        failed += (!r.pass) as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
