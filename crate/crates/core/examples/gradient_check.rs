//! Compares analytic render gradients against central finite differences
//! on small random scenes.
//!
//! cargo run --release --example gradient_check -- [n_scenes]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evgs::camera::{Intrinsics, Pose};
use evgs::math::Vec3;
use evgs::render::{render, render_backward, RenderSettings};
use evgs::scene::{Gaussian, GaussianScene};

fn random_scene(rng: &mut ChaCha8Rng) -> GaussianScene {
    let gaussians = (0..5)
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
    GaussianScene::new(gaussians, [0.2, 0.3, 0.4], 0)
}

fn main() -> evgs::Result<()> {
    let n_scenes: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    let intr = Intrinsics::centered(32, 32, 40.0);
    let pose = Pose::identity();
    let settings = RenderSettings::default();
    let h = 1e-4;

    for seed in 0..n_scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng);
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
        let grads = render_backward(&scene, &pose, &intr, &forward, &weights)?;
        let flat = scene.flatten();
        let (mut ok, mut worst) = (0, 0.0f64);
        for i in 0..flat.len() {
            let mut plus = scene.clone();
            let mut minus = scene.clone();
            let (mut fp, mut fm) = (flat.clone(), flat.clone());
            fp[i] += h;
            fm[i] -= h;
            plus.unflatten(&fp);
            minus.unflatten(&fm);
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let an = grads.data[i];
            let scale = an.abs().max(fd.abs());
            let err = if scale < 1e-4 {
                (an - fd).abs()
            } else {
                (an - fd).abs() / scale
            };
            let tol = if scale < 1e-4 { 1e-6 } else { 1e-3 };
            if err < tol {
                ok += 1;
            }
            worst = worst.max(err);
        }
        println!(
            "scene {seed}: {ok}/{} parameters agree, worst error {worst:.2e}",
            flat.len()
        );
    }
    Ok(())
}
