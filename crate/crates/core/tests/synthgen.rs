use clap_lab::synthgen::{
    exact_log_evidence, log_evidence_quadrature, presets, sample_dataset, MixingFunction, ToyImageConfig,
    ToyImageRenderer,
};
use proptest::prelude::*;

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn core_moments_follow_the_label_table() {
    let spec = presets::linear_benchmark(0);
    let data = sample_dataset(&spec, 40_000, 7).unwrap();
    let z = data.z_core.as_ref().unwrap();
    for entry in &spec.label_space {
        let rows: Vec<usize> = (0..data.len()).filter(|&i| data.y.row(i).to_vec() == entry.y).collect();
        // eight equiprobable configurations
        let share = rows.len() as f64 / data.len() as f64;
        assert!((share - 0.125).abs() < 5.0 * (0.125 * 0.875 / data.len() as f64).sqrt(), "{:?} {share}", entry.y);
        for d in 0..3 {
            let col: Vec<f64> = rows.iter().map(|&i| z[[i, d]] as f64).collect();
            let (m, v) = mean_var(&col);
            let n = col.len() as f64;
            let want_v = entry.core_var[d];
            assert!((m - entry.core_mean[d]).abs() < 5.0 * (want_v / n).sqrt(), "mean {m} vs {}", entry.core_mean[d]);
            // var of the sample variance is 2σ⁴/(n−1) for Gaussians
            assert!((v - want_v).abs() < 5.0 * want_v * (2.0 / (n - 1.0)).sqrt(), "var {v} vs {want_v}");
        }
    }
}

#[test]
fn style_ignores_the_labels() {
    let spec = presets::linear_benchmark(0);
    let data = sample_dataset(&spec, 40_000, 8).unwrap();
    let s = data.z_style.as_ref().unwrap();
    for label in 0..3 {
        for bit in [0u8, 1] {
            let rows: Vec<usize> = (0..data.len()).filter(|&i| data.y[[i, label]] == bit).collect();
            let a: Vec<f64> = rows.iter().map(|&i| s[[i, 0]] as f64).collect();
            let b: Vec<f64> = rows.iter().map(|&i| s[[i, 1]] as f64).collect();
            let (ma, va) = mean_var(&a);
            let (mb, _) = mean_var(&b);
            let n = rows.len() as f64;
            assert!((ma - 0.5).abs() < 5.0 * (1.0 / n).sqrt());
            assert!((mb + 0.5).abs() < 5.0 * (1.0 / n).sqrt());
            assert!((va - 1.0).abs() < 5.0 * (2.0 / n).sqrt());
            let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
            assert!((cov - 0.5).abs() < 0.05, "cov {cov}");
        }
    }
}

#[test]
fn observations_are_the_mixed_latents_plus_noise() {
    let spec = presets::linear_benchmark(0);
    let data = sample_dataset(&spec, 5_000, 9).unwrap();
    let MixingFunction::Linear { matrix } = &spec.mixing else { panic!("linear preset") };
    let (zc, zs) = (data.z_core.as_ref().unwrap(), data.z_style.as_ref().unwrap());
    let mut resid = Vec::new();
    for i in 0..data.len() {
        let z: Vec<f64> = zc.row(i).iter().chain(zs.row(i).iter()).map(|&v| v as f64).collect();
        for (o, row) in matrix.iter().enumerate() {
            let clean: f64 = row.iter().zip(&z).map(|(a, b)| a * b).sum();
            resid.push(data.x[[i, o]] as f64 - clean);
        }
    }
    let (m, v) = mean_var(&resid);
    assert!(m.abs() < 1e-3, "residual mean {m}");
    // f32 storage adds ~1e-7 on top of the 0.01 noise
    assert!((v.sqrt() - 0.01).abs() < 3e-4, "residual sd {}", v.sqrt());
}

#[test]
fn sampling_is_a_pure_function_of_seed() {
    let spec = presets::linear_benchmark(0);
    let a = sample_dataset(&spec, 200, 3).unwrap();
    let b = sample_dataset(&spec, 200, 3).unwrap();
    let c = sample_dataset(&spec, 200, 4).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.y, b.y);
    assert_ne!(a.x, c.x);
    assert_eq!(presets::linear_benchmark(5).hash(), presets::linear_benchmark(5).hash());
    assert_ne!(presets::linear_benchmark(5).hash(), presets::linear_benchmark(6).hash());
}

/// log N(x; m, v) in one dimension.
fn log_normal(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * ((x - m).powi(2) / v + v.ln() + (2.0 * std::f64::consts::PI).ln())
}

proptest! {
    #[test]
    fn one_dimensional_evidence_is_a_convolution(x in -8.0f64..8.0, y in 0u8..2) {
        // z | y ~ N(2y, 1) plus unit noise: x | y ~ N(2y, 2)
        let want = log_normal(x, 2.0 * y as f64, 2.0);
        let got = exact_log_evidence(&presets::tractable_1d(), &[x], &[y]).unwrap();
        prop_assert!((got - want).abs() < 1e-10);
        let quad = log_evidence_quadrature(&presets::tractable_1d(), &[x], &[y]).unwrap();
        prop_assert!((quad - want).abs() < 1e-6);
    }

    #[test]
    fn renderer_output_stays_in_the_unit_cube(core in prop::collection::vec(-5.0f64..5.0, 3), style in prop::collection::vec(-5.0f64..5.0, 2)) {
        let r = ToyImageRenderer::new(ToyImageConfig::default());
        let img = r.render(&core, &style);
        prop_assert_eq!(img.pixels.len(), 64 * 64 * 3);
        prop_assert!(img.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert_eq!(img.clamped, core.iter().chain(&style).any(|v| v.abs() > 3.0));
    }
}

/// Area of `|x|^p + |y|^p ≤ r^p` by the midpoint rule on one quadrant.
fn superellipse_area(r: f64, p: f64) -> f64 {
    let n = 200_000;
    let h = r / n as f64;
    4.0 * (0..n).map(|i| (r.powf(p) - ((i as f64 + 0.5) * h).powf(p)).max(0.0).powf(1.0 / p) * h).sum::<f64>()
}

#[test]
fn roundness_interpolates_from_square_to_disc() {
    let r = ToyImageRenderer::new(ToyImageConfig::default());
    // size latent 0 → radius 14, centred; roundness at both range ends
    let area = |roundness: f64| r.render(&[0.0, 0.0, roundness], &[0.0, 0.0]).coverage.iter().map(|&c| c as f64).sum::<f64>();
    let disc = area(3.0);
    let square = area(-3.0);
    assert!((disc - std::f64::consts::PI * 196.0).abs() / disc < 0.01, "disc area {disc}");
    let want = superellipse_area(14.0, 32.0);
    assert!((square - want).abs() / want < 0.01, "square area {square} vs {want}");
    // the toy benchmark's label modes (±1.5) render visibly different shapes
    let (lo, hi) = (area(-1.5), area(1.5));
    assert!((lo - hi) / lo > 0.1, "{lo} vs {hi}");
}
