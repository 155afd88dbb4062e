//! Parametric toy-image renderer standing in for rendered-object datasets.
//!
//! Latent semantics (each coordinate is clamped to `[-range, range]` and mapped
//! linearly onto its parameter interval; absent coordinates sit at the
//! midpoint):
//!
//! | latent   | parameter                          | interval       |
//! |----------|------------------------------------|----------------|
//! | core 0   | object hue                         | `[0, 0.75]`    |
//! | core 1   | object radius (pixels)             | `[8, 20]`      |
//! | core 2   | roundness (1 = disc, 0 = squarish) | `[0, 1]`       |
//! | style 0  | background hue                     | `[0, 0.75]`    |
//! | style 1  | horizontal offset (pixels)         | `[-8, 8]`      |
//! | style 2  | vertical offset (pixels)           | `[-8, 8]`      |
//!
//! The object is a superellipse `|dx/r|^p + |dy/r|^p ≤ 1` with
//! `p = 2 + 30·(1 - roundness)³` (a disc at 1, nearly square at 0). The
//! cubic keeps the two label modes of the toy benchmark visibly apart.
//! Colours are `hsv(hue, 0.85, 0.95)` over a background
//! `hsv(bg_hue, 0.3, 0.35)`. Edges are anti-aliased with a one-pixel ramp so
//! the image is continuous in every latent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_CORE_DIMS: usize = 3;
pub const MAX_STYLE_DIMS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyImageConfig {
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_range")]
    pub latent_range: f64,
}

fn default_side() -> usize {
    64
}
fn default_range() -> f64 {
    3.0
}

impl Default for ToyImageConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            latent_range: 3.0,
        }
    }
}

impl ToyImageConfig {
    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, 3]
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width * 3
    }

    pub fn validate(&self, k_core: usize, k_style: usize) -> Result<()> {
        if k_core > MAX_CORE_DIMS || k_style > MAX_STYLE_DIMS {
            return Err(Error::InvalidSpec(format!(
                "toy renderer supports at most {MAX_CORE_DIMS} core and {MAX_STYLE_DIMS} style latents"
            )));
        }
        if self.height < 48 || self.width < 48 {
            return Err(Error::InvalidSpec(
                "toy renderer needs images of at least 48×48".into(),
            ));
        }
        if !(self.latent_range > 0.0) {
            return Err(Error::InvalidSpec("latent_range must be positive".into()));
        }
        Ok(())
    }
}

/// Rendered image plus bookkeeping.
#[derive(Debug, Clone)]
pub struct Rendered {
    /// Row-major `height × width × 3`, values in `[0, 1]`.
    pub pixels: Vec<f32>,
    /// Object coverage per pixel in `[0, 1]`, row-major `height × width`.
    pub coverage: Vec<f32>,
    /// Some latent fell outside the supported range and was clamped.
    pub clamped: bool,
}

#[derive(Debug, Clone)]
pub struct ToyImageRenderer {
    cfg: ToyImageConfig,
}

#[derive(Debug, Clone, Copy)]
struct Scene {
    hue: f64,
    radius: f64,
    exponent: f64,
    bg_hue: f64,
    dx: f64,
    dy: f64,
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

impl ToyImageRenderer {
    pub fn new(cfg: ToyImageConfig) -> Self {
        Self { cfg }
    }

    pub fn config(&self) -> &ToyImageConfig {
        &self.cfg
    }

    fn unit(&self, v: Option<&f64>, clamped: &mut bool) -> f64 {
        let r = self.cfg.latent_range;
        match v {
            None => 0.5,
            Some(&v) => {
                if !(v >= -r && v <= r) {
                    *clamped = true;
                }
                let c = if v.is_nan() { 0.0 } else { v.clamp(-r, r) };
                (c + r) / (2.0 * r)
            }
        }
    }

    fn scene(&self, core: &[f64], style: &[f64]) -> (Scene, bool) {
        let mut clamped = false;
        let t: Vec<f64> = (0..MAX_CORE_DIMS)
            .map(|i| self.unit(core.get(i), &mut clamped))
            .collect();
        let s: Vec<f64> = (0..MAX_STYLE_DIMS)
            .map(|i| self.unit(style.get(i), &mut clamped))
            .collect();
        let scene = Scene {
            hue: 0.75 * t[0],
            radius: 8.0 + 12.0 * t[1],
            exponent: 2.0 + 30.0 * (1.0 - t[2]).powi(3),
            bg_hue: 0.75 * s[0],
            dx: -8.0 + 16.0 * s[1],
            dy: -8.0 + 16.0 * s[2],
        };
        (scene, clamped)
    }

    pub fn render(&self, core: &[f64], style: &[f64]) -> Rendered {
        let (sc, clamped) = self.scene(core, style);
        let (h, w) = (self.cfg.height, self.cfg.width);
        let obj = hsv_to_rgb(sc.hue, 0.85, 0.95);
        let bg = hsv_to_rgb(sc.bg_hue, 0.3, 0.35);
        let cx = w as f64 / 2.0 + sc.dx;
        let cy = h as f64 / 2.0 + sc.dy;
        let mut pixels = vec![0f32; h * w * 3];
        let mut coverage = vec![0f32; h * w];
        for i in 0..h {
            for j in 0..w {
                let px = (j as f64 + 0.5 - cx) / sc.radius;
                let py = (i as f64 + 0.5 - cy) / sc.radius;
                let norm = (px.abs().powf(sc.exponent) + py.abs().powf(sc.exponent))
                    .powf(1.0 / sc.exponent);
                // approximate signed distance to the boundary in pixels
                let alpha = (0.5 + (1.0 - norm) * sc.radius).clamp(0.0, 1.0);
                coverage[i * w + j] = alpha as f32;
                for c in 0..3 {
                    pixels[(i * w + j) * 3 + c] = (alpha * obj[c] + (1.0 - alpha) * bg[c]) as f32;
                }
            }
        }
        Rendered {
            pixels,
            coverage,
            clamped,
        }
    }
}

/// Batch renderer. `z` rows hold `k_core` core latents followed by style
/// latents. Returns the flattened images (one per row) and per-row clamp flags.
pub fn render_toy_images(
    cfg: &ToyImageConfig,
    z: &[Vec<f64>],
    k_core: usize,
) -> Result<(Vec<Vec<f32>>, Vec<bool>)> {
    let k_style = z.first().map_or(0, |r| r.len().saturating_sub(k_core));
    cfg.validate(k_core, k_style)?;
    let r = ToyImageRenderer::new(cfg.clone());
    let mut images = Vec::with_capacity(z.len());
    let mut flags = Vec::with_capacity(z.len());
    for row in z {
        if row.len() != k_core + k_style {
            return Err(Error::Shape(format!(
                "latent row has length {}, expected {}",
                row.len(),
                k_core + k_style
            )));
        }
        let out = r.render(&row[..k_core], &row[k_core..]);
        images.push(out.pixels);
        flags.push(out.clamped);
    }
    Ok((images, flags))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn renderer() -> ToyImageRenderer {
        ToyImageRenderer::new(ToyImageConfig::default())
    }

    #[test]
    fn midpoint_renders_centred_object() {
        let out = renderer().render(&[0.0; 3], &[0.0; 2]);
        assert!(!out.clamped);
        let (mut sx, mut sy, mut m) = (0.0, 0.0, 0.0);
        for i in 0..64 {
            for j in 0..64 {
                let a = out.coverage[i * 64 + j] as f64;
                sx += a * (j as f64 + 0.5);
                sy += a * (i as f64 + 0.5);
                m += a;
            }
        }
        assert!((sx / m - 32.0).abs() < 1e-6);
        assert!((sy / m - 32.0).abs() < 1e-6);
        assert!(out.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn background_hue_changes_only_pixels_outside_the_object() {
        let r = renderer();
        let a = r.render(&[0.3, -0.2, 1.0], &[-1.0, 0.5]);
        let b = r.render(&[0.3, -0.2, 1.0], &[1.5, 0.5]);
        let mut changed = 0;
        for p in 0..64 * 64 {
            let differs = (0..3).any(|c| a.pixels[p * 3 + c] != b.pixels[p * 3 + c]);
            if differs {
                changed += 1;
                assert!(a.coverage[p] < 1.0, "pixel {p} inside the object changed");
            }
        }
        assert!(changed > 1000);
    }

    #[test]
    fn size_latent_grows_object_pixel_count() {
        let r = renderer();
        let count = |z: f64| {
            r.render(&[0.0, z, 0.0], &[])
                .coverage
                .iter()
                .filter(|&&a| a > 0.5)
                .count()
        };
        let mut prev = count(-3.0);
        for step in 1..=12 {
            let c = count(-3.0 + 0.5 * step as f64);
            assert!(c > prev, "pixel count not increasing at step {step}");
            prev = c;
        }
    }

    #[test]
    fn out_of_range_latents_are_clamped_and_flagged() {
        let r = renderer();
        let a = r.render(&[5.0, 0.0, 0.0], &[]);
        let b = r.render(&[3.0, 0.0, 0.0], &[]);
        assert!(a.clamped);
        assert!(!b.clamped);
        assert_eq!(a.pixels, b.pixels);
    }

    #[test]
    fn distinct_latents_render_distinct_images() {
        let r = renderer();
        let base = r.render(&[0.1, 0.2, 0.3], &[0.4, 0.5]);
        for d in 0..5 {
            let mut core = vec![0.1, 0.2, 0.3];
            let mut style = vec![0.4, 0.5];
            if d < 3 {
                core[d] += 0.05;
            } else {
                style[d - 3] += 0.05;
            }
            assert_ne!(r.render(&core, &style).pixels, base.pixels, "dim {d}");
        }
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        let g = hsv_to_rgb(1.0 / 3.0, 1.0, 1.0);
        assert!((g[1] - 1.0).abs() < 1e-12 && g[0].abs() < 1e-12);
    }
}
