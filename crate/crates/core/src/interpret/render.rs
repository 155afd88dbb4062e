use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{
    by_label, global_weights, local_weights_at, posterior_mean_of, traverse_with, Strip,
    TraversalConfig,
};
use crate::error::{Error, Result};
use crate::model::ClapModel;
use crate::synthgen::LabeledDataset;

pub const REPORT_FILE: &str = "report.json";

/// Separator between grid cells, in pixels.
const GAP: u32 = 2;
/// Cell size for one coordinate of a vector observation.
const VEC_CELL: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportInstance {
    pub instance_id: usize,
    pub grid: String,
    pub global_weights: BTreeMap<String, Vec<f64>>,
    pub local_weights: BTreeMap<String, Vec<f64>>,
    pub active_dims: Vec<usize>,
    /// Human-assigned meaning per traversed dim; `null` until annotated.
    pub concept_labels: BTreeMap<String, Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub instances: Vec<ReportInstance>,
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Draws one frame into `img` at `(ox, oy)`. Image observations are drawn
/// as pixels; vectors as a row of cells, with values mapped from `[lo, hi]`.
fn draw_frame(
    img: &mut RgbImage,
    frame: &[f64],
    shape: Option<[usize; 3]>,
    (ox, oy): (u32, u32),
    (lo, hi): (f64, f64),
) {
    match shape {
        Some([h, w, c]) => {
            for yy in 0..h {
                for xx in 0..w {
                    let base = (yy * w + xx) * c;
                    let px = if c >= 3 {
                        [
                            to_u8(frame[base]),
                            to_u8(frame[base + 1]),
                            to_u8(frame[base + 2]),
                        ]
                    } else {
                        let g = to_u8(frame[base]);
                        [g, g, g]
                    };
                    img.put_pixel(ox + xx as u32, oy + yy as u32, Rgb(px));
                }
            }
        }
        None => {
            let span = if hi > lo { hi - lo } else { 1.0 };
            for (i, v) in frame.iter().enumerate() {
                let g = to_u8((v - lo) / span);
                for dy in 0..VEC_CELL {
                    for dx in 0..VEC_CELL {
                        img.put_pixel(ox + i as u32 * VEC_CELL + dx, oy + dy, Rgb([g, g, g]));
                    }
                }
            }
        }
    }
}

fn frame_size(shape: Option<[usize; 3]>, obs_dim: usize) -> (u32, u32) {
    match shape {
        Some([h, w, _]) => (w as u32, h as u32),
        None => (obs_dim as u32 * VEC_CELL, VEC_CELL),
    }
}

/// Grid with one row per strip and one column per traversal step.
pub fn grid_image(strips: &[Strip], shape: Option<[usize; 3]>, obs_dim: usize) -> RgbImage {
    let (fw, fh) = frame_size(shape, obs_dim);
    let cols = strips.first().map_or(0, |s| s.frames.len()) as u32;
    let rows = strips.len() as u32;
    let width = cols * fw + cols.saturating_sub(1) * GAP;
    let height = rows * fh + rows.saturating_sub(1) * GAP;
    let mut img: RgbImage =
        ImageBuffer::from_pixel(width.max(1), height.max(1), Rgb([255, 255, 255]));
    let all = strips.iter().flat_map(|s| s.frames.iter().flatten());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
        (a.min(v), b.max(v))
    });
    for (r, s) in strips.iter().enumerate() {
        for (c, f) in s.frames.iter().enumerate() {
            let origin = (c as u32 * (fw + GAP), r as u32 * (fh + GAP));
            draw_frame(&mut img, f, shape, origin, (lo, hi));
        }
    }
    img
}

/// Per-strip heatmap of `|frame − middle frame|`, summed over channels and
/// scaled by the largest difference in the grid.
pub fn diff_strips(strips: &[Strip], shape: Option<[usize; 3]>) -> Vec<Strip> {
    let c = shape.map_or(1, |s| s[2]);
    let diffs: Vec<Strip> = strips
        .iter()
        .map(|s| {
            let mid = &s.frames[s.frames.len() / 2];
            let frames = s
                .frames
                .iter()
                .map(|f| {
                    f.chunks(c)
                        .zip(mid.chunks(c))
                        .flat_map(|(a, b)| {
                            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
                            std::iter::repeat_n(d, c)
                        })
                        .collect()
                })
                .collect();
            Strip {
                dim: s.dim,
                values: s.values.clone(),
                frames,
            }
        })
        .collect();
    let max = diffs
        .iter()
        .flat_map(|s| s.frames.iter().flatten())
        .cloned()
        .fold(0.0, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 1.0 };
    diffs
        .into_iter()
        .map(|mut s| {
            for f in &mut s.frames {
                f.iter_mut().for_each(|v| *v *= scale);
            }
            s
        })
        .collect()
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(other),
        })
}

/// Writes `instance_NNNNNN.png` traversal grids (rows = traversed dims,
/// columns = steps) for each instance, optional `_diff.png` highlight grids,
/// and `report.json`.
pub fn render_report(
    model: &ClapModel,
    data: &LabeledDataset,
    instances: &[usize],
    cfg: &TraversalConfig,
    out: &Path,
    highlight: bool,
) -> Result<Report> {
    if instances.is_empty() {
        return Err(Error::InvalidArgument("no instances selected".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let shape = model.dims().image_shape;
    let obs_dim = model.dims().obs_dim;
    let global = by_label(&global_weights(model)?);
    let mut entries = Vec::new();
    for &id in instances {
        if id >= data.len() {
            return Err(Error::InvalidArgument(format!(
                "instance {id} out of range ({} rows)",
                data.len()
            )));
        }
        let x: Vec<f32> = data.x.row(id).to_vec();
        let strips = traverse_with(model, &x, cfg, data)?;
        let name = format!("instance_{id:06}.png");
        save_png(&grid_image(&strips, shape, obs_dim), &out.join(&name))?;
        if highlight {
            let diff = diff_strips(&strips, shape);
            save_png(
                &grid_image(&diff, shape, obs_dim),
                &out.join(format!("instance_{id:06}_diff.png")),
            )?;
        }
        let mu = posterior_mean_of(model, &x)?;
        let local = local_weights_at(model, &mu[..model.dims().k_c])?;
        let dims: Vec<usize> = strips.iter().map(|s| s.dim).collect();
        entries.push(ReportInstance {
            instance_id: id,
            grid: name,
            global_weights: global.clone(),
            local_weights: by_label(&local.summands),
            active_dims: dims.clone(),
            concept_labels: dims.iter().map(|d| (d.to_string(), None)).collect(),
        });
    }
    let report = Report { instances: entries };
    let p = out.join(REPORT_FILE);
    fs::write(&p, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&p, e))?;
    Ok(report)
}

/// Sets the concept label of `dim` in every instance of the report at
/// `path`. Fails when `dim` was not traversed.
pub fn annotate(path: &Path, dim: usize, label: &str) -> Result<Report> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut report: Report = serde_json::from_slice(&raw)?;
    let key = dim.to_string();
    if report.instances.is_empty()
        || report
            .instances
            .iter()
            .any(|i| !i.concept_labels.contains_key(&key))
    {
        return Err(Error::InvalidArgument(format!(
            "dim {dim} is not among the traversed dims"
        )));
    }
    for inst in &mut report.instances {
        inst.concept_labels
            .insert(key.clone(), Some(label.to_string()));
    }
    fs::write(path, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(path, e))?;
    Ok(report)
}
