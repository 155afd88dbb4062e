//! Labelled datasets and their on-disk layout: a directory with
//! `manifest.json` plus one raw little-endian, row-major file per array
//! (`x.f32`, `y.u8`, and for synthetic data `z_core.f32`, `z_style.f32`).

use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n: usize,
    pub obs_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_shape: Option<[usize; 3]>,
    pub num_labels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_core_true: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_style_true: Option<usize>,
    pub dtype: ArrayTypes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_hash: Option<String>,
    pub byte_order: String,
    pub layout: String,
    /// Rows whose latents were clamped by the image renderer.
    #[serde(default)]
    pub clamped_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayTypes {
    pub x: String,
    pub y: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_core: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_style: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Array2<f32>,
    pub y: Array2<u8>,
    pub z_core: Option<Array2<f32>>,
    pub z_style: Option<Array2<f32>>,
    pub manifest: Manifest,
}

impl LabeledDataset {
    /// Wraps externally produced arrays (no ground truth).
    pub fn from_arrays(
        x: Array2<f32>,
        y: Array2<u8>,
        image_shape: Option<[usize; 3]>,
    ) -> Result<Self> {
        let manifest = Manifest {
            n: x.nrows(),
            obs_dim: x.ncols(),
            image_shape,
            num_labels: y.ncols(),
            k_core_true: None,
            k_style_true: None,
            dtype: ArrayTypes {
                x: "f32".into(),
                y: "u8".into(),
                z_core: None,
                z_style: None,
            },
            seed: None,
            spec_hash: None,
            byte_order: "little".into(),
            layout: "row-major".into(),
            clamped_rows: 0,
        };
        let ds = Self {
            x,
            y,
            z_core: None,
            z_style: None,
            manifest,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_ground_truth(&self) -> bool {
        self.z_core.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.nrows();
        let bad = |m: String| Err(Error::Shape(m));
        if self.y.nrows() != n {
            return bad(format!("y has {} rows, x has {n}", self.y.nrows()));
        }
        for (name, z) in [("z_core", &self.z_core), ("z_style", &self.z_style)] {
            if let Some(z) = z {
                if z.nrows() != n {
                    return bad(format!("{name} has {} rows, x has {n}", z.nrows()));
                }
            }
        }
        if self.y.iter().any(|&v| v > 1) {
            return Err(Error::InvalidLabel("label entries must be 0 or 1".into()));
        }
        if let Some([h, w, c]) = self.manifest.image_shape {
            if h * w * c != self.x.ncols() {
                return bad(format!(
                    "image shape {h}×{w}×{c} does not match obs_dim {}",
                    self.x.ncols()
                ));
            }
        }
        if self.manifest.n != n
            || self.manifest.obs_dim != self.x.ncols()
            || self.manifest.num_labels != self.y.ncols()
        {
            return bad("manifest disagrees with array shapes".into());
        }
        Ok(())
    }

    /// Rows `idx` as a new dataset (manifest updated accordingly).
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut manifest = self.manifest.clone();
        manifest.n = idx.len();
        Self {
            x: self.x.select(Axis(0), idx),
            y: self.y.select(Axis(0), idx),
            z_core: self.z_core.as_ref().map(|z| z.select(Axis(0), idx)),
            z_style: self.z_style.as_ref().map(|z| z.select(Axis(0), idx)),
            manifest,
        }
    }

    /// Keeps only label column `col`.
    pub fn with_label_columns(&self, cols: &[usize]) -> Result<Self> {
        if cols.iter().any(|&c| c >= self.y.ncols()) {
            return Err(Error::InvalidArgument(format!(
                "label column out of range (have {})",
                self.y.ncols()
            )));
        }
        let mut out = self.clone();
        out.y = self.y.select(Axis(1), cols);
        out.manifest.num_labels = cols.len();
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_raw(
            &dir.join("x.f32"),
            self.x.iter().flat_map(|v| v.to_le_bytes()),
        )?;
        write_raw(&dir.join("y.u8"), self.y.iter().copied())?;
        // stale ground-truth files from a previous dataset must not survive
        for (name, z) in [("z_core.f32", &self.z_core), ("z_style.f32", &self.z_style)] {
            let p = dir.join(name);
            match z {
                Some(z) => write_raw(&p, z.iter().flat_map(|v| v.to_le_bytes()))?,
                None if p.exists() => fs::remove_file(&p).map_err(|e| Error::io(&p, e))?,
                None => {}
            }
        }
        let p = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.byte_order != "little" || manifest.layout != "row-major" {
            return Err(Error::Unsupported(format!(
                "dataset layout {}/{}; only little/row-major is supported",
                manifest.byte_order, manifest.layout
            )));
        }
        let n = manifest.n;
        let x = read_f32(&dir.join("x.f32"), n, manifest.obs_dim)?;
        let ybytes = read_bytes(&dir.join("y.u8"), n * manifest.num_labels)?;
        let y = Array2::from_shape_vec((n, manifest.num_labels), ybytes).expect("length checked");
        let z_core = match manifest.k_core_true {
            Some(k) if dir.join("z_core.f32").exists() => {
                Some(read_f32(&dir.join("z_core.f32"), n, k)?)
            }
            _ => None,
        };
        let z_style = match manifest.k_style_true {
            Some(k) if dir.join("z_style.f32").exists() => {
                Some(read_f32(&dir.join("z_style.f32"), n, k)?)
            }
            _ => None,
        };
        let ds = Self {
            x,
            y,
            z_core,
            z_style,
            manifest,
        };
        ds.validate()?;
        Ok(ds)
    }
}

fn write_raw(path: &Path, bytes: impl Iterator<Item = u8>) -> Result<()> {
    let buf: Vec<u8> = bytes.collect();
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let b = fs::read(path).map_err(|e| Error::io(path, e))?;
    if b.len() != expected {
        return Err(Error::CorruptArchive {
            path: path.to_path_buf(),
            reason: format!("expected {expected} bytes, found {}", b.len()),
        });
    }
    Ok(b)
}

fn read_f32(path: &Path, rows: usize, cols: usize) -> Result<Array2<f32>> {
    let b = read_bytes(path, rows * cols * 4)?;
    let v: Vec<f32> = b
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), v).expect("length checked"))
}
