//! RGB / AoLP / DoLP triplets on disk.
//!
//! Layout: `<dir>/rgb/<stem>.rgbpt`, `<dir>/aolp/<stem>.rgbpt`,
//! `<dir>/dolp/<stem>.rgbpt`, each `(1, 3, H, W)`. AoLP is stored divided by
//! π, i.e. in `[0, 1]`, and rescaled to radians on load. The stem of image
//! `id` is its zero-padded six-digit decimal form.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use super::tensor_file::{load_tensor, save_tensor};
use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TripletSample {
    /// `(1, 3, H, W)` in `[0, 1]`.
    pub rgb: Tensor,
    /// Radians in `[0, π]`.
    pub aolp: Tensor,
    /// `[0, 1]`.
    pub dolp: Tensor,
    pub image_id: u64,
}

pub fn stem(id: u64) -> String {
    format!("{id:06}")
}

pub fn tensor_path(dir: &Path, kind: &str, id: u64) -> PathBuf {
    dir.join(kind).join(format!("{}.rgbpt", stem(id)))
}

fn check_range(t: &Tensor, lo: f64, hi: f64, what: &str, path: &Path) -> Result<()> {
    if let Some(i) = t.data().iter().position(|v| !(*v >= lo && *v <= hi)) {
        return Err(Error::Validation(format!(
            "{}: {what} value {} at flat index {i} is outside [{lo}, {hi}]",
            path.display(),
            t.data()[i]
        )));
    }
    Ok(())
}

impl TripletSample {
    pub fn validate(&self) -> Result<()> {
        let s = self.rgb.shape();
        if self.aolp.shape() != s || self.dolp.shape() != s {
            return Err(Error::Alignment(format!(
                "rgb {:?}, aolp {:?} and dolp {:?} differ",
                s,
                self.aolp.shape(),
                self.dolp.shape()
            )));
        }
        if s[0] != 1 || s[1] != 3 {
            return Err(Error::shape(format!(
                "triplet tensors must be (1, 3, H, W), got {s:?}"
            )));
        }
        let here = Path::new("<memory>");
        check_range(&self.rgb, 0.0, 1.0, "rgb", here)?;
        check_range(&self.aolp, 0.0, PI, "aolp", here)?;
        check_range(&self.dolp, 0.0, 1.0, "dolp", here)
    }

    pub fn height(&self) -> usize {
        self.rgb.h()
    }

    pub fn width(&self) -> usize {
        self.rgb.w()
    }
}

pub fn save_triplet(dir: &Path, sample: &TripletSample) -> Result<()> {
    sample.validate()?;
    let id = sample.image_id;
    save_tensor(&tensor_path(dir, "rgb", id), &sample.rgb, DType::F64)?;
    save_tensor(
        &tensor_path(dir, "aolp", id),
        &sample.aolp.map(|v| v / PI),
        DType::F64,
    )?;
    save_tensor(&tensor_path(dir, "dolp", id), &sample.dolp, DType::F64)
}

pub fn load_triplet(dir: &Path, id: u64) -> Result<TripletSample> {
    let paths = ["rgb", "aolp", "dolp"].map(|k| tensor_path(dir, k, id));
    let [rgb, aolp, dolp] = [&paths[0], &paths[1], &paths[2]].map(|p| load_tensor(p));
    let (rgb, aolp, dolp) = (rgb?, aolp?, dolp?);
    for (t, p) in [(&aolp, &paths[1]), (&dolp, &paths[2])] {
        if t.shape() != rgb.shape() {
            return Err(Error::Alignment(format!(
                "{} has shape {:?} but {} has {:?}",
                p.display(),
                t.shape(),
                paths[0].display(),
                rgb.shape()
            )));
        }
    }
    if rgb.n() != 1 || rgb.c() != 3 {
        return Err(Error::shape(format!(
            "{}: triplet tensors must be (1, 3, H, W), got {:?}",
            paths[0].display(),
            rgb.shape()
        )));
    }
    check_range(&rgb, 0.0, 1.0, "rgb", &paths[0])?;
    check_range(&aolp, 0.0, 1.0, "normalized aolp", &paths[1])?;
    check_range(&dolp, 0.0, 1.0, "dolp", &paths[2])?;
    Ok(TripletSample {
        rgb,
        aolp: aolp.map(|v| v * PI),
        dolp,
        image_id: id,
    })
}

/// Image ids of every `<dir>/<kind>/<stem>.rgbpt` with a numeric stem, ascending.
pub fn list_ids(dir: &Path, kind: &str) -> Result<Vec<u64>> {
    let sub = dir.join(kind);
    let entries = std::fs::read_dir(&sub).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(sub.clone()),
        _ => Error::Io(e),
    })?;
    let mut ids = Vec::new();
    for e in entries {
        let p = e?.path();
        if p.extension().and_then(|x| x.to_str()) != Some("rgbpt") {
            continue;
        }
        if let Some(id) = p
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<u64>().ok())
        {
            ids.push(id);
        }
    }
    ids.sort_unstable();
    Ok(ids)
}
