//! Annotation / detection JSON.
//!
//! ```json
//! {
//!   "images": [{"id": 0, "width": 64, "height": 64, "file": "000000"}],
//!   "annotations": [{"image_id": 0, "bbox": [x, y, w, h], "score": 0.9}]
//! }
//! ```
//! `score` on every annotation marks a detection file; on none, ground
//! truth. Serialization is canonical: keys in the order above, one image or
//! annotation per line, floats with six decimals.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::eval::{BBox, GroundTruthBox, ImageInfo};
use crate::pcdnet::Detection;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageEntry {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    /// File stem of the image's tensors.
    pub file: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub image_id: u64,
    pub bbox: BBox,
    pub score: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnnotationSet {
    pub images: Vec<ImageEntry>,
    pub annotations: Vec<Annotation>,
}

fn invalid(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Validation(format!("{path}: {msg}"))
}

fn field<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| invalid(path, format!("missing key `{key}`")))
}

fn as_u64(v: &Value, path: &str) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| invalid(path, "expected a non-negative integer"))
}

fn as_f64(v: &Value, path: &str) -> Result<f64> {
    v.as_f64()
        .filter(|f| f.is_finite())
        .ok_or_else(|| invalid(path, "expected a finite number"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| invalid(path, "expected an array"))
}

fn fmt_f(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

impl AnnotationSet {
    pub fn is_detection_set(&self) -> bool {
        !self.annotations.is_empty() && self.annotations.iter().all(|a| a.score.is_some())
    }

    pub fn image_infos(&self) -> Vec<ImageInfo> {
        self.images
            .iter()
            .map(|i| ImageInfo {
                id: i.id,
                width: i.width,
                height: i.height,
            })
            .collect()
    }

    pub fn ground_truth(&self) -> Vec<GroundTruthBox> {
        self.annotations
            .iter()
            .map(|a| GroundTruthBox {
                image_id: a.image_id,
                bbox: a.bbox,
            })
            .collect()
    }

    /// Annotations without a score count as score 1.
    pub fn detections(&self) -> Vec<Detection> {
        self.annotations
            .iter()
            .map(|a| Detection {
                image_id: a.image_id,
                bbox: a.bbox,
                score: a.score.unwrap_or(1.0),
            })
            .collect()
    }

    pub fn from_detections(images: Vec<ImageEntry>, dets: &[Detection]) -> Self {
        Self {
            images,
            annotations: dets
                .iter()
                .map(|d| Annotation {
                    image_id: d.image_id,
                    bbox: d.bbox,
                    score: Some(d.score),
                })
                .collect(),
        }
    }

    /// Checks ids, extents and score consistency. Boxes reaching outside
    /// their image are accepted; evaluation clips them.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for (i, img) in self.images.iter().enumerate() {
            let path = format!("images[{i}]");
            if !ids.insert(img.id) {
                return Err(invalid(&path, format!("duplicate image id {}", img.id)));
            }
            if img.width == 0 || img.height == 0 {
                return Err(invalid(&path, "width and height must be positive"));
            }
        }
        let scored = self
            .annotations
            .iter()
            .filter(|a| a.score.is_some())
            .count();
        for (i, a) in self.annotations.iter().enumerate() {
            let path = format!("annotations[{i}]");
            if !ids.contains(&a.image_id) {
                return Err(invalid(
                    &format!("{path}.image_id"),
                    format!("unknown image id {}", a.image_id),
                ));
            }
            let b = a.bbox;
            if ![b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite()) {
                return Err(invalid(&format!("{path}.bbox"), "values must be finite"));
            }
            if !(b.w > 0.0) || !(b.h > 0.0) {
                return Err(invalid(
                    &format!("{path}.bbox"),
                    format!("extent {}x{} must be positive", b.w, b.h),
                ));
            }
            match a.score {
                Some(s) if !(0.0..=1.0).contains(&s) => {
                    return Err(invalid(
                        &format!("{path}.score"),
                        format!("{s} is outside [0, 1]"),
                    ))
                }
                None if scored > 0 => {
                    return Err(invalid(&path, "missing `score` in a detection file"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = String::from("{\n  \"images\": [");
        for (i, img) in self.images.iter().enumerate() {
            s.push_str(if i == 0 { "\n" } else { ",\n" });
            let file = serde_json::to_string(&img.file).expect("string serializes");
            let _ = write!(
                s,
                "    {{\"id\": {}, \"width\": {}, \"height\": {}, \"file\": {file}}}",
                img.id, img.width, img.height
            );
        }
        s.push_str(if self.images.is_empty() {
            "],\n"
        } else {
            "\n  ],\n"
        });
        s.push_str("  \"annotations\": [");
        for (i, a) in self.annotations.iter().enumerate() {
            s.push_str(if i == 0 { "\n" } else { ",\n" });
            let b = a.bbox;
            let _ = write!(
                s,
                "    {{\"image_id\": {}, \"bbox\": [{}, {}, {}, {}]",
                a.image_id,
                fmt_f(b.x),
                fmt_f(b.y),
                fmt_f(b.w),
                fmt_f(b.h)
            );
            if let Some(score) = a.score {
                let _ = write!(s, ", \"score\": {}", fmt_f(score));
            }
            s.push('}');
        }
        s.push_str(if self.annotations.is_empty() {
            "]\n}\n"
        } else {
            "\n  ]\n}\n"
        });
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|e| {
            Error::Validation(format!(
                "$: malformed JSON at line {} column {}: {e}",
                e.line(),
                e.column()
            ))
        })?;
        if !root.is_object() {
            return Err(invalid("$", "expected an object"));
        }
        let mut images = Vec::new();
        for (i, v) in as_array(field(&root, "images", "$")?, "images")?
            .iter()
            .enumerate()
        {
            let p = format!("images[{i}]");
            let dim = |key: &str| -> Result<u32> {
                let kp = format!("{p}.{key}");
                u32::try_from(as_u64(field(v, key, &p)?, &kp)?)
                    .map_err(|_| invalid(&kp, "value exceeds u32"))
            };
            images.push(ImageEntry {
                id: as_u64(field(v, "id", &p)?, &format!("{p}.id"))?,
                width: dim("width")?,
                height: dim("height")?,
                file: field(v, "file", &p)?
                    .as_str()
                    .ok_or_else(|| invalid(&format!("{p}.file"), "expected a string"))?
                    .to_string(),
            });
        }
        let mut annotations = Vec::new();
        for (i, v) in as_array(field(&root, "annotations", "$")?, "annotations")?
            .iter()
            .enumerate()
        {
            let p = format!("annotations[{i}]");
            let bp = format!("{p}.bbox");
            let raw = as_array(field(v, "bbox", &p)?, &bp)?;
            if raw.len() != 4 {
                return Err(invalid(
                    &bp,
                    format!("expected 4 numbers, got {}", raw.len()),
                ));
            }
            let b: Vec<f64> = raw
                .iter()
                .enumerate()
                .map(|(k, x)| as_f64(x, &format!("{bp}[{k}]")))
                .collect::<Result<_>>()?;
            let score = match v.get("score") {
                Some(s) => Some(as_f64(s, &format!("{p}.score"))?),
                None => None,
            };
            annotations.push(Annotation {
                image_id: as_u64(field(v, "image_id", &p)?, &format!("{p}.image_id"))?,
                bbox: BBox::new(b[0], b[1], b[2], b[3]),
                score,
            });
        }
        let set = Self {
            images,
            annotations,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}
