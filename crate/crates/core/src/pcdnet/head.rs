//! Anchor-based detection head, box decoding and non-maximum suppression.
//!
//! Each level predicts `(tx, ty, tw, th, obj)` per anchor per cell, stored as
//! channel `5a + k`. Decoding:
//! ```text
//! cx = (σ(tx) + gx) · stride      w = anchor_w · exp(clamp(tw, ±4))
//! cy = (σ(ty) + gy) · stride      h = anchor_h · exp(clamp(th, ±4))
//! score = σ(obj)
//! ```

use super::layers::plain_conv;
use crate::error::{Error, Result};
use crate::eval::BBox;
use crate::tensor::{sigmoid_scalar as sigmoid, ConvParams, Tensor};

/// Log-size clamp applied before exponentiation.
pub const TW_CLAMP: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub bbox: BBox,
    pub score: f64,
}

/// Zero-initialized 1×1 prediction convolutions, one per level.
pub fn build_head(widths: &[usize], anchors: &[Vec<[f64; 2]>]) -> Result<Vec<ConvParams>> {
    if widths.len() != anchors.len() {
        return Err(Error::Config(
            "one anchor list per level is required".into(),
        ));
    }
    widths
        .iter()
        .zip(anchors)
        .map(|(&c, a)| plain_conv(c, 5 * a.len()))
        .collect()
}

/// Decodes one raw level map `(N, 5A, H, W)` into scored boxes, dropping
/// those below `score_thresh`. Boxes are clipped to the image and
/// `image_ids[n]` labels batch item `n`.
pub fn decode_level(
    raw: &Tensor,
    stride: f64,
    anchors: &[[f64; 2]],
    image_size: (usize, usize),
    score_thresh: f64,
    image_ids: &[u64],
) -> Result<Vec<Detection>> {
    let [n, c, h, w] = raw.shape();
    if c != 5 * anchors.len() {
        return Err(Error::shape(format!(
            "head map has {c} channels for {} anchors",
            anchors.len()
        )));
    }
    if image_ids.len() != n {
        return Err(Error::shape(format!(
            "{} image ids for a batch of {n}",
            image_ids.len()
        )));
    }
    let (img_h, img_w) = (image_size.0 as f64, image_size.1 as f64);
    let mut out = Vec::new();
    for b in 0..n {
        for (a, anchor) in anchors.iter().enumerate() {
            for gy in 0..h {
                for gx in 0..w {
                    let v = |k: usize| raw.at(b, 5 * a + k, gy, gx);
                    let score = sigmoid(v(4));
                    if score < score_thresh {
                        continue;
                    }
                    let cx = (sigmoid(v(0)) + gx as f64) * stride;
                    let cy = (sigmoid(v(1)) + gy as f64) * stride;
                    let bw = anchor[0] * v(2).clamp(-TW_CLAMP, TW_CLAMP).exp();
                    let bh = anchor[1] * v(3).clamp(-TW_CLAMP, TW_CLAMP).exp();
                    let bbox = BBox::new(cx - bw / 2.0, cy - bh / 2.0, bw, bh).clip(img_w, img_h);
                    if bbox.area() > 0.0 {
                        out.push(Detection {
                            image_id: image_ids[b],
                            bbox,
                            score,
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Greedy suppression within each image: boxes are visited in descending
/// score order (stable) and kept iff their IoU with every kept box is below
/// `iou_thresh`. Output is grouped by image id, scores descending.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[a]
            .image_id
            .cmp(&dets[b].image_id)
            .then(dets[b].score.total_cmp(&dets[a].score))
    });
    let mut kept: Vec<Detection> = Vec::new();
    let mut image_start = 0;
    for i in order {
        let d = &dets[i];
        if kept.last().is_none_or(|k| k.image_id != d.image_id) {
            image_start = kept.len();
        }
        if kept[image_start..]
            .iter()
            .all(|k| k.bbox.iou(&d.bbox) < iou_thresh)
        {
            kept.push(d.clone());
        }
    }
    kept
}
