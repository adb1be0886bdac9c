//! Box geometry and COCO-style average precision for a single class.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::pcdnet::Detection;

/// Axis-aligned box with top-left corner `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h]
            .iter()
            .all(|v| v.is_finite())
            && self.w >= 0.0
            && self.h >= 0.0
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Intersection with `[0, width] × [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        let x0 = self.x.clamp(0.0, width);
        let y0 = self.y.clamp(0.0, height);
        let x1 = (self.x + self.w).clamp(0.0, width);
        let y1 = (self.y + self.h).clamp(0.0, height);
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthBox {
    pub image_id: u64,
    pub bbox: BBox,
}

/// Image extent used to clip ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageInfo {
    pub id: u64,
    pub width: u32,
    pub height: u32,
}

pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    /// Mean over all ten thresholds.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub per_threshold: Vec<(f64, f64)>,
}

/// Greedy matching in descending score order (stable for equal scores).
/// Each detection takes the unmatched ground-truth box of highest IoU, ties
/// going to the lowest index, if that IoU reaches `threshold`. Returns one
/// true-positive flag per detection in the sorted order, plus that order.
pub fn greedy_match(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    threshold: f64,
) -> (Vec<usize>, Vec<bool>) {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut by_image: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image_id).or_default().push(i);
    }
    let mut taken = vec![false; gts.len()];
    let mut tp = Vec::with_capacity(dets.len());
    for &d in &order {
        let det = &dets[d];
        let mut best: Option<(usize, f64)> = None;
        for &g in by_image
            .get(&det.image_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
        {
            if taken[g] {
                continue;
            }
            let iou = det.bbox.iou(&gts[g].bbox);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        match best {
            Some((g, iou)) if iou >= threshold => {
                taken[g] = true;
                tp.push(true);
            }
            _ => tp.push(false),
        }
    }
    (order, tp)
}

/// 101-point interpolated AP from true-positive flags in score order.
pub fn average_precision(tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        precision.push(hits as f64 / (i + 1) as f64);
        recall.push(hits as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < r - 1e-12);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    sum / 101.0
}

/// AP averaged over IoU 0.50:0.05:0.95. Ground truth is clipped to its image
/// (with a warning); a detection or box naming an unknown image is an error.
pub fn coco_ap(
    dets: &[Detection],
    gts: &[GroundTruthBox],
    images: &[ImageInfo],
) -> Result<EvalResult> {
    let known: BTreeMap<u64, &ImageInfo> = images.iter().map(|i| (i.id, i)).collect();
    let mut clipped = Vec::with_capacity(gts.len());
    for (i, g) in gts.iter().enumerate() {
        let img = known.get(&g.image_id).ok_or_else(|| {
            Error::Validation(format!(
                "ground-truth box {i} references unknown image {}",
                g.image_id
            ))
        })?;
        if !g.bbox.is_valid() {
            return Err(Error::Validation(format!(
                "ground-truth box {i} is malformed: {:?}",
                g.bbox
            )));
        }
        let c = g.bbox.clip(img.width as f64, img.height as f64);
        if c != g.bbox {
            log::warn!(
                "ground-truth box {i} on image {} clipped to the image bounds",
                g.image_id
            );
        }
        clipped.push(GroundTruthBox {
            image_id: g.image_id,
            bbox: c,
        });
    }
    for (i, d) in dets.iter().enumerate() {
        if !known.contains_key(&d.image_id) {
            return Err(Error::Validation(format!(
                "detection {i} references unknown image {}",
                d.image_id
            )));
        }
        if !d.bbox.is_valid() || !d.score.is_finite() {
            return Err(Error::Validation(format!("detection {i} is malformed")));
        }
    }
    let per_threshold: Vec<(f64, f64)> = IOU_THRESHOLDS
        .iter()
        .map(|&t| {
            let (_, tp) = greedy_match(dets, &clipped, t);
            (t, average_precision(&tp, clipped.len()))
        })
        .collect();
    let ap = per_threshold.iter().map(|p| p.1).sum::<f64>() / per_threshold.len() as f64;
    Ok(EvalResult {
        ap,
        ap50: per_threshold[0].1,
        ap75: per_threshold[5].1,
        per_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn det(id: u64, b: [f64; 4], s: f64) -> Detection {
        Detection {
            image_id: id,
            bbox: BBox::new(b[0], b[1], b[2], b[3]),
            score: s,
        }
    }

    fn gt(id: u64, b: [f64; 4]) -> GroundTruthBox {
        GroundTruthBox {
            image_id: id,
            bbox: BBox::new(b[0], b[1], b[2], b[3]),
        }
    }

    fn img(id: u64) -> ImageInfo {
        ImageInfo {
            id,
            width: 100,
            height: 100,
        }
    }

    #[test]
    fn iou_values() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_abs_diff_eq!(a.iou(&a), 1.0);
        assert_abs_diff_eq!(a.iou(&BBox::new(5.0, 0.0, 10.0, 10.0)), 50.0 / 150.0);
        assert_eq!(a.iou(&BBox::new(10.0, 0.0, 5.0, 5.0)), 0.0);
        assert_eq!(a.iou(&BBox::new(0.0, 0.0, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn perfect_detections() {
        let g = vec![
            gt(1, [10.0, 10.0, 20.0, 20.0]),
            gt(2, [5.0, 5.0, 30.0, 10.0]),
        ];
        let d = vec![
            det(1, [10.0, 10.0, 20.0, 20.0], 0.9),
            det(2, [5.0, 5.0, 30.0, 10.0], 0.8),
        ];
        let r = coco_ap(&d, &g, &[img(1), img(2)]).unwrap();
        assert_abs_diff_eq!(r.ap, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.ap50, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_cases() {
        assert_eq!(average_precision(&[], 0), 0.0);
        assert_eq!(average_precision(&[true], 0), 0.0);
        assert_eq!(average_precision(&[], 3), 0.0);
        let r = coco_ap(&[], &[gt(1, [0.0, 0.0, 5.0, 5.0])], &[img(1)]).unwrap();
        assert_eq!(r.ap, 0.0);
    }

    #[test]
    fn one_miss_halves_recall() {
        let g = vec![
            gt(1, [0.0, 0.0, 10.0, 10.0]),
            gt(1, [50.0, 50.0, 10.0, 10.0]),
        ];
        let d = vec![det(1, [0.0, 0.0, 10.0, 10.0], 0.9)];
        let r = coco_ap(&d, &g, &[img(1)]).unwrap();
        assert_abs_diff_eq!(r.ap50, 51.0 / 101.0, epsilon = 1e-12);
    }

    #[test]
    fn tie_goes_to_lowest_gt_index() {
        let g = vec![gt(1, [0.0, 0.0, 10.0, 10.0]), gt(1, [0.0, 0.0, 10.0, 10.0])];
        let d = vec![
            det(1, [0.0, 0.0, 10.0, 10.0], 0.5),
            det(1, [0.0, 0.0, 10.0, 10.0], 0.4),
        ];
        let (order, tp) = greedy_match(&d, &g, 0.5);
        assert_eq!(order, vec![0, 1]);
        assert_eq!(tp, vec![true, true]);
    }

    #[test]
    fn unknown_image_is_an_error() {
        let d = vec![det(7, [0.0, 0.0, 1.0, 1.0], 0.5)];
        assert!(matches!(
            coco_ap(&d, &[], &[img(1)]),
            Err(Error::Validation(_))
        ));
        assert!(coco_ap(&[], &[gt(9, [0.0, 0.0, 1.0, 1.0])], &[img(1)]).is_err());
    }

    #[test]
    fn out_of_bounds_gt_is_clipped() {
        let g = vec![gt(1, [90.0, 90.0, 20.0, 20.0])];
        let d = vec![det(1, [90.0, 90.0, 10.0, 10.0], 0.9)];
        let r = coco_ap(&d, &g, &[img(1)]).unwrap();
        assert_abs_diff_eq!(r.ap, 1.0, epsilon = 1e-12);
    }
}
