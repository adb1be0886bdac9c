use std::f64::consts::PI;

use proptest::prelude::*;

use rgbp::dataset::{decode_tensor, encode_tensor, AnnotationSet, ImageEntry};
use rgbp::eval::{coco_ap, BBox, GroundTruthBox, ImageInfo};
use rgbp::pcdnet::{nms, Detection};
use rgbp::polar::{
    compute_polar_maps, compute_stokes, consistency_residual, polar_pixel, synthesize_intensities,
    Plane, QuadIntensities, StokesImage,
};
use rgbp::tensor::container::{decode_weights, encode_weights, WeightEntry};
use rgbp::tensor::{DType, Tensor};

fn quad(i: [f64; 4]) -> QuadIntensities<f64> {
    let p = |v| Plane::new(1, 1, 1, vec![v]).unwrap();
    QuadIntensities::new(p(i[0]), p(i[1]), p(i[2]), p(i[3])).unwrap()
}

fn stokes(s: [f64; 3]) -> StokesImage<f64> {
    let p = |v| Plane::new(1, 1, 1, vec![v]).unwrap();
    StokesImage::new(p(s[0]), p(s[1]), p(s[2])).unwrap()
}

prop_compose! {
    fn physical_stokes()(s0 in 1e-3f64..1e3, rho in 0.0f64..=1.0, phi in 0.0f64..PI) -> [f64; 3] {
        [s0, s0 * rho * (2.0 * phi).cos(), s0 * rho * (2.0 * phi).sin()]
    }
}

proptest! {
    #[test]
    fn polar_maps_stay_in_range(i in prop::array::uniform4(0.0f64..1e4)) {
        let maps = compute_polar_maps(&compute_stokes(&quad(i)).unwrap()).unwrap();
        let (phi, rho) = (maps.aolp.data()[0], maps.dolp.data()[0]);
        prop_assert!((0.0..PI).contains(&phi), "phi {}", phi);
        prop_assert!((0.0..=1.0).contains(&rho), "rho {}", rho);
    }

    #[test]
    fn synthesized_quads_are_consistent(s in physical_stokes()) {
        let q = synthesize_intensities(&stokes(s)).unwrap();
        for p in q.planes() {
            prop_assert!(p.data()[0] >= 0.0);
        }
        prop_assert!(consistency_residual(&q).unwrap().data()[0] < 1e-12);
        let back = compute_stokes(&q).unwrap();
        for (a, b) in [&back.s0, &back.s1, &back.s2].iter().zip(s) {
            prop_assert!((a.data()[0] - b).abs() <= 1e-12 * s[0].max(1.0));
        }
    }

    #[test]
    fn pixel_and_plane_paths_agree(s in physical_stokes()) {
        let maps = compute_polar_maps(&stokes(s)).unwrap();
        let (phi, rho) = polar_pixel(s[0], s[1], s[2]);
        prop_assert_eq!(maps.aolp.data()[0].to_bits(), phi.to_bits());
        prop_assert_eq!(maps.dolp.data()[0].to_bits(), rho.to_bits());
    }

    #[test]
    fn aolp_shifts_by_half_the_stokes_rotation(s in physical_stokes(), a in -PI..PI) {
        let mag = s[1].hypot(s[2]);
        prop_assume!(mag > 1e-6);
        let (c, sn) = ((2.0 * a).cos(), (2.0 * a).sin());
        let rotated = [s[0], s[1] * c - s[2] * sn, s[1] * sn + s[2] * c];
        let (phi, rho) = polar_pixel(s[0], s[1], s[2]);
        let (phi2, rho2) = polar_pixel(rotated[0], rotated[1], rotated[2]);
        let d = (phi2 - phi - a).rem_euclid(PI);
        prop_assert!(d.min(PI - d) < 1e-9);
        prop_assert!((rho2 - rho).abs() < 1e-9);
    }
}

fn arb_box() -> impl Strategy<Value = BBox> {
    (0u32..90, 0u32..90, 1u32..30, 1u32..30)
        .prop_map(|(x, y, w, h)| BBox::new(x as f64, y as f64, w as f64, h as f64))
}

fn arb_dets(max: usize) -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::vec((0u64..3, arb_box(), 0u32..100), 0..max).prop_map(|v| {
        v.into_iter()
            .map(|(image_id, bbox, s)| Detection {
                image_id,
                bbox,
                score: s as f64 / 100.0,
            })
            .collect()
    })
}

fn images() -> Vec<ImageInfo> {
    (0..3)
        .map(|id| ImageInfo {
            id,
            width: 128,
            height: 128,
        })
        .collect()
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let (x, y) = (a.iou(&b), b.iou(&a));
        prop_assert_eq!(x, y);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(a.iou(&a), 1.0);
    }

    #[test]
    fn ap_is_bounded_and_perfect_on_truth(dets in arb_dets(12)) {
        let gts: Vec<GroundTruthBox> = dets.iter().map(|d| GroundTruthBox { image_id: d.image_id, bbox: d.bbox }).collect();
        let r = coco_ap(&dets, &gts, &images()).unwrap();
        for (_, ap) in &r.per_threshold {
            prop_assert!((0.0..=1.0).contains(ap));
        }
        if !gts.is_empty() {
            prop_assert_eq!(r.ap, 1.0);
        }
    }

    #[test]
    fn trailing_false_positive_leaves_ap_unchanged(dets in arb_dets(8), gt_dets in arb_dets(8)) {
        let gts: Vec<GroundTruthBox> = gt_dets.iter().map(|d| GroundTruthBox { image_id: d.image_id, bbox: d.bbox }).collect();
        let base = coco_ap(&dets, &gts, &images()).unwrap();
        let mut more = dets.clone();
        more.push(Detection { image_id: 0, bbox: BBox::new(120.0, 120.0, 1.0, 1.0), score: -1.0 });
        let after = coco_ap(&more, &gts, &images()).unwrap();
        prop_assert_eq!(base, after);
    }

    #[test]
    fn ap_ignores_input_order_when_scores_differ(dets in arb_dets(10), gt_dets in arb_dets(6), seed in any::<u64>()) {
        let mut dets = dets;
        for (i, d) in dets.iter_mut().enumerate() {
            d.score += i as f64 * 1e-3;
        }
        let gts: Vec<GroundTruthBox> = gt_dets.iter().map(|d| GroundTruthBox { image_id: d.image_id, bbox: d.bbox }).collect();
        let mut shuffled = dets.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        prop_assert_eq!(coco_ap(&dets, &gts, &images()).unwrap(), coco_ap(&shuffled, &gts, &images()).unwrap());
    }

    #[test]
    fn nms_keeps_a_sorted_non_overlapping_subset(dets in arb_dets(30), thr in 0.1f64..0.9) {
        let kept = nms(&dets, thr);
        prop_assert!(kept.len() <= dets.len());
        for k in &kept {
            prop_assert!(dets.contains(k));
        }
        for w in kept.windows(2) {
            prop_assert!(w[0].image_id < w[1].image_id || (w[0].image_id == w[1].image_id && w[0].score >= w[1].score));
        }
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                if a.image_id == b.image_id {
                    prop_assert!(a.bbox.iou(&b.bbox) < thr);
                }
            }
        }
        // every dropped box overlaps a kept box of at least its score
        for d in &dets {
            if !kept.contains(d) {
                prop_assert!(kept.iter().any(|k| k.image_id == d.image_id && k.score >= d.score && k.bbox.iou(&d.bbox) >= thr));
            }
        }
        prop_assert_eq!(nms(&kept, thr), kept);
    }
}

fn arb_tensor() -> impl Strategy<Value = Tensor> {
    (1usize..3, 1usize..4, 1usize..6, 1usize..6).prop_flat_map(|(n, c, h, w)| {
        prop::collection::vec(
            any::<f64>().prop_filter("finite", |v| v.is_finite()),
            n * c * h * w,
        )
        .prop_map(move |data| Tensor::new([n, c, h, w], data).unwrap())
    })
}

proptest! {
    #[test]
    fn tensor_container_round_trip(t in arb_tensor()) {
        let (dtype, back) = decode_tensor(&encode_tensor(&t, DType::F64).unwrap()).unwrap();
        prop_assert_eq!(dtype, DType::F64);
        prop_assert_eq!(back.shape(), t.shape());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&t));

        let (_, single) = decode_tensor(&encode_tensor(&t, DType::F32).unwrap()).unwrap();
        for (a, b) in single.data().iter().zip(t.data()) {
            prop_assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn truncated_tensor_files_are_rejected(t in arb_tensor(), cut in 1usize..64) {
        let bytes = encode_tensor(&t, DType::F64).unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode_tensor(&bytes[..keep]).is_err());
    }

    #[test]
    fn weight_container_round_trip(entries in prop::collection::vec(
        ("[a-z]{1,8}(\\.[a-z]{1,6}){0,2}", prop::collection::vec(1usize..5, 0..4)), 0..6)
    ) {
        let entries: Vec<WeightEntry> = entries
            .into_iter()
            .enumerate()
            .map(|(i, (name, dims))| {
                let len: usize = dims.iter().product();
                WeightEntry {
                    name: format!("{name}{i}"),
                    dtype: DType::F64,
                    data: (0..len).map(|k| (k as f64 - 3.5) * 0.25).collect(),
                    dims,
                }
            })
            .collect();
        prop_assert_eq!(decode_weights(&encode_weights(&entries).unwrap()).unwrap(), entries);
    }

    #[test]
    fn annotation_json_is_canonical(dets in arb_dets(10)) {
        let images: Vec<ImageEntry> = (0..3)
            .map(|id| ImageEntry { id, width: 128, height: 128, file: format!("{id:06}") })
            .collect();
        let set = AnnotationSet::from_detections(images, &dets);
        let text = set.to_json();
        let back = AnnotationSet::parse(&text).unwrap();
        prop_assert_eq!(back.to_json(), text);
        prop_assert_eq!(back.detections().len(), dets.len());
    }
}
