//! Seeded synthetic polarized scenes: axis-aligned "cars" with strongly
//! polarized reflections over a weakly polarized background.
//!
//! Draw order for one frame (all from one generator seeded with the frame
//! seed): box count, then per box `w, h, x, y` (retrying on overlap), then
//! per box the channel colors and its AoLP, then the background channel
//! colors, then per pixel in row-major order `ρ` followed (background only)
//! by `φ` and a shading factor. Noise, when enabled, is drawn last in the
//! order `I0, I45, I90, I135`, channel, row, column.

use std::f64::consts::PI;

use super::annotations::{Annotation, AnnotationSet, ImageEntry};
use super::triplet::{stem, TripletSample};
use crate::error::{Error, Result};
use crate::eval::BBox;
use crate::polar::{synthesize_intensities, Plane, QuadIntensities, StokesImage, EPS_S0};
use crate::rng::{derive_seed, PortableRng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of boxes per frame.
    pub boxes: (usize, usize),
    /// Inclusive range of box side lengths in pixels.
    pub box_size: (usize, usize),
    pub bg_dolp: (f64, f64),
    pub obj_dolp: (f64, f64),
    /// Standard deviation of additive Gaussian noise on each intensity.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Placement attempts per box before giving up.
    pub max_retries: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            boxes: (1, 3),
            box_size: (8, 24),
            bg_dolp: (0.0, 0.05),
            obj_dolp: (0.5, 0.9),
            noise_sigma: 0.0,
            seed: 0,
            max_retries: 1000,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.height == 0 || self.width == 0 {
            return bad("image size must be positive".into());
        }
        if self.boxes.0 > self.boxes.1 {
            return bad(format!("box count range {:?} is empty", self.boxes));
        }
        let (lo, hi) = self.box_size;
        if lo == 0 || lo > hi || hi > self.height.min(self.width) {
            return bad(format!(
                "box sizes {:?} must be positive, ordered and fit a {}x{} image",
                self.box_size, self.height, self.width
            ));
        }
        for (name, (a, b)) in [("bg_dolp", self.bg_dolp), ("obj_dolp", self.obj_dolp)] {
            if !(0.0 <= a && a <= b && b <= 1.0) {
                return bad(format!(
                    "{name} range ({a}, {b}) must lie in [0, 1] and be ordered"
                ));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise sigma {} must be finite and >= 0",
                self.noise_sigma
            ));
        }
        Ok(())
    }
}

/// One synthetic frame.
#[derive(Clone, Debug)]
pub struct SynthScene {
    /// Raw intensities, trichromatic.
    pub quad: QuadIntensities<f64>,
    /// Noiseless ground-truth maps; `rgb` holds `S0`.
    pub truth: TripletSample,
    pub boxes: Vec<BBox>,
}

impl SynthScene {
    pub fn image_entry(&self) -> ImageEntry {
        ImageEntry {
            id: self.truth.image_id,
            width: self.truth.width() as u32,
            height: self.truth.height() as u32,
            file: stem(self.truth.image_id),
        }
    }

    pub fn annotations(&self) -> AnnotationSet {
        AnnotationSet {
            images: vec![self.image_entry()],
            annotations: self.annotation_list(),
        }
    }

    fn annotation_list(&self) -> Vec<Annotation> {
        self.boxes
            .iter()
            .map(|&bbox| Annotation {
                image_id: self.truth.image_id,
                bbox,
                score: None,
            })
            .collect()
    }
}

fn place_boxes(p: &SynthParams, rng: &mut PortableRng) -> Result<Vec<BBox>> {
    let n = rng.int_range(p.boxes.0 as u64, p.boxes.1 as u64) as usize;
    let (lo, hi) = (p.box_size.0 as u64, p.box_size.1 as u64);
    let mut placed: Vec<BBox> = Vec::with_capacity(n);
    for k in 0..n {
        let mut ok = false;
        for _ in 0..p.max_retries.max(1) {
            let w = rng.int_range(lo, hi.min(p.width as u64)) as f64;
            let h = rng.int_range(lo, hi.min(p.height as u64)) as f64;
            let x = rng.int_range(0, p.width as u64 - w as u64) as f64;
            let y = rng.int_range(0, p.height as u64 - h as u64) as f64;
            let b = BBox::new(x, y, w, h);
            if placed.iter().all(|q| b.iou(q) == 0.0) {
                placed.push(b);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::Placement(format!(
                "could not place box {} of {n} without overlap after {} attempts",
                k + 1,
                p.max_retries
            )));
        }
    }
    Ok(placed)
}

/// Generates one frame labelled `image_id`, fully determined by `params`.
pub fn synth_scene(params: &SynthParams, image_id: u64) -> Result<SynthScene> {
    params.validate()?;
    let mut rng = PortableRng::new(params.seed);
    let boxes = place_boxes(params, &mut rng)?;
    let looks: Vec<([f64; 3], f64)> = boxes
        .iter()
        .map(|_| {
            let color = [
                rng.range(0.3, 0.9),
                rng.range(0.3, 0.9),
                rng.range(0.3, 0.9),
            ];
            (color, rng.range(0.0, PI))
        })
        .collect();
    let bg = [
        rng.range(0.2, 0.6),
        rng.range(0.2, 0.6),
        rng.range(0.2, 0.6),
    ];

    let (h, w) = (params.height, params.width);
    let mut s0 = Plane::<f64>::zeros(3, h, w);
    let mut rho = Plane::<f64>::zeros(3, h, w);
    let mut phi = Plane::<f64>::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = boxes
                .iter()
                .position(|b| cx > b.x && cx < b.x + b.w && cy > b.y && cy < b.y + b.h);
            let (colors, r, f) = match inside {
                Some(i) => (
                    looks[i].0,
                    rng.range(params.obj_dolp.0, params.obj_dolp.1),
                    looks[i].1,
                ),
                None => {
                    let r = rng.range(params.bg_dolp.0, params.bg_dolp.1);
                    let f = rng.range(0.0, PI);
                    let shade = rng.range(0.9, 1.1);
                    (bg.map(|c| c * shade), r, f)
                }
            };
            for c in 0..3 {
                s0.set(c, y, x, colors[c]);
                rho.set(c, y, x, r);
                // below the magnitude floor the angle is reported as 0
                phi.set(c, y, x, if r * colors[c] <= EPS_S0 { 0.0 } else { f });
            }
        }
    }
    let stokes = StokesImage::from_polar(s0.clone(), &rho, &phi)?;
    let mut quad = synthesize_intensities(&stokes)?;
    if params.noise_sigma > 0.0 {
        for plane in quad.planes_mut() {
            for v in plane.data_mut() {
                *v = (*v + params.noise_sigma * rng.normal()).max(0.0);
            }
        }
    }
    let as_tensor = |p: &Plane<f64>| Tensor::new([1, 3, h, w], p.data().to_vec());
    let truth = TripletSample {
        rgb: as_tensor(&s0)?,
        aolp: as_tensor(&phi)?,
        dolp: as_tensor(&rho)?,
        image_id,
    };
    Ok(SynthScene { quad, truth, boxes })
}

/// `frames` scenes with ids `0..frames`; frame `i` uses seed
/// `derive_seed(params.seed, i)`.
pub fn synth_dataset(
    params: &SynthParams,
    frames: usize,
) -> Result<(Vec<SynthScene>, AnnotationSet)> {
    let mut scenes = Vec::with_capacity(frames);
    let mut set = AnnotationSet::default();
    for i in 0..frames as u64 {
        let p = SynthParams {
            seed: derive_seed(params.seed, i),
            ..params.clone()
        };
        let scene = synth_scene(&p, i)?;
        set.images.push(scene.image_entry());
        set.annotations.extend(scene.annotation_list());
        scenes.push(scene);
    }
    Ok((scenes, set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polar::{compute_polar_maps, compute_stokes};

    fn params(seed: u64, boxes: usize) -> SynthParams {
        SynthParams {
            boxes: (boxes, boxes),
            seed,
            ..SynthParams::default()
        }
    }

    #[test]
    fn deterministic_with_exact_box_count() {
        let a = synth_scene(&params(7, 2), 0).unwrap();
        let b = synth_scene(&params(7, 2), 0).unwrap();
        assert_eq!(a.boxes.len(), 2);
        assert_eq!(a.boxes, b.boxes);
        assert_eq!(a.quad, b.quad);
        let c = synth_scene(&params(8, 2), 0).unwrap();
        assert_ne!(a.quad, c.quad);
    }

    #[test]
    fn noiseless_scene_round_trips_through_stokes() {
        let s = synth_scene(&params(3, 3), 0).unwrap();
        let maps = compute_polar_maps(&compute_stokes(&s.quad).unwrap()).unwrap();
        for (i, (&got, &want)) in maps.dolp.data().iter().zip(s.truth.dolp.data()).enumerate() {
            assert!((got - want).abs() < 1e-6, "dolp {i}");
        }
        for (i, (&got, &want)) in maps.aolp.data().iter().zip(s.truth.aolp.data()).enumerate() {
            let d = (got - want).rem_euclid(PI);
            assert!(d.min(PI - d) < 1e-6, "aolp {i}: {got} vs {want}");
        }
    }

    #[test]
    fn dolp_contrast_inside_boxes() {
        let s = synth_scene(&params(7, 2), 0).unwrap();
        let maps = compute_polar_maps(&compute_stokes(&s.quad).unwrap()).unwrap();
        let (mut inside, mut outside) = ((0.0, 0), (0.0, 0));
        for y in 0..64 {
            for x in 0..64 {
                let v = maps.dolp.get(0, y, x);
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let hit = s
                    .boxes
                    .iter()
                    .any(|b| cx > b.x && cx < b.x + b.w && cy > b.y && cy < b.y + b.h);
                let acc = if hit { &mut inside } else { &mut outside };
                acc.0 += v;
                acc.1 += 1;
            }
        }
        assert!(inside.0 / inside.1 as f64 > 0.5);
        assert!(outside.0 / (outside.1 as f64) < 0.05);
    }

    #[test]
    fn boxes_do_not_overlap_and_fit() {
        let (scenes, set) = synth_dataset(
            &SynthParams {
                boxes: (3, 5),
                ..SynthParams::default()
            },
            10,
        )
        .unwrap();
        assert_eq!(set.images.len(), 10);
        for s in &scenes {
            for (i, a) in s.boxes.iter().enumerate() {
                assert!(a.x >= 0.0 && a.x + a.w <= 64.0 && a.y + a.h <= 64.0);
                for b in &s.boxes[i + 1..] {
                    assert_eq!(a.iou(b), 0.0);
                }
            }
        }
        set.validate().unwrap();
    }

    #[test]
    fn placement_failure() {
        let p = SynthParams {
            boxes: (5, 5),
            box_size: (40, 40),
            max_retries: 20,
            ..SynthParams::default()
        };
        assert!(matches!(synth_scene(&p, 0), Err(Error::Placement(_))));
    }

    #[test]
    fn noise_changes_intensities_but_stays_non_negative() {
        let p = SynthParams {
            noise_sigma: 0.05,
            ..params(7, 2)
        };
        let noisy = synth_scene(&p, 0).unwrap();
        let clean = synth_scene(&params(7, 2), 0).unwrap();
        assert_ne!(noisy.quad, clean.quad);
        noisy.quad.validate().unwrap();
        assert!(SynthParams {
            noise_sigma: -1.0,
            ..SynthParams::default()
        }
        .validate()
        .is_err());
    }
}
