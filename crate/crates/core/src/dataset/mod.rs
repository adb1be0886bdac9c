//! On-disk formats (tensor container, triplets, annotation JSON) and the
//! synthetic scene generator.

mod annotations;
mod synth;
mod tensor_file;
mod triplet;

pub use annotations::{Annotation, AnnotationSet, ImageEntry};
pub use synth::{synth_dataset, synth_scene, SynthParams, SynthScene};
pub use tensor_file::{
    decode_tensor, encode_tensor, load_tensor, save_tensor, TENSOR_MAGIC, TENSOR_VERSION,
};
pub use triplet::{list_ids, load_triplet, save_triplet, stem, tensor_path, TripletSample};

use crate::error::{Error, Result};
use crate::polar::{Plane, QuadIntensities};
use crate::tensor::Tensor;

/// `(C, H, W)` plane as a `(1, C, H, W)` tensor.
pub fn plane_to_tensor(p: &Plane<f64>) -> Tensor {
    let (c, h, w) = p.dims();
    Tensor::new([1, c, h, w], p.data().to_vec()).expect("plane dims match its data")
}

/// `(1, C, H, W)` tensor as a plane.
pub fn tensor_to_plane(t: &Tensor) -> Result<Plane<f64>> {
    if t.n() != 1 {
        return Err(Error::shape(format!(
            "expected a single image, got batch {}",
            t.n()
        )));
    }
    Plane::new(t.c(), t.h(), t.w(), t.data().to_vec())
}

/// Quad as a `(4, C, H, W)` tensor, planes in `I0, I45, I90, I135` order.
pub fn quad_to_tensor(q: &QuadIntensities<f64>) -> Tensor {
    let (c, h, w) = q.dims();
    let data = q
        .planes()
        .iter()
        .flat_map(|p| p.data().iter().copied())
        .collect();
    Tensor::new([4, c, h, w], data).expect("quad dims match its data")
}

pub fn tensor_to_quad(t: &Tensor) -> Result<QuadIntensities<f64>> {
    let [n, c, h, w] = t.shape();
    if n != 4 {
        return Err(Error::shape(format!("quad tensors have 4 planes, got {n}")));
    }
    let len = c * h * w;
    let planes: Vec<Plane<f64>> = (0..4)
        .map(|i| Plane::new(c, h, w, t.data()[i * len..(i + 1) * len].to_vec()))
        .collect::<Result<_>>()?;
    let [a, b, cc, d]: [Plane<f64>; 4] = planes.try_into().expect("four planes");
    QuadIntensities::new(a, b, cc, d)
}
