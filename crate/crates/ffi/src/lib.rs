//! C ABI over the `rgbp` crate.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every entry point returns an
//! [`RgbpStatus`]; on failure a message is kept per thread and can be read
//! with [`rgbp_last_error`].
//!
//! Tensors are `f64`, row-major `(N, C, H, W)`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rgbp::dataset::{load_tensor, plane_to_tensor, save_tensor, tensor_to_quad};
use rgbp::pcdnet::{Detection, Network, NetworkConfig, NetworkInput};
use rgbp::polar::{compute_polar_maps, compute_stokes};
use rgbp::tensor::{DType, Tensor};
use rgbp::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RgbpStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    InvalidArgument = 1,
    Shape = 2,
    Validation = 3,
    Format = 4,
    NotFound = 5,
    Alignment = 6,
    Config = 7,
    Io = 8,
    /// Any other failure, including a caught panic.
    Internal = 9,
}

/// One detection box in pixels, top-left origin.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RgbpDetection {
    pub image_id: u64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
}

/// Opaque `(N, C, H, W)` tensor.
pub struct RgbpTensor(Tensor);

/// Opaque detector.
pub struct RgbpNetwork(Network);

/// Opaque list of detections.
pub struct RgbpDetections(Vec<RgbpDetection>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> RgbpStatus {
    match err {
        Error::Shape(_) => RgbpStatus::Shape,
        Error::Validation(_) | Error::Pattern(_) | Error::Placement(_) => RgbpStatus::Validation,
        Error::Format { .. } => RgbpStatus::Format,
        Error::NotFound(_) => RgbpStatus::NotFound,
        Error::Alignment(_) => RgbpStatus::Alignment,
        Error::Config(_) => RgbpStatus::Config,
        Error::Io(_) => RgbpStatus::Io,
    }
}

struct Fail(RgbpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(RgbpStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RgbpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RgbpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            RgbpStatus::Internal
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rgbp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rgbp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies `len` values into a new tensor of the given shape.
#[no_mangle]
pub unsafe extern "C" fn rgbp_tensor_new(
    shape: *const usize,
    data: *const f64,
    len: usize,
    out: *mut *mut RgbpTensor,
) -> RgbpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if shape.is_null() || (data.is_null() && len > 0) {
            return Err(invalid("shape or data is null"));
        }
        let s = std::slice::from_raw_parts(shape, 4);
        let values = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(data, len).to_vec()
        };
        let t = Tensor::new([s[0], s[1], s[2], s[3]], values)?;
        *out = boxed(RgbpTensor(t));
        Ok(())
    })
}

/// Writes the four dimensions into `shape_out`.
#[no_mangle]
pub unsafe extern "C" fn rgbp_tensor_shape(
    t: *const RgbpTensor,
    shape_out: *mut usize,
) -> RgbpStatus {
    guard(|| {
        let t = borrow(t, "tensor")?;
        if shape_out.is_null() {
            return Err(invalid("shape_out is null"));
        }
        std::slice::from_raw_parts_mut(shape_out, 4).copy_from_slice(&t.0.shape());
        Ok(())
    })
}

/// Borrowed pointer to the tensor's values and their count. Valid while the
/// handle lives.
#[no_mangle]
pub unsafe extern "C" fn rgbp_tensor_data(
    t: *const RgbpTensor,
    data_out: *mut *const f64,
    len_out: *mut usize,
) -> RgbpStatus {
    guard(|| {
        let t = borrow(t, "tensor")?;
        *out_ptr(data_out, "data_out")? = t.0.data().as_ptr();
        *out_ptr(len_out, "len_out")? = t.0.len();
        Ok(())
    })
}

/// Reads an `RGBPT` tensor file.
#[no_mangle]
pub unsafe extern "C" fn rgbp_tensor_load(
    path: *const c_char,
    out: *mut *mut RgbpTensor,
) -> RgbpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let t = load_tensor(&path_arg(path, "path")?)?;
        *out = boxed(RgbpTensor(t));
        Ok(())
    })
}

/// Writes an `RGBPT` tensor file. `f32 != 0` stores single precision.
#[no_mangle]
pub unsafe extern "C" fn rgbp_tensor_save(
    t: *const RgbpTensor,
    path: *const c_char,
    f32: i32,
) -> RgbpStatus {
    guard(|| {
        let t = borrow(t, "tensor")?;
        let dtype = if f32 != 0 { DType::F32 } else { DType::F64 };
        save_tensor(&path_arg(path, "path")?, &t.0, dtype)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rgbp_tensor_free(t: *mut RgbpTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// AoLP (radians) and DoLP from a `(4, C, H, W)` stack of the 0°, 45°, 90°
/// and 135° intensities. Both outputs are `(1, C, H, W)`.
#[no_mangle]
pub unsafe extern "C" fn rgbp_polar_maps(
    quad: *const RgbpTensor,
    aolp_out: *mut *mut RgbpTensor,
    dolp_out: *mut *mut RgbpTensor,
) -> RgbpStatus {
    guard(|| {
        let quad = borrow(quad, "quad")?;
        let aolp_out = out_ptr(aolp_out, "aolp_out")?;
        let dolp_out = out_ptr(dolp_out, "dolp_out")?;
        let maps = compute_polar_maps(&compute_stokes(&tensor_to_quad(&quad.0)?)?)?;
        *aolp_out = boxed(RgbpTensor(plane_to_tensor(&maps.aolp)));
        *dolp_out = boxed(RgbpTensor(plane_to_tensor(&maps.dolp)));
        Ok(())
    })
}

/// Builds a detector with seeded random weights. `config_toml` may be null
/// for the defaults; `seed` overrides the seed in the config.
#[no_mangle]
pub unsafe extern "C" fn rgbp_network_init(
    config_toml: *const c_char,
    seed: u64,
    out: *mut *mut RgbpNetwork,
) -> RgbpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let mut cfg = if config_toml.is_null() {
            NetworkConfig::default()
        } else {
            CStr::from_ptr(config_toml)
                .to_str()
                .map_err(|_| invalid("config_toml is not UTF-8"))?
                .parse()?
        };
        cfg.seed = seed;
        *out = boxed(RgbpNetwork(Network::init(cfg)?));
        Ok(())
    })
}

/// Replaces the weights with those stored in an `RGBPW` file.
#[no_mangle]
pub unsafe extern "C" fn rgbp_network_load_weights(
    net: *mut RgbpNetwork,
    path: *const c_char,
) -> RgbpStatus {
    guard(|| {
        let net = out_ptr(net, "network")?;
        let path = path_arg(path, "path")?;
        net.0 = Network::load(net.0.config().clone(), &path)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rgbp_network_save_weights(
    net: *const RgbpNetwork,
    path: *const c_char,
) -> RgbpStatus {
    guard(|| {
        let net = borrow(net, "network")?;
        net.0.save(&path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Runs detection on one image. Inputs are `(1, 3, H, W)` with AoLP in
/// radians; `H` and `W` must be multiples of the network's size multiple.
#[no_mangle]
pub unsafe extern "C" fn rgbp_network_detect(
    net: *const RgbpNetwork,
    rgb: *const RgbpTensor,
    aolp: *const RgbpTensor,
    dolp: *const RgbpTensor,
    image_id: u64,
    out: *mut *mut RgbpDetections,
) -> RgbpStatus {
    guard(|| {
        let net = borrow(net, "network")?;
        let out = out_ptr(out, "out")?;
        let (rgb, aolp, dolp) = (
            borrow(rgb, "rgb")?,
            borrow(aolp, "aolp")?,
            borrow(dolp, "dolp")?,
        );
        if rgb.0.n() != 1 {
            return Err(Fail(
                RgbpStatus::Shape,
                format!("expected a batch of 1, got {}", rgb.0.n()),
            ));
        }
        let input = NetworkInput::from_radians(rgb.0.clone(), aolp.0.clone(), dolp.0.clone())?;
        let dets = net.0.detect(&input, &[image_id])?;
        *out = boxed(RgbpDetections(dets.iter().map(to_c).collect()));
        Ok(())
    })
}

fn to_c(d: &Detection) -> RgbpDetection {
    RgbpDetection {
        image_id: d.image_id,
        x: d.bbox.x,
        y: d.bbox.y,
        w: d.bbox.w,
        h: d.bbox.h,
        score: d.score,
    }
}

#[no_mangle]
pub unsafe extern "C" fn rgbp_network_free(net: *mut RgbpNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of detections, 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn rgbp_detections_len(d: *const RgbpDetections) -> usize {
    d.as_ref().map_or(0, |d| d.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn rgbp_detections_get(
    d: *const RgbpDetections,
    index: usize,
    out: *mut RgbpDetection,
) -> RgbpStatus {
    guard(|| {
        let d = borrow(d, "detections")?;
        let out = out_ptr(out, "out")?;
        *out = *d.0.get(index).ok_or_else(|| {
            invalid(&format!(
                "index {index} out of range for {} detections",
                d.0.len()
            ))
        })?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn rgbp_detections_free(d: *mut RgbpDetections) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}
