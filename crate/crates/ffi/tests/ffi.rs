use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use rgbp_ffi::*;

fn tensor(shape: [usize; 4], data: &[f64]) -> *mut RgbpTensor {
    let mut out = ptr::null_mut();
    let s = unsafe { rgbp_tensor_new(shape.as_ptr(), data.as_ptr(), data.len(), &mut out) };
    assert_eq!(s, RgbpStatus::Ok);
    out
}

fn values(t: *const RgbpTensor) -> Vec<f64> {
    let mut p = ptr::null();
    let mut n = 0;
    assert_eq!(
        unsafe { rgbp_tensor_data(t, &mut p, &mut n) },
        RgbpStatus::Ok
    );
    unsafe { std::slice::from_raw_parts(p, n) }.to_vec()
}

fn last_error() -> String {
    let p = rgbp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn polar_maps_match_closed_form() {
    // s0 = 2, s1 = 0.6, s2 = 0.8 per pixel
    let quad = tensor([4, 1, 1, 2], &[1.3, 1.3, 1.4, 1.4, 0.7, 0.7, 0.6, 0.6]);
    let (mut a, mut d) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(
        unsafe { rgbp_polar_maps(quad, &mut a, &mut d) },
        RgbpStatus::Ok
    );
    let mut shape = [0usize; 4];
    assert_eq!(
        unsafe { rgbp_tensor_shape(a, shape.as_mut_ptr()) },
        RgbpStatus::Ok
    );
    assert_eq!(shape, [1, 1, 1, 2]);
    let phi = 0.5 * 0.8f64.atan2(0.6);
    for v in values(a) {
        assert!((v - phi).abs() < 1e-12);
    }
    for v in values(d) {
        assert!((v - 0.5).abs() < 1e-12);
    }
    unsafe {
        rgbp_tensor_free(quad);
        rgbp_tensor_free(a);
        rgbp_tensor_free(d);
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut out = ptr::null_mut();
    let s = unsafe { rgbp_tensor_new([1, 1, 2, 2].as_ptr(), [1.0].as_ptr(), 1, &mut out) };
    assert_eq!(s, RgbpStatus::Shape);
    assert!(out.is_null());
    assert!(last_error().contains("shape"));

    let s = unsafe { rgbp_tensor_new(ptr::null(), ptr::null(), 0, &mut out) };
    assert_eq!(s, RgbpStatus::InvalidArgument);

    let missing = CString::new("/nonexistent/x.rgbpt").unwrap();
    assert_eq!(
        unsafe { rgbp_tensor_load(missing.as_ptr(), &mut out) },
        RgbpStatus::NotFound
    );

    let bad = CString::new("widths = [3]").unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(
        unsafe { rgbp_network_init(bad.as_ptr(), 0, &mut net) },
        RgbpStatus::Config
    );

    let quad = tensor([3, 1, 1, 1], &[1.0, 1.0, 1.0]);
    let (mut a, mut d) = (ptr::null_mut(), ptr::null_mut());
    assert_ne!(
        unsafe { rgbp_polar_maps(quad, &mut a, &mut d) },
        RgbpStatus::Ok
    );
    unsafe { rgbp_tensor_free(quad) };

    assert_eq!(unsafe { rgbp_detections_len(ptr::null()) }, 0);
    unsafe {
        rgbp_tensor_free(ptr::null_mut());
        rgbp_network_free(ptr::null_mut());
        rgbp_detections_free(ptr::null_mut());
    }
}

#[test]
fn tensor_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.rgbpt").to_str().unwrap()).unwrap();
    let data = [0.1, -2.0, 3.5, 1e-300];
    let t = tensor([1, 1, 2, 2], &data);
    assert_eq!(
        unsafe { rgbp_tensor_save(t, path.as_ptr(), 0) },
        RgbpStatus::Ok
    );
    let mut back = ptr::null_mut();
    assert_eq!(
        unsafe { rgbp_tensor_load(path.as_ptr(), &mut back) },
        RgbpStatus::Ok
    );
    assert_eq!(values(back), data);
    unsafe {
        rgbp_tensor_free(t);
        rgbp_tensor_free(back);
    }
}

#[test]
fn detect_and_weights_round_trip() {
    let img: Vec<f64> = (0..3 * 32 * 32).map(|i| (i % 11) as f64 / 11.0).collect();
    let shape = [1, 3, 32, 32];
    let (rgb, a, d) = (
        tensor(shape, &img),
        tensor(shape, &img),
        tensor(shape, &img),
    );
    let cfg = CString::new("score_thresh = 0.0").unwrap();
    let (mut n1, mut n2) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(
        unsafe { rgbp_network_init(cfg.as_ptr(), 3, &mut n1) },
        RgbpStatus::Ok
    );
    assert_eq!(
        unsafe { rgbp_network_init(cfg.as_ptr(), 99, &mut n2) },
        RgbpStatus::Ok
    );

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("w.rgbpw").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { rgbp_network_save_weights(n1, path.as_ptr()) },
        RgbpStatus::Ok
    );
    assert_eq!(
        unsafe { rgbp_network_load_weights(n2, path.as_ptr()) },
        RgbpStatus::Ok
    );

    let run = |net| {
        let mut dets = ptr::null_mut();
        assert_eq!(
            unsafe { rgbp_network_detect(net, rgb, a, d, 7, &mut dets) },
            RgbpStatus::Ok
        );
        let n = unsafe { rgbp_detections_len(dets) };
        let mut all = vec![
            RgbpDetection {
                image_id: 0,
                x: 0.0,
                y: 0.0,
                w: 0.0,
                h: 0.0,
                score: 0.0
            };
            n
        ];
        for (i, slot) in all.iter_mut().enumerate() {
            assert_eq!(
                unsafe { rgbp_detections_get(dets, i, slot) },
                RgbpStatus::Ok
            );
        }
        let mut extra = all.first().copied().unwrap();
        assert_eq!(
            unsafe { rgbp_detections_get(dets, n, &mut extra) },
            RgbpStatus::InvalidArgument
        );
        unsafe { rgbp_detections_free(dets) };
        all
    };
    let first = run(n1);
    assert!(!first.is_empty());
    assert!(first
        .iter()
        .all(|d| d.image_id == 7 && d.w > 0.0 && d.h > 0.0));
    assert_eq!(first, run(n2));

    let small = tensor([1, 3, 8, 8], &img[..192]);
    let mut dets = ptr::null_mut();
    assert_ne!(
        unsafe { rgbp_network_detect(n1, small, small, small, 0, &mut dets) },
        RgbpStatus::Ok
    );
    unsafe {
        rgbp_tensor_free(small);
        rgbp_network_free(n1);
        rgbp_network_free(n2);
        rgbp_tensor_free(rgb);
        rgbp_tensor_free(a);
        rgbp_tensor_free(d);
    }
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(rgbp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

// Compiles tests/c/smoke.c against the generated header and static library.
#[test]
fn c_program_links_and_runs() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let target = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = target.join("librgbp_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built, skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(
        out.status.success(),
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("detections"));
}
