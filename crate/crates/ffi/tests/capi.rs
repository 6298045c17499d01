use std::ffi::{CStr, CString};
use std::ptr;

use edgeuda_ffi::*;

fn last_error() -> String {
    let p = eu_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn confusion_worked_example() {
    unsafe {
        let mut cm = ptr::null_mut();
        assert_eq!(eu_confusion_new(2, &mut cm), EuStatus::Ok);
        let (pred, gt) = ([0u8, 1, 1, 1, 0], [0u8, 0, 1, 1, 255]);
        assert_eq!(eu_confusion_add(cm, pred.as_ptr(), gt.as_ptr(), 5), EuStatus::Ok);
        assert_eq!(eu_confusion_get(cm, 0, 1), 1);
        let mut miou = 0.0;
        let mut per = [0.0; 2];
        assert_eq!(eu_confusion_miou(cm, &mut miou, per.as_mut_ptr()), EuStatus::Ok);
        assert!((miou - 0.58333).abs() < 1e-4);
        assert_eq!(per[0], 0.5);
        eu_confusion_free(cm);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut miou = 0.0;
        assert_eq!(eu_confusion_miou(ptr::null(), &mut miou, ptr::null_mut()), EuStatus::NullPointer);
        assert!(last_error().contains("null"));

        let mut cm = ptr::null_mut();
        eu_confusion_new(3, &mut cm);
        assert_eq!(eu_confusion_miou(cm, &mut miou, ptr::null_mut()), EuStatus::NoClassesPresent);
        let bad = [7u8];
        assert_eq!(eu_confusion_add(cm, bad.as_ptr(), bad.as_ptr(), 1), EuStatus::Domain);
        eu_confusion_free(cm);

        let gray = [0.0f64; 16];
        let mut out = [0u8; 16];
        assert_eq!(eu_canny(gray.as_ptr(), 4, 4, 1.0, 0.1, 0.3, out.as_mut_ptr()), EuStatus::InputSize);
        assert_eq!(eu_canny(gray.as_ptr(), 4, 4, 1.0, 0.5, 0.3, out.as_mut_ptr()), EuStatus::Config);
    }
}

#[test]
fn edges_match_the_library() {
    let (h, w) = (32usize, 64usize);
    let mut labels = vec![0u8; h * w];
    let mut rgb = vec![0.0; h * w * 3];
    unsafe {
        assert_eq!(
            eu_generate_scene(3, 1, h, w, 5, rgb.as_mut_ptr(), labels.as_mut_ptr(), ptr::null_mut()),
            EuStatus::Ok
        );
        let mut oracle = vec![0u8; h * w];
        assert_eq!(eu_boundary_oracle(labels.as_ptr(), h, w, oracle.as_mut_ptr()), EuStatus::Ok);
        assert_eq!(oracle, edgeuda::edges::boundary_oracle(&labels, h, w).unwrap().data);
        let mut gt = vec![0u8; h * w];
        assert_eq!(eu_edge_ground_truth(labels.as_ptr(), h, w, 5, gt.as_mut_ptr()), EuStatus::Ok);
        assert!(gt.iter().all(|v| [0, 255].contains(v)));
        assert!(gt.contains(&255));
    }
}

#[test]
fn entropy_of_uniform_probabilities() {
    let probs = [0.25; 4 * 2 * 3];
    let mut out = vec![0.0; probs.len()];
    unsafe {
        assert_eq!(eu_entropy_map(probs.as_ptr(), 4, 2, 3, out.as_mut_ptr()), EuStatus::Ok);
    }
    let expected = -0.25 * 0.25f64.ln();
    assert!(out.iter().all(|v| (v - expected).abs() < 1e-12));
}

#[test]
fn model_round_trip() {
    let (h, w) = (32usize, 64usize);
    let mut rgb = vec![0.0; h * w * 3];
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    unsafe {
        eu_generate_scene(0, 0, h, w, 5, rgb.as_mut_ptr(), ptr::null_mut(), ptr::null_mut());
        let mut model = ptr::null_mut();
        assert_eq!(eu_model_new(5, 8, 42, &mut model), EuStatus::Ok);
        assert_eq!(eu_model_num_classes(model), 5);
        assert!(eu_model_param_count(model) > 0);
        let mut labels = vec![0u8; h * w];
        let mut entropy = vec![0.0; h * w];
        let mut depth = vec![0.0; h * w];
        let status = eu_model_predict(
            model,
            rgb.as_ptr(),
            h,
            w,
            labels.as_mut_ptr(),
            entropy.as_mut_ptr(),
            ptr::null_mut(),
            depth.as_mut_ptr(),
        );
        assert_eq!(status, EuStatus::Ok);
        assert!(labels.iter().all(|&l| l < 5));
        assert!(entropy.iter().all(|&e| e >= 0.0 && e <= 5f64.ln() + 1e-9));
        assert!(depth.iter().all(|&z| (1.0..=666.36).contains(&z)));
        assert_eq!(eu_model_save(model, path.as_ptr()), EuStatus::Ok);

        let mut loaded = ptr::null_mut();
        assert_eq!(eu_model_load(path.as_ptr(), &mut loaded), EuStatus::Ok);
        let mut again = vec![0u8; h * w];
        eu_model_predict(loaded, rgb.as_ptr(), h, w, again.as_mut_ptr(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(labels, again);

        assert_eq!(
            eu_model_predict(model, rgb.as_ptr(), 30, 64, again.as_mut_ptr(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()),
            EuStatus::Shape
        );
        eu_model_free(model);
        eu_model_free(loaded);

        let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(eu_model_load(missing.as_ptr(), &mut m), EuStatus::Io);
        assert!(m.is_null());
    }
}

#[test]
fn header_compiles_as_c() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"edgeuda.h\"\n\
         int use(void) {\n\
           EuConfusion *cm = NULL;\n\
           if (eu_confusion_new(3, &cm) != EU_STATUS_OK) return 1;\n\
           eu_confusion_free(cm);\n\
           return eu_ignore_label() == 255 ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&header)
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header failed to compile"),
        Err(e) => eprintln!("skipping: no C compiler ({e})"),
    }
}
