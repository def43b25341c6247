use std::ffi::{CStr, CString};
use std::ptr;

use sqdm_gp_ffi::*;

fn last_error() -> String {
    let p = sqdm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn exact_fit_predicts_training_targets() {
    let x = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let y = [0.1, 0.4, -0.2, 0.3];
    let l = [0.8];
    let mut model = ptr::null_mut();
    let s = unsafe {
        sqdm_model_fit(
            SqdmMethod::ExactIso,
            0.0,
            1.0,
            l.as_ptr(),
            1,
            1e-4,
            ptr::null(),
            0,
            x.as_ptr(),
            y.as_ptr(),
            4,
            &mut model,
        )
    };
    assert_eq!(s, SqdmStatus::Ok);
    assert!(sqdm_last_error().is_null());
    let mut mean = [0.0; 4];
    let mut var = [0.0; 4];
    assert_eq!(
        unsafe { sqdm_model_predict(model, x.as_ptr(), 4, mean.as_mut_ptr(), var.as_mut_ptr()) },
        SqdmStatus::Ok
    );
    for (m, t) in mean.iter().zip(&y) {
        assert!((m - t).abs() < 1e-3);
    }
    assert!(var.iter().all(|&v| (0.0..1e-3).contains(&v)));
    let mut ll = 0.0;
    assert_eq!(unsafe { sqdm_model_log_likelihood(model, &mut ll) }, SqdmStatus::Ok);
    assert!(ll.is_finite());
    unsafe { sqdm_model_free(model) };
}

#[test]
fn fitc_through_the_c_interface() {
    let x: Vec<f64> = (0..20).flat_map(|i| [i as f64 * 0.3, (i % 4) as f64 * 0.5]).collect();
    let y: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).sin()).collect();
    let z = [0.0, 0.0, 2.0, 1.0, 4.0, 0.5];
    let mut model = ptr::null_mut();
    let s = unsafe {
        sqdm_model_fit(
            SqdmMethod::Fitc,
            0.0,
            1.0,
            [1.0].as_ptr(),
            1,
            0.1,
            z.as_ptr(),
            3,
            x.as_ptr(),
            y.as_ptr(),
            20,
            &mut model,
        )
    };
    assert_eq!(s, SqdmStatus::Ok);
    let mut mean = [0.0; 1];
    assert_eq!(
        unsafe { sqdm_model_predict(model, [1.0, 0.5].as_ptr(), 1, mean.as_mut_ptr(), ptr::null_mut()) },
        SqdmStatus::Ok
    );
    assert!(mean[0].is_finite());
    unsafe { sqdm_model_free(model) };
}

#[test]
fn errors_set_status_and_message() {
    let mut model = ptr::null_mut();
    let x = [0.0, 0.0];
    let y = [1.0];
    // ARD needs two lengths
    let s = unsafe {
        sqdm_model_fit(
            SqdmMethod::ExactArd,
            0.0,
            1.0,
            [1.0].as_ptr(),
            1,
            0.1,
            ptr::null(),
            0,
            x.as_ptr(),
            y.as_ptr(),
            1,
            &mut model,
        )
    };
    assert_eq!(s, SqdmStatus::InvalidArgument);
    assert!(model.is_null());
    assert!(last_error().contains("length"));

    let s = unsafe {
        sqdm_model_fit(
            SqdmMethod::ExactIso,
            0.0,
            1.0,
            [1.0].as_ptr(),
            1,
            0.1,
            ptr::null(),
            0,
            ptr::null(),
            y.as_ptr(),
            1,
            &mut model,
        )
    };
    assert_eq!(s, SqdmStatus::NullPointer);
    assert!(last_error().contains("inputs"));

    // Kronecker on scattered points
    let xs = [0.0, 0.0, 0.3, 0.7, 1.1, 0.2];
    let s = unsafe {
        sqdm_model_fit(
            SqdmMethod::Kronecker,
            0.0,
            1.0,
            [1.0, 1.0].as_ptr(),
            2,
            0.1,
            ptr::null(),
            0,
            xs.as_ptr(),
            [0.0; 3].as_ptr(),
            3,
            &mut model,
        )
    };
    assert_eq!(s, SqdmStatus::NotAGrid);

    let mut v = 0.0;
    assert_eq!(unsafe { sqdm_model_log_likelihood(ptr::null(), &mut v) }, SqdmStatus::NullPointer);
    unsafe {
        sqdm_model_free(ptr::null_mut());
        sqdm_phantom_free(ptr::null_mut());
        sqdm_scan_result_free(ptr::null_mut());
    }
}

#[test]
fn phantom_round_trip_and_scan() {
    let mut ph = ptr::null_mut();
    assert_eq!(unsafe { sqdm_phantom_new(0, 4, &mut ph) }, SqdmStatus::Ok);
    let (mut nx, mut ny) = (0, 0);
    assert_eq!(unsafe { sqdm_phantom_size(ph, &mut nx, &mut ny) }, SqdmStatus::Ok);
    assert_eq!((nx, ny), (63, 63));
    let mut minus = vec![0.0; nx * ny];
    assert_eq!(
        unsafe { sqdm_phantom_map(ph, SqdmPolarity::Negative, minus.as_mut_ptr(), minus.len()) },
        SqdmStatus::Ok
    );
    assert!(minus.iter().all(|&v| v < 0.0));
    assert_eq!(unsafe { sqdm_phantom_map(ph, SqdmPolarity::Negative, minus.as_mut_ptr(), 5) }, SqdmStatus::Dimension);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sqdm_phantom_save(ph, path.as_ptr()) }, SqdmStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { sqdm_phantom_load(path.as_ptr(), &mut loaded) }, SqdmStatus::Ok);
    let mut again = vec![0.0; nx * ny];
    assert_eq!(
        unsafe { sqdm_phantom_map(loaded, SqdmPolarity::Negative, again.as_mut_ptr(), again.len()) },
        SqdmStatus::Ok
    );
    assert_eq!(minus, again);

    let model = CString::new("oracle").unwrap();
    let mut res = ptr::null_mut();
    assert_eq!(
        unsafe { sqdm_scan_run(ph, model.as_ptr(), SqdmPolarity::Negative, 300.0, 1, &mut res) },
        SqdmStatus::Ok
    );
    let mut aborted = 0;
    assert_eq!(unsafe { sqdm_scan_result_aborted(res, &mut aborted) }, SqdmStatus::Ok);
    assert_eq!(aborted, -1);
    let mut e = 0.0;
    assert_eq!(unsafe { sqdm_scan_result_mse(res, ph, &mut e) }, SqdmStatus::Ok);
    assert!(e > 0.0 && e < 1e-4, "{e}");
    let mut img = vec![0.0; nx * ny];
    assert_eq!(unsafe { sqdm_scan_result_image(res, img.as_mut_ptr(), img.len()) }, SqdmStatus::Ok);
    let mut e2 = 0.0;
    assert_eq!(unsafe { sqdm_mse(img.as_ptr(), minus.as_ptr(), img.len(), &mut e2) }, SqdmStatus::Ok);
    assert!((e - e2).abs() < 1e-15);

    let bad = CString::new("gpu").unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(
        unsafe { sqdm_scan_run(ph, bad.as_ptr(), SqdmPolarity::Negative, 300.0, 1, &mut none) },
        SqdmStatus::InvalidArgument
    );
    assert!(none.is_null());
    let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
    let mut nothing = ptr::null_mut();
    assert_eq!(unsafe { sqdm_phantom_load(missing.as_ptr(), &mut nothing) }, SqdmStatus::Io);
    assert!(nothing.is_null());

    unsafe {
        sqdm_scan_result_free(res);
        sqdm_phantom_free(loaded);
        sqdm_phantom_free(ph);
    }
}

#[test]
fn mse_rejects_empty_input() {
    let mut v = 0.0;
    assert_eq!(unsafe { sqdm_mse(ptr::null(), ptr::null(), 0, &mut v) }, SqdmStatus::Dimension);
    assert!(!last_error().is_empty());
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sqdm_gp.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "sqdm_last_error",
        "sqdm_model_fit",
        "sqdm_model_predict",
        "sqdm_model_free",
        "sqdm_phantom_new",
        "sqdm_phantom_map",
        "sqdm_scan_run",
        "sqdm_scan_result_mse",
        "sqdm_mse",
        "typedef struct SqdmModel SqdmModel;",
        "SqdmStatus_NotAGrid = 5",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"sqdm_gp.h\"\n\
         int main(void) {\n\
           SqdmPhantom *ph = NULL;\n\
           SqdmScanResult *r = NULL;\n\
           double m = 0.0;\n\
           if (sqdm_phantom_new(0, 1, &ph) != SqdmStatus_Ok) return 1;\n\
           if (sqdm_scan_run(ph, \"fitc\", SqdmPolarity_Negative, 300.0, 1, &r) != SqdmStatus_Ok) return 2;\n\
           sqdm_scan_result_mse(r, ph, &m);\n\
           sqdm_scan_result_free(r);\n\
           sqdm_phantom_free(ph);\n\
           return m > 0.0 ? 0 : 3;\n\
         }\n",
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = std::process::Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
        .unwrap_or_else(|e| panic!("C compiler `{cc}` not runnable: {e}"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
