use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use steap_ffi::*;

fn last_error() -> String {
    let p = steap_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(steap_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn config_toml_round_trip() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(steap_config_default(&mut cfg), SteapStatus::Ok);
        let mut text = ptr::null_mut();
        assert_eq!(steap_config_to_toml(cfg, &mut text), SteapStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(steap_config_from_toml(text, &mut back), SteapStatus::Ok);
        let mut text2 = ptr::null_mut();
        assert_eq!(steap_config_to_toml(back, &mut text2), SteapStatus::Ok);
        assert_eq!(CStr::from_ptr(text), CStr::from_ptr(text2));
        steap_string_free(text);
        steap_string_free(text2);
        steap_config_free(cfg);
        steap_config_free(back);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut cfg = ptr::null_mut();
        let bad = CString::new("[sweep]\nbogus = 1\n").unwrap();
        assert_eq!(steap_config_from_toml(bad.as_ptr(), &mut cfg), SteapStatus::Parse);
        assert!(cfg.is_null());
        assert!(last_error().contains("bogus"));

        assert_eq!(steap_config_from_toml(ptr::null(), &mut cfg), SteapStatus::NullPointer);
        assert!(last_error().contains("toml"));

        assert_eq!(steap_config_default(&mut cfg), SteapStatus::Ok);
        assert!(steap_last_error_message().is_null());
        let mut run = ptr::null_mut();
        assert_eq!(steap_run(cfg, 7, 0, 0.0, 0.0, &mut run), SteapStatus::InvalidArgument);
        assert!(last_error().contains("mode"));
        assert_eq!(steap_run(cfg, SteapMode::Steap as u32, 0, -1.0, 0.0, &mut run), SteapStatus::InvalidArgument);
        assert!(run.is_null());
        steap_config_free(cfg);

        let occ = [0u8; 4];
        let mut sdf = ptr::null_mut();
        assert_eq!(steap_sdf_from_occupancy(occ.as_ptr(), 0, 2, 0.0, 0.0, 1.0, &mut sdf), SteapStatus::InvalidArgument);
        assert_eq!(steap_sdf_from_occupancy(occ.as_ptr(), 2, 2, 0.0, 0.0, -1.0, &mut sdf), SteapStatus::InvalidArgument);

        // Freeing NULL is allowed.
        steap_config_free(ptr::null_mut());
        steap_run_free(ptr::null_mut());
        steap_sdf_free(ptr::null_mut());
        steap_string_free(ptr::null_mut());
    }
}

#[test]
fn noiseless_steap_run_reaches_goal() {
    unsafe {
        let cfg_text = CString::new("[world]\nobstacle_count = 0\n").unwrap();
        let mut cfg = ptr::null_mut();
        assert_eq!(steap_config_from_toml(cfg_text.as_ptr(), &mut cfg), SteapStatus::Ok);
        let mut run = ptr::null_mut();
        assert_eq!(steap_run(cfg, SteapMode::Steap as u32, 1, 0.0, 0.0, &mut run), SteapStatus::Ok);
        let mut m = std::mem::zeroed::<SteapMetrics>();
        assert_eq!(steap_run_metrics(run, &mut m), SteapStatus::Ok);
        assert!(m.success);
        assert_eq!(m.steps, 30);
        assert!(m.goal_err_trans < 1e-3);
        assert!(m.est_err_trans.is_finite());

        assert_eq!(steap_run_len(run), 31);
        let mut buf = [0.0; 8];
        let mut written = 0;
        assert_eq!(steap_run_ground_truth(run, 0, buf.as_mut_ptr(), buf.len(), &mut written), SteapStatus::Ok);
        assert_eq!(written, 5);
        assert!((buf[0] + 12.0).abs() < 1e-12 && (buf[1] + 7.0).abs() < 1e-12);
        assert_eq!(steap_run_ground_truth(run, 31, buf.as_mut_ptr(), buf.len(), &mut written), SteapStatus::InvalidArgument);
        assert_eq!(steap_run_ground_truth(run, 0, buf.as_mut_ptr(), 3, &mut written), SteapStatus::InvalidArgument);

        let mut json = ptr::null_mut();
        assert_eq!(steap_run_to_json(run, &mut json), SteapStatus::Ok);
        let parsed: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(parsed["mode"], "STEAP");
        steap_string_free(json);
        steap_run_free(run);
        steap_config_free(cfg);
    }
}

#[test]
fn sdf_query_matches_point_obstacle() {
    let (nx, ny) = (21usize, 21usize);
    let mut occ = vec![0u8; nx * ny];
    occ[10 * nx + 10] = 1;
    unsafe {
        let mut sdf = ptr::null_mut();
        assert_eq!(steap_sdf_from_occupancy(occ.as_ptr(), nx, ny, 0.0, 0.0, 0.5, &mut sdf), SteapStatus::Ok);
        let mut d = 0.0;
        let mut g = [0.0; 2];
        assert_eq!(steap_sdf_query(sdf, 5.0 + 1.5, 5.0, &mut d, g.as_mut_ptr()), SteapStatus::Ok);
        assert!((d - 1.5).abs() < 1e-12);
        assert!(g[0] > 0.0 && g[1].abs() < 1e-12);
        assert_eq!(steap_sdf_query(sdf, 5.0, 7.0, &mut d, ptr::null_mut()), SteapStatus::Ok);
        assert!((d - 2.0).abs() < 1e-12);
        assert_eq!(steap_sdf_query(sdf, 0.0, 0.0, ptr::null_mut(), ptr::null_mut()), SteapStatus::NullPointer);
        steap_sdf_free(sdf);
    }
}

#[test]
fn generated_header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/steap.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in ["steap_run", "steap_sdf_query", "steap_last_error_message", "STEAP_STATUS_OK", "SteapMetrics"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    // Syntax-check with the system C compiler when one is available.
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header]).output() else {
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
