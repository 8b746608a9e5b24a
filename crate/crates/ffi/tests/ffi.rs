use std::ffi::{CStr, CString};
use std::ptr;

use pointloc::benchmark::{generate_synthetic_scene, write_dataset, SceneParams};
use pointloc_ffi::*;

fn scene_dir() -> tempfile::TempDir {
    let scene = generate_synthetic_scene(&SceneParams {
        n_points: 1500,
        n_cameras: 16,
        n_queries: 3,
        ..Default::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&scene, dir.path()).unwrap();
    dir
}

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn localize_through_c_abi() {
    let dir = scene_dir();
    let path = cstr(dir.path());
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(pl_dataset_open(path.as_ptr(), &mut ds), PlStatus::Ok);
        assert_eq!(pl_dataset_query_count(ds), 3);
        let name = CStr::from_ptr(pl_dataset_query_name(ds, 0)).to_str().unwrap();
        assert!(name.starts_with("query_"));
        assert!(pl_dataset_query_name(ds, 3).is_null());

        let mut q = ptr::null_mut();
        assert_eq!(pl_dataset_query(ds, 0, &mut q), PlStatus::Ok);
        let opts = PlOptions {
            seed: 5,
            use_seed: true,
            ..pl_options_default()
        };
        let mut est = ptr::null_mut();
        assert_eq!(pl_localize(ds, q, &opts, &mut est), PlStatus::Ok);
        assert!(pl_estimate_fitted_count(est) >= 6);
        let quality = pl_estimate_quality(est);
        assert!((0.0..=1.0).contains(&quality));
        assert!(pl_estimate_iterations(est) >= 1);

        let mut pose = PlPose {
            rotation: [0.0; 9],
            center: [0.0; 3],
            focal_px: 0.0,
        };
        let mut golden = pose;
        assert_eq!(pl_estimate_pose(est, &mut pose), PlStatus::Ok);
        assert_eq!(pl_dataset_golden(ds, 0, &mut golden), PlStatus::Ok);
        let d: f64 = (0..3).map(|i| (pose.center[i] - golden.center[i]).powi(2)).sum::<f64>().sqrt();
        assert!(d < 5.0, "center error {d}");

        let out = dir.path().join("export");
        assert_eq!(pl_export(ds, q, est, cstr(&out).as_ptr()), PlStatus::Ok);
        assert!(out.join("model.ply").is_file());
        assert!(out.join(name.trim_end_matches(".jpg")).join("project.mlp").is_file());

        pl_estimate_free(est);
        pl_query_free(q);
        pl_dataset_free(ds);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(pl_dataset_open(ptr::null(), &mut ds), PlStatus::NullArgument);
        assert!(ds.is_null());
        let msg = CStr::from_ptr(pl_last_error()).to_str().unwrap();
        assert!(msg.contains("dir"));

        let missing = CString::new("/nonexistent/dataset").unwrap();
        assert_eq!(pl_dataset_open(missing.as_ptr(), &mut ds), PlStatus::Io);
        assert!(CStr::from_ptr(pl_last_error()).to_str().unwrap().contains("nonexistent"));

        let mut est = ptr::null_mut();
        assert_eq!(pl_localize(ptr::null(), ptr::null(), ptr::null(), &mut est), PlStatus::NullArgument);
        assert_eq!(pl_estimate_fitted_count(ptr::null()), 0);
        assert!(pl_estimate_quality(ptr::null()).is_nan());
        pl_dataset_free(ptr::null_mut());
        pl_query_free(ptr::null_mut());
        pl_estimate_free(ptr::null_mut());
    }
}

#[test]
fn query_from_keyfile_and_missing_focal() {
    let dir = scene_dir();
    let key = dir.path().join("keys").join("query_0001.key");
    let name = CString::new("query_0001.jpg").unwrap();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(pl_dataset_open(cstr(dir.path()).as_ptr(), &mut ds), PlStatus::Ok);
        let mut q = ptr::null_mut();
        assert_eq!(
            pl_query_from_keyfile(name.as_ptr(), cstr(&key).as_ptr(), 4000, 3000, 0.0, &mut q),
            PlStatus::Ok
        );
        let opts = PlOptions {
            solver: PlSolver::P3p,
            ..pl_options_default()
        };
        let mut est = ptr::null_mut();
        assert_eq!(pl_localize(ds, q, &opts, &mut est), PlStatus::MissingFocal);
        assert!(est.is_null());
        assert_eq!(
            pl_query_from_keyfile(name.as_ptr(), cstr(&key).as_ptr(), 0, 3000, 0.0, &mut q),
            PlStatus::InvalidArgument
        );
        pl_dataset_free(ds);
    }
}

#[test]
fn accept_probability_and_version() {
    let p = pl_accept_probability(5, 5, 5, 5.0);
    assert!((p - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-12);
    assert_eq!(pl_accept_probability(0, 5, 5, 5.0), 0.0);
    let v = unsafe { CStr::from_ptr(pl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
