use std::ffi::CStr;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use mrm_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mrm_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn lognormal(sigma2: f64) -> *mut MrmTriple {
    let mut t = ptr::null_mut();
    assert_eq!(
        unsafe { mrm_triple_lognormal(sigma2, &mut t) },
        MrmStatus::MrmOk
    );
    t
}

#[test]
fn exponents_through_handles() {
    let t = lognormal(1.0);
    let (mut z, mut psi, mut m) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(mrm_triple_zeta(t, 0.5, &mut z), MrmStatus::MrmOk);
        assert_eq!(mrm_triple_psi(t, 1.0, &mut psi), MrmStatus::MrmOk);
        assert_eq!(mrm_triple_drift(t, &mut m), MrmStatus::MrmOk);
        mrm_triple_free(t);
    }
    assert!((z - 0.625).abs() < 1e-12);
    assert!(psi.abs() < 1e-12);
    assert_eq!(m, -0.5);
    assert!(last_error().is_empty());
}

#[test]
fn atomic_triple_is_normalized() {
    let (xs, ws) = ([-0.3], [2.0]);
    let mut t = ptr::null_mut();
    let mut psi = f64::NAN;
    unsafe {
        assert_eq!(
            mrm_triple_atomic(0.2, xs.as_ptr(), ws.as_ptr(), 1, &mut t),
            MrmStatus::MrmOk
        );
        assert_eq!(mrm_triple_psi(t, 1.0, &mut psi), MrmStatus::MrmOk);
        mrm_triple_free(t);
    }
    assert!(psi.abs() < 1e-12);
}

#[test]
fn errors_map_to_codes() {
    let mut t = ptr::null_mut();
    let mut out = 0.0;
    unsafe {
        assert_eq!(mrm_triple_lognormal(-1.0, &mut t), MrmStatus::MrmValidation);
        assert!(t.is_null());
        assert!(last_error().contains("variance"), "{}", last_error());
        assert_eq!(
            mrm_triple_zeta(ptr::null(), 1.0, &mut out),
            MrmStatus::MrmNullPointer
        );
        assert_eq!(
            mrm_triple_lognormal(0.5, ptr::null_mut()),
            MrmStatus::MrmNullPointer
        );
        assert_eq!(
            mrm_cone_overlap(2.0, 1.0, 0.1, &mut out),
            MrmStatus::MrmUnsupported
        );
        assert_eq!(
            mrm_green_disk(0.1, 0.0, 0.1, 0.0, 1.0, &mut out),
            MrmStatus::MrmSingular
        );
        assert_eq!(
            mrm_green_disk(2.0, 0.0, 0.1, 0.0, 1.0, &mut out),
            MrmStatus::MrmRange
        );
        assert_eq!(mrm_cone_mass(1.0, 1.0, &mut out), MrmStatus::MrmOk);
        assert!(last_error().is_empty());
    }
    assert_eq!(out, 1.0);
}

#[test]
fn field_and_measure_round_trip() {
    let t = lognormal(0.3);
    let sample = |seed| {
        let mut f = ptr::null_mut();
        assert_eq!(
            unsafe { mrm_field_sample(t, 1.0, 512, 1.0 / 128.0, 1.0, seed, &mut f) },
            MrmStatus::MrmOk
        );
        let n = unsafe { mrm_field_len(f) };
        let mut vals = vec![0.0; n];
        assert_eq!(
            unsafe { mrm_field_values(f, vals.as_mut_ptr(), n) },
            MrmStatus::MrmOk
        );
        (f, vals)
    };
    let (f, a) = sample(9);
    let (g, b) = sample(9);
    assert_eq!(a.len(), 512);
    assert_eq!(a, b);
    unsafe {
        let mut short = vec![0.0; 10];
        assert_eq!(
            mrm_field_values(f, short.as_mut_ptr(), 10),
            MrmStatus::MrmBufferTooSmall
        );
        let mut m = ptr::null_mut();
        assert_eq!(mrm_measure_from_field(f, &mut m), MrmStatus::MrmOk);
        let n = mrm_measure_len(m);
        let mut masses = vec![0.0; n];
        assert_eq!(
            mrm_measure_masses(m, masses.as_mut_ptr(), n),
            MrmStatus::MrmOk
        );
        let (mut total, mut half) = (0.0, 0.0);
        assert_eq!(mrm_measure_total_mass(m, &mut total), MrmStatus::MrmOk);
        assert_eq!(mrm_measure_rho(m, 0.0, 0.5, &mut half), MrmStatus::MrmOk);
        let direct: f64 = masses.iter().sum();
        assert!((direct - total).abs() <= 1e-12 * total);
        let first_half: f64 = masses[..n / 2].iter().sum();
        assert!((first_half - half).abs() <= 1e-12 * total);
        assert_eq!(mrm_measure_rho(m, 0.0, 2.0, &mut half), MrmStatus::MrmRange);
        mrm_measure_free(m);
        mrm_field_free(f);
        mrm_field_free(g);
        mrm_triple_free(t);
        mrm_field_free(ptr::null_mut());
        assert_eq!(mrm_field_len(ptr::null()), 0);
    }
}

#[test]
fn kpz_prediction_for_lebesgue_is_identity() {
    let mut t = ptr::null_mut();
    let mut d = 0.0;
    unsafe {
        assert_eq!(mrm_triple_lebesgue(&mut t), MrmStatus::MrmOk);
        assert_eq!(mrm_kpz_predict_1d(t, 0.63, &mut d), MrmStatus::MrmOk);
        mrm_triple_free(t);
    }
    assert!((d - 0.63).abs() < 1e-12);
    assert_eq!(mrm_zeta2d(0.5, 2.0), 4.0);
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// Directory holding the library artifacts (`target/<profile>`).
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(crate_dir().join("include/mrm.h")).unwrap();
    for name in [
        "typedef struct MrmTriple MrmTriple",
        "typedef struct MrmField MrmField",
        "typedef struct MrmMeasure MrmMeasure",
        "MRM_OK = 0",
        "mrm_last_error_message(void)",
        "mrm_field_sample(",
        "mrm_measure_rho(",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn c_program_links_against_static_library() {
    let lib = artifact_dir().join("libmrm_ffi.a");
    assert!(
        lib.exists(),
        "static library not found at {}",
        lib.display()
    );
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let status = Command::new("cc")
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let run = Command::new(&exe).output().unwrap();
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.starts_with(env!("CARGO_PKG_VERSION")), "{stdout}");
    assert!(stdout.contains(" 256 "));
}
