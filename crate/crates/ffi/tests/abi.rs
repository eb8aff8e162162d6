use std::ffi::{CStr, CString};
use std::ptr;

use markalign_ffi::*;

const BINARY: &str = r#"
alphabet = ["A", "B"]
P = [[0.5, 0.5], [0.5, 0.5]]
Q = [[0.5, 0.5], [0.5, 0.5]]
score = [[1, -2], [-2, 1]]
"#;

fn parse(text: &str) -> *mut MkModel {
    let text = CString::new(text).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { mk_model_parse(text.as_ptr(), &mut model) }, MkStatus::Ok);
    assert!(!model.is_null());
    model
}

fn last_error() -> String {
    let p = mk_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(mk_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn theta_star_of_binary_model() {
    let model = parse(BINARY);
    unsafe {
        assert_eq!(mk_model_n_states(model), 2);
        assert!(mk_model_lattice(model));

        let mut tilted = ptr::null_mut();
        assert_eq!(mk_tilted_solve(model, &mut tilted), MkStatus::Ok);
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((mk_tilted_theta_star(tilted) - golden.ln()).abs() < 1e-9);

        let mut phi = 0.0;
        assert_eq!(mk_phi(model, mk_tilted_theta_star(tilted), &mut phi), MkStatus::Ok);
        assert!((phi - 1.0).abs() < 1e-9);
        assert_eq!(mk_phi(model, 0.0, &mut phi), MkStatus::Ok);
        assert!((phi - 1.0).abs() < 1e-12);

        mk_tilted_free(tilted);
        mk_model_free(model);
    }
}

#[test]
fn pair_constructor_matches_parser() {
    let p = [0.6, 0.4, 0.3, 0.7];
    let f = [1.0, -2.0, -2.0, 1.0];
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(mk_model_pair(2, p.as_ptr(), p.as_ptr(), f.as_ptr(), &mut model), MkStatus::Ok);
        let mut tilted = ptr::null_mut();
        assert_eq!(mk_tilted_solve(model, &mut tilted), MkStatus::Ok);
        assert!((mk_tilted_theta_star(tilted) - 0.372172).abs() < 1e-5);
        assert!(mk_tilted_mu_star(tilted) > 0.0);
        mk_tilted_free(tilted);
        mk_model_free(model);
    }
}

#[test]
fn invalid_model_reports_status_and_message() {
    let p = [0.6, 0.6, 0.3, 0.7];
    let f = [1.0, -2.0, -2.0, 1.0];
    let mut model = ptr::null_mut();
    let status = unsafe { mk_model_pair(2, p.as_ptr(), p.as_ptr(), f.as_ptr(), &mut model) };
    assert_eq!(status, MkStatus::InvalidModel);
    assert!(model.is_null());
    assert!(last_error().contains("invalid model"));
}

#[test]
fn positive_drift_is_rejected() {
    let model = parse(
        r#"
alphabet = ["A", "B"]
P = [[0.5, 0.5], [0.5, 0.5]]
Q = [[0.5, 0.5], [0.5, 0.5]]
score = [[2, -1], [-1, 2]]
"#,
    );
    let mut tilted = ptr::null_mut();
    unsafe {
        assert_eq!(mk_tilted_solve(model, &mut tilted), MkStatus::DriftNotNegative);
        assert!(tilted.is_null());
        mk_model_free(model);
    }
}

#[test]
fn null_arguments() {
    let mut out = 0.0;
    unsafe {
        assert_eq!(mk_phi(ptr::null(), 0.5, &mut out), MkStatus::NullPointer);
        assert!(last_error().contains("model"));
        assert_eq!(mk_model_load(ptr::null(), &mut ptr::null_mut()), MkStatus::NullPointer);
        assert_eq!(mk_model_n_states(ptr::null()), 0);
        assert!(mk_tilted_theta_star(ptr::null()).is_nan());
        mk_model_free(ptr::null_mut());
        mk_tilted_free(ptr::null_mut());
    }
}

#[test]
fn missing_file_is_io_error() {
    let path = CString::new("/nonexistent/model.toml").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { mk_model_load(path.as_ptr(), &mut model) }, MkStatus::Io);
}

#[test]
fn error_is_cleared_on_success() {
    let mut out = 0.0;
    unsafe {
        assert_eq!(mk_phi(ptr::null(), 0.5, &mut out), MkStatus::NullPointer);
        let model = parse(BINARY);
        assert!(mk_last_error().is_null());
        mk_model_free(model);
    }
}

#[test]
fn align_counts_peaks() {
    let model = parse(BINARY);
    // A B A A B B A vs A B A B B A A
    let x = [0u8, 1, 0, 0, 1, 1, 0];
    let y = [0u8, 1, 0, 1, 1, 0, 0];
    let (mut m, mut c) = (0.0, 0usize);
    unsafe {
        assert_eq!(mk_align(model, x.as_ptr(), x.len(), y.as_ptr(), y.len(), 0.0, &mut m, &mut c), MkStatus::Ok);
        assert_eq!(m, 4.0);
        assert!(c >= 1);
        let mut above = 0usize;
        assert_eq!(mk_align(model, x.as_ptr(), x.len(), y.as_ptr(), y.len(), 2.0, &mut m, &mut above), MkStatus::Ok);
        assert!(above <= c);

        let bad = [0u8, 5];
        assert_eq!(mk_align(model, bad.as_ptr(), 2, y.as_ptr(), y.len(), 0.0, &mut m, &mut c), MkStatus::SymbolOutOfAlphabet);
        assert_eq!(mk_align(model, ptr::null(), 0, ptr::null(), 0, 0.0, &mut m, &mut c), MkStatus::Ok);
        assert_eq!((m, c), (0.0, 0));
        mk_model_free(model);
    }
}

#[test]
fn normalize_and_p_value() {
    let (mut sp, mut p) = (0.0, 0.0);
    unsafe {
        assert_eq!(mk_normalize_score(0.5, 0.1, false, 20.0, 1000, 1000, &mut sp, &mut p), MkStatus::Ok);
        let expect = 0.5 * 20.0 - (0.1f64 * 1e6).ln();
        assert!((sp - expect).abs() < 1e-12);
        assert!((p - (1.0 - (-(-expect).exp()).exp())).abs() < 1e-12);

        let mut pv = 0.0;
        assert_eq!(mk_p_value(0.5, 0.1, true, 20.0, 1000, 1000, &mut pv), MkStatus::Ok);
        assert!(pv >= p);

        assert_eq!(mk_normalize_score(-1.0, 0.1, false, 1.0, 10, 10, &mut sp, &mut p), MkStatus::InvalidArgument);
        assert_eq!(mk_p_value(0.5, 0.1, false, 1.0, 0, 10, &mut pv), MkStatus::InvalidArgument);
    }
}

#[test]
fn k_star_estimate_and_bad_cycles() {
    let model = parse(BINARY);
    let mut tilted = ptr::null_mut();
    let (mut k, mut se) = (0.0, 0.0);
    unsafe {
        assert_eq!(mk_tilted_solve(model, &mut tilted), MkStatus::Ok);
        assert_eq!(mk_k_star(model, tilted, 3, 0, 100, &mut k, &mut se), MkStatus::InvalidArgument);
        assert_eq!(mk_k_star(model, tilted, 3, 20_000, 2000, &mut k, &mut se), MkStatus::Ok);
        assert!((k - 0.1011).abs() < 5.0 * se + 0.005, "k = {k} ± {se}");
        mk_tilted_free(tilted);
        mk_model_free(model);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/markalign.h")).unwrap();
    for name in [
        "mk_version",
        "mk_last_error",
        "mk_model_load",
        "mk_model_parse",
        "mk_model_pair",
        "mk_model_free",
        "mk_model_n_states",
        "mk_model_lattice",
        "mk_phi",
        "mk_tilted_solve",
        "mk_tilted_free",
        "mk_tilted_theta_star",
        "mk_tilted_mu_star",
        "mk_k_star",
        "mk_align",
        "mk_normalize_score",
        "mk_p_value",
        "typedef struct MkModel MkModel",
        "MK_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        return;
    };
    if !cc.status.success() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"markalign.h\"\nint main(void) { MkModel *m = 0; return (int)mk_model_n_states(m) + MK_STATUS_OK; }\n",
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}
