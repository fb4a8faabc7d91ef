use std::ffi::{CStr, CString};
use std::ptr;

use fedcal_ffi::*;

fn last_error() -> String {
    let p = fedcal_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn table_select_matches_core() {
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(fedcal_table_new(10, 100, &mut t), FedcalStatus::Ok);
        let (mut l, mut k, mut c) = (0usize, 0usize, 0.0f64);
        assert_eq!(fedcal_table_select(t, 0.1, &mut l, &mut k, &mut c), FedcalStatus::Ok);
        let mut core = fedcal::coverage_table::CoverageTable::new(fedcal::coverage_table::TableKey::new(10, 100).unwrap());
        let sel = core.select(0.1).unwrap();
        assert_eq!((l, k), (sel.index.l, sel.index.k));
        assert_eq!(c, sel.coverage);
        assert!(c >= 0.9);

        let mut e = 0.0;
        assert_eq!(fedcal_table_entry(t, l, k, &mut e), FedcalStatus::Ok);
        assert_eq!(e, c);
        fedcal_table_free(t);
    }
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.txt").to_str().unwrap()).unwrap();
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(fedcal_table_new(5, 20, &mut t), FedcalStatus::Ok);
        let (mut l, mut k, mut c) = (0, 0, 0.0);
        assert_eq!(fedcal_table_select(t, 0.1, &mut l, &mut k, &mut c), FedcalStatus::Ok);
        assert_eq!(fedcal_table_save(t, path.as_ptr()), FedcalStatus::Ok);
        fedcal_table_free(t);

        let mut u = ptr::null_mut();
        assert_eq!(fedcal_table_load(path.as_ptr(), &mut u), FedcalStatus::Ok);
        let mut e = 0.0;
        assert_eq!(fedcal_table_entry(u, l, k, &mut e), FedcalStatus::Ok);
        assert_eq!(e, c);
        fedcal_table_free(u);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(fedcal_table_new(0, 10, &mut t), FedcalStatus::InvalidArgument);
        assert!(last_error().contains("invalid argument"));
        assert!(t.is_null());

        assert_eq!(fedcal_table_new(2, 2, ptr::null_mut()), FedcalStatus::NullPointer);
        assert!(last_error().contains("out_table"));

        // Three scores cannot reach 99% coverage.
        assert_eq!(fedcal_table_new(1, 3, &mut t), FedcalStatus::Ok);
        let (mut l, mut k, mut c) = (0, 0, 0.0);
        let s = fedcal_table_select(t, 0.01, &mut l, &mut k, &mut c);
        assert_ne!(s, FedcalStatus::Ok);
        fedcal_table_free(t);

        let missing = CString::new("/nonexistent/dir/t.txt").unwrap();
        assert_eq!(fedcal_table_load(missing.as_ptr(), &mut t), FedcalStatus::Io);

        let mut lc = 0;
        assert_eq!(fedcal_l_cor(-1.0, 100, 10, 0.01, &mut lc), FedcalStatus::InvalidArgument);
        assert_eq!(fedcal_l_cor(1.0, 100, 10, 0.01, &mut lc), FedcalStatus::Ok);
        assert!(fedcal_last_error().is_null());
        assert_eq!(lc, fedcal::privacy::l_cor(1.0, 100, 10, 0.01).unwrap());
    }
}

#[test]
fn calibrate_from_flat_scores() {
    let (m, n) = (4usize, 25usize);
    let scores: Vec<f64> = (0..m * n).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
    let rows: Vec<Vec<f64>> = scores.chunks(n).map(<[f64]>::to_vec).collect();
    let matrix = fedcal::order_stats::ScoreMatrix::from_rows(rows).unwrap();
    let expected = fedcal::conformal::fedcp_qq_calibrate(&matrix, 0.1, None).unwrap();
    unsafe {
        let (mut q, mut l, mut k, mut c) = (0.0, 0, 0, 0.0);
        let st = fedcal_calibrate_qq(scores.as_ptr(), m, n, 0.1, ptr::null_mut(), &mut q, &mut l, &mut k, &mut c);
        assert_eq!(st, FedcalStatus::Ok);
        assert_eq!(q, expected.q_hat.value());
        assert_eq!(Some(c), expected.guaranteed_coverage);

        let st = fedcal_calibrate_qq(ptr::null(), m, n, 0.1, ptr::null_mut(), &mut q, &mut l, &mut k, &mut c);
        assert_eq!(st, FedcalStatus::NullPointer);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/fedcal.h")).unwrap();
    for name in [
        "fedcal_last_error",
        "fedcal_table_new",
        "fedcal_table_load",
        "fedcal_table_save",
        "fedcal_table_free",
        "fedcal_table_entry",
        "fedcal_table_select",
        "fedcal_calibrate_qq",
        "fedcal_l_cor",
        "FEDCAL_STATUS_NULL_POINTER",
        "typedef struct FedcalTable FedcalTable",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"fedcal.h\"\nint main(void) { FedcalTable *t = 0; return fedcal_table_new(2, 3, &t) == FEDCAL_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let out = std::process::Command::new(cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok())
        .ok_or(())
}
