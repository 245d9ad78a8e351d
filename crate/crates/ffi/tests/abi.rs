use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use pal_core::analytic::{one_hot, RlsHead};
use pal_core::numerics::{seeded_normal, Matrix, SeededRng};
use pal_ffi::*;

fn last_error() -> Option<String> {
    let p = pal_last_error_message();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

fn features(rows: usize, dim: usize, seed: u64) -> Matrix {
    seeded_normal(&mut SeededRng::new(seed), rows, dim, 1.0).unwrap()
}

#[test]
fn rls_handle_matches_the_library() {
    let dim = 6;
    let h1 = features(10, dim, 1);
    let h2 = features(7, dim, 2);
    let l1: Vec<u32> = (0..10).map(|i| i % 2).collect();
    let l2: Vec<u32> = (0..7).map(|i| 2 + i % 3).collect();

    let mut head = ptr::null_mut();
    unsafe {
        assert_eq!(pal_rls_new(dim, 0.5, &mut head), PalStatus::Ok);
        assert_eq!(
            pal_rls_fit_first(head, h1.as_slice().as_ptr(), 10, l1.as_ptr(), 2),
            PalStatus::Ok
        );
        assert_eq!(pal_rls_expand(head, 3), PalStatus::Ok);
        assert_eq!(
            pal_rls_update(head, h2.as_slice().as_ptr(), 7, l2.as_ptr()),
            PalStatus::Ok
        );
        let mut classes = 0;
        assert_eq!(pal_rls_num_classes(head, &mut classes), PalStatus::Ok);
        assert_eq!(classes, 5);

        let mut needed = 0;
        let mut small = [0.0; 4];
        assert_eq!(
            pal_rls_weights(head, small.as_mut_ptr(), small.len(), &mut needed),
            PalStatus::BufferTooSmall
        );
        assert_eq!(needed, dim * 5);
        assert!(last_error().unwrap().contains("30"));
        let mut w = vec![0.0; needed];
        assert_eq!(
            pal_rls_weights(head, w.as_mut_ptr(), w.len(), &mut needed),
            PalStatus::Ok
        );
        assert!(last_error().is_none());

        let to_usize = |l: &[u32]| l.iter().map(|&x| x as usize).collect::<Vec<_>>();
        let mut expected =
            RlsHead::init_first(&h1, &one_hot(&to_usize(&l1), 2).unwrap(), 0.5).unwrap();
        expected.expand_classes(3).unwrap();
        expected
            .rls_update(&h2, &one_hot(&to_usize(&l2), 5).unwrap())
            .unwrap();
        assert_eq!(w, expected.weights.as_slice());

        let mut pred = vec![0u32; 7];
        assert_eq!(
            pal_rls_predict(head, h2.as_slice().as_ptr(), 7, pred.as_mut_ptr()),
            PalStatus::Ok
        );
        let want: Vec<u32> = expected
            .predict(&h2)
            .unwrap()
            .into_iter()
            .map(|p| p as u32)
            .collect();
        assert_eq!(pred, want);
        pal_rls_free(head);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        assert_eq!(pal_rls_new(4, 1.0, ptr::null_mut()), PalStatus::NullPointer);
        assert!(last_error().unwrap().contains("out"));
        let mut head = ptr::null_mut();
        assert_eq!(pal_rls_new(4, -1.0, &mut head), PalStatus::InvalidInput);
        assert!(head.is_null());
        assert_eq!(pal_rls_new(4, 1.0, &mut head), PalStatus::Ok);
        let h = features(2, 4, 3);
        let bad = [0u32, 9];
        assert_eq!(
            pal_rls_fit_first(head, h.as_slice().as_ptr(), 2, bad.as_ptr(), 2),
            PalStatus::InvalidInput
        );
        assert!(last_error().unwrap().contains("label 9"));
        assert_eq!(pal_rls_expand(ptr::null_mut(), 1), PalStatus::NullPointer);
        pal_rls_free(head);
        pal_rls_free(ptr::null_mut());
    }
}

#[test]
fn config_and_run_round_trip() {
    unsafe {
        let bad = CString::new("[stream]\nnum_tasks = 3\n").unwrap();
        let mut cfg = ptr::null_mut();
        assert_eq!(
            pal_config_from_toml(bad.as_ptr(), &mut cfg),
            PalStatus::Config
        );
        assert!(last_error().unwrap().starts_with("<string>:2:"));

        assert_eq!(pal_config_small(&mut cfg), PalStatus::Ok);
        assert_eq!(pal_config_set_run_seed(cfg, 4), PalStatus::Ok);
        let mut report = ptr::null_mut();
        assert_eq!(pal_run(cfg, &mut report), PalStatus::Ok);
        let (mut tasks, mut acc, mut fg, mut a00) = (0, 0.0, 0.0, 0.0);
        assert_eq!(pal_report_num_tasks(report, &mut tasks), PalStatus::Ok);
        assert_eq!(pal_report_acc(report, &mut acc), PalStatus::Ok);
        assert_eq!(pal_report_fg(report, &mut fg), PalStatus::Ok);
        assert_eq!(pal_report_accuracy(report, 0, 0, &mut a00), PalStatus::Ok);
        assert_eq!(tasks, 2);
        assert!((0.0..=1.0).contains(&acc) && (0.0..=1.0).contains(&a00));
        assert_eq!(
            pal_report_accuracy(report, 1, 0, &mut a00),
            PalStatus::InvalidInput
        );

        let mut small = pal_core::RunConfig::small();
        small.seeds.run_seed = 4;
        let direct = pal_core::harness::run_pal(&small).unwrap();
        assert_eq!(acc, direct.average_accuracy());
        assert_eq!(Some(fg), direct.forgetting());

        pal_report_free(report);
        pal_config_free(cfg);

        let toml = CString::new("[stream]\nnum_tasks = 4\n").unwrap();
        assert_eq!(pal_config_from_toml(toml.as_ptr(), &mut cfg), PalStatus::Ok);
        pal_config_free(cfg);
    }
}

#[test]
fn verify_suite_passes() {
    let mut passed = 0;
    let seed = 11u64;
    unsafe {
        assert_eq!(pal_verify(&seed, &mut passed), PalStatus::Ok);
    }
    assert_eq!(passed, 1);
}

#[test]
fn generated_header_declares_every_export() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/pal.h");
    let text = std::fs::read_to_string(&header).unwrap();
    let src =
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 18, "{exports:?}");
    for name in exports {
        assert!(
            text.contains(&format!("{name}(")),
            "{name} missing from pal.h"
        );
    }
    assert!(text.contains("PAL_STATUS_BUFFER_TOO_SMALL = 7"));

    // Compile-check the header as C when a compiler is around.
    if let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    {
        assert!(status.success(), "pal.h does not compile as C");
    }
}
