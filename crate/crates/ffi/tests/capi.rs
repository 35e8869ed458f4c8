use std::ffi::{CStr, CString};
use std::ptr;

use lnabl_ffi::*;

fn last_error() -> String {
    let p = lnabl_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn bundled(name: &str) -> *mut LnablSchedule {
    let name = CString::new(name).unwrap();
    let mut s = ptr::null_mut();
    let st = unsafe { lnabl_schedule_bundled(name.as_ptr(), &mut s) };
    assert_eq!(st, LnablStatus::Ok);
    s
}

#[test]
fn header_is_generated() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/lnabl.h")).unwrap();
    for sym in [
        "lnabl_last_error",
        "lnabl_model_load",
        "lnabl_model_forward",
        "lnabl_model_export",
        "lnabl_schedule_event",
        "lnabl_lr_at",
        "typedef struct LnablModel LnablModel",
        "LNABL_STATUS_PRECONDITION",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

#[test]
fn v5_schedule_through_c_api() {
    let s = bundled("v5");
    unsafe {
        assert_eq!(lnabl_schedule_len(s), 86);
        assert_eq!(lnabl_schedule_count_at(s, 975), 3);
        let mut ev = std::mem::zeroed::<LnablEvent>();
        assert_eq!(lnabl_schedule_event(s, 0, &mut ev), LnablStatus::Ok);
        assert_eq!(ev.action, LnablAction::Freeze);
        let mut last = 0;
        for i in 0..lnabl_schedule_len(s) {
            assert_eq!(lnabl_schedule_event(s, i, &mut ev), LnablStatus::Ok);
            assert!(ev.step >= last);
            last = ev.step;
        }
        assert_eq!(
            lnabl_schedule_event(s, 86, &mut ev),
            LnablStatus::InvalidArgument
        );
        assert!(last_error().contains("out of range"));
        assert_eq!(lnabl_schedule_rescale(s, 0.25), LnablStatus::Ok);
        assert_eq!(lnabl_schedule_len(s), 86);
        lnabl_schedule_free(s);
    }
}

#[test]
fn schedule_errors_map_to_codes() {
    let mut s = ptr::null_mut();
    let bad = CString::new("10\t0.ln2\tdrop_bos\n").unwrap();
    let st = unsafe { lnabl_schedule_parse(bad.as_ptr(), &mut s) };
    assert_eq!(st, LnablStatus::Schedule);
    assert!(s.is_null());
    assert!(last_error().contains("line 1"));

    let name = CString::new("v9").unwrap();
    let st = unsafe { lnabl_schedule_bundled(name.as_ptr(), &mut s) };
    assert_ne!(st, LnablStatus::Ok);

    let st = unsafe { lnabl_schedule_bundled(ptr::null(), &mut s) };
    assert_eq!(st, LnablStatus::NullPointer);

    let good = CString::new("5\t0.ln2\tfreeze\n").unwrap();
    let st = unsafe { lnabl_schedule_parse(good.as_ptr(), &mut s) };
    assert_eq!(st, LnablStatus::Ok);
    assert!(lnabl_last_error().is_null());
    unsafe {
        assert_eq!(lnabl_schedule_len(s), 1);
        lnabl_schedule_free(s);
    }
}

#[test]
fn model_forward_save_load_and_export_precondition() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(lnabl_model_init_default(3, &mut m), LnablStatus::Ok);
        let v = lnabl_model_vocab_size(m);
        assert_eq!(v, 257);
        assert_eq!(lnabl_model_context_length(m), 256);

        let tokens = [256u16, 72, 105, 33];
        let mut logits = vec![0f32; tokens.len() * v];
        let st = lnabl_model_forward(m, tokens.as_ptr(), tokens.len(), logits.as_mut_ptr(), logits.len());
        assert_eq!(st, LnablStatus::Ok);
        assert!(logits.iter().all(|x| x.is_finite()));

        let st = lnabl_model_forward(m, tokens.as_ptr(), tokens.len(), logits.as_mut_ptr(), 10);
        assert_eq!(st, LnablStatus::BufferTooSmall);

        let long = vec![1u16; 300];
        let mut big = vec![0f32; long.len() * v];
        let st = lnabl_model_forward(m, long.as_ptr(), long.len(), big.as_mut_ptr(), big.len());
        assert_eq!(st, LnablStatus::Dimension);

        let mut free = true;
        assert_eq!(lnabl_model_is_norm_free(m, &mut free), LnablStatus::Ok);
        assert!(!free);

        let mut out = ptr::null_mut();
        assert_eq!(lnabl_model_export(m, &mut out), LnablStatus::Precondition);
        assert!(out.is_null());
        assert!(last_error().contains("lnf"));

        let mut n = 0usize;
        assert_eq!(lnabl_model_split_all(m, &mut n), LnablStatus::Ok);
        assert_eq!(n, 4);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(lnabl_model_save(m, path.as_ptr()), LnablStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(lnabl_model_load(path.as_ptr(), &mut back), LnablStatus::Ok);
        let mut again = vec![0f32; logits.len()];
        let st = lnabl_model_forward(back, tokens.as_ptr(), tokens.len(), again.as_mut_ptr(), again.len());
        assert_eq!(st, LnablStatus::Ok);
        assert_eq!(logits, again);

        let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(lnabl_model_load(missing.as_ptr(), &mut out), LnablStatus::Io);

        lnabl_model_free(back);
        lnabl_model_free(m);
        lnabl_model_free(ptr::null_mut());
    }
}

#[test]
fn lr_and_tokens_per_step() {
    assert!((lnabl_lr_at(100) - 6e-4).abs() < 1e-18);
    assert!((lnabl_lr_at(2000) - 6e-5).abs() < 1e-15);
    assert_eq!(lnabl_lr_at(0), 0.0);
    assert_eq!(lnabl_lr_at_with(7, false, 1e-3, 1e-4, 0, 10), 1e-3);
    assert!(lnabl_lr_at_with(7, true, -1.0, 0.0, 10, 100).is_nan());
    assert_eq!(lnabl_tokens_per_step(48, 1024, 10), 491_520);
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/lnabl.h");
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = std::process::Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, header])
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected the header"),
            Err(e) => eprintln!("{compiler} unavailable, header not compiled: {e}"),
        }
    }
}

#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("liblnabl_ffi.a");
    if !lib.exists() {
        eprintln!("static library not built at {}, skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let root = env!("CARGO_MANIFEST_DIR");
    let status = std::process::Command::new("cc")
        .arg(format!("{root}/tests/c/smoke.c"))
        .arg(format!("-I{root}/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status();
    let Ok(status) = status else {
        eprintln!("cc unavailable, skipping");
        return;
    };
    assert!(status.success(), "linking the C smoke test failed");
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
