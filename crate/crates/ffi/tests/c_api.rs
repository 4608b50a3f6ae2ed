use std::ffi::{c_char, CStr, CString};
use std::ptr;

use demo2prog_ffi::*;

fn last_error() -> String {
    let p = d2p_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take_string(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_string_lossy().into_owned();
    d2p_string_free(p);
    s
}

const QUICK_CONFIG: &str = r#"{
  "task": { "steps": 7 },
  "net": { "input_width": 8, "input_height": 6, "hidden": [8] },
  "train": { "epochs": 2 }
}"#;

#[test]
fn header_declares_the_api() {
    let header = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/include/demo2prog.h"));
    for name in [
        "D2P_STATUS_OK",
        "typedef struct D2pConfig D2pConfig",
        "d2p_last_error",
        "d2p_config_from_json",
        "d2p_demo_generate",
        "d2p_net_train",
        "d2p_infer",
        "d2p_trace_stats",
        "d2p_induce",
        "d2p_program_expand",
        "d2p_library_goal",
        "d2p_effective_sample_size",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(d2p_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported() {
    unsafe {
        assert_eq!(d2p_config_default(ptr::null_mut()), D2pStatus::NullPointer);
        assert!(last_error().contains("null"));
        let mut out = ptr::null_mut();
        assert_eq!(d2p_config_from_json(ptr::null(), &mut out), D2pStatus::NullPointer);
        assert!(out.is_null());
        d2p_config_free(ptr::null_mut());
    }
}

#[test]
fn config_errors_map_to_status_codes() {
    unsafe {
        let mut cfg = ptr::null_mut();
        let bad = CString::new("{\n  \"smc\": { \"particles\": 0 }\n}").unwrap();
        assert_eq!(d2p_config_from_json(bad.as_ptr(), &mut cfg), D2pStatus::Config);
        let bad = CString::new("{\n  \"seed\": \"x\"\n}").unwrap();
        assert_eq!(d2p_config_from_json(bad.as_ptr(), &mut cfg), D2pStatus::Config);
        assert!(last_error().contains("line 2"));
        let missing = CString::new("/nonexistent/cfg.json").unwrap();
        assert_eq!(d2p_config_load(missing.as_ptr(), &mut cfg), D2pStatus::MissingInput);
        assert!(cfg.is_null());
    }
}

#[test]
fn config_json_round_trip() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(d2p_config_default(&mut cfg), D2pStatus::Ok);
        assert_eq!(d2p_config_set_seed(cfg, 42), D2pStatus::Ok);
        let mut json = ptr::null_mut();
        assert_eq!(d2p_config_to_json(cfg, &mut json), D2pStatus::Ok);
        let text = take_string(json);
        assert!(text.contains("\"seed\": 42"));
        let c = CString::new(text).unwrap();
        let mut back = ptr::null_mut();
        assert_eq!(d2p_config_from_json(c.as_ptr(), &mut back), D2pStatus::Ok);
        d2p_config_free(back);
        d2p_config_free(cfg);
    }
}

#[test]
fn programs_from_symbols_expand_losslessly() {
    unsafe {
        let trace: Vec<u32> = [3, 2, 1, 4, 0].iter().cycle().take(26).copied().collect();
        let mut prog = ptr::null_mut();
        assert_eq!(d2p_program_from_symbols(trace.as_ptr(), trace.len(), &mut prog), D2pStatus::Ok);

        let mut len = 0usize;
        assert_eq!(d2p_program_expand(prog, ptr::null_mut(), 0, &mut len), D2pStatus::BufferTooSmall);
        assert_eq!(len, trace.len());
        let mut buf = vec![0u32; len];
        assert_eq!(d2p_program_expand(prog, buf.as_mut_ptr(), buf.len(), &mut len), D2pStatus::Ok);
        assert_eq!(buf, trace);

        let mut dsl = ptr::null_mut();
        assert_eq!(d2p_program_to_dsl(prog, &mut dsl), D2pStatus::Ok);
        let text = CString::new(take_string(dsl)).unwrap();
        assert!(text.to_str().unwrap().starts_with("loop 5"));
        let mut parsed = ptr::null_mut();
        assert_eq!(d2p_program_parse(text.as_ptr(), &mut parsed), D2pStatus::Ok);
        let mut buf2 = vec![0u32; len];
        assert_eq!(d2p_program_expand(parsed, buf2.as_mut_ptr(), buf2.len(), &mut len), D2pStatus::Ok);
        assert_eq!(buf2, trace);
        d2p_program_free(parsed);
        d2p_program_free(prog);

        let mut empty = ptr::null_mut();
        assert_eq!(d2p_program_from_symbols(ptr::null(), 0, &mut empty), D2pStatus::Ok);
        assert_eq!(d2p_program_expand(empty, ptr::null_mut(), 0, &mut len), D2pStatus::Ok);
        assert_eq!(len, 0);
        d2p_program_free(empty);

        let junk = CString::new("loop {").unwrap();
        assert_eq!(d2p_program_parse(junk.as_ptr(), &mut parsed), D2pStatus::Syntax);
    }
}

#[test]
fn effective_sample_size_checks_its_input() {
    unsafe {
        let mut n = 0.0;
        let w = [0.25; 4];
        assert_eq!(d2p_effective_sample_size(w.as_ptr(), 4, &mut n), D2pStatus::Ok);
        assert!((n - 4.0).abs() < 1e-12);
        let w = [1.0, 0.0, 0.0];
        assert_eq!(d2p_effective_sample_size(w.as_ptr(), 3, &mut n), D2pStatus::Ok);
        assert_eq!(n, 1.0);
        let w = [0.5, 0.9];
        assert_eq!(d2p_effective_sample_size(w.as_ptr(), 2, &mut n), D2pStatus::Numeric);
        assert_eq!(d2p_effective_sample_size(w.as_ptr(), 0, &mut n), D2pStatus::InvalidArgument);
    }
}

#[test]
fn pipeline_through_the_c_interface() {
    unsafe {
        let dir = tempfile::tempdir().unwrap();
        let json = CString::new(QUICK_CONFIG).unwrap();
        let mut cfg = ptr::null_mut();
        assert_eq!(d2p_config_from_json(json.as_ptr(), &mut cfg), D2pStatus::Ok);

        let mut demo = ptr::null_mut();
        assert_eq!(d2p_demo_generate(cfg, &mut demo), D2pStatus::Ok);
        let mut frames = 0usize;
        assert_eq!(d2p_demo_len(demo, &mut frames), D2pStatus::Ok);
        assert!(frames > 0);

        let demo_dir = CString::new(dir.path().join("demo").to_str().unwrap()).unwrap();
        assert_eq!(d2p_demo_save(demo, demo_dir.as_ptr()), D2pStatus::Ok);
        let mut reloaded = ptr::null_mut();
        assert_eq!(d2p_demo_load(demo_dir.as_ptr(), &mut reloaded), D2pStatus::Ok);
        let mut frames2 = 0usize;
        d2p_demo_len(reloaded, &mut frames2);
        assert_eq!(frames2, frames);
        d2p_demo_free(reloaded);

        let mut net = ptr::null_mut();
        let mut loss = f64::NAN;
        assert_eq!(d2p_net_train(cfg, demo, &mut net, &mut loss), D2pStatus::Ok);
        assert!(loss.is_finite());
        let net_path = CString::new(dir.path().join("net.weights").to_str().unwrap()).unwrap();
        assert_eq!(d2p_net_save(net, net_path.as_ptr()), D2pStatus::Ok);
        let mut net2 = ptr::null_mut();
        assert_eq!(d2p_net_load(net_path.as_ptr(), &mut net2), D2pStatus::Ok);

        for network in [net2 as *const D2pNet, ptr::null()] {
            let mut trace = ptr::null_mut();
            assert_eq!(d2p_infer(cfg, demo, network, 0, &mut trace), D2pStatus::Ok);
            let mut len = 0usize;
            assert_eq!(d2p_trace_len(trace, &mut len), D2pStatus::Ok);
            assert_eq!(len, frames);
            let mut series = vec![0.0; len];
            assert_eq!(d2p_trace_n_eff(trace, series.as_mut_ptr(), len, &mut len), D2pStatus::Ok);
            assert!(series.iter().all(|&n| (1.0..=50.0).contains(&n)));
            let mut stats = D2pStats::default();
            assert_eq!(d2p_trace_stats(trace, &mut stats), D2pStatus::Ok);
            assert!(stats.min <= stats.mean && stats.mean <= stats.max);

            let mut prog = ptr::null_mut();
            let mut lib = ptr::null_mut();
            assert_eq!(d2p_induce(cfg, trace, &mut prog, &mut lib), D2pStatus::Ok);
            let mut n_ctrl = 0usize;
            assert_eq!(d2p_library_len(lib, &mut n_ctrl), D2pStatus::Ok);
            assert!(n_ctrl > 0);
            let mut goal = [0.0; 8];
            let mut joints = 0usize;
            assert_eq!(d2p_library_goal(lib, 0, goal.as_mut_ptr(), goal.len(), &mut joints), D2pStatus::Ok);
            assert_eq!(joints, 3);
            let mut gain = 0.0;
            assert_eq!(d2p_library_gain(lib, 0, &mut gain), D2pStatus::Ok);
            assert!(gain > 0.0);
            assert_ne!(d2p_library_gain(lib, n_ctrl as u32, &mut gain), D2pStatus::Ok);
            d2p_library_free(lib);
            d2p_program_free(prog);
            d2p_trace_free(trace);
        }

        d2p_net_free(net2);
        d2p_net_free(net);
        d2p_demo_free(demo);
        d2p_config_free(cfg);

        let missing = CString::new(dir.path().join("absent").to_str().unwrap()).unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(d2p_net_load(missing.as_ptr(), &mut none), D2pStatus::MissingInput);
    }
}
