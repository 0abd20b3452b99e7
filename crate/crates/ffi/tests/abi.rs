use std::ffi::{CStr, CString};
use std::ptr;

use modprompt::backbone::checkpoint::save_backbone;
use modprompt::backbone::{Backbone, BackboneConfig, Vocab};
use modprompt::corpus::Label;
use modprompt::promptstore::checkpoint::save_store;
use modprompt::promptstore::{init_label_prompt, PromptStore};
use modprompt_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mp_last_error()).to_string_lossy().into_owned() }
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn null_arguments_are_reported_not_crashed() {
    unsafe {
        let mut exp = ptr::null_mut();
        assert_eq!(mp_experiment_from_json(ptr::null(), &mut exp), MpStatus::NullArgument);
        assert!(last_error().contains("json"));
        assert_eq!(mp_experiment_run(ptr::null(), ptr::null_mut()), MpStatus::NullArgument);
        assert_eq!(mp_backbone_d_model(ptr::null()), 0);
        mp_experiment_free(ptr::null_mut());
        mp_string_free(ptr::null_mut());
    }
}

#[test]
fn invalid_config_maps_to_invalid_input() {
    unsafe {
        let mut exp = ptr::null_mut();
        let json = cstr(r#"{"methods": ["bogus"]}"#);
        assert_eq!(mp_experiment_from_json(json.as_ptr(), &mut exp), MpStatus::InvalidInput);
        assert!(exp.is_null());
        assert!(last_error().contains("bogus"), "{}", last_error());
    }
}

#[test]
fn config_round_trips_through_json() {
    unsafe {
        let mut exp = ptr::null_mut();
        let json = cstr(r#"{"methods": ["modular_pt"], "trials": [7]}"#);
        assert_eq!(mp_experiment_from_json(json.as_ptr(), &mut exp), MpStatus::Ok);
        let dir = cstr("/tmp/elsewhere");
        assert_eq!(mp_experiment_set_out_dir(exp, dir.as_ptr()), MpStatus::Ok);
        let mut out = ptr::null_mut();
        assert_eq!(mp_experiment_to_json(exp, &mut out), MpStatus::Ok);
        let text = CStr::from_ptr(out).to_str().unwrap().to_string();
        mp_string_free(out);
        mp_experiment_free(exp);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["trials"], serde_json::json!([7]));
        assert_eq!(v["out_dir"], "/tmp/elsewhere");
    }
}

#[test]
fn missing_backbone_is_an_io_or_checkpoint_error() {
    unsafe {
        let mut b = ptr::null_mut();
        let dir = cstr("/nonexistent/backbone");
        let st = mp_backbone_load(dir.as_ptr(), &mut b);
        assert!(matches!(st, MpStatus::Io | MpStatus::Checkpoint), "{st:?}");
        assert!(b.is_null());
        assert!(!last_error().is_empty());
    }
}

#[test]
fn store_prediction_through_handles() {
    let tmp = tempfile::tempdir().unwrap();
    let labels = [Label::new("sports").unwrap(), Label::new("world news").unwrap()];
    let vocab = Vocab::new(["sports", "world", "news", "alpha", "beta"].map(String::from)).unwrap();
    let mut bb: Backbone<f32> = Backbone::new(BackboneConfig::tiny(vocab.len()), vocab, 3).unwrap();
    bb.freeze();
    let bdir = tmp.path().join("backbone");
    save_backbone(&bb, &bdir).unwrap();
    let mut store = PromptStore::new(2, bb.d_model());
    for l in &labels {
        store.insert(init_label_prompt(l, &bb, 2, 1).unwrap(), 1).unwrap();
    }
    let sdir = tmp.path().join("store");
    save_store(&store, &bb.vocab().hash(), &sdir).unwrap();

    unsafe {
        let mut b = ptr::null_mut();
        let bpath = cstr(bdir.to_str().unwrap());
        assert_eq!(mp_backbone_load(bpath.as_ptr(), &mut b), MpStatus::Ok, "{}", last_error());
        assert_eq!(mp_backbone_d_model(b), 16);
        let mut s = ptr::null_mut();
        let spath = cstr(sdir.to_str().unwrap());
        assert_eq!(mp_store_load(spath.as_ptr(), b, &mut s), MpStatus::Ok, "{}", last_error());
        assert_eq!(mp_store_len(s), 2);
        let mut name = ptr::null_mut();
        assert_eq!(mp_store_label(s, 1, &mut name), MpStatus::Ok);
        assert_eq!(CStr::from_ptr(name).to_str().unwrap(), "world news");
        mp_string_free(name);

        let names = [cstr("world news"), cstr("sports")];
        let ptrs: Vec<*const std::ffi::c_char> = names.iter().map(|c| c.as_ptr()).collect();
        let input = cstr("alpha beta");
        let mut pred = ptr::null_mut();
        let st = mp_store_predict(s, b, MpTaskKind::SingleClass, ptrs.as_ptr(), 2, input.as_ptr(), true, &mut pred);
        assert_eq!(st, MpStatus::Ok, "{}", last_error());
        let p = CStr::from_ptr(pred).to_str().unwrap().to_string();
        mp_string_free(pred);
        assert!(p == "sports" || p == "world news", "constrained output {p:?}");

        let unknown = [cstr("politics")];
        let uptrs: Vec<*const std::ffi::c_char> = unknown.iter().map(|c| c.as_ptr()).collect();
        let mut pred = ptr::null_mut();
        let st = mp_store_predict(s, b, MpTaskKind::SingleClass, uptrs.as_ptr(), 1, input.as_ptr(), false, &mut pred);
        assert_eq!(st, MpStatus::InvalidInput);
        assert!(last_error().contains("politics"));

        mp_store_free(s);
        mp_backbone_free(b);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/modprompt.h")).unwrap();
    for f in [
        "mp_last_error",
        "mp_version",
        "mp_string_free",
        "mp_experiment_from_json",
        "mp_experiment_load",
        "mp_experiment_set_out_dir",
        "mp_experiment_to_json",
        "mp_experiment_run",
        "mp_experiment_free",
        "mp_report_render",
        "mp_report_cell",
        "mp_report_free",
        "mp_backbone_load",
        "mp_backbone_d_model",
        "mp_backbone_free",
        "mp_store_load",
        "mp_store_len",
        "mp_store_label",
        "mp_store_predict",
        "mp_store_free",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct MpPromptStore MpPromptStore;"));
    assert!(header.contains("MP_STATUS_OK = 0"));
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(mp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
