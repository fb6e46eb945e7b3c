use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use octo_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(octo_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn pattern_handles() {
    unsafe {
        let mut p = ptr::null_mut();
        let listing = cstr(r#"{"value": {"event_type": ["created"]}}"#);
        assert_eq!(
            octo_pattern_compile(listing.as_ptr(), &mut p),
            OctoStatus::Ok
        );
        let mut m = false;
        let created = cstr(r#"{"value": {"event_type": "created", "subject": "/a"}}"#);
        assert_eq!(
            octo_pattern_matches(p, created.as_ptr(), &mut m),
            OctoStatus::Ok
        );
        assert!(m);
        let deleted = cstr(r#"{"value": {"event_type": "deleted"}}"#);
        assert_eq!(
            octo_pattern_matches(p, deleted.as_ptr(), &mut m),
            OctoStatus::Ok
        );
        assert!(!m);
        octo_pattern_free(p);

        let mut q = ptr::null_mut();
        let bad = cstr(r#"{"value": {"event_type": "created"}}"#);
        assert_eq!(
            octo_pattern_compile(bad.as_ptr(), &mut q),
            OctoStatus::InvalidArgument
        );
        assert!(q.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(
            octo_pattern_compile(ptr::null(), &mut q),
            OctoStatus::NullArgument
        );
        assert_eq!(last_error(), "json is NULL");
        octo_pattern_free(ptr::null_mut());
    }
}

#[test]
fn produce_consume_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let secret = [7u8; 32];
    unsafe {
        let mut f = ptr::null_mut();
        let d = cstr(dir.path().to_str().unwrap());
        assert_eq!(
            octo_fabric_start(d.as_ptr(), 2, &mut f),
            OctoStatus::Ok,
            "{}",
            last_error()
        );
        let (who, key) = (cstr("ffi-user"), cstr("KFFI"));
        assert_eq!(
            octo_fabric_register_key(f, who.as_ptr(), key.as_ptr(), secret.as_ptr()),
            OctoStatus::Ok
        );
        let topic = cstr("ffi.t");
        assert_eq!(
            octo_fabric_create_topic(f, topic.as_ptr(), 2, 2, who.as_ptr()),
            OctoStatus::Ok
        );
        let url = octo_fabric_control_url(f);
        assert!(CStr::from_ptr(url).to_str().unwrap().starts_with("http://"));
        octo_string_free(url);
        let brokers = octo_fabric_broker_addrs(f);

        let mut p = ptr::null_mut();
        assert_eq!(
            octo_producer_new(brokers, key.as_ptr(), secret.as_ptr(), 32, 1, &mut p),
            OctoStatus::Ok
        );
        for i in 0..10u8 {
            let mut rep = OctoDelivery::default();
            let v = [i];
            let st = octo_producer_send(
                p,
                topic.as_ptr(),
                b"k".as_ptr(),
                1,
                v.as_ptr(),
                1,
                5000,
                &mut rep,
            );
            assert_eq!(st, OctoStatus::Ok, "{}", last_error());
            assert!(rep.offset >= 0);
        }
        let missing = cstr("nope");
        let st = octo_producer_send(
            p,
            missing.as_ptr(),
            ptr::null(),
            0,
            ptr::null(),
            0,
            5000,
            ptr::null_mut(),
        );
        assert_eq!(st, OctoStatus::NotFound, "{}", last_error());

        let mut wrong = ptr::null_mut();
        let bad_key = [0u8; 32];
        assert_eq!(
            octo_producer_new(brokers, key.as_ptr(), bad_key.as_ptr(), 32, 1, &mut wrong),
            OctoStatus::Ok
        );
        let st = octo_producer_send(
            wrong,
            topic.as_ptr(),
            ptr::null(),
            0,
            b"x".as_ptr(),
            1,
            5000,
            ptr::null_mut(),
        );
        assert_eq!(st, OctoStatus::Unauthorized, "{}", last_error());
        octo_producer_free(wrong);
        assert_eq!(
            octo_producer_new(brokers, key.as_ptr(), secret.as_ptr(), 32, 3, &mut wrong),
            OctoStatus::InvalidArgument
        );

        let mut c = ptr::null_mut();
        let st = octo_consumer_new(
            brokers,
            key.as_ptr(),
            secret.as_ptr(),
            32,
            topic.as_ptr(),
            ptr::null(),
            0,
            &mut c,
        );
        assert_eq!(st, OctoStatus::Ok, "{}", last_error());
        let mut values = Vec::new();
        for _ in 0..100 {
            let mut r = std::mem::zeroed::<OctoRecord>();
            let mut got = false;
            assert_eq!(octo_consumer_next(c, 100, &mut r, &mut got), OctoStatus::Ok);
            if got {
                values.push(*r.value);
                octo_record_clear(&mut r);
                assert!(r.value.is_null());
            }
            if values.len() == 10 {
                break;
            }
        }
        values.sort();
        assert_eq!(values, (0..10).collect::<Vec<u8>>());
        octo_consumer_free(c);
        octo_producer_free(p);
        octo_string_free(brokers);
        octo_fabric_stop(f);
    }
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_is_current_and_usable_from_c() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(crate_dir.join("include/octo.h")).unwrap();
    for sym in [
        "octo_fabric_start",
        "octo_producer_send",
        "octo_consumer_next",
        "octo_pattern_matches",
        "typedef struct OctoProducer OctoProducer;",
        "OCTO_STATUS_UNAUTHORIZED = 3",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }

    let lib = target_dir().join("libocto_ffi.a");
    assert!(
        lib.exists(),
        "static library not built at {}",
        lib.display()
    );
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("roundtrip");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .args(["-std=c11", "-Wall", "-Werror", "-I"])
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/roundtrip.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe)
        .arg(dir.path().join("data"))
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "{stdout} {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(stdout.trim(), "seen=3 created=2");
}
