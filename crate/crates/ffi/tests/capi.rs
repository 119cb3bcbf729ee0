use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use nocguard::cnn::{save_model, AnyModel, DetectorModel, SegmentorModel, Tensor};
use nocguard_ffi::*;

fn last_error() -> String {
    let p = ng_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn simulator(text: &str) -> *mut NgSimulator {
    let cfg = CString::new(text).unwrap();
    let mut sim = ptr::null_mut();
    assert_eq!(
        unsafe { ng_simulator_new(cfg.as_ptr(), &mut sim) },
        NgStatus::Ok
    );
    assert!(!sim.is_null());
    sim
}

#[test]
fn simulator_windows_and_quarantine() {
    let sim = simulator("radix = 4\nnormal_rate = 0\nattackers = 3:0.9\ntarget_victim = 12\nwarmup_cycles = 100\nsample_period = 200\n");
    unsafe {
        assert_eq!(ng_simulator_radix(sim), 4);
        assert_eq!(ng_simulator_cycle(sim), 100);
        let mut vco = vec![0.0; 64];
        let mut boc = vec![0.0; 64];
        let mut attack = 0u8;
        assert_eq!(
            ng_simulator_window(sim, vco.as_mut_ptr(), boc.as_mut_ptr(), 64, &mut attack),
            NgStatus::Ok
        );
        assert_eq!(attack, 1);
        assert_eq!(ng_simulator_cycle(sim), 300);
        assert!(vco.iter().all(|v| (0.0..=1.0).contains(v)));
        // Westbound flood from node 3 enters nodes 2, 1, 0 through their E ports.
        for node in [0, 1, 2] {
            assert!(boc[node] > 0.0, "E-port BOC at node {node}");
        }
        assert_eq!(boc[3], 0.0);

        let mut changed = 0u8;
        assert_eq!(ng_simulator_quarantine(sim, 3, &mut changed), NgStatus::Ok);
        assert_eq!(changed, 1);
        assert_eq!(
            ng_simulator_quarantine(sim, 99, ptr::null_mut()),
            NgStatus::InvalidArgument
        );
        assert!(last_error().contains("99"));
        assert_eq!(
            ng_simulator_window(sim, vco.as_mut_ptr(), boc.as_mut_ptr(), 63, ptr::null_mut()),
            NgStatus::Shape
        );
        ng_simulator_free(sim);
    }
}

#[test]
fn bad_config_reports_parse_error() {
    let cfg = CString::new("radix = banana").unwrap();
    let mut sim = ptr::null_mut();
    assert_eq!(
        unsafe { ng_simulator_new(cfg.as_ptr(), &mut sim) },
        NgStatus::Parse
    );
    assert!(sim.is_null());
    assert!(last_error().contains("radix"));
    assert_eq!(
        unsafe { ng_simulator_new(ptr::null(), &mut sim) },
        NgStatus::NullArgument
    );
}

#[test]
fn null_handles_are_harmless() {
    unsafe {
        ng_simulator_free(ptr::null_mut());
        ng_detector_free(ptr::null_mut());
        ng_segmentor_free(ptr::null_mut());
        ng_report_free(ptr::null_mut());
        assert_eq!(ng_simulator_radix(ptr::null()), 0);
        assert_eq!(ng_report_target_victim(ptr::null()), usize::MAX);
        assert_eq!(ng_report_attackers(ptr::null(), ptr::null_mut(), 0), 0);
        let mut p = 0.0;
        assert_eq!(
            ng_detector_predict(ptr::null(), ptr::null(), 0, &mut p),
            NgStatus::NullArgument
        );
    }
    let v = unsafe { CStr::from_ptr(ng_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn models_match_the_rust_forward_pass() {
    let dir = tempfile::tempdir().unwrap();
    let det_path = dir.path().join("det.model");
    let seg_path = dir.path().join("seg.model");
    let det = DetectorModel::init(4, 5);
    let seg = SegmentorModel::init(4, 6);
    save_model(&AnyModel::Detector(det.clone()), &det_path).unwrap();
    save_model(&AnyModel::Segmentor(seg.clone()), &seg_path).unwrap();
    let det_c = CString::new(det_path.to_str().unwrap()).unwrap();
    let seg_c = CString::new(seg_path.to_str().unwrap()).unwrap();

    // Zero the padded lines so the C planes equal the detector input.
    let mut vco: Vec<f64> = (0..64).map(|i| ((i * 7) % 5) as f64 / 4.0).collect();
    for i in 0..16 {
        let (row, col) = (i / 4, i % 4);
        if col == 3 {
            vco[i] = 0.0; // E
        }
        if row == 3 {
            vco[16 + i] = 0.0; // N
        }
        if col == 0 {
            vco[32 + i] = 0.0; // W
        }
        if row == 0 {
            vco[48 + i] = 0.0; // S
        }
    }
    let boc: Vec<f64> = (0..16).map(|i| i as f64 / 15.0).collect();
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(ng_detector_load(det_c.as_ptr(), 4, &mut d), NgStatus::Ok);
        let mut p = -1.0;
        assert_eq!(
            ng_detector_predict(d, vco.as_ptr(), 64, &mut p),
            NgStatus::Ok
        );
        let want = det
            .forward(&Tensor::from_vec(4, 4, 4, vco.clone()).unwrap())
            .unwrap();
        assert_eq!(p.to_bits(), want.to_bits());
        ng_detector_free(d);

        let mut wrong = ptr::null_mut();
        assert_eq!(
            ng_detector_load(det_c.as_ptr(), 8, &mut wrong),
            NgStatus::Model
        );
        assert!(wrong.is_null());
        assert_eq!(
            ng_detector_load(seg_c.as_ptr(), 4, &mut wrong),
            NgStatus::Model
        );
        let missing = CString::new(dir.path().join("none").to_str().unwrap()).unwrap();
        assert_eq!(
            ng_detector_load(missing.as_ptr(), 4, &mut wrong),
            NgStatus::Io
        );

        let mut s = ptr::null_mut();
        assert_eq!(ng_segmentor_load(seg_c.as_ptr(), 4, &mut s), NgStatus::Ok);
        let mut probs = vec![0.0; 16];
        assert_eq!(
            ng_segmentor_predict(s, boc.as_ptr(), probs.as_mut_ptr(), 16),
            NgStatus::Ok
        );
        let want = seg
            .forward(&Tensor::from_vec(1, 4, 4, boc.clone()).unwrap())
            .unwrap();
        assert_eq!(probs, want.plane(0));
        ng_segmentor_free(s);
    }
}

#[test]
fn localize_single_route() {
    // Attacker 0 floods 13 on R=4: one hop east into 1 (W port), then north
    // through 5, 9, 13 (S ports).
    let r = 4;
    let mut maps = vec![0.0; 4 * r * r];
    let w = 2;
    let s = 3;
    maps[w * 16 + 1] = 0.9;
    for node in [5, 9, 13] {
        maps[s * 16 + node] = 0.8;
    }
    let present = [0u8, 0, 1, 1];
    unsafe {
        let mut rep = ptr::null_mut();
        assert_eq!(
            ng_localize(
                r,
                maps.as_ptr(),
                maps.len(),
                present.as_ptr(),
                0.5,
                1,
                &mut rep
            ),
            NgStatus::Ok
        );
        assert_eq!(ng_report_target_victim(rep), 13);
        let mut ids = [0usize; 4];
        assert_eq!(ng_report_attackers(rep, ids.as_mut_ptr(), 4), 1);
        assert_eq!(ids[0], 0);
        assert_eq!(ng_report_victims(rep, ptr::null_mut(), 0), 4);
        let mut victims = [0usize; 2];
        assert_eq!(ng_report_victims(rep, victims.as_mut_ptr(), 2), 4);
        assert_eq!(victims, [1, 5]);
        ng_report_free(rep);

        let empty = vec![0.0; 4 * r * r];
        let mut rep = ptr::null_mut();
        assert_eq!(
            ng_localize(
                r,
                empty.as_ptr(),
                empty.len(),
                present.as_ptr(),
                0.5,
                1,
                &mut rep
            ),
            NgStatus::Inconclusive
        );
        assert!(rep.is_null());
        assert!(last_error().contains("no victims"));
    }
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/nocguard.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "ng_simulator_new",
        "ng_simulator_window",
        "ng_detector_predict",
        "ng_segmentor_predict",
        "ng_localize",
        "ng_last_error",
        "NG_STATUS_INCONCLUSIVE",
        "typedef struct NgSimulator NgSimulator",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-std=c99", "-Wall", "-Werror"])
        .arg(&header)
        .output()
    else {
        eprintln!("no C compiler, syntax check skipped");
        return;
    };
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
