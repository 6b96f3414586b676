use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use moat::simulation::PlantedBlock;
use moat::{generate, run_analysis, AnalysisSettings, PlantedDesign, StudyData};
use moat_ffi::*;

fn planted_study() -> StudyData {
    let design = PlantedDesign {
        m: 30,
        n: 14,
        blocks: vec![
            PlantedBlock {
                s_size: 6,
                v_size: 6,
                rho: 0.6,
            },
            PlantedBlock {
                s_size: 5,
                v_size: 5,
                rho: 0.6,
            },
        ],
        rho0: 0.0,
        subjects: 120,
    };
    generate(&design, 11).unwrap()
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn last_error() -> String {
    let p = moat_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

unsafe fn new_study(data: &StudyData) -> *mut MoatStudy {
    let x = row_major(data.predictors());
    let y = row_major(data.outcomes());
    let mut study = ptr::null_mut();
    let status = moat_study_new(
        x.as_ptr(),
        data.n_predictors(),
        y.as_ptr(),
        data.n_edges(),
        ptr::null(),
        0,
        data.n_subjects(),
        &mut study,
    );
    assert_eq!(status, MoatStatus::Ok);
    study
}

#[test]
fn analysis_through_the_abi_matches_the_library() {
    let data = planted_study();
    let expected_settings = AnalysisSettings {
        permutations: 100,
        seed: 3,
        run_cca: false,
        ..AnalysisSettings::default()
    };
    let expected = run_analysis(&data, &expected_settings, |_| {}).unwrap();

    unsafe {
        let study = new_study(&data);
        let settings = moat_settings_new();
        assert_eq!(
            moat_settings_set_permutations(settings, 100),
            MoatStatus::Ok
        );
        assert_eq!(moat_settings_set_seed(settings, 3), MoatStatus::Ok);
        assert_eq!(moat_settings_set_cca(settings, 0), MoatStatus::Ok);
        let mut analysis = ptr::null_mut();
        assert_eq!(moat_analyze(study, settings, &mut analysis), MoatStatus::Ok);
        assert!(moat_last_error().is_null());

        let count = moat_analysis_count(analysis);
        assert_eq!(count, expected.extraction.subnetworks.len());
        assert!(count >= 2);
        let (mut l1, mut l2) = (0.0, 0.0);
        assert_eq!(
            moat_analysis_lambdas(analysis, &mut l1, &mut l2),
            MoatStatus::Ok
        );
        assert_eq!((l1, l2), expected.extraction.selected_lambdas);

        let report = expected.inference.as_ref().unwrap();
        for c in 0..count {
            let sub = &expected.extraction.subnetworks[c];
            let mut info = MoatSubnetworkInfo::default();
            assert_eq!(
                moat_analysis_subnetwork(analysis, c, &mut info),
                MoatStatus::Ok
            );
            assert_eq!(info.n_predictors, sub.s_nodes.len());
            assert_eq!(info.n_edges, sub.f_nodes.len());
            assert_eq!(info.n_regions, sub.v_nodes.len());
            assert_eq!(info.q_value, report.q_values[c]);
            assert_eq!(info.log_statistic, report.observed_log_t[c]);
            assert_eq!(info.significant != 0, expected.significant.contains(&c));

            let mut preds = vec![usize::MAX; info.n_predictors];
            let status = moat_analysis_predictors(analysis, c, preds.as_mut_ptr(), preds.len());
            assert_eq!(status, MoatStatus::Ok);
            assert_eq!(preds, sub.s_nodes);
            let mut edges = vec![usize::MAX; info.n_edges];
            let status = moat_analysis_edges(analysis, c, edges.as_mut_ptr(), edges.len());
            assert_eq!(status, MoatStatus::Ok);
            assert_eq!(edges, sub.f_nodes);
        }

        // Both planted blocks come out significant.
        let significant: Vec<usize> = (0..count)
            .filter(|&c| {
                let mut info = MoatSubnetworkInfo::default();
                moat_analysis_subnetwork(analysis, c, &mut info);
                info.significant != 0
            })
            .collect();
        assert!(significant.len() >= 2, "significant: {significant:?}");

        let mut score = 0.0;
        let (k, e) = (
            expected.extraction.subnetworks[0].s_nodes[0],
            expected.extraction.subnetworks[0].f_nodes[0],
        );
        assert_eq!(
            moat_analysis_score(analysis, k, e, &mut score),
            MoatStatus::Ok
        );
        assert_eq!(score, expected.scores.get(k, e));

        moat_analysis_free(analysis);
        moat_settings_free(settings);
        moat_study_free(study);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut study = ptr::null_mut();
        let x = [0.0; 10];
        let y = [0.0; 20];
        // 4 outcome columns is not a triangular number.
        let status = moat_study_new(x.as_ptr(), 2, y.as_ptr(), 4, ptr::null(), 0, 5, &mut study);
        assert_eq!(status, MoatStatus::Data);
        assert!(study.is_null());
        assert!(!last_error().is_empty());

        let status = moat_study_new(ptr::null(), 2, y.as_ptr(), 3, ptr::null(), 0, 5, &mut study);
        assert_eq!(status, MoatStatus::NullPointer);

        let mut bad = [1.0; 15];
        bad[4] = f64::NAN;
        let status = moat_study_new(
            x.as_ptr(),
            2,
            bad.as_ptr(),
            3,
            ptr::null(),
            0,
            5,
            &mut study,
        );
        assert_eq!(status, MoatStatus::Data);
        assert!(last_error().contains("non-finite"), "{}", last_error());

        let settings = moat_settings_new();
        assert_eq!(moat_settings_set_alpha(settings, 2.0), MoatStatus::Config);
        assert_eq!(
            moat_settings_set_permutations(settings, 0),
            MoatStatus::Config
        );
        assert_eq!(
            moat_settings_set_p_threshold(settings, 0.0),
            MoatStatus::Config
        );
        // Rejected updates leave the settings untouched.
        let mut json = ptr::null_mut();
        assert_eq!(moat_settings_to_json(settings, &mut json), MoatStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        moat_string_free(json);
        let defaults = serde_json::to_string(&AnalysisSettings::default()).unwrap();
        assert_eq!(text, defaults);
        moat_settings_free(settings);

        let mut analysis = ptr::null_mut();
        assert_eq!(
            moat_analyze(ptr::null(), ptr::null(), &mut analysis),
            MoatStatus::NullPointer
        );
        assert_eq!(moat_analysis_count(ptr::null()), 0);
        moat_study_free(ptr::null_mut());
        moat_settings_free(ptr::null_mut());
        moat_analysis_free(ptr::null_mut());
    }
}

#[test]
fn out_of_range_queries_are_rejected() {
    let data = planted_study();
    unsafe {
        let study = new_study(&data);
        let settings = moat_settings_new();
        assert_eq!(
            moat_settings_set_permutations(settings, 100),
            MoatStatus::Ok
        );
        moat_settings_set_cca(settings, 0);
        let mut analysis = ptr::null_mut();
        assert_eq!(moat_analyze(study, settings, &mut analysis), MoatStatus::Ok);
        let count = moat_analysis_count(analysis);

        let mut info = MoatSubnetworkInfo::default();
        assert_eq!(
            moat_analysis_subnetwork(analysis, count, &mut info),
            MoatStatus::OutOfRange
        );
        assert_eq!(
            moat_analysis_subnetwork(analysis, 0, &mut info),
            MoatStatus::Ok
        );
        let mut small = vec![0usize; info.n_predictors - 1];
        let status = moat_analysis_predictors(analysis, 0, small.as_mut_ptr(), small.len());
        assert_eq!(status, MoatStatus::OutOfRange);
        assert!(last_error().contains("buffer"));
        let mut score = 0.0;
        let status = moat_analysis_score(analysis, data.n_predictors(), 0, &mut score);
        assert_eq!(status, MoatStatus::OutOfRange);

        moat_analysis_free(analysis);
        moat_settings_free(settings);
        moat_study_free(study);
    }
}

#[test]
fn settings_json_round_trips() {
    unsafe {
        let json = CString::new(r#"{"permutations": 150, "threshold": {"bonferroni": 0.05}, "fixed_lambdas": [1.25, 1.5]}"#)
            .unwrap();
        let mut settings = ptr::null_mut();
        assert_eq!(
            moat_settings_from_json(json.as_ptr(), &mut settings),
            MoatStatus::Ok
        );
        let mut out = ptr::null_mut();
        assert_eq!(moat_settings_to_json(settings, &mut out), MoatStatus::Ok);
        let parsed: AnalysisSettings =
            serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
        moat_string_free(out);
        assert_eq!(parsed.permutations, 150);
        assert_eq!(parsed.fixed_lambdas, Some((1.25, 1.5)));
        moat_settings_free(settings);

        let bad = CString::new(r#"{"permutatons": 5}"#).unwrap();
        assert_eq!(
            moat_settings_from_json(bad.as_ptr(), &mut settings),
            MoatStatus::Config
        );
        assert!(settings.is_null());
        assert!(last_error().contains("permutatons"));
    }
}

#[test]
fn pair_index_is_zero_based_lexicographic() {
    let mut flat = usize::MAX;
    unsafe {
        assert_eq!(moat_pair_index(0, 1, 4, &mut flat), MoatStatus::Ok);
        assert_eq!(flat, 0);
        assert_eq!(moat_pair_index(1, 2, 4, &mut flat), MoatStatus::Ok);
        assert_eq!(flat, 3);
        assert_eq!(moat_pair_index(2, 3, 4, &mut flat), MoatStatus::Ok);
        assert_eq!(flat, 5);
        assert_eq!(moat_pair_index(2, 2, 4, &mut flat), MoatStatus::OutOfRange);
    }
    let version = unsafe { CStr::from_ptr(moat_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

fn header_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(header_dir().join("moat.h")).unwrap();
    let source = include_str!("../src/lib.rs");
    for line in source.lines() {
        let Some(rest) = line.split("extern \"C\" fn ").nth(1) else {
            continue;
        };
        let name = rest.split('(').next().unwrap();
        assert!(
            header.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
    for name in [
        "MoatStudy",
        "MoatSettings",
        "MoatAnalysis",
        "MOAT_STATUS_OUT_OF_RANGE",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

/// Compiles and runs a C program against the header and the static library
/// when a C compiler and the archive are available.
#[test]
fn c_program_links_and_runs() {
    let Some(deps) = std::env::current_exe()
        .ok()
        .and_then(|p| p.parent().map(Path::to_path_buf))
    else {
        return;
    };
    let archive = deps.parent().unwrap().join("libmoat_ffi.a");
    if !archive.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or {} missing", archive.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "moat.h"
int main(void) {
    /* 6 subjects, 1 predictor, 3 regions (3 edges). */
    double x[6] = {1, 2, 3, 4, 5, 6};
    double y[18] = {0};
    for (int s = 0; s < 6; s++) { y[3 * s] = s * 0.5; y[3 * s + 1] = s % 2; y[3 * s + 2] = s % 3; }
    MoatStudy *study = NULL;
    if (moat_study_new(x, 1, y, 3, NULL, 0, 6, &study) != MOAT_STATUS_OK) return 1;
    MoatSettings *settings = moat_settings_new();
    if (moat_settings_set_alpha(settings, 2.0) != MOAT_STATUS_CONFIG) return 2;
    if (moat_last_error() == NULL) return 3;
    size_t flat = 0;
    if (moat_pair_index(1, 2, 3, &flat) != MOAT_STATUS_OK || flat != 2) return 4;
    printf("%s\n", moat_version());
    moat_settings_free(settings);
    moat_study_free(study);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("probe");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header_dir())
        .arg(&archive)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "cc failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = Command::new(&exe).output().unwrap();
    assert!(
        run.status.success(),
        "probe exited with {:?}",
        run.status.code()
    );
    assert_eq!(
        String::from_utf8_lossy(&run.stdout).trim(),
        env!("CARGO_PKG_VERSION")
    );
}
