//! Compiles a small C program against the generated header and the static
//! library. Skipped when no C compiler is available.

use std::path::PathBuf;
use std::process::Command;

const SOURCE: &str = r#"
#include <stdio.h>
#include <math.h>
#include "auv_nsb.h"

int main(void) {
    AuvScenario *sc = NULL;
    if (auv_scenario_default(&sc) != AUV_STATUS_OK) return 10;
    if (auv_scenario_set(sc, "t_end=2") != AUV_STATUS_OK) return 11;
    if (auv_scenario_set(sc, "bogus") == AUV_STATUS_OK) return 12;
    if (auv_last_error()[0] == '\0') return 13;
    AuvLog *log = NULL;
    if (auv_run(sc, &log) != AUV_STATUS_OK) return 14;
    size_t rows = auv_log_rows(log);
    double t = 0.0;
    if (auv_log_value(log, rows - 1, 0, &t) != AUV_STATUS_OK) return 15;
    if (fabs(t - 2.0) > 1e-9) return 16;
    AuvStabilityReport r;
    if (auv_check(sc, 2.5, &r) != AUV_STATUS_OK || !r.overall_ok) return 17;
    printf("%zu %zu %.3f\n", rows, auv_log_columns(log), r.delta0_lower_bound);
    auv_log_free(log);
    auv_scenario_free(sc);
    return 0;
}
"#;

fn lib_dir() -> Option<PathBuf> {
    // tests/<exe> lives in target/<profile>/deps
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?.to_path_buf();
    dir.join("libauv_nsb_ffi.a").exists().then_some(dir)
}

#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler, skipping");
        return;
    }
    let Some(lib) = lib_dir() else {
        eprintln!("static library not found next to the test binary, skipping");
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("client.c");
    let exe = tmp.path().join("client");
    std::fs::write(&src, SOURCE).unwrap();
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(lib.join("libauv_nsb_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C build failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "client exited with {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    let cols: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(cols[1], "64");
}
