//! Compiles and runs a small C program against the generated header and the
//! static library, proving the ABI as seen by an actual C toolchain.

use std::path::PathBuf;
use std::process::Command;

const C_SOURCE: &str = r#"
#include "exec_traj.h"
#include <math.h>
#include <string.h>

int main(void) {
    EtProblem *problem = NULL;
    EtStatus st = et_problem_new(1.0, 0.2, ET_PERMANENT_LINEAR, 1.0,
                                 ET_TEMPORARY_LINEAR, 1.0, 0.0,
                                 3.0, 1.0, 0.0, &problem);
    if (st != ET_OK) return 1;

    EtTrajectory *traj = NULL;
    EtSolveReport report;
    st = et_solve(problem, 2000, 0, &traj, &report);
    if (st != ET_OK || !report.converged) return 2;
    if (fabs(report.initial_slope - 4.0292) > 1e-3) return 3;
    if (et_trajectory_len(traj) != 2001) return 4;

    double j = 0.0;
    if (et_objective(problem, traj, &j, NULL, NULL) != ET_OK) return 5;
    if (!(j > 300.0 && j < 320.0)) return 6;

    /* error path: invalid price surfaces a message */
    EtProblem *bad = NULL;
    if (et_problem_new(-1.0, 0.2, ET_PERMANENT_ZERO, 0.0, ET_TEMPORARY_LINEAR,
                       1.0, 0.0, 3.0, 1.0, 0.0, &bad) != ET_INVALID_ARGUMENT)
        return 7;
    char msg[256];
    et_last_error(msg, sizeof msg);
    if (strlen(msg) == 0) return 8;

    et_trajectory_free(traj);
    et_problem_free(problem);
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let compiler = ["cc", "gcc", "clang"]
        .iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
        .copied();
    let Some(compiler) = compiler else {
        eprintln!("skipping: no C compiler on PATH");
        return;
    };

    // target/<profile> from the test executable's own location
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    let static_lib = profile_dir.join("libexec_traj_ffi.a");
    assert!(static_lib.exists(), "missing {}", static_lib.display());

    let include_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(include_dir.join("exec_traj.h").exists(), "header was not generated");

    let work = tempdir();
    let src = work.join("smoke.c");
    let bin = work.join("smoke");
    std::fs::write(&src, C_SOURCE).unwrap();

    let compile = Command::new(compiler)
        .arg("-I")
        .arg(&include_dir)
        .arg(&src)
        .arg("-o")
        .arg(&bin)
        .arg(&static_lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .expect("compiler invocation failed");
    assert!(
        compile.status.success(),
        "C compilation failed:\n{}",
        String::from_utf8_lossy(&compile.stderr)
    );

    let run = Command::new(&bin).output().expect("smoke binary failed to start");
    assert!(
        run.status.success(),
        "smoke binary exited with {:?}",
        run.status.code()
    );
    let _ = std::fs::remove_dir_all(&work);
}

fn tempdir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!("exec-traj-ffi-smoke-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
