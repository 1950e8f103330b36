//! Compiles a C program against the generated header and the static
//! library. Skipped when no C compiler is on the PATH.

use std::path::PathBuf;
use std::process::Command;

#[test]
fn c_program_links_and_runs() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    // Test binaries live in `deps/`, next to the freshly built archive.
    let lib = exe.parent().unwrap().join("libcaitts_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile_dir();
    let bin = dir.join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.trim().ends_with(" 6"), "{text}");
}

fn tempfile_dir() -> PathBuf {
    let d = std::env::temp_dir().join(format!("caitts-ffi-smoke-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
