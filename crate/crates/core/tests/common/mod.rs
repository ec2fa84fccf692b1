#![allow(dead_code)]

use std::path::Path;

use tempfile::TempDir;

/// Runs the CLI in-process against `home`; returns (exit code, stdout, stderr).
pub fn omnistack(home: &Path, args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["omnistack", "--home", home.to_str().expect("utf-8 temp path")];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = omnistack::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// Toy run with seed 0 trained through the whole curriculum.
pub fn trained_run() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = omnistack(dir.path(), &["init", "--toy", "--seed", "0"]);
    assert_eq!(code, 0, "init: {out}{err}");
    let (code, out, err) = omnistack(dir.path(), &["train", "--all"]);
    assert_eq!(code, 0, "train: {out}{err}");
    dir
}
