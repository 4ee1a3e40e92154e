//! Helpers shared by the end-to-end checks.

use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use counterflow_core::harness::ExperimentConfig;

/// Repository root.
pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Loads a bundled config from `configs/`.
pub fn bundled_config(name: &str) -> ExperimentConfig {
    let path = repo_root().join("configs").join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Prints a PASS/FAIL line straight to stderr so it shows even when the
/// test harness captures output, then returns `ok`.
pub fn report(id: u32, name: &str, ok: bool, detail: &str, elapsed: Duration) -> bool {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let line = format!("[{id}] {verdict} {name}: {detail} ({:.2}s)\n", elapsed.as_secs_f64());
    let _ = std::io::stderr().write_all(line.as_bytes());
    ok
}
