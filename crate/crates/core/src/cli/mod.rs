//! Batch front end: expressions, config files and the solve, optimize,
//! study and verify drivers behind the `curvectrl` binary.

pub mod config;
pub mod expr;
pub mod run;
pub mod study;
pub mod verify;

use std::fs;
use std::path::Path;

use crate::error::Result;

pub use config::Config;
pub use expr::Expression;
pub use run::{run_optimize, run_solve, OptimizeOutcome, SolveOptions};
pub use study::{parse_study_csv, run_study, StudyRow};
pub use verify::{run_verify, Check, Fault, VerifyReport};

/// Environment variable capping the number of study levels solved at once.
pub const THREADS_ENV: &str = "CURVECTRL_THREADS";

/// Full-precision CSV cell (17 significant digits); `None` is an empty cell.
pub fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.16e}"),
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Experimental order of convergence between two levels whose mesh size halves.
pub fn eoc(coarse: f64, fine: f64) -> Option<f64> {
    if coarse > 0.0 && fine > 0.0 {
        Some((coarse / fine).log2())
    } else {
        None
    }
}

pub(crate) fn write_output(dir: &Path, name: &str, content: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), content)?;
    Ok(())
}

/// `metadata.txt`: run mode, the normal-form config and every default the
/// tool filled in.
pub(crate) fn metadata(mode: &str, cfg: &Config, extra: &[(String, String)]) -> String {
    let mut s = format!("mode = {mode}\n");
    for (k, v) in extra {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s.push_str("\n# tool-chosen defaults (absent from the input config)\n");
    if cfg.defaulted.is_empty() {
        s.push_str("# none\n");
    }
    for key in &cfg.defaulted {
        s.push_str(&format!("# {key}\n"));
    }
    s.push_str("\n# normalized config\n");
    s.push_str(&cfg.to_ini());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eoc_definition() {
        assert_eq!(eoc(0.4, 0.1), Some(2.0));
        assert_eq!(eoc(0.0, 0.1), None);
    }

    #[test]
    fn cells_keep_full_precision() {
        let x = 0.1 + 0.2;
        let cell = fmt_cell(Some(x));
        assert_eq!(cell.parse::<f64>().unwrap(), x);
        assert_eq!(fmt_cell(None), "");
    }
}
