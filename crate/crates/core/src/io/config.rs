//! Flat key=value run-configuration files.
//!
//! One `key = value` pair per line; `#` starts a comment. Keys mirror
//! RunConfig fields plus the run plumbing (`ic`, `out`). Unknown keys are
//! rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use super::LoadError;
use crate::physics::RunConfig;

/// A run description: physics parameters plus input/output paths.
#[derive(Debug, Clone)]
pub struct RunFile {
    pub cfg: RunConfig,
    /// Input snapshot.
    pub ic: Option<PathBuf>,
    /// Final snapshot destination.
    pub out: Option<PathBuf>,
}

pub fn parse_run_file(text: &str) -> Result<RunFile, LoadError> {
    let mut cfg = RunConfig::default();
    let mut ic = None;
    let mut out = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| LoadError::Parse {
            line,
            msg: format!("expected key = value, got {body:?}"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |msg: String| LoadError::Parse { line, msg };
        let f = |v: &str| -> Result<f64, LoadError> {
            v.parse()
                .map_err(|_| bad(format!("{key}: not a number: {v:?}")))
        };
        let n = |v: &str| -> Result<usize, LoadError> {
            v.parse()
                .map_err(|_| bad(format!("{key}: not a count: {v:?}")))
        };
        match key {
            "gamma" => cfg.gamma = f(value)?,
            "n_ngb_target" => cfg.n_ngb_target = f(value)?,
            "n_ngb_tol" => cfg.n_ngb_tol = f(value)?,
            "cfl" => cfg.cfl = f(value)?,
            "alpha" => cfg.alpha = f(value)?,
            "dt_base" => cfg.dt_base = f(value)?,
            "t_end" => cfg.t_end = f(value)?,
            "split_count" => cfg.split_count = n(value)?,
            "split_fraction" => cfg.split_fraction = f(value)?,
            "group_count" => cfg.group_count = n(value)?,
            "n_threads" => cfg.n_threads = n(value)?,
            "rebuild_skin" => cfg.rebuild_skin = f(value)?,
            "dt_fixed" => {
                cfg.dt_fixed = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(bad(format!("dt_fixed: expected true/false, got {value:?}"))),
                }
            }
            "dt_fixed_frac" => cfg.dt_fixed_frac = f(value)?,
            "u_min_frac" => cfg.u_min_frac = f(value)?,
            "box_size" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(bad(format!("box_size: expected 3 numbers, got {value:?}")));
                }
                for (i, p) in parts.iter().enumerate() {
                    cfg.box_size[i] = f(p)?;
                }
            }
            "ic" => ic = Some(PathBuf::from(value)),
            "out" => out = Some(PathBuf::from(value)),
            _ => return Err(bad(format!("unknown key {key:?}"))),
        }
    }
    Ok(RunFile { cfg, ic, out })
}

pub fn read_run_file(path: &Path) -> Result<RunFile, LoadError> {
    parse_run_file(&std::fs::read_to_string(path)?)
}

/// Emits every physics key (explicit is restartable) plus any paths.
pub fn format_run_file(run: &RunFile) -> String {
    let c = &run.cfg;
    let mut s = String::new();
    if let Some(ic) = &run.ic {
        s.push_str(&format!("ic = {}\n", ic.display()));
    }
    if let Some(out) = &run.out {
        s.push_str(&format!("out = {}\n", out.display()));
    }
    s.push_str(&format!("gamma = {:.16e}\n", c.gamma));
    s.push_str(&format!("n_ngb_target = {:.16e}\n", c.n_ngb_target));
    s.push_str(&format!("n_ngb_tol = {:.16e}\n", c.n_ngb_tol));
    s.push_str(&format!("cfl = {:.16e}\n", c.cfl));
    s.push_str(&format!("alpha = {:.16e}\n", c.alpha));
    s.push_str(&format!("dt_base = {:.16e}\n", c.dt_base));
    s.push_str(&format!("t_end = {:.16e}\n", c.t_end));
    s.push_str(&format!("split_count = {}\n", c.split_count));
    s.push_str(&format!("split_fraction = {:.16e}\n", c.split_fraction));
    s.push_str(&format!("group_count = {}\n", c.group_count));
    s.push_str(&format!("n_threads = {}\n", c.n_threads));
    s.push_str(&format!("rebuild_skin = {:.16e}\n", c.rebuild_skin));
    s.push_str(&format!("dt_fixed = {}\n", c.dt_fixed));
    s.push_str(&format!("dt_fixed_frac = {:.16e}\n", c.dt_fixed_frac));
    s.push_str(&format!("u_min_frac = {:.16e}\n", c.u_min_frac));
    s.push_str(&format!(
        "box_size = {:.16e} {:.16e} {:.16e}\n",
        c.box_size[0], c.box_size[1], c.box_size[2]
    ));
    s
}
