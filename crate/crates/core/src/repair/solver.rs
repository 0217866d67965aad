//! External SMT optimizer driven over a pipe.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

use super::encode::ConstraintBundle;

/// Environment variable naming the solver binary.
pub const SOLVER_ENV: &str = "STG_SOLVER";

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub path: PathBuf,
    /// Per-partition time limit; zero disables it.
    pub timeout: Duration,
    /// Large-neighbourhood search in the optimizer.
    pub lns: bool,
    /// Where to write every emitted script, if anywhere.
    pub dump_dir: Option<PathBuf>,
}

impl SolverConfig {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        SolverConfig {
            path: path.into(),
            timeout: Duration::from_secs(300),
            lns: true,
            dump_dir: None,
        }
    }

    /// Solver from an explicit path, else `$STG_SOLVER`, else `z3` on the
    /// `PATH`.
    pub fn locate(explicit: Option<&Path>) -> Result<Self> {
        if let Some(p) = explicit {
            return Ok(Self::new(p));
        }
        if let Some(p) = std::env::var_os(SOLVER_ENV).filter(|p| !p.is_empty()) {
            return Ok(Self::new(p));
        }
        let path = std::env::var_os("PATH").unwrap_or_default();
        std::env::split_paths(&path)
            .map(|d| d.join("z3"))
            .find(|p| p.is_file())
            .map(Self::new)
            .ok_or_else(|| Error::Solver(format!("no solver given and no z3 on PATH (set {SOLVER_ENV})")))
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_lns(mut self, lns: bool) -> Self {
        self.lns = lns;
        self
    }

    pub fn with_dump_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.dump_dir = Some(dir.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub values: HashMap<String, bool>,
    /// The optimizer proved the model optimal.
    pub optimal: bool,
    pub timed_out: bool,
    pub elapsed: Duration,
}

/// Run one bundle through the solver. A timeout still yields the best model
/// found so far when the solver reports one.
pub fn solve(bundle: &ConstraintBundle, cfg: &SolverConfig, index: usize) -> Result<Solution> {
    let script = bundle.to_smtlib(cfg.timeout.as_millis() as u64, cfg.lns);
    if let Some(dir) = &cfg.dump_dir {
        std::fs::create_dir_all(dir)?;
        let name: String = bundle
            .name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
            .collect();
        std::fs::write(dir.join(format!("{index:02}-{name}.smt2")), &script)?;
    }
    let start = Instant::now();
    let mut child = Command::new(&cfg.path)
        .args(["-in", "-smt2"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::Solver(format!("cannot start {}: {e}", cfg.path.display())))?;
    {
        let mut stdin = child.stdin.take().expect("piped stdin");
        stdin.write_all(script.as_bytes())?;
    }
    let out = child.wait_with_output()?;
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let status = lines.next().unwrap_or_default();
    let (optimal, timed_out) = match status {
        "sat" => (true, false),
        "unknown" => (false, true),
        "unsat" => {
            return Err(Error::Unsatisfiable {
                partition: bundle.name.clone(),
            })
        }
        other => {
            return Err(Error::Solver(format!(
                "{}: unexpected reply {other:?} {}",
                bundle.name,
                String::from_utf8_lossy(&out.stderr).trim()
            )))
        }
    };
    let rest: String = lines.collect::<Vec<_>>().join(" ");
    let values = parse_values(&rest)?;
    let expected = bundle.free_cells() + bundle.activeness.len();
    if values.len() != expected {
        return Err(Error::Solver(format!(
            "{}: solver returned {} of {expected} values{}",
            bundle.name,
            values.len(),
            if timed_out { " after a timeout" } else { "" }
        )));
    }
    Ok(Solution {
        values,
        optimal,
        timed_out,
        elapsed,
    })
}

/// Parse a `get-value` reply of boolean constants.
fn parse_values(text: &str) -> Result<HashMap<String, bool>> {
    let mut values = HashMap::new();
    if text.is_empty() {
        return Ok(values);
    }
    if text.starts_with("(error") {
        return Err(Error::Solver(text.to_string()));
    }
    let tokens: Vec<&str> = text
        .split(|c: char| c == '(' || c == ')' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .collect();
    for pair in tokens.chunks(2) {
        let [name, value] = pair else {
            return Err(Error::Solver(format!("odd get-value reply: {text}")));
        };
        let v = match *value {
            "true" => true,
            "false" => false,
            other => return Err(Error::Solver(format!("non-boolean value {other} for {name}"))),
        };
        values.insert(name.to_string(), v);
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_get_value() {
        let v = parse_values("((e_1_2 true) (a_3 false))").unwrap();
        assert_eq!(v["e_1_2"], true);
        assert_eq!(v["a_3"], false);
        assert!(parse_values("(error \"line 3\")").is_err());
    }
}
