//! Input-file formats, structured run reports and shared runtime knobs.

use crate::num::{rat_from_str, rat_to_string, Rat};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Worker count for parallelizable loops: `BVLAB_THREADS` caps it,
/// default 1 (sequential, deterministic either way).
pub fn worker_count() -> usize {
    std::env::var("BVLAB_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
        .min(64)
}

/// Parses text records `Q i j num/den` into a symmetric or antisymmetric
/// matrix of dimension `n`; unspecified entries are zero. Mirror entries
/// are filled in according to `antisymmetric`.
pub fn parse_matrix_records(
    text: &str,
    n: usize,
    antisymmetric: bool,
) -> Result<Vec<Vec<Rat>>, IoError> {
    use num_traits::Zero;
    let mut m = vec![vec![Rat::zero(); n]; n];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let tag = it.next().unwrap();
        if tag != "Q" {
            continue;
        }
        let err = |msg: &str| IoError::Parse { line: lineno + 1, msg: msg.to_string() };
        let i: usize = it.next().ok_or_else(|| err("missing i"))?.parse().map_err(|_| err("bad i"))?;
        let j: usize = it.next().ok_or_else(|| err("missing j"))?.parse().map_err(|_| err("bad j"))?;
        let v = it
            .next()
            .and_then(rat_from_str)
            .ok_or_else(|| err("bad rational"))?;
        if i >= n || j >= n {
            return Err(err("index out of range"));
        }
        m[i][j] = v.clone();
        if i != j {
            m[j][i] = if antisymmetric { -v } else { v };
        }
    }
    Ok(m)
}

/// Parses `P d i1 .. id num/den` records into (degree, entries) groups.
pub fn parse_tensor_records(text: &str) -> Result<Vec<(usize, Vec<(Vec<usize>, Rat)>)>, IoError> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<usize, Vec<(Vec<usize>, Rat)>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let tag = it.next().unwrap();
        if tag != "P" {
            continue;
        }
        let err = |msg: &str| IoError::Parse { line: lineno + 1, msg: msg.to_string() };
        let d: usize = it.next().ok_or_else(|| err("missing degree"))?.parse().map_err(|_| err("bad degree"))?;
        let mut idx = Vec::with_capacity(d);
        for _ in 0..d {
            idx.push(
                it.next()
                    .ok_or_else(|| err("missing index"))?
                    .parse()
                    .map_err(|_| err("bad index"))?,
            );
        }
        let v = it
            .next()
            .and_then(rat_from_str)
            .ok_or_else(|| err("bad rational"))?;
        groups.entry(d).or_default().push((idx, v));
    }
    Ok(groups.into_iter().collect())
}

/// A deterministic structured run report (the CLI output unit).
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub command: String,
    pub inputs_digest: String,
    pub lines: Vec<String>,
    pub checks_passed: bool,
}

impl RunReport {
    pub fn new(command: impl Into<String>) -> Self {
        RunReport {
            command: command.into(),
            inputs_digest: String::new(),
            lines: Vec::new(),
            checks_passed: true,
        }
    }

    pub fn push(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }

    pub fn push_rat(&mut self, label: &str, value: &Rat) {
        self.lines.push(format!("{} = {}", label, rat_to_string(value)));
    }

    pub fn fail(&mut self, line: impl Into<String>) {
        self.checks_passed = false;
        self.lines.push(line.into());
    }

    pub fn render(&self) -> String {
        let mut s = format!("command: {}\n", self.command);
        if !self.inputs_digest.is_empty() {
            s.push_str(&format!("inputs: {}\n", self.inputs_digest));
        }
        for l in self.lines.iter() {
            s.push_str(l);
            s.push('\n');
        }
        s.push_str(if self.checks_passed { "status: ok\n" } else { "status: FAILED\n" });
        s
    }
}

/// Digest of an input string: length plus FNV-1a hash, printed in hex.
/// Stable across runs and platforms.
pub fn digest(text: &str) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("len={} fnv1a={:016x}", text.len(), hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::rat;

    #[test]
    fn matrix_records_symmetric() {
        let m = parse_matrix_records("Q 0 0 1\nQ 0 1 1/2\n", 2, false).unwrap();
        assert_eq!(m[0][1], rat(1, 2));
        assert_eq!(m[1][0], rat(1, 2));
    }

    #[test]
    fn matrix_records_antisymmetric() {
        let m = parse_matrix_records("Q 0 1 2\n", 2, true).unwrap();
        assert_eq!(m[1][0], rat(-2, 1));
    }

    #[test]
    fn tensor_records() {
        let groups = parse_tensor_records("P 4 0 0 0 0 1\nP 3 0 0 1 1/3\n").unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].0, 3);
        assert_eq!(groups[1].0, 4);
    }
}
