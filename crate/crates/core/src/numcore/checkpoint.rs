//! Plain-text checkpoint format.
//!
//! ```text
//! transkt-checkpoint 1
//! meta <key> <value>            (zero or more; value runs to end of line)
//! rng seed=<u64> step=<u64>
//! param <name> <rows> <cols>    (followed by `rows` lines of `cols` floats)
//! ...
//! end
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a
//! save/load cycle is bitwise exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "transkt-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Position in the derived random streams: the base seed and the number of
/// optimizer steps taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub rng: RngState,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        let _ = writeln!(out, "rng seed={} step={}", self.rng.seed, self.rng.step);
        for p in self.params.iter() {
            let (r, c) = p.value.shape();
            let _ = writeln!(out, "param {} {r} {c}", p.name);
            for row in 0..r {
                let line: Vec<String> = p.value.row(row).iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        const SRC: &str = "checkpoint";
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (n, header) = lines
            .next()
            .ok_or_else(|| Error::parse(SRC, 1, "empty checkpoint"))?;
        let mut head = header.split_whitespace();
        if head.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::parse(SRC, n, "missing checkpoint header"));
        }
        match head.next().and_then(|v| v.parse::<u32>().ok()) {
            Some(CHECKPOINT_VERSION) => {}
            other => {
                return Err(Error::parse(
                    SRC,
                    n,
                    format!("unsupported checkpoint version {other:?}"),
                ))
            }
        }

        let mut meta = BTreeMap::new();
        let mut rng = None;
        let mut params = ParamStore::new();
        let mut ended = false;
        while let Some((n, line)) = lines.next() {
            if ended {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(Error::parse(SRC, n, "content after `end`"));
            }
            let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
            match kind {
                "meta" => {
                    let (k, v) = rest
                        .split_once(' ')
                        .ok_or_else(|| Error::parse(SRC, n, "meta needs a key and a value"))?;
                    meta.insert(k.to_string(), v.to_string());
                }
                "rng" => {
                    let mut seed = None;
                    let mut step = None;
                    for field in rest.split_whitespace() {
                        match field.split_once('=') {
                            Some(("seed", v)) => seed = v.parse().ok(),
                            Some(("step", v)) => step = v.parse().ok(),
                            _ => return Err(Error::parse(SRC, n, format!("bad rng field `{field}`"))),
                        }
                    }
                    match (seed, step) {
                        (Some(seed), Some(step)) => rng = Some(RngState { seed, step }),
                        _ => return Err(Error::parse(SRC, n, "rng needs seed= and step=")),
                    }
                }
                "param" => {
                    let parts: Vec<&str> = rest.split_whitespace().collect();
                    let [name, r, c] = parts.as_slice() else {
                        return Err(Error::parse(SRC, n, "param needs <name> <rows> <cols>"));
                    };
                    let rows: usize = r
                        .parse()
                        .map_err(|_| Error::parse(SRC, n, format!("bad row count `{r}`")))?;
                    let cols: usize = c
                        .parse()
                        .map_err(|_| Error::parse(SRC, n, format!("bad column count `{c}`")))?;
                    if rows == 0 || cols == 0 || rows.saturating_mul(cols) > 1 << 28 {
                        return Err(Error::parse(SRC, n, "unreasonable parameter shape"));
                    }
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (rn, row) = lines
                            .next()
                            .ok_or_else(|| Error::parse(SRC, n, "truncated parameter block"))?;
                        let before = data.len();
                        for tok in row.split_whitespace() {
                            let v: f64 = tok
                                .parse()
                                .map_err(|_| Error::parse(SRC, rn, format!("bad float `{tok}`")))?;
                            if !v.is_finite() {
                                return Err(Error::parse(SRC, rn, "non-finite parameter value"));
                            }
                            data.push(v);
                        }
                        if data.len() - before != cols {
                            return Err(Error::parse(
                                SRC,
                                rn,
                                format!("expected {cols} values, got {}", data.len() - before),
                            ));
                        }
                    }
                    params
                        .add(*name, Tensor::from_parts(rows, cols, data))
                        .map_err(|e| Error::parse(SRC, n, e.to_string()))?;
                }
                "end" => ended = true,
                _ => return Err(Error::parse(SRC, n, format!("unknown record `{kind}`"))),
            }
        }
        if !ended {
            return Err(Error::parse(SRC, text.lines().count(), "missing `end`"));
        }
        let rng = rng.ok_or_else(|| Error::parse(SRC, 1, "missing rng record"))?;
        Ok(Self { meta, rng, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::error::write_file(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::error::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::parse(path.display().to_string(), line, message),
            other => other,
        })
    }
}
