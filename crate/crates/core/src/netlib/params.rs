//! Flat parameter snapshots and their text checkpoint format.
//!
//! A parameter block is written as
//!
//! ```text
//! params <name>
//! widths 13 64 64 6
//! output tanh
//! count 5382
//! <one value per line, shortest round-trip decimal>
//! end
//! ```
//!
//! Values use Rust's `{:?}` float formatting, which parses back bit-exactly.

use std::io::{BufRead, Write};

use super::{NetError, OutputActivation};
use crate::rng::Fnv64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub widths: Vec<usize>,
    pub output: OutputActivation,
}

impl Manifest {
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

impl std::fmt::Display for Manifest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let w: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        write!(f, "[{}] {}", w.join("-"), self.output.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub manifest: Manifest,
    pub values: Vec<f64>,
}

impl ModelParameters {
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv64::new();
        for w in &self.manifest.widths {
            h.write_u64(*w as u64);
        }
        for v in &self.values {
            h.write_u64(v.to_bits());
        }
        h.finish()
    }
}

fn check_manifests(a: &ModelParameters, b: &ModelParameters) -> Result<(), NetError> {
    if a.manifest != b.manifest || a.values.len() != b.values.len() {
        return Err(NetError::Manifest(a.manifest.to_string(), b.manifest.to_string()));
    }
    Ok(())
}

/// Copies `online` into `target` bit-exactly.
pub fn hard_update(target: &mut ModelParameters, online: &ModelParameters) -> Result<(), NetError> {
    check_manifests(target, online)?;
    target.values.copy_from_slice(&online.values);
    Ok(())
}

/// `target <- tau * online + (1 - tau) * target`. With `tau == 1` this is a
/// hard copy.
pub fn soft_update(target: &mut ModelParameters, online: &ModelParameters, tau: f64) -> Result<(), NetError> {
    check_manifests(target, online)?;
    if tau == 1.0 {
        return hard_update(target, online);
    }
    for (t, o) in target.values.iter_mut().zip(&online.values) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}

pub fn write_params<W: Write>(w: &mut W, name: &str, p: &ModelParameters) -> Result<(), NetError> {
    let widths: Vec<String> = p.manifest.widths.iter().map(|x| x.to_string()).collect();
    writeln!(w, "params {name}")?;
    writeln!(w, "widths {}", widths.join(" "))?;
    writeln!(w, "output {}", p.manifest.output.name())?;
    writeln!(w, "count {}", p.values.len())?;
    for v in &p.values {
        writeln!(w, "{v:?}")?;
    }
    writeln!(w, "end")?;
    Ok(())
}

/// Reads the next parameter block, returning its name.
pub fn read_params<R: BufRead>(r: &mut R) -> Result<(String, ModelParameters), NetError> {
    let mut line = String::new();
    let mut next = |what: &str| -> Result<String, NetError> {
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(NetError::Parse(format!("unexpected end of input, wanted {what}")));
            }
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('#') {
                return Ok(t.to_string());
            }
        }
    };
    let field = |l: String, key: &str| -> Result<String, NetError> {
        l.strip_prefix(key)
            .map(|s| s.trim().to_string())
            .ok_or_else(|| NetError::Parse(format!("expected '{key}', got '{l}'")))
    };
    let name = field(next("header")?, "params")?;
    let widths = field(next("widths")?, "widths")?
        .split_whitespace()
        .map(|s| s.parse::<usize>().map_err(|e| NetError::Parse(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if widths.len() < 2 {
        return Err(NetError::Parse("need at least two widths".into()));
    }
    let output = match field(next("output")?, "output")?.as_str() {
        "tanh" => OutputActivation::Tanh,
        "identity" => OutputActivation::Identity,
        other => return Err(NetError::Parse(format!("unknown activation '{other}'"))),
    };
    let count: usize = field(next("count")?, "count")?
        .parse()
        .map_err(|e: std::num::ParseIntError| NetError::Parse(e.to_string()))?;
    let manifest = Manifest { widths, output };
    if count != manifest.param_count() {
        return Err(NetError::Shape {
            expected: manifest.param_count(),
            got: count,
        });
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let v = next("value")?;
        values.push(v.parse::<f64>().map_err(|e| NetError::Parse(format!("{v}: {e}")))?);
    }
    let end = next("end")?;
    if end != "end" {
        return Err(NetError::Parse(format!("expected 'end', got '{end}'")));
    }
    Ok((name, ModelParameters { manifest, values }))
}
