//! Plain-text checkpoints.
//!
//! ```text
//! framenet-checkpoint v1
//! key value          (descriptor lines, any order)
//! ...
//! params N
//! θ_0                (N lines, binary64 in scientific notation)
//! ...
//! ```
//!
//! Required keys are `arch`, `seed`; everything else is carried through as
//! free-form metadata.

use super::ArchKind;
use crate::error::{Error, Result};
use std::io::{BufRead, Write};
use std::path::Path;

pub const CHECKPOINT_TAG: &str = "framenet-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchKind,
    pub seed: u64,
    /// Additional descriptor entries such as level, formulation or precision.
    pub metadata: Vec<(String, String)>,
    pub params: Vec<f64>,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{CHECKPOINT_TAG}")?;
    writeln!(out, "arch {}", ckpt.arch)?;
    writeln!(out, "seed {}", ckpt.seed)?;
    for (k, v) in &ckpt.metadata {
        if k.contains(char::is_whitespace) || k == "params" {
            return Err(Error::Checkpoint(format!("invalid metadata key '{k}'")));
        }
        writeln!(out, "{k} {v}")?;
    }
    writeln!(out, "params {}", ckpt.params.len())?;
    for p in &ckpt.params {
        writeln!(out, "{p:.16e}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();
    let tag = lines.next().transpose()?.unwrap_or_default();
    if tag.trim() != CHECKPOINT_TAG {
        return Err(Error::Checkpoint(format!("unrecognized header '{tag}'")));
    }
    let mut arch = None;
    let mut seed = None;
    let mut metadata = Vec::new();
    let mut count = None;
    for line in lines.by_ref() {
        let line = line?;
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| Error::Checkpoint(format!("malformed descriptor line '{line}'")))?;
        match key {
            "arch" => arch = Some(value.parse().map_err(|e: Error| Error::Checkpoint(e.to_string()))?),
            "seed" => seed = Some(value.parse().map_err(|_| Error::Checkpoint(format!("bad seed '{value}'")))?),
            "params" => {
                count = Some(value.parse::<usize>().map_err(|_| Error::Checkpoint(format!("bad count '{value}'")))?);
                break;
            }
            _ => metadata.push((key.to_string(), value.to_string())),
        }
    }
    let count = count.ok_or_else(|| Error::Checkpoint("missing params line".into()))?;
    let mut params = Vec::with_capacity(count);
    for line in lines {
        let line = line?;
        params.push(line.trim().parse::<f64>().map_err(|_| Error::Checkpoint(format!("bad value '{line}'")))?);
    }
    if params.len() != count {
        return Err(Error::Checkpoint(format!("expected {count} parameters, found {}", params.len())));
    }
    Ok(Checkpoint {
        arch: arch.ok_or_else(|| Error::Checkpoint("missing arch".into()))?,
        seed: seed.ok_or_else(|| Error::Checkpoint("missing seed".into()))?,
        metadata,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let ckpt = Checkpoint {
            arch: ArchKind::SeparateFrame,
            seed: 7,
            metadata: vec![("levels".into(), "6".into()), ("precision".into(), "f16".into())],
            params: vec![0.1, -1.0 / 3.0, 1e-300, f64::MAX, 0.0],
        };
        write_checkpoint(&path, &ckpt).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), ckpt);
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, "something else\n").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
        std::fs::write(&path, format!("{CHECKPOINT_TAG}\narch full\nseed 1\nparams 2\n1.0\n")).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
