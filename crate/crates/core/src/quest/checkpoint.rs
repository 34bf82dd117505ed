//! Versioned binary parameter checkpoints.
//!
//! ```text
//! "TFQT" | version u32 | record count u32 |
//!   repeated: name length u32 | name utf-8 | rank u32 | dims u64 x rank | f64 x prod(dims)
//! ```
//!
//! All integers and floats are little-endian. Optimizer moments are stored as
//! `adam.m.<name>` / `adam.v.<name>`, the step counter as `adam.step` (rank 0).

use std::collections::HashMap;
use std::path::Path;

use super::{AdamState, QuestParameters, QuestWeights};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TFQT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_records(magic: &[u8; 4], records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str, record: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint {
                record: record.to_string(),
                message: format!("truncated while reading {what} at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str, record: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what, record)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str, record: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what, record)?.try_into().unwrap()))
    }
}

pub fn read_records(magic: &[u8; 4], bytes: &[u8]) -> Result<Vec<Record>> {
    let mut r = Reader { bytes, pos: 0 };
    let header = "<header>";
    if r.take(4, "magic", header)? != magic {
        return Err(Error::Checkpoint {
            record: header.into(),
            message: format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
        });
    }
    let version = r.u32("version", header)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint {
            record: header.into(),
            message: format!("unsupported version {version}"),
        });
    }
    let count = r.u32("record count", header)? as usize;
    let mut records = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let placeholder = format!("#{i}");
        let name_len = r.u32("name length", &placeholder)? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name", &placeholder)?)
            .map_err(|_| Error::Checkpoint {
                record: placeholder.clone(),
                message: "name is not utf-8".into(),
            })?
            .to_string();
        let rank = r.u32("rank", &name)? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint {
                record: name,
                message: format!("implausible rank {rank}"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dimension", &name)? as usize);
        }
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| {
            Error::Checkpoint {
                record: name.clone(),
                message: "shape overflows".into(),
            }
        })?;
        let raw = r.take(len.saturating_mul(8), "payload", &name)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint {
                record: name,
                message: "non-finite value".into(),
            });
        }
        records.push(Record { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint {
            record: "<trailer>".into(),
            message: format!("{} unexpected trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(records)
}

fn weight_records(prefix: &str, w: &QuestWeights) -> Vec<Record> {
    w.tensors()
        .into_iter()
        .map(|(name, shape, data)| Record {
            name: format!("{prefix}{name}"),
            shape,
            data: data.to_vec(),
        })
        .collect()
}

pub fn checkpoint_bytes(params: &QuestParameters) -> Vec<u8> {
    let mut records = weight_records("", &params.weights);
    records.extend(weight_records("adam.m.", &params.adam.first_moment));
    records.extend(weight_records("adam.v.", &params.adam.second_moment));
    records.push(Record {
        name: "adam.step".into(),
        shape: vec![],
        data: vec![params.adam.step as f64],
    });
    write_records(CHECKPOINT_MAGIC, &records)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<QuestParameters> {
    let records = read_records(CHECKPOINT_MAGIC, bytes)?;
    let mut by_name: HashMap<String, Record> = HashMap::new();
    for r in records {
        if by_name.contains_key(&r.name) {
            return Err(Error::Checkpoint {
                record: r.name,
                message: "duplicate record".into(),
            });
        }
        by_name.insert(r.name.clone(), r);
    }
    let load = |prefix: &str| {
        QuestWeights::from_tensors(|name| {
            by_name
                .get(&format!("{prefix}{name}"))
                .map(|r| (r.shape.clone(), r.data.clone()))
        })
        .map_err(|e| match e {
            Error::Checkpoint { record, message } => Error::Checkpoint {
                record: format!("{prefix}{record}"),
                message,
            },
            other => other,
        })
    };
    let weights = load("")?;
    let first_moment = load("adam.m.")?;
    let second_moment = load("adam.v.")?;
    for (prefix, m) in [("adam.m.", &first_moment), ("adam.v.", &second_moment)] {
        if m.tensors().iter().map(|t| t.1.clone()).ne(weights.tensors().iter().map(|t| t.1.clone())) {
            return Err(Error::Checkpoint {
                record: format!("{prefix}*"),
                message: "optimizer moments do not match parameter shapes".into(),
            });
        }
    }
    let step = by_name.get("adam.step").ok_or_else(|| Error::Checkpoint {
        record: "adam.step".into(),
        message: "missing".into(),
    })?;
    if !step.shape.is_empty() || step.data[0] < 0.0 || step.data[0].fract() != 0.0 {
        return Err(Error::Checkpoint {
            record: "adam.step".into(),
            message: "expected a nonnegative integer scalar".into(),
        });
    }
    let step = step.data[0] as u64;
    Ok(QuestParameters {
        weights,
        adam: AdamState {
            first_moment,
            second_moment,
            step,
        },
    })
}

pub fn write_checkpoint(path: &Path, params: &QuestParameters) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<QuestParameters> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}
