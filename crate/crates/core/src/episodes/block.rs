//! Block files: the binary `PCB1` format and a whitespace text format.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! "PCB1" | version u32 = 1 | point count u32 | has_labels u8 |
//!   repeated: x y z r g b f32 | label i32 (only when has_labels = 1)
//! ```
//!
//! Text files (`.txt`, `.xyz`, `.pts`) hold one point per line as
//! `x y z r g b [label]`; blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::PointCloud;

pub const BLOCK_MAGIC: &[u8; 4] = b"PCB1";
pub const BLOCK_VERSION: u32 = 1;
const HEADER_LEN: usize = 13;

fn is_text_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("txt" | "xyz" | "pts")
    )
}

/// Serializes `cloud` to the binary format. Values are stored as `f32`.
pub fn block_to_bytes(cloud: &PointCloud) -> Vec<u8> {
    let labels = cloud.labels();
    let stride = if labels.is_some() { 28 } else { 24 };
    let mut out = Vec::with_capacity(HEADER_LEN + stride * cloud.len());
    out.extend_from_slice(BLOCK_MAGIC);
    out.extend_from_slice(&BLOCK_VERSION.to_le_bytes());
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    out.push(labels.is_some() as u8);
    for i in 0..cloud.len() {
        for v in cloud.coords()[i].iter().chain(&cloud.colors()[i]) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        if let Some(l) = labels {
            out.extend_from_slice(&l[i].to_le_bytes());
        }
    }
    out
}

/// Parses the binary format; `path` only labels error messages.
pub fn block_from_bytes(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let fail = |offset: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != BLOCK_MAGIC {
        return Err(fail(0, "bad magic, expected PCB1".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != BLOCK_VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let has_labels = match bytes[12] {
        0 => false,
        1 => true,
        other => return Err(fail(12, format!("has_labels must be 0 or 1, found {other}"))),
    };
    let stride = if has_labels { 28 } else { 24 };
    let expected = HEADER_LEN + stride * count;
    if bytes.len() < expected {
        let point = (bytes.len() - HEADER_LEN) / stride;
        return Err(fail(
            HEADER_LEN + point * stride,
            format!("truncated payload: point {point} of {count} is incomplete"),
        ));
    }
    if bytes.len() > expected {
        return Err(fail(expected, format!("{} trailing bytes", bytes.len() - expected)));
    }
    let mut coords = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    let mut labels = has_labels.then(|| Vec::with_capacity(count));
    let f = |at: usize| f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64;
    for i in 0..count {
        let at = HEADER_LEN + i * stride;
        let p = [f(at), f(at + 4), f(at + 8)];
        let c = [f(at + 12), f(at + 16), f(at + 20)];
        if p.iter().any(|v| !v.is_finite()) {
            return Err(fail(at, format!("point {i} has a non-finite coordinate")));
        }
        if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(fail(at + 12, format!("point {i} has a color outside [0, 1]")));
        }
        coords.push(p);
        colors.push(c);
        if let Some(l) = &mut labels {
            l.push(i32::from_le_bytes(bytes[at + 24..at + 28].try_into().unwrap()));
        }
    }
    PointCloud::new(coords, colors, labels)
}

/// Renders `cloud` in the text format with shortest round-trip `f32` values.
pub fn block_to_text(cloud: &PointCloud) -> String {
    let mut out = String::new();
    for i in 0..cloud.len() {
        let p = cloud.coords()[i];
        let c = cloud.colors()[i];
        let vals: Vec<String> = p.iter().chain(&c).map(|v| format!("{}", *v as f32)).collect();
        out.push_str(&vals.join(" "));
        if let Some(l) = cloud.labels() {
            let _ = write!(out, " {}", l[i]);
        }
        out.push('\n');
    }
    out
}

/// Parses the text format. Values go through `f32`, like the binary format.
pub fn block_from_text(text: &str, path: &Path) -> Result<PointCloud> {
    let mut coords = Vec::new();
    let mut colors = Vec::new();
    let mut labels: Vec<i32> = Vec::new();
    let mut columns = None;
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let fail = |message: String| Error::Parse {
            path: path.to_path_buf(),
            offset: start as u64,
            message,
        };
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 6 && fields.len() != 7 {
            return Err(fail(format!("expected 6 or 7 columns, found {}", fields.len())));
        }
        match columns {
            None => columns = Some(fields.len()),
            Some(n) if n != fields.len() => {
                return Err(fail(format!("expected {n} columns like the first point, found {}", fields.len())))
            }
            _ => {}
        }
        let mut v = [0.0f64; 6];
        for (slot, s) in v.iter_mut().zip(&fields) {
            let x: f32 = s.parse().map_err(|_| fail(format!("not a number: {s:?}")))?;
            if !x.is_finite() {
                return Err(fail(format!("non-finite value {s:?}")));
            }
            *slot = x as f64;
        }
        if v[3..].iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(fail("color outside [0, 1]".into()));
        }
        coords.push([v[0], v[1], v[2]]);
        colors.push([v[3], v[4], v[5]]);
        if let Some(s) = fields.get(6) {
            labels.push(s.parse().map_err(|_| fail(format!("not an integer label: {s:?}")))?);
        }
    }
    if coords.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            message: "no points".into(),
        });
    }
    let labels = (columns == Some(7)).then_some(labels);
    PointCloud::new(coords, colors, labels)
}

/// Reads a block, choosing the text format by extension.
pub fn read_block(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_text_path(path) {
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            offset: e.valid_up_to() as u64,
            message: "invalid utf-8".into(),
        })?;
        block_from_text(text, path)
    } else {
        block_from_bytes(&bytes, path)
    }
}

/// Writes a block, choosing the text format by extension.
pub fn write_block(path: &Path, cloud: &PointCloud) -> Result<()> {
    let bytes = if is_text_path(path) {
        block_to_text(cloud).into_bytes()
    } else {
        block_to_bytes(cloud)
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> PointCloud {
        PointCloud::new(
            vec![[0.1, -2.5, 3.0], [1e-3, 0.0, 7.25]],
            vec![[0.0, 0.5, 1.0], [0.3, 0.2, 0.1]],
            Some(vec![2, -1]),
        )
        .unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let bytes = block_to_bytes(&cloud());
        assert_eq!(bytes.len(), 13 + 2 * 28);
        let back = block_from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(block_to_bytes(&back), bytes);
        assert_eq!(back.labels(), Some(&[2, -1][..]));
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = block_to_bytes(&cloud());
        match block_from_bytes(&bytes[..bytes.len() - 1], Path::new("b.pcb")) {
            Err(Error::Parse { offset, message, .. }) => {
                assert_eq!(offset, 13 + 28);
                assert!(message.contains("truncated"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_color() {
        let mut bytes = block_to_bytes(&cloud());
        bytes[1] = b'X';
        assert!(matches!(block_from_bytes(&bytes, Path::new("x")), Err(Error::Parse { offset: 0, .. })));
        let mut bytes = block_to_bytes(&cloud());
        bytes[13 + 12..13 + 16].copy_from_slice(&1.5f32.to_le_bytes());
        assert!(matches!(block_from_bytes(&bytes, Path::new("x")), Err(Error::Parse { offset: 25, .. })));
    }

    #[test]
    fn text_single_point() {
        let c = block_from_text("0 0 0 1 1 1 2\n", Path::new("a.txt")).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.labels(), Some(&[2][..]));
        let c = block_from_text("# header\n\n0 0 0 1 1 1\n", Path::new("a.txt")).unwrap();
        assert_eq!(c.labels(), None);
    }

    #[test]
    fn text_errors_point_at_line() {
        let err = block_from_text("0 0 0 1 1 1 2\n0 0 0 1 1\n", Path::new("a.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 14, .. }), "{err}");
    }

    #[test]
    fn text_and_binary_agree() {
        let c = cloud();
        let from_text = block_from_text(&block_to_text(&c), Path::new("a.txt")).unwrap();
        let from_bin = block_from_bytes(&block_to_bytes(&c), Path::new("a.pcb")).unwrap();
        assert_eq!(from_text, from_bin);
    }
}
