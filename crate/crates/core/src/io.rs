//! On-disk formats: binary snapshots with JSON sidecars, 17-digit JSON and
//! CSV number formatting, content checksums.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::FieldData;
use crate::grid::GridSpec;

/// Formats a float with 17 significant digits (round-trip exact).
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

struct DigitsFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for DigitsFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with every float written to 17 significant digits
/// (non-finite floats become `null`).
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, DigitsFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format: String,
    pub dim: usize,
    pub n: usize,
    pub length: f64,
    pub role: String,
    pub time: f64,
    pub components: usize,
    pub layout: String,
}

pub const SNAPSHOT_FORMAT: &str = "f64-le";

/// Writes `<stem>.bin` (little-endian f64, component-major) and
/// `<stem>.json`. Returns both paths.
pub fn write_snapshot(dir: &Path, stem: &str, role: &str, time: f64, field: &FieldData) -> Result<[PathBuf; 2]> {
    fs::create_dir_all(dir)?;
    let g = field.grid();
    let header = SnapshotHeader {
        format: SNAPSHOT_FORMAT.to_string(),
        dim: g.dim,
        n: g.n,
        length: g.length,
        role: role.to_string(),
        time,
        components: field.components(),
        layout: "component-major; axis 0 slowest".to_string(),
    };
    let bin = dir.join(format!("{stem}.bin"));
    let json = dir.join(format!("{stem}.json"));
    let mut bytes = Vec::with_capacity(field.values().len() * 8);
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin, bytes)?;
    fs::write(&json, to_json(&header)?)?;
    Ok([bin, json])
}

/// Reads a snapshot written by [`write_snapshot`]; returns the header and
/// the raw component-major samples.
pub fn read_snapshot(dir: &Path, stem: &str) -> Result<(SnapshotHeader, Vec<f64>)> {
    let header: SnapshotHeader = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    if header.format != SNAPSHOT_FORMAT {
        return Err(Error::Snapshot(format!("unsupported format `{}`", header.format)));
    }
    let bytes = fs::read(dir.join(format!("{stem}.bin")))?;
    let grid = GridSpec {
        dim: header.dim,
        n: header.n,
        length: header.length,
        dealias: 1.0,
    };
    let expected = header.components * grid.npoints() * 8;
    if bytes.len() != expected {
        return Err(Error::Snapshot(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, values))
}
