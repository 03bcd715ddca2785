//! Raster and mask files.
//!
//! A record is a single ASCII header line
//!
//! ```text
//! W H CELL_KM OX OY FLIP TIMESTAMP\n
//! ```
//!
//! followed by `W*H` little-endian IEEE-754 `f32` values in row-major order.
//! `FLIP` is `0` or `1`, `TIMESTAMP` is RFC 3339 UTC or `-` when the raster is
//! not tied to a time. A series file is a plain concatenation of records.
//! Mask files use the same header with one `0`/`1` byte per cell as body.

use std::fs;
use std::path::Path;

use chrono::SecondsFormat;

use crate::error::{Error, Result};

use super::{FieldSeries, Mask, Raster, RasterGeometry, SourceTag, Timestamp};

fn header(g: &RasterGeometry, t: Option<&Timestamp>) -> String {
    let ts = t.map_or_else(|| "-".to_string(), |t| t.to_rfc3339_opts(SecondsFormat::Secs, true));
    format!(
        "{} {} {} {} {} {} {}\n",
        g.width_px,
        g.height_px,
        g.cell_size_km,
        g.origin_x_km,
        g.origin_y_km,
        u8::from(g.y_axis_flipped),
        ts
    )
}

fn parse_header(line: &str) -> std::result::Result<(RasterGeometry, Option<Timestamp>), String> {
    let parts: Vec<&str> = line.split_ascii_whitespace().collect();
    if parts.len() != 7 {
        return Err(format!("expected 7 header fields, found {}", parts.len()));
    }
    let num = |i: usize| parts[i].parse::<f64>().map_err(|e| format!("field {}: {e}", i + 1));
    let int = |i: usize| parts[i].parse::<usize>().map_err(|e| format!("field {}: {e}", i + 1));
    let flip = match parts[5] {
        "0" => false,
        "1" => true,
        other => return Err(format!("FLIP must be 0 or 1, got {other}")),
    };
    let geometry = RasterGeometry {
        width_px: int(0)?,
        height_px: int(1)?,
        cell_size_km: num(2)?,
        origin_x_km: num(3)?,
        origin_y_km: num(4)?,
        y_axis_flipped: flip,
    };
    geometry.validate().map_err(|e| e.to_string())?;
    let t = match parts[6] {
        "-" => None,
        s => Some(s.parse::<Timestamp>().map_err(|e| format!("timestamp: {e}"))?),
    };
    Ok((geometry, t))
}

pub fn encode_raster(out: &mut Vec<u8>, raster: &Raster, t: Option<&Timestamp>) {
    out.extend_from_slice(header(raster.geometry(), t).as_bytes());
    out.reserve(raster.values().len() * 4);
    for v in raster.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decode every raster record in `bytes`.
pub fn decode_rasters(bytes: &[u8]) -> std::result::Result<Vec<(Option<Timestamp>, Raster)>, String> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or("header line is not terminated")?;
        let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| "header is not ASCII")?;
        let (geometry, t) = parse_header(line)?;
        pos += nl + 1;
        let n = geometry.len() * 4;
        if bytes.len() < pos + n {
            return Err(format!("truncated body: need {n} bytes, have {}", bytes.len() - pos));
        }
        let values = bytes[pos..pos + n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        pos += n;
        out.push((t, Raster::new(geometry, values).map_err(|e| e.to_string())?));
    }
    Ok(out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_raster(path: impl AsRef<Path>, raster: &Raster, t: Option<&Timestamp>) -> Result<()> {
    let mut buf = Vec::new();
    encode_raster(&mut buf, raster, t);
    write_bytes(path.as_ref(), &buf)
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<(Raster, Option<Timestamp>)> {
    let path = path.as_ref();
    let mut records = decode_rasters(&read_bytes(path)?)
        .map_err(|message| Error::Parse { path: path.into(), message })?;
    if records.len() != 1 {
        return Err(Error::Parse { path: path.into(), message: format!("expected 1 record, found {}", records.len()) });
    }
    let (t, r) = records.pop().unwrap();
    Ok((r, t))
}

pub fn write_series(path: impl AsRef<Path>, series: &FieldSeries) -> Result<()> {
    let mut buf = Vec::new();
    for (t, r) in series.entries() {
        encode_raster(&mut buf, r, Some(t));
    }
    write_bytes(path.as_ref(), &buf)
}

pub fn read_series(path: impl AsRef<Path>, lead_hours: i64, source: SourceTag) -> Result<FieldSeries> {
    let path = path.as_ref();
    let parse_err = |message: String| Error::Parse { path: path.into(), message };
    let records = decode_rasters(&read_bytes(path)?).map_err(parse_err)?;
    let entries = records
        .into_iter()
        .map(|(t, r)| t.map(|t| (t, r)).ok_or_else(|| parse_err("series record without timestamp".into())))
        .collect::<Result<Vec<_>>>()?;
    FieldSeries::new(lead_hours, source, entries)
}

pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let mut out = header(mask.geometry(), None).into_bytes();
    out.extend(mask.flags().iter().map(|&v| u8::from(v)));
    out
}

pub fn decode_mask(bytes: &[u8]) -> std::result::Result<Mask, String> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or("header line is not terminated")?;
    let line = std::str::from_utf8(&bytes[..nl]).map_err(|_| "header is not ASCII")?;
    let (geometry, _) = parse_header(line)?;
    let body = &bytes[nl + 1..];
    if body.len() != geometry.len() {
        return Err(format!("mask body has {} bytes, expected {}", body.len(), geometry.len()));
    }
    let valid = body
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(format!("mask byte must be 0 or 1, got {other}")),
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Mask::new(geometry, valid).map_err(|e| e.to_string())
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    write_bytes(path.as_ref(), &encode_mask(mask))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    decode_mask(&read_bytes(path)?).map_err(|message| Error::Parse { path: path.into(), message })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_stable() {
        let g = RasterGeometry { width_px: 3, height_px: 2, cell_size_km: 2.5, origin_x_km: -10.0, origin_y_km: 7.25, y_axis_flipped: true };
        let t = "2016-03-01T12:00:00Z".parse::<Timestamp>().unwrap();
        let r = Raster::new(g, vec![0.0, 1.0, 2.0, 3.0, 4.0, 0.5]).unwrap();
        let mut buf = Vec::new();
        encode_raster(&mut buf, &r, Some(&t));
        let head = b"3 2 2.5 -10 7.25 1 2016-03-01T12:00:00Z\n";
        assert_eq!(&buf[..head.len()], head);
        assert_eq!(buf.len(), head.len() + 24);
        assert_eq!(&buf[head.len() + 4..head.len() + 8], &1.0f32.to_le_bytes());
    }

    #[test]
    fn mask_roundtrip_and_bad_bytes() {
        let g = RasterGeometry::new(2, 2, 1.0, 0.0, 0.0).unwrap();
        let m = Mask::new(g, vec![true, false, true, true]).unwrap();
        let bytes = encode_mask(&m);
        assert_eq!(&bytes[bytes.len() - 4..], &[1, 0, 1, 1]);
        assert_eq!(decode_mask(&bytes).unwrap(), m);
        let mut bad = bytes.clone();
        *bad.last_mut().unwrap() = 7;
        assert!(decode_mask(&bad).is_err());
    }

    #[test]
    fn truncated_body_is_reported() {
        let g = RasterGeometry::new(2, 2, 1.0, 0.0, 0.0).unwrap();
        let mut buf = Vec::new();
        encode_raster(&mut buf, &Raster::zeros(g), None);
        buf.pop();
        assert!(decode_rasters(&buf).unwrap_err().contains("truncated"));
    }

    proptest! {
        #[test]
        fn records_roundtrip_bit_exact(
            vals in proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::ZERO, 6),
            ox in -1e4f64..1e4, cell in 0.001f64..100.0, flip: bool,
        ) {
            let g = RasterGeometry { width_px: 3, height_px: 2, cell_size_km: cell, origin_x_km: ox, origin_y_km: -ox, y_axis_flipped: flip };
            let r = Raster::new(g, vals).unwrap();
            let mut buf = Vec::new();
            encode_raster(&mut buf, &r, None);
            encode_raster(&mut buf, &r, None);
            let back = decode_rasters(&buf).unwrap();
            prop_assert_eq!(back.len(), 2);
            prop_assert_eq!(&back[1].1, &r);
            prop_assert!(back[0].0.is_none());
        }
    }
}
