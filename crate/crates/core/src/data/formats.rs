//! On-disk layouts.
//!
//! * Images: binary PGM (`P5`), 8-bit, value `v` stored as `round(255·v)`.
//! * Manifest: UTF-8, one sample per line, `image_path \t direction \t
//!   transcript`. Relative image paths resolve against the manifest's
//!   directory.
//! * Charset: UTF-8, one codepoint per line; line `i` (1-based) is label `i`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{Charset, Direction, LineSample};
use crate::error::{Error, Result};
use crate::numerics::RealMatrix;

fn located(path: &Path, line: usize) -> String {
    format!("{}:{line}", path.display())
}

pub fn encode_pgm(image: &RealMatrix) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.cols(), image.rows()).into_bytes();
    out.extend(
        image
            .as_slice()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn decode_pgm(bytes: &[u8], location: &str) -> Result<RealMatrix> {
    let bad = |m: &str| Error::data(location, m);
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("PGM header is not ASCII"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (expected magic P5)"));
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| bad(&format!("invalid PGM {what} {s:?}")))
    };
    let width = parse(fields[1], "width")?;
    let height = parse(fields[2], "height")?;
    let maxval = parse(fields[3], "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM (maxval 1..=255) is supported"));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero-area image"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height;
    let raster = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated PGM raster"))?;
    let scale = maxval as f64;
    RealMatrix::new(height, width, raster.iter().map(|&b| b as f64 / scale).collect())
}

pub fn read_image(path: &Path) -> Result<RealMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, &path.display().to_string())
}

pub fn write_image(path: &Path, image: &RealMatrix) -> Result<()> {
    std::fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub image: PathBuf,
    pub direction: Direction,
    pub transcript: String,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let at = located(path, i + 1);
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::data(
                at,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() {
            return Err(Error::data(at, "empty image path"));
        }
        let direction = fields[1]
            .parse::<Direction>()
            .map_err(|e| Error::data(at.clone(), e.to_string()))?;
        rows.push(ManifestRow {
            image: PathBuf::from(fields[0]),
            direction,
            transcript: fields[2].to_string(),
        });
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut text = String::new();
    for (i, row) in rows.iter().enumerate() {
        let image = row
            .image
            .to_str()
            .ok_or_else(|| Error::data(format!("row {}", i + 1), "image path is not UTF-8"))?;
        if [image, row.transcript.as_str()]
            .iter()
            .any(|s| s.contains(['\t', '\n', '\r']))
        {
            return Err(Error::data(
                format!("row {}", i + 1),
                "image paths and transcripts may not contain tabs or line breaks",
            ));
        }
        writeln!(text, "{image}\t{}\t{}", row.direction.as_str(), row.transcript).expect("write to String");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses the manifest, checks every transcript against `charset`, and reads
/// each image.
pub fn load_manifest(path: &Path, charset: &Charset) -> Result<Vec<LineSample>> {
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    read_manifest(path)?
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let at = located(path, i + 1);
            if let Some(c) = row.transcript.chars().find(|&c| charset.id_of(c).is_none()) {
                return Err(Error::data(at, format!("character {c:?} is not in the charset")));
            }
            let image_path = base.join(&row.image);
            let bytes = std::fs::read(&image_path)
                .map_err(|e| Error::data(at.clone(), format!("cannot read image {}: {e}", image_path.display())))?;
            let image = decode_pgm(&bytes, &format!("{at} ({})", image_path.display()))?;
            LineSample::new(image, row.transcript, row.direction)
        })
        .collect()
}

pub fn load_charset(path: &Path) -> Result<Charset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut symbols = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for (i, line) in text.split('\n').enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        let mut chars = line.chars();
        let (Some(c), None) = (chars.next(), chars.next()) else {
            if line.is_empty() && i + 1 == text.split('\n').count() {
                break;
            }
            return Err(Error::data(
                located(path, i + 1),
                format!("expected exactly one codepoint, found {:?}", line),
            ));
        };
        if let Some(first) = seen.insert(c, i + 1) {
            return Err(Error::data(
                located(path, i + 1),
                format!("duplicate codepoint {c:?} (first on line {first})"),
            ));
        }
        symbols.push(c);
    }
    Charset::new(symbols)
}

pub fn write_charset(path: &Path, charset: &Charset) -> Result<()> {
    if charset.symbols().iter().any(|&c| c == '\n' || c == '\r') {
        return Err(Error::data(
            path.display().to_string(),
            "charset may not contain line breaks",
        ));
    }
    let text: String = charset.symbols().iter().map(|c| format!("{c}\n")).collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_with_comment() {
        let img = RealMatrix::from_fn(3, 4, |r, c| ((r * 4 + c) * 20) as f64 / 255.0);
        let bytes = encode_pgm(&img);
        assert_eq!(decode_pgm(&bytes, "mem").unwrap(), img);
        let mut commented = b"P5\n# made by hand\n4 3\n255\n".to_vec();
        commented.extend_from_slice(&bytes[bytes.len() - 12..]);
        assert_eq!(decode_pgm(&commented, "mem").unwrap(), img);
    }

    #[test]
    fn pgm_rejects_truncation_and_wrong_magic() {
        let bytes = encode_pgm(&RealMatrix::zeros(2, 2));
        assert!(decode_pgm(&bytes[..bytes.len() - 1], "mem").is_err());
        assert!(decode_pgm(b"P2\n1 1\n255\n0", "mem").is_err());
    }
}
