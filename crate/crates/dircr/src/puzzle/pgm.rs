//! Minimal binary PGM (P5) reader/writer for panel dumps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{DircrError, Result};

/// Writes one grayscale image as binary PGM.
pub fn write_pgm(path: &Path, width: u32, height: u32, data: &[u8]) -> Result<()> {
    if data.len() != (width * height) as usize {
        return Err(DircrError::Format(format!(
            "pgm data length {} does not match {width}x{height}",
            data.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(data)?;
    w.flush()?;
    Ok(())
}

/// Reads a binary PGM with maxval 255. Accepts comments and any whitespace
/// between header tokens, per the format's grammar.
pub fn read_pgm(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let err = |msg: &str| DircrError::Format(format!("{}: {msg}", path.display()));

    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(err("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and '#' comments that run to end of line.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(DircrError::TruncatedFile(path.display().to_string())),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(err("expected a decimal header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text.parse().map_err(|_| err("header field overflow"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(err("only maxval 255 is supported"));
    }
    // Exactly one whitespace byte separates the header from raster data.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(err("missing raster separator")),
    }
    let expected = (width * height) as usize;
    let data = &bytes[pos..];
    if data.len() < expected {
        return Err(DircrError::TruncatedFile(path.display().to_string()));
    }
    if data.len() > expected {
        return Err(err("trailing bytes after raster"));
    }
    Ok((width as u32, height as u32, data.to_vec()))
}
