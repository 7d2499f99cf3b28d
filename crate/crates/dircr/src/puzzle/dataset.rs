//! On-disk dataset container: a UTF-8 JSON manifest next to a little-endian
//! binary blob of records.
//!
//! `{stem}.json` holds the [`DatasetManifest`]; `{stem}.bin` holds one record
//! per puzzle: 16 raw panels of `image_size^2` bytes (context Q1..Q8, then
//! candidates A1..A8), 1 answer byte, a u16-LE metadata length, and the
//! metadata JSON (rules, seed, per-panel attributes). Writing is fully
//! deterministic, so equal inputs produce hash-equal files.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DircrError, Result};

use super::{PanelAttributes, Puzzle, RuleSpec};

pub const FORMAT_VERSION: &str = "dircr-pzl-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        f.write_str(s)
    }
}

impl FromStr for Split {
    type Err = DircrError;

    fn from_str(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(DircrError::Config(format!(
                "unknown split {other:?} (expected train, val, or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub count: u64,
    pub image_size: u32,
    pub rule_histogram: BTreeMap<String, u64>,
    pub split: Split,
    pub seed: u64,
}

/// Per-record metadata serialized as JSON inside the blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordMeta {
    rules: Vec<RuleSpec>,
    seed: u64,
    context_attrs: [PanelAttributes; 8],
    candidate_attrs: [PanelAttributes; 8],
}

fn manifest_path(base: &Path) -> std::path::PathBuf {
    base.with_extension("json")
}

fn blob_path(base: &Path) -> std::path::PathBuf {
    base.with_extension("bin")
}

/// Writes `{base}.json` and `{base}.bin`. `seed` is the dataset-level seed
/// recorded for provenance (puzzles carry their own derived sub-seeds).
pub fn write_dataset(
    puzzles: &[Puzzle],
    split: Split,
    seed: u64,
    base: &Path,
) -> Result<DatasetManifest> {
    if puzzles.is_empty() {
        return Err(DircrError::EmptyDataset);
    }
    let image_size = puzzles[0].image_size;
    if puzzles.iter().any(|p| p.image_size != image_size) {
        return Err(DircrError::Format(
            "all puzzles in a dataset must share one image size".to_string(),
        ));
    }

    let mut rule_histogram: BTreeMap<String, u64> = BTreeMap::new();
    for p in puzzles {
        for r in &p.rules {
            *rule_histogram.entry(r.kind.name().to_string()).or_insert(0) += 1;
        }
    }
    let manifest = DatasetManifest {
        version: FORMAT_VERSION.to_string(),
        count: puzzles.len() as u64,
        image_size,
        rule_histogram,
        split,
        seed,
    };

    let mut blob = BufWriter::new(File::create(blob_path(base))?);
    for p in puzzles {
        for img in p.context.iter().chain(p.candidates.iter()) {
            blob.write_all(img)?;
        }
        blob.write_all(&[p.answer_index])?;
        let meta = RecordMeta {
            rules: p.rules.clone(),
            seed: p.seed,
            context_attrs: p.context_attrs,
            candidate_attrs: p.candidate_attrs,
        };
        let meta_bytes = serde_json::to_vec(&meta)?;
        if meta_bytes.len() > u16::MAX as usize {
            return Err(DircrError::Format(format!(
                "rule metadata of {} bytes exceeds the u16 length field",
                meta_bytes.len()
            )));
        }
        blob.write_all(&(meta_bytes.len() as u16).to_le_bytes())?;
        blob.write_all(&meta_bytes)?;
    }
    blob.flush()?;

    let mut mf = BufWriter::new(File::create(manifest_path(base))?);
    serde_json::to_writer_pretty(&mut mf, &manifest)?;
    mf.write_all(b"\n")?;
    mf.flush()?;
    Ok(manifest)
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DircrError::TruncatedFile(what.to_string())
        } else {
            DircrError::Io(e)
        }
    })
}

/// Loads a dataset written by [`write_dataset`]; the inverse bit-for-bit.
pub fn load_dataset(base: &Path) -> Result<(DatasetManifest, Vec<Puzzle>)> {
    let mf_path = manifest_path(base);
    let manifest: DatasetManifest = serde_json::from_reader(BufReader::new(
        File::open(&mf_path).map_err(DircrError::Io)?,
    ))
    .map_err(|e| DircrError::Format(format!("bad manifest {}: {e}", mf_path.display())))?;
    if manifest.version != FORMAT_VERSION {
        return Err(DircrError::VersionMismatch {
            found: manifest.version.clone(),
            expected: FORMAT_VERSION.to_string(),
        });
    }
    if manifest.count == 0 {
        return Err(DircrError::EmptyDataset);
    }

    let bpath = blob_path(base);
    let mut blob = BufReader::new(File::open(&bpath)?);
    let panel_len = (manifest.image_size * manifest.image_size) as usize;
    let mut puzzles = Vec::with_capacity(manifest.count as usize);
    for rec in 0..manifest.count {
        let what = format!("{} record {rec}", bpath.display());
        let mut panels = Vec::with_capacity(16);
        for _ in 0..16 {
            let mut img = vec![0u8; panel_len];
            read_exact_or_truncated(&mut blob, &mut img, &what)?;
            panels.push(img);
        }
        let mut answer = [0u8; 1];
        read_exact_or_truncated(&mut blob, &mut answer, &what)?;
        let mut len_bytes = [0u8; 2];
        read_exact_or_truncated(&mut blob, &mut len_bytes, &what)?;
        let meta_len = u16::from_le_bytes(len_bytes) as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        read_exact_or_truncated(&mut blob, &mut meta_bytes, &what)?;
        let meta: RecordMeta = serde_json::from_slice(&meta_bytes)
            .map_err(|e| DircrError::Format(format!("bad metadata in {what}: {e}")))?;
        if answer[0] > 7 {
            return Err(DircrError::Format(format!(
                "answer index {} out of range in {what}",
                answer[0]
            )));
        }
        let candidates = panels.split_off(8);
        puzzles.push(Puzzle {
            image_size: manifest.image_size,
            context: panels,
            candidates,
            answer_index: answer[0],
            rules: meta.rules,
            seed: meta.seed,
            context_attrs: meta.context_attrs,
            candidate_attrs: meta.candidate_attrs,
        });
    }
    let mut trailing = [0u8; 1];
    match blob.read(&mut trailing)? {
        0 => Ok((manifest, puzzles)),
        _ => Err(DircrError::Format(format!(
            "{} has trailing bytes after {} records",
            bpath.display(),
            manifest.count
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puzzle::{generate_dataset, PuzzleConfig};

    fn sample_puzzles(n: usize) -> Vec<Puzzle> {
        let cfg = PuzzleConfig { image_size: 32, ..PuzzleConfig::default() };
        generate_dataset(n, 4242, &cfg).unwrap()
    }

    #[test]
    fn roundtrip_preserves_every_field() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("train");
        let puzzles = sample_puzzles(100);
        let manifest = write_dataset(&puzzles, Split::Train, 4242, &base).unwrap();
        assert_eq!(manifest.count, 100);
        assert_eq!(manifest.version, FORMAT_VERSION);
        let (m2, loaded) = load_dataset(&base).unwrap();
        assert_eq!(manifest, m2);
        assert_eq!(puzzles, loaded);
    }

    #[test]
    fn writes_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let puzzles = sample_puzzles(10);
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        write_dataset(&puzzles, Split::Val, 4242, &a).unwrap();
        write_dataset(&puzzles, Split::Val, 4242, &b).unwrap();
        for ext in ["json", "bin"] {
            let fa = std::fs::read(a.with_extension(ext)).unwrap();
            let fb = std::fs::read(b.with_extension(ext)).unwrap();
            assert_eq!(fa, fb, "{ext} files differ");
        }
    }

    #[test]
    fn truncated_blob_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("t");
        write_dataset(&sample_puzzles(5), Split::Test, 1, &base).unwrap();
        let bpath = base.with_extension("bin");
        let full = std::fs::read(&bpath).unwrap();
        std::fs::write(&bpath, &full[..full.len() - 40]).unwrap();
        assert!(matches!(
            load_dataset(&base),
            Err(DircrError::TruncatedFile(_))
        ));
    }

    #[test]
    fn count_mismatches_are_detected_both_ways() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("c");
        let manifest = write_dataset(&sample_puzzles(5), Split::Test, 1, &base).unwrap();

        let mut over = manifest.clone();
        over.count = 6;
        std::fs::write(
            base.with_extension("json"),
            serde_json::to_vec_pretty(&over).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            load_dataset(&base),
            Err(DircrError::TruncatedFile(_))
        ));

        let mut under = manifest;
        under.count = 4;
        std::fs::write(
            base.with_extension("json"),
            serde_json::to_vec_pretty(&under).unwrap(),
        )
        .unwrap();
        assert!(matches!(load_dataset(&base), Err(DircrError::Format(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("v");
        let mut manifest = write_dataset(&sample_puzzles(2), Split::Test, 1, &base).unwrap();
        manifest.version = "dircr-pzl-v0".to_string();
        std::fs::write(
            base.with_extension("json"),
            serde_json::to_vec_pretty(&manifest).unwrap(),
        )
        .unwrap();
        match load_dataset(&base) {
            Err(DircrError::VersionMismatch { found, expected }) => {
                assert_eq!(found, "dircr-pzl-v0");
                assert_eq!(expected, FORMAT_VERSION);
            }
            other => panic!("expected VersionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn empty_write_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_dataset(&[], Split::Train, 0, &dir.path().join("e")),
            Err(DircrError::EmptyDataset)
        ));
    }
}
