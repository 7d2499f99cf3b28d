//! Versioned binary checkpoints. Layout (all integers little-endian, all
//! array data f64 little-endian — exact for f32-trained models since
//! f32 -> f64 -> f32 round-trips losslessly):
//!
//! ```text
//! magic "DIRCRCKPT" | version u32 | config_len u32 | config TOML
//! epoch u64 | global_step u64
//! n_params u32 | (name_len u32, name, ndim u8, dims u64.., data)*
//! adam_t u64 | n_params m-arrays | n_params v-arrays   (positional order)
//! n_stats u32 | named arrays as above
//! has_frozen u8 | [n u32 named params, n u32 named stats]
//! ```
//!
//! RNG streams are derived functionally from (seed, epoch, step), so
//! persisting those counters is enough to resume the exact random sequence.

use std::path::Path;

use ndarray::ArrayD;

use crate::config::RunConfig;
use crate::error::{DircrError, Result};
use crate::tensor::Scalar;

pub const CKPT_MAGIC: &[u8; 9] = b"DIRCRCKPT";
pub const CKPT_VERSION: u32 = 1;

type Named<F> = Vec<(String, ArrayD<F>)>;

#[derive(Debug)]
pub struct Checkpoint<F: Scalar> {
    pub config: RunConfig,
    /// Next epoch to run (an interrupted epoch restarts from its beginning).
    pub epoch: u64,
    pub global_step: u64,
    pub params: Named<F>,
    pub adam_t: u64,
    pub adam_m: Vec<ArrayD<F>>,
    pub adam_v: Vec<ArrayD<F>>,
    pub stats: Named<F>,
    /// Frozen pseudo-labeler snapshot for the two-phase schedule.
    pub frozen: Option<(Named<F>, Named<F>)>,
}

pub fn save<F: Scalar>(path: &Path, ckpt: &Checkpoint<F>) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    put_u32(&mut buf, CKPT_VERSION);
    let cfg = ckpt.config.resolved_toml();
    put_u32(&mut buf, cfg.len() as u32);
    buf.extend_from_slice(cfg.as_bytes());
    put_u64(&mut buf, ckpt.epoch);
    put_u64(&mut buf, ckpt.global_step);
    put_u32(&mut buf, ckpt.params.len() as u32);
    for (name, arr) in &ckpt.params {
        put_str(&mut buf, name);
        put_array(&mut buf, arr);
    }
    put_u64(&mut buf, ckpt.adam_t);
    assert_eq!(ckpt.adam_m.len(), ckpt.params.len(), "optimizer state mismatch");
    assert_eq!(ckpt.adam_v.len(), ckpt.params.len(), "optimizer state mismatch");
    for arr in ckpt.adam_m.iter().chain(&ckpt.adam_v) {
        put_array(&mut buf, arr);
    }
    put_u32(&mut buf, ckpt.stats.len() as u32);
    for (name, arr) in &ckpt.stats {
        put_str(&mut buf, name);
        put_array(&mut buf, arr);
    }
    match &ckpt.frozen {
        None => buf.push(0),
        Some((params, stats)) => {
            buf.push(1);
            put_u32(&mut buf, params.len() as u32);
            for (name, arr) in params {
                put_str(&mut buf, name);
                put_array(&mut buf, arr);
            }
            put_u32(&mut buf, stats.len() as u32);
            for (name, arr) in stats {
                put_str(&mut buf, name);
                put_array(&mut buf, arr);
            }
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load<F: Scalar>(path: &Path) -> Result<Checkpoint<F>> {
    let data = std::fs::read(path)?;
    let mut r = Reader { data: &data, pos: 0 };
    let magic = r.bytes(CKPT_MAGIC.len())?;
    if magic != CKPT_MAGIC {
        return Err(DircrError::CorruptFile(format!(
            "{}: bad magic",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(DircrError::VersionMismatch {
            found: version.to_string(),
            expected: CKPT_VERSION.to_string(),
        });
    }
    let cfg_len = r.u32()? as usize;
    let cfg_text = std::str::from_utf8(r.bytes(cfg_len)?)
        .map_err(|e| DircrError::CorruptFile(format!("config block: {e}")))?;
    let config: RunConfig = cfg_text
        .parse::<toml::Value>()
        .map_err(|e| DircrError::CorruptFile(format!("config block: {e}")))?
        .try_into()
        .map_err(|e| DircrError::CorruptFile(format!("config block: {e}")))?;
    let epoch = r.u64()?;
    let global_step = r.u64()?;
    let n_params = r.u32()? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.string()?;
        let arr = r.array::<F>()?;
        params.push((name, arr));
    }
    let adam_t = r.u64()?;
    let mut adam_m = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        adam_m.push(r.array::<F>()?);
    }
    let mut adam_v = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        adam_v.push(r.array::<F>()?);
    }
    let n_stats = r.u32()? as usize;
    let mut stats = Vec::with_capacity(n_stats);
    for _ in 0..n_stats {
        let name = r.string()?;
        let arr = r.array::<F>()?;
        stats.push((name, arr));
    }
    let frozen = match r.u8()? {
        0 => None,
        1 => {
            let np = r.u32()? as usize;
            let mut fp = Vec::with_capacity(np);
            for _ in 0..np {
                let name = r.string()?;
                fp.push((name, r.array::<F>()?));
            }
            let ns = r.u32()? as usize;
            let mut fs = Vec::with_capacity(ns);
            for _ in 0..ns {
                let name = r.string()?;
                fs.push((name, r.array::<F>()?));
            }
            Some((fp, fs))
        }
        other => {
            return Err(DircrError::CorruptFile(format!(
                "bad frozen-snapshot tag {other}"
            )))
        }
    };
    if r.pos != data.len() {
        return Err(DircrError::CorruptFile(format!(
            "{} trailing bytes after checkpoint",
            data.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        config,
        epoch,
        global_step,
        params,
        adam_t,
        adam_m,
        adam_v,
        stats,
        frozen,
    })
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn put_array<F: Scalar>(buf: &mut Vec<u8>, arr: &ArrayD<F>) {
    buf.push(arr.ndim() as u8);
    for &d in arr.shape() {
        put_u64(buf, d as u64);
    }
    for &x in arr.iter() {
        buf.extend_from_slice(&x.to64().to_le_bytes());
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(DircrError::CorruptFile(format!(
                "unexpected end of file at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let s = std::str::from_utf8(self.bytes(n)?)
            .map_err(|e| DircrError::CorruptFile(format!("non-utf8 name: {e}")))?;
        Ok(s.to_string())
    }

    fn array<F: Scalar>(&mut self) -> Result<ArrayD<F>> {
        let ndim = self.u8()? as usize;
        if ndim > 8 {
            return Err(DircrError::CorruptFile(format!("array rank {ndim} > 8")));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut count: usize = 1;
        for _ in 0..ndim {
            let d = self.u64()? as usize;
            count = count.checked_mul(d).ok_or_else(|| {
                DircrError::CorruptFile("array size overflows".to_string())
            })?;
            shape.push(d);
        }
        let raw = self.bytes(count * 8)?;
        let vals: Vec<F> = raw
            .chunks_exact(8)
            .map(|c| F::fr(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        ArrayD::from_shape_vec(shape, vals)
            .map_err(|e| DircrError::CorruptFile(format!("array shape: {e}")))
    }
}
