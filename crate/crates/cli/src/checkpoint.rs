//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!   magic "PRNK" | version u32 | tensor count u32
//!   per tensor: name length u32 | name bytes | rows u64 | cols u64
//!               | rows*cols f64 values (row-major)
//!   footer: config length u32 | flat-JSON config bytes
//!           | epoch u64 | optimizer step u64
//!           | rng seed u64 | rng word position u128
//!
//! Loads are all-or-nothing: truncation, bad magic, or an unknown version
//! fail without producing partial state, and the whole round-trip is
//! bit-exact.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{Map, Value};

use pointrank_core::tensor::Tensor2;
use pointrank_core::train::{Snapshot, TrainConfig};

use crate::config::RunConfig;

const MAGIC: &[u8; 4] = b"PRNK";
const VERSION: u32 = 1;

/// A checkpoint as read from disk.
pub struct Checkpoint {
    pub train: TrainConfig,
    pub snapshot: Snapshot,
}

pub fn save(path: &Path, snapshot: &Snapshot, train_keys: &Map<String, Value>) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(snapshot.tensors.len() as u32).to_le_bytes());
    for (name, t) in &snapshot.tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let config = serde_json::to_string(train_keys).expect("flat map serializes");
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(config.as_bytes());
    buf.extend_from_slice(&snapshot.epoch.to_le_bytes());
    buf.extend_from_slice(&snapshot.opt_step.to_le_bytes());
    buf.extend_from_slice(&snapshot.rng_seed.to_le_bytes());
    buf.extend_from_slice(&snapshot.rng_word_pos.to_le_bytes());

    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            bail!("truncated checkpoint (wanted {} bytes at offset {})", n, self.pos);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut r = Reader { buf: &buf, pos: 0 };

    if r.take(4)? != MAGIC {
        bail!("{}: not a checkpoint (bad magic)", path.display());
    }
    let version = r.u32()?;
    if version != VERSION {
        bail!("{}: unsupported checkpoint version {version} (expected {VERSION})", path.display());
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = core::str::from_utf8(r.take(name_len)?)
            .map_err(|_| anyhow!("{}: tensor name is not UTF-8", path.display()))?
            .to_string();
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        let t = Tensor2::from_vec(rows, cols, data)
            .map_err(|e| anyhow!("{}: tensor {name}: {e}", path.display()))?;
        tensors.push((name, t));
    }

    let config_len = r.u32()? as usize;
    let config_text = core::str::from_utf8(r.take(config_len)?)
        .map_err(|_| anyhow!("{}: config block is not UTF-8", path.display()))?;
    let config_map: Map<String, Value> = serde_json::from_str(config_text)
        .map_err(|e| anyhow!("{}: config block: {e}", path.display()))?;
    let train = RunConfig::from_flat(&config_map)?.train;

    let epoch = r.u64()?;
    let opt_step = r.u64()?;
    let rng_seed = r.u64()?;
    let rng_word_pos = r.u128()?;
    if r.pos != buf.len() {
        bail!("{}: {} trailing bytes after checkpoint payload", path.display(), buf.len() - r.pos);
    }

    Ok(Checkpoint {
        train,
        snapshot: Snapshot { epoch, opt_step, rng_seed, rng_word_pos, tensors },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::train_keys;
    use pointrank_core::train::{master_rng, AdamWState, Model, ModelConfig};

    fn small_snapshot() -> (Snapshot, RunConfig) {
        let mut cfg = RunConfig::default();
        cfg.train.model = ModelConfig {
            hidden: vec![4],
            feature_dim: 8,
            head_hidden: 8,
            embed_dim: 4,
            ..ModelConfig::default()
        };
        let mut rng = master_rng(3);
        let model = Model::init(cfg.train.model.clone(), &mut rng);
        let opt = AdamWState::new();
        (Snapshot::capture(&model, &opt, 5, &rng), cfg)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.prnk");
        let (snap, cfg) = small_snapshot();
        save(&path, &snap, &train_keys(&cfg)).unwrap();

        let loaded = load(&path).unwrap();
        assert_eq!(loaded.snapshot, snap);
        assert_eq!(loaded.train, cfg.train);

        // identical bytes when saved again
        let path2 = dir.path().join("model2.prnk");
        save(&path2, &loaded.snapshot, &train_keys(&cfg)).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_file_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.prnk");
        let (snap, cfg) = small_snapshot();
        save(&path, &snap, &train_keys(&cfg)).unwrap();

        let bytes = fs::read(&path).unwrap();
        for cut in [3usize, 11, bytes.len() / 2, bytes.len() - 1] {
            let path_cut = dir.path().join("cut.prnk");
            fs::write(&path_cut, &bytes[..cut]).unwrap();
            assert!(load(&path_cut).is_err(), "cut at {cut} should fail");
        }
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.prnk");
        let (snap, cfg) = small_snapshot();
        save(&path, &snap, &train_keys(&cfg)).unwrap();
        let mut bytes = fs::read(&path).unwrap();

        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        fs::write(dir.path().join("magic.prnk"), &wrong).unwrap();
        let err = load(&dir.path().join("magic.prnk")).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");

        bytes[4] = 99;
        fs::write(dir.path().join("ver.prnk"), &bytes).unwrap();
        let err = load(&dir.path().join("ver.prnk")).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }
}
