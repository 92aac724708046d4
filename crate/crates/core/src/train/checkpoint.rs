//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `TKGMCKPT`, format version `u32`, shape
//! fingerprint `u64`, seed `u64`, epoch `u64`, validation MRR `f64`, entity
//! and relation counts `u64`, config text (`u32` length + UTF-8), block
//! count `u32`, then per block: name (`u32` length + UTF-8), rank `u32`,
//! dims `u64` each, values `f64` each.

use std::path::{Path, PathBuf};

use super::TrainConfig;
use crate::autodiff::Tensor;
use crate::data::TkgDataset;
use crate::model::ModelState;
use crate::Error;

const MAGIC: &[u8; 8] = b"TKGMCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    /// `NaN` when training had no validation split.
    pub val_mrr: f64,
    pub state: ModelState,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format!("truncated: wanted {n} bytes at offset {}, file has {}", self.pos, self.bytes.len())
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|e| e.to_string())
    }

    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn fingerprint(&self) -> u64 {
        self.config
            .fingerprint(self.state.num_entities(), self.state.num_relations())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint().to_le_bytes());
        out.extend_from_slice(&self.config.seed.to_le_bytes());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.val_mrr.to_le_bytes());
        out.extend_from_slice(&(self.state.num_entities() as u64).to_le_bytes());
        out.extend_from_slice(&(self.state.num_relations() as u64).to_le_bytes());
        put_str(&mut out, &self.config.to_text());
        let store = self.state.store();
        out.extend_from_slice(&(store.len() as u32).to_le_bytes());
        for (_, p) in store.iter() {
            put_str(&mut out, p.name());
            let t = p.tensor();
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a checkpoint; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, Error> {
        let fail = |detail: String| Error::Checkpoint {
            path: path.to_path_buf(),
            detail,
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).map_err(&fail)? != MAGIC {
            return Err(fail("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32().map_err(&fail)?;
        if version != VERSION {
            return Err(fail(format!("unsupported format version {version}")));
        }
        let stored_fp = r.u64().map_err(&fail)?;
        let seed = r.u64().map_err(&fail)?;
        let epoch = r.usize().map_err(&fail)?;
        let val_mrr = r.f64().map_err(&fail)?;
        let num_entities = r.usize().map_err(&fail)?;
        let num_relations = r.usize().map_err(&fail)?;
        let config = TrainConfig::from_text(&r.string().map_err(&fail)?)?;
        if config.seed != seed {
            return Err(fail(format!("header seed {seed} disagrees with config seed {}", config.seed)));
        }
        if config.fingerprint(num_entities, num_relations) != stored_fp {
            return Err(fail("fingerprint does not match the embedded config".into()));
        }

        let count = r.u32().map_err(&fail)? as usize;
        let mut blocks = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string().map_err(&fail)?;
            let rank = r.u32().map_err(&fail)? as usize;
            let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>, _>>().map_err(&fail)?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= bytes.len() / 8)
                .ok_or_else(|| fail(format!("block `{name}` has implausible shape {shape:?}")))?;
            let values = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>, _>>().map_err(&fail)?;
            blocks.push((name, Tensor::new(shape, values)?));
        }
        if r.pos != bytes.len() {
            return Err(fail(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let mut state = ModelState::new(config.model.clone(), num_entities, num_relations, seed)?;
        state
            .load_values(blocks.iter().map(|(n, t)| (n.as_str(), t)))
            .map_err(|e| fail(e.to_string()))?;
        Ok(Checkpoint {
            config,
            epoch,
            val_mrr,
            state,
        })
    }

    /// Writes atomically through a temporary file.
    pub fn save(&self, path: &Path) -> Result<(), Error> {
        crate::run::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let bytes = std::fs::read(path).map_err(Error::io(path))?;
        Checkpoint::from_bytes(&bytes, path)
    }

    /// Loads and checks that the checkpoint was trained for a dataset with
    /// the entity and relation counts of `dataset`.
    pub fn load_for(path: &Path, dataset: &TkgDataset) -> Result<Self, Error> {
        let ckpt = Checkpoint::load(path)?;
        let expected = ckpt.config.fingerprint(dataset.num_entities(), dataset.num_relations());
        if expected != ckpt.fingerprint() {
            return Err(Error::Checkpoint {
                path: PathBuf::from(path),
                detail: format!(
                    "fingerprint mismatch: checkpoint has {} entities / {} relations, dataset has {} / {}",
                    ckpt.state.num_entities(),
                    ckpt.state.num_relations(),
                    dataset.num_entities(),
                    dataset.num_relations()
                ),
            });
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut config = TrainConfig::default();
        config.apply_text("d_e=3\nd_t=2\nkernels=2\nseed=7").unwrap();
        Checkpoint {
            state: ModelState::new(config.model.clone(), 4, 2, 7).unwrap(),
            config,
            epoch: 3,
            val_mrr: 0.625,
        }
    }

    fn values(s: &ModelState) -> Vec<u64> {
        s.store()
            .iter()
            .flat_map(|(_, p)| p.tensor().values().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes(), Path::new("x")).unwrap();
        assert_eq!(values(&back.state), values(&c.state));
        assert_eq!((back.epoch, back.val_mrr.to_bits()), (3, 0.625f64.to_bits()));
        assert_eq!(back.config, c.config);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = sample().to_bytes();
        for cut in [0, 7, 8, 20, 60, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut], Path::new("x")).is_err(), "cut {cut}");
        }
        let mut extended = bytes.clone();
        extended.push(0);
        assert!(Checkpoint::from_bytes(&extended, Path::new("x")).is_err());
    }

    #[test]
    fn tampered_header_is_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[12] ^= 1;
        let err = Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("fingerprint"));
    }
}
