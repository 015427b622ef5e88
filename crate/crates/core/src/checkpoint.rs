//! Member checkpoints: a flat little-endian binary of named tensors plus a
//! JSON manifest with the configuration, RNG position and training log.
//!
//! Binary layout: magic `ESDRNNCK`, `u32` version, `u32` tensor count, then
//! per tensor `u32` name length, UTF-8 name, `u32` rows, `u32` cols and
//! `rows * cols` `f64` values, all little-endian.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::es::{EsState, SEASON};
use crate::model::{Model, ModelConfig};
use crate::network::NetworkParams;
use crate::training::{EpochReport, TrainedMember, SAMPLING_STREAM};

pub const MAGIC: &[u8; 8] = b"ESDRNNCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub rng_stream: u64,
    /// Word position of the sampling stream, as a decimal string.
    pub rng_word_pos: String,
    pub model: ModelConfig,
    pub run: RunConfig,
    pub reports: Vec<EpochReport>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub run: RunConfig,
    pub member: TrainedMember,
}

fn es_prefix(id: &str) -> String {
    format!("es/{id}/")
}

impl Checkpoint {
    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .member
            .model
            .params
            .collect_parameters()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        for (id, st) in &self.member.es_states {
            let p = es_prefix(id);
            out.push((format!("{p}level"), Tensor::scalar(st.level)));
            out.push((format!("{p}seasonal"), Tensor::column(&st.seasonal)));
            out.push((
                format!("{p}coefficients"),
                Tensor::column(&[st.alpha, st.beta, st.i_alpha, st.i_beta]),
            ));
        }
        out
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            seed: self.member.seed,
            rng_stream: SAMPLING_STREAM,
            rng_word_pos: self.member.rng_word_pos.to_string(),
            model: self.member.model.config.clone(),
            run: self.run.clone(),
            reports: self.member.reports.clone(),
            tensors: self
                .named_tensors()
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.named_tensors();
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn manifest_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.manifest())? + "\n")
    }

    /// Writes `<stem>.bin` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir.as_ref())?;
        let bin = dir.as_ref().join(format!("{stem}.bin"));
        std::fs::write(&bin, self.to_bytes())?;
        std::fs::write(bin.with_extension("json"), self.manifest_json()?)?;
        Ok(bin)
    }

    /// Loads `<stem>.bin` with its `<stem>.json` manifest.
    pub fn load(bin: impl AsRef<Path>) -> Result<Checkpoint> {
        let bytes = std::fs::read(bin.as_ref())?;
        let text = std::fs::read_to_string(bin.as_ref().with_extension("json"))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        Self::from_parts(&bytes, manifest)
    }

    pub fn from_parts(bytes: &[u8], manifest: Manifest) -> Result<Checkpoint> {
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported manifest version {}",
                manifest.format_version
            )));
        }
        let tensors = read_tensors(bytes)?;
        let listed: Vec<TensorEntry> = tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect();
        if listed != manifest.tensors {
            return Err(Error::Checkpoint("binary tensors do not match the manifest".into()));
        }
        manifest.model.validate()?;
        let mut by_name: BTreeMap<String, Tensor> = tensors.into_iter().collect();

        // shapes come from the config; values are overwritten below
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = NetworkParams::init(&manifest.model.network, &mut rng)?;
        let names: Vec<String> = params.collect_parameters().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(params.parameters_mut()) {
            let t = by_name
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, config expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }

        let mut es_states = BTreeMap::new();
        let ids: Vec<String> = by_name
            .keys()
            .filter_map(|k| k.strip_prefix("es/").and_then(|r| r.strip_suffix("/level")))
            .map(str::to_string)
            .collect();
        for id in ids {
            let p = es_prefix(&id);
            let mut take = |suffix: &str, shape: (usize, usize)| -> Result<Tensor> {
                let t = by_name
                    .remove(&format!("{p}{suffix}"))
                    .ok_or_else(|| Error::Checkpoint(format!("incomplete ES state for {id}")))?;
                if t.shape() != shape {
                    return Err(Error::Checkpoint(format!("ES tensor {p}{suffix} has shape {:?}", t.shape())));
                }
                Ok(t)
            };
            let level = take("level", (1, 1))?.item();
            let seasonal = take("seasonal", (SEASON, 1))?.into_data();
            let c = take("coefficients", (4, 1))?.into_data();
            es_states.insert(
                id.clone(),
                EsState {
                    level,
                    seasonal,
                    alpha: c[0],
                    beta: c[1],
                    i_alpha: c[2],
                    i_beta: c[3],
                },
            );
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        let rng_word_pos = manifest
            .rng_word_pos
            .parse()
            .map_err(|e| Error::Checkpoint(format!("bad rng_word_pos: {e}")))?;
        Ok(Checkpoint {
            run: manifest.run,
            member: TrainedMember {
                seed: manifest.seed,
                model: Model {
                    config: manifest.model,
                    params,
                },
                reports: manifest.reports,
                es_states,
                rng_word_pos,
            },
        })
    }

    /// The sampling RNG positioned where training stopped.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.member.seed);
        rng.set_stream(SAMPLING_STREAM);
        rng.set_word_pos(self.member.rng_word_pos);
        rng
    }
}

fn read_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize;
    let version = u32_at(take(4)?);
    if version != FORMAT_VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = u32_at(take(4)?);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32_at(take(4)?);
        let name = String::from_utf8(take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rows = u32_at(take(4)?);
        let cols = u32_at(take(4)?);
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?;
        let raw = take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    if take(1).is_ok() {
        return Err(Error::Checkpoint("trailing bytes after the last tensor".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;

    fn checkpoint() -> Checkpoint {
        let cfg = ModelConfig {
            network: NetworkConfig { s_c: 6, s_h: 2, s_y: 4, ..NetworkConfig::default() },
            ..ModelConfig::default()
        };
        let model = Model::init(&cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let mut es_states = BTreeMap::new();
        let week: Vec<f64> = (0..168).map(|k| 100.0 + (k as f64 * 0.3).sin()).collect();
        es_states.insert("PL".to_string(), EsState::init(&week, -3.5, 0.3).unwrap());
        Checkpoint {
            run: RunConfig::default(),
            member: TrainedMember {
                seed: 11,
                model,
                reports: vec![EpochReport {
                    epoch: 1,
                    updates: 3,
                    mean_loss: 0.1 + 0.2,
                    learning_rate: 3e-3,
                    batch_size: 2,
                }],
                es_states,
                rng_word_pos: 12345678901234567890u128,
            },
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ck = checkpoint();
        let bin = ck.save(dir.path(), "member").unwrap();
        let loaded = Checkpoint::load(&bin).unwrap();
        assert_eq!(loaded, ck);
        let bin2 = loaded.save(dir.path(), "again").unwrap();
        assert_eq!(std::fs::read(&bin).unwrap(), std::fs::read(&bin2).unwrap());
        assert_eq!(
            std::fs::read(bin.with_extension("json")).unwrap(),
            std::fs::read(bin2.with_extension("json")).unwrap()
        );
        assert_eq!(loaded.rng().get_word_pos(), 12345678901234567890u128);
    }

    #[test]
    fn corrupted_files_rejected() {
        let ck = checkpoint();
        let bytes = ck.to_bytes();
        let m = ck.manifest();
        assert!(Checkpoint::from_parts(&bytes[..bytes.len() - 3], m.clone()).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_parts(&bad, m.clone()).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_parts(&extra, m.clone()).is_err());
        let mut wrong = m.clone();
        wrong.model.network.s_y = 3;
        wrong.model.network.s_c = 5;
        assert!(Checkpoint::from_parts(&bytes, wrong).is_err());
        let mut version = m;
        version.format_version = 2;
        assert!(Checkpoint::from_parts(&bytes, version).is_err());
    }
}
