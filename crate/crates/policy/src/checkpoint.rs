//! Binary checkpoints: an 8-byte magic, a format version, a JSON header
//! describing every tensor, then the tensors as little-endian `f64`s.
//!
//! Nothing time- or host-dependent is stored, so equal training states give
//! byte-identical files.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use mres_tensor::{AdamState, Tensor};
use serde::{Deserialize, Serialize};

use crate::params::{ModelConfig, PolicyParams};
use crate::policy::Policy;
use crate::train::{TrainConfig, Trainer};
use crate::{PolicyError, Result};

pub const MAGIC: &[u8; 8] = b"MRESCKPT";
pub const FORMAT_VERSION: u32 = 1;
const MAX_HEADER: u64 = 1 << 26;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: Option<TrainConfig>,
    epoch: usize,
    adam_step: Option<u64>,
    tensors: Vec<TensorEntry>,
}

/// A policy, optionally with the optimizer and baseline state needed to
/// resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub train: Option<TrainConfig>,
    /// Completed epochs.
    pub epoch: usize,
    pub adam: Option<AdamState>,
    pub baseline: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_policy(policy: &Policy) -> Self {
        Checkpoint {
            params: policy.params().clone(),
            train: None,
            epoch: 0,
            adam: None,
            baseline: Vec::new(),
        }
    }

    pub fn from_trainer(t: &Trainer) -> Self {
        Checkpoint {
            params: t.policy().params().clone(),
            train: Some(t.config().clone()),
            epoch: t.epoch(),
            adam: Some(t.adam().clone()),
            baseline: t.baseline().state(),
        }
    }

    pub fn model(&self) -> &ModelConfig {
        self.params.config()
    }

    pub fn policy(&self) -> Result<Policy> {
        Policy::new(self.params.clone())
    }

    /// Resumes the run this checkpoint was taken from.
    pub fn into_trainer(self) -> Result<Trainer> {
        let cfg = self
            .train
            .ok_or_else(|| PolicyError::invalid("checkpoint holds no training state"))?;
        let adam = self
            .adam
            .ok_or_else(|| PolicyError::invalid("checkpoint holds no optimizer state"))?;
        let policy = Policy::new(self.params)?;
        let baseline = (!self.baseline.is_empty()).then_some(self.baseline);
        Trainer::from_parts(cfg, policy, adam, self.epoch, baseline)
    }

    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let p = &self.params;
        let mut out: Vec<(String, &Tensor)> = p
            .names()
            .iter()
            .zip(p.tensors())
            .map(|(n, t)| (format!("policy/{}", n), t))
            .collect();
        if let Some(adam) = &self.adam {
            for (n, t) in p.names().iter().zip(&adam.m) {
                out.push((format!("adam/m/{}", n), t));
            }
            for (n, t) in p.names().iter().zip(&adam.v) {
                out.push((format!("adam/v/{}", n), t));
            }
        }
        out.extend(self.baseline.iter().map(|(n, t)| (n.clone(), t)));
        out
    }

    pub fn write_to(&self, w: &mut dyn Write) -> Result<()> {
        let tensors = self.tensors();
        let header = Header {
            model: self.model().clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            adam_step: self.adam.as_ref().map(|a| a.step),
            tensors: tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::new();
        for (_, t) in &tensors {
            buf.clear();
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from(r: &mut dyn Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| PolicyError::Corrupt(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(PolicyError::Corrupt(format!(
                "unsupported checkpoint version {} (expected {})",
                version, FORMAT_VERSION
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        if hlen > MAX_HEADER || 20 + hlen as usize > bytes.len() {
            return Err(corrupt("truncated header"));
        }
        let hend = 20 + hlen as usize;
        let header: Header = serde_json::from_slice(&bytes[20..hend])?;
        let mut at = hend;
        let mut read = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let len: usize = e.shape.iter().product();
            let end = at
                .checked_add(len * 8)
                .filter(|&end| end <= bytes.len())
                .ok_or_else(|| corrupt("truncated tensor data"))?;
            let data = bytes[at..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            read.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
            at = end;
        }
        if at != bytes.len() {
            return Err(corrupt("trailing bytes after tensor data"));
        }

        let mut policy = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        let mut baseline = Vec::new();
        for (name, t) in read {
            if let Some(rest) = name.strip_prefix("policy/") {
                policy.push((rest.to_string(), t));
            } else if let Some(rest) = name.strip_prefix("adam/m/") {
                m.push((rest.to_string(), t));
            } else if let Some(rest) = name.strip_prefix("adam/v/") {
                v.push((rest.to_string(), t));
            } else {
                baseline.push((name, t));
            }
        }
        let params = PolicyParams::from_named(&header.model, policy)?;
        let adam = match header.adam_step {
            None => None,
            Some(step) => {
                let check = |moments: Vec<(String, Tensor)>| -> Result<Vec<Tensor>> {
                    let ok = moments.len() == params.names().len()
                        && moments
                            .iter()
                            .zip(params.names().iter().zip(params.tensors()))
                            .all(|((n, t), (pn, pt))| n == pn && t.shape() == pt.shape());
                    if !ok {
                        return Err(PolicyError::Corrupt("optimizer state does not match the parameters".into()));
                    }
                    Ok(moments.into_iter().map(|(_, t)| t).collect())
                };
                Some(AdamState {
                    step,
                    m: check(m)?,
                    v: check(v)?,
                })
            }
        };
        if let Some(train) = &header.train {
            if train.model != header.model {
                return Err(corrupt("training config disagrees with the model config"));
            }
        }
        Ok(Checkpoint {
            params,
            train: header.train,
            epoch: header.epoch,
            adam,
            baseline,
        })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
            f.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads and insists on a particular architecture.
    pub fn load_expecting(path: &Path, model: &ModelConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.model() != model {
            return Err(PolicyError::Mismatch(format!(
                "checkpoint was written for {:?}, expected {:?}",
                ck.model(),
                model
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mres_core::ProblemKind;

    fn small_trainer() -> Trainer {
        let cfg = TrainConfig {
            n: 10,
            epochs: 1,
            steps_per_epoch: 1,
            batch_size: 2,
            val_size: 3,
            model: ModelConfig::tiny(ProblemKind::Tsp),
            ..TrainConfig::default()
        };
        Trainer::new(cfg).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let mut t = small_trainer();
        t.train_epoch().unwrap();
        let ck = Checkpoint::from_trainer(&t);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn resuming_matches_an_uninterrupted_run() {
        let cfg = TrainConfig {
            epochs: 2,
            ..small_trainer().config().clone()
        };
        let mut straight = Trainer::new(cfg.clone()).unwrap();
        straight.run(None, |_, _| Ok(())).unwrap();

        let mut first = Trainer::new(cfg).unwrap();
        first.train_epoch().unwrap();
        let bytes = Checkpoint::from_trainer(&first).to_bytes().unwrap();
        let mut resumed = Checkpoint::from_bytes(&bytes).unwrap().into_trainer().unwrap();
        resumed.run(None, |_, _| Ok(())).unwrap();
        assert_eq!(resumed.epoch(), 2);
        assert_eq!(
            Checkpoint::from_trainer(&resumed).to_bytes().unwrap(),
            Checkpoint::from_trainer(&straight).to_bytes().unwrap()
        );
    }

    #[test]
    fn policy_only_round_trip() {
        let p = Policy::init(&ModelConfig::tiny(ProblemKind::Cvrp), 4).unwrap();
        let ck = Checkpoint::from_policy(&p);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.policy().unwrap(), p);
        assert!(back.into_trainer().is_err());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = Checkpoint::from_trainer(&small_trainer()).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic), Err(PolicyError::Corrupt(_))));
        let mut version = bytes;
        version[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&version), Err(PolicyError::Corrupt(_))));
    }

    #[test]
    fn mismatched_architecture_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let p = Policy::init(&ModelConfig::tiny(ProblemKind::Tsp), 0).unwrap();
        Checkpoint::from_policy(&p).save(&path).unwrap();
        assert!(Checkpoint::load_expecting(&path, p.config()).is_ok());
        let other = ModelConfig {
            layers: 3,
            ..ModelConfig::tiny(ProblemKind::Tsp)
        };
        assert!(matches!(
            Checkpoint::load_expecting(&path, &other),
            Err(PolicyError::Mismatch(_))
        ));
    }
}
