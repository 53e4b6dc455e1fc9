//! Versioned binary checkpoint container.
//!
//! All integers little-endian:
//!
//! ```text
//! magic         8 bytes  "FNRCKPT\0"
//! version       u32      1
//! header_len    u32
//! header        header_len bytes of UTF-8 JSON (model config, d_in,
//!               precision, class weights, optimizer groups, epoch,
//!               optional optimizer scalars)
//! tensor_count  u32
//! tensor_count tensors of:
//!   name_len u16, name (UTF-8)
//!   rows u32, cols u32
//!   rows*cols f64 values, row-major
//! checksum      32 bytes SHA-256 of every preceding byte
//! ```
//!
//! The twelve parameter tensors come first, named as in
//! [`PARAM_NAMES`]. When optimizer state is present they are followed by
//! `adam.m.<name>` then `adam.v.<name>` for each parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Precision;
use crate::error::{FnrError, Result};
use crate::model::{ClassWeights, FnrParams, ModelConfig, PARAM_NAMES};
use crate::optimizer::{EarlyStopping, ParamGroupConfig, PlateauScheduler};
use crate::tensor::Tensor2;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FNRCKPT\0";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub first: Vec<Tensor2<f64>>,
    pub second: Vec<Tensor2<f64>>,
    pub scheduler: PlateauScheduler,
    pub early_stopping: EarlyStopping,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub d_in: usize,
    pub precision: Precision,
    pub class_weights: ClassWeights,
    pub groups: Vec<ParamGroupConfig>,
    /// Epoch the parameters were taken from.
    pub epoch: usize,
    pub params: FnrParams<f64>,
    pub optimizer: Option<OptimizerSnapshot>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    step: u64,
    scheduler: PlateauScheduler,
    early_stopping: EarlyStopping,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    d_in: usize,
    precision: Precision,
    class_weights: ClassWeights,
    groups: Vec<ParamGroupConfig>,
    epoch: usize,
    optimizer: Option<OptimizerHeader>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor2<f64>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    for x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(FnrError::Data("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn tensor(&mut self) -> Result<(String, Tensor2<f64>)> {
        let name_len = self.u16()? as usize;
        let name = String::from_utf8(self.take(name_len)?.to_vec())
            .map_err(|_| FnrError::Data("checkpoint tensor name is not UTF-8".into()))?;
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let data = self
            .take(rows * cols * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((name, Tensor2::new(rows, cols, data)?))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            model: self.model.clone(),
            d_in: self.d_in,
            precision: self.precision,
            class_weights: self.class_weights,
            groups: self.groups.clone(),
            epoch: self.epoch,
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                step: o.step,
                scheduler: o.scheduler.clone(),
                early_stopping: o.early_stopping.clone(),
            }),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);

        let mut tensors: Vec<(String, &Tensor2<f64>)> = self
            .params
            .named()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t))
            .collect();
        if let Some(o) = &self.optimizer {
            for (name, m) in PARAM_NAMES.iter().zip(&o.first) {
                tensors.push((format!("adam.m.{name}"), m));
            }
            for (name, v) in PARAM_NAMES.iter().zip(&o.second) {
                tensors.push((format!("adam.v.{name}"), v));
            }
        }
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            put_tensor(&mut out, &name, t);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 32 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(FnrError::Data("not an FNR checkpoint".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(FnrError::Data("checkpoint checksum mismatch".into()));
        }
        let mut r = Reader {
            bytes: body,
            pos: 8,
        };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(FnrError::Data(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| FnrError::Data(format!("checkpoint header: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            tensors.push(r.tensor()?);
        }
        if r.pos != body.len() {
            return Err(FnrError::Data("checkpoint has trailing bytes".into()));
        }

        let expected = if header.optimizer.is_some() { 36 } else { 12 };
        if tensors.len() != expected {
            return Err(FnrError::Data(format!(
                "checkpoint holds {} tensors, expected {expected}",
                tensors.len()
            )));
        }
        let mut names = Vec::with_capacity(expected);
        names.extend(PARAM_NAMES.iter().map(|n| n.to_string()));
        if header.optimizer.is_some() {
            names.extend(PARAM_NAMES.iter().map(|n| format!("adam.m.{n}")));
            names.extend(PARAM_NAMES.iter().map(|n| format!("adam.v.{n}")));
        }
        if let Some(((got, _), want)) = tensors
            .iter()
            .zip(&names)
            .find(|((got, _), want)| got != *want)
        {
            return Err(FnrError::Data(format!(
                "checkpoint tensor {got:?} where {want:?} was expected"
            )));
        }
        let mut values = tensors.into_iter().map(|(_, t)| t);
        let params = FnrParams::from_tensors(values.by_ref().take(12).collect())
            .map_err(|e| FnrError::Data(format!("checkpoint parameters: {e}")))?;
        if params.d_in() != header.d_in
            || params.k() != header.model.k
            || params.hidden() != header.model.hidden
        {
            return Err(FnrError::Data(
                "checkpoint tensor shapes disagree with its config".into(),
            ));
        }
        let optimizer = match header.optimizer {
            Some(o) => {
                let first: Vec<_> = values.by_ref().take(12).collect();
                let second: Vec<_> = values.collect();
                let shapes_ok = params
                    .tensors()
                    .iter()
                    .zip(first.iter().zip(&second))
                    .all(|(p, (m, v))| p.shape() == m.shape() && p.shape() == v.shape());
                if !shapes_ok {
                    return Err(FnrError::Data(
                        "optimizer moments do not match parameter shapes".into(),
                    ));
                }
                Some(OptimizerSnapshot {
                    step: o.step,
                    first,
                    second,
                    scheduler: o.scheduler,
                    early_stopping: o.early_stopping,
                })
            }
            None => None,
        };
        Ok(Checkpoint {
            model: header.model,
            d_in: header.d_in,
            precision: header.precision,
            class_weights: header.class_weights,
            groups: header.groups,
            epoch: header.epoch,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| FnrError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| FnrError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::Label;
    use crate::optimizer::AdamW;

    fn sample(with_optimizer: bool) -> Checkpoint {
        let model = ModelConfig {
            k: 3,
            hidden: 4,
            ..ModelConfig::default()
        };
        let params = FnrParams::<f64>::init(5, &model, &mut ChaCha8Rng::seed_from_u64(1));
        let optimizer = with_optimizer.then(|| {
            let adam = AdamW::<f64>::new(params.tensors().iter().map(|t| t.shape()));
            OptimizerSnapshot {
                step: 17,
                first: adam
                    .first_moments()
                    .iter()
                    .map(|t| t.map(|_| 0.25))
                    .collect(),
                second: adam.second_moments().to_vec(),
                scheduler: PlateauScheduler::new(0.5, 5, 1e-4, 1e-3),
                early_stopping: EarlyStopping::new(10, 1e-4),
            }
        });
        Checkpoint {
            model,
            d_in: 5,
            precision: Precision::Standard,
            class_weights: ClassWeights::from_alpha(1.5, Label::Real).unwrap(),
            groups: vec![
                ParamGroupConfig::projector_default(),
                ParamGroupConfig::classifier_default(),
            ],
            epoch: 3,
            params,
            optimizer,
        }
    }

    #[test]
    fn round_trip_with_and_without_optimizer() {
        for with in [false, true] {
            let ck = sample(with);
            assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = sample(false).to_bytes();
        assert_eq!(&bytes[..8], b"FNRCKPT\0");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample(true).to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        let msg = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(msg.contains("checksum"), "{msg}");
    }
}
