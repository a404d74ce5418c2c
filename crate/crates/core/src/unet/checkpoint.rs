use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{UNetConfig, UNetModel};
use crate::datapipe::NormalizationManifest;
use crate::error::{bail, Error, Result};
use crate::numerics::{AdamHyper, AdamState, OptimizerKind, Tensor};

pub const CHECKPOINT_MAGIC: &[u8] = b"UNETCKPT1\n";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerState {
    Adam { state: AdamState<f32>, hyper: AdamHyper },
    Sgd,
}

impl OptimizerState {
    pub fn new(model: &UNetModel<f32>) -> Self {
        Self::from_kind(model.config().optimizer, model)
    }

    pub fn from_kind(kind: OptimizerKind, model: &UNetModel<f32>) -> Self {
        match kind {
            OptimizerKind::Adam { beta1, beta2, eps } => OptimizerState::Adam {
                state: AdamState::new(model.params()),
                hyper: AdamHyper { beta1, beta2, eps },
            },
            OptimizerKind::Sgd => OptimizerState::Sgd,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            OptimizerState::Adam { hyper, .. } => OptimizerKind::Adam {
                beta1: hyper.beta1,
                beta2: hyper.beta2,
                eps: hyper.eps,
            },
            OptimizerState::Sgd => OptimizerKind::Sgd,
        }
    }
}

/// Everything needed to resume training or serve predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: UNetModel<f32>,
    pub optimizer: OptimizerState,
    pub manifest: Option<NormalizationManifest>,
    pub epoch: usize,
    pub steps: u64,
    pub rng: ChaCha8Rng,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngHeader {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum OptimizerHeader {
    Adam { beta1: f64, beta2: f64, eps: f64, t: u64 },
    Sgd,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the blob section.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config: UNetConfig,
    epoch: usize,
    steps: u64,
    manifest: Option<NormalizationManifest>,
    rng: RngHeader,
    optimizer: OptimizerHeader,
    tensors: Vec<TensorEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

impl Checkpoint {
    /// Tensors in file order: parameters, then Adam first and second moments.
    fn tensors(&self) -> Vec<(String, &Tensor<f32>)> {
        let names = self.model.param_names();
        let mut out: Vec<(String, &Tensor<f32>)> =
            names.iter().cloned().zip(self.model.params()).collect();
        if let OptimizerState::Adam { state, .. } = &self.optimizer {
            out.extend(names.iter().map(|n| format!("adam.m.{n}")).zip(&state.m));
            out.extend(names.iter().map(|n| format!("adam.v.{n}")).zip(&state.v));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let tensors = self.tensors();
        let entries = tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 4 * t.len() as u64;
                e
            })
            .collect();
        let optimizer = match &self.optimizer {
            OptimizerState::Adam { state, hyper } => OptimizerHeader::Adam {
                beta1: hyper.beta1,
                beta2: hyper.beta2,
                eps: hyper.eps,
                t: state.t,
            },
            OptimizerState::Sgd => OptimizerHeader::Sgd,
        };
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            config: self.model.config().clone(),
            epoch: self.epoch,
            steps: self.steps,
            manifest: self.manifest.clone(),
            rng: RngHeader {
                seed: hex(&self.rng.get_seed()),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
            optimizer,
            tensors: entries,
        };
        let mut out = CHECKPOINT_MAGIC.to_vec();
        serde_json::to_writer(&mut out, &header).expect("header serializes");
        out.push(b'\n');
        out.reserve(offset as usize);
        for (_, t) in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let Some(rest) = bytes.strip_prefix(CHECKPOINT_MAGIC) else {
            bail!(Format, "not a checkpoint: magic header missing");
        };
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            bail!(Format, "checkpoint header is not terminated");
        };
        let header: Header = serde_json::from_slice(&rest[..nl])
            .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            bail!(Format, "unsupported checkpoint version {}", header.format_version);
        }
        let blob = &rest[nl + 1..];
        let incompatible = |e: Error| Error::Format(format!("incompatible checkpoint: {e}"));
        let shell = UNetModel::<f32>::zeros(header.config.clone()).map_err(incompatible)?;

        let names = shell.param_names();
        let mut expected: Vec<(String, Vec<usize>)> = names
            .iter()
            .cloned()
            .zip(shell.params().iter().map(|p| p.shape().to_vec()))
            .collect();
        if matches!(header.optimizer, OptimizerHeader::Adam { .. }) {
            let base = expected.clone();
            for prefix in ["adam.m.", "adam.v."] {
                expected.extend(base.iter().map(|(n, s)| (format!("{prefix}{n}"), s.clone())));
            }
        }
        if header.tensors.len() != expected.len() {
            bail!(Format, "checkpoint lists {} tensors, expected {}", header.tensors.len(), expected.len());
        }
        let mut offset = 0usize;
        let mut tensors = Vec::with_capacity(expected.len());
        for (entry, (name, shape)) in header.tensors.iter().zip(&expected) {
            if &entry.name != name || &entry.shape != shape || entry.offset != offset as u64 {
                bail!(Format, "tensor directory mismatch at {:?}", entry.name);
            }
            let len = 4 * shape.iter().product::<usize>();
            let Some(raw) = blob.get(offset..offset + len) else {
                bail!(Format, "checkpoint truncated inside tensor {name:?}");
            };
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push(Tensor::new(shape.clone(), data)?);
            offset += len;
        }
        if offset != blob.len() {
            bail!(Format, "checkpoint has {} trailing bytes", blob.len() - offset);
        }

        let n = names.len();
        let mut rest_tensors = tensors.split_off(n);
        let model = UNetModel::from_params(header.config, tensors).map_err(incompatible)?;
        let optimizer = match header.optimizer {
            OptimizerHeader::Adam { beta1, beta2, eps, t } => {
                let v = rest_tensors.split_off(n);
                OptimizerState::Adam {
                    state: AdamState { m: rest_tensors, v, t },
                    hyper: AdamHyper { beta1, beta2, eps },
                }
            }
            OptimizerHeader::Sgd => OptimizerState::Sgd,
        };
        let seed = unhex(&header.rng.seed).ok_or_else(|| Error::Format("bad rng seed".into()))?;
        let word_pos: u128 = header
            .rng
            .word_pos
            .parse()
            .map_err(|_| Error::Format("bad rng word position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(header.rng.stream);
        rng.set_word_pos(word_pos);
        Ok(Self {
            model,
            optimizer,
            manifest: header.manifest,
            epoch: header.epoch,
            steps: header.steps,
            rng,
        })
    }
}

/// Writes through a temporary sibling file so readers never see a partial checkpoint.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&ckpt.to_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}
