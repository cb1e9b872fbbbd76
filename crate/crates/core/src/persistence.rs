//! Checkpoint container.
//!
//! ```text
//! offset 0   8 bytes    magic "SPIKEAT1"
//! offset 8   u64 LE     header length H
//! offset 16  H bytes    UTF-8 JSON header
//! offset 16+H           tensor payloads, f32 little-endian, row-major
//! ```
//!
//! The header holds the format version, both configs, training metadata
//! and a manifest of `{name, shape, offset, len}` records whose offsets are
//! relative to the start of the payload section. Adam moments are stored as
//! `adam.m.<param>` and `adam.v.<param>`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{classes_for, Network, NetworkConfig, ParamClass};
use crate::training::{OptimizerState, TrainConfig};

pub const MAGIC: &[u8; 8] = b"SPIKEAT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// 1-based epoch the parameters come from; 0 before training.
    pub epoch: usize,
    pub val_f1: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network_config: NetworkConfig,
    pub train_config: TrainConfig,
    pub meta: CheckpointMeta,
    pub network: Network<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    network_config: NetworkConfig,
    train_config: TrainConfig,
    meta: CheckpointMeta,
    optimizer_step: Option<u64>,
    tensors: Vec<TensorRecord>,
}

/// Shapes of the trainable parameters, aligned with `named_params`.
fn param_shapes(net: &Network<f32>) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for layer in &net.layers {
        for &class in classes_for(layer.kind) {
            out.push(match class {
                ParamClass::Kernels => layer.kernels.shape().to_vec(),
                ParamClass::Bias => layer.bias.shape().to_vec(),
                ParamClass::CurrentDecay | ParamClass::VoltageDecay => {
                    layer.neuron.as_ref().map_or(vec![0], |p| p.w_scd.shape().to_vec())
                }
                ParamClass::PositiveWeight | ParamClass::NegativeWeight => vec![1],
            });
        }
    }
    out
}

pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.network.validate(&ckpt.network_config)?;
    let params = ckpt.network.named_params();
    let shapes = param_shapes(&ckpt.network);
    let mut records = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, values: &[f32]| {
        records.push(TensorRecord {
            name,
            shape,
            offset: payload.len(),
            len: values.len(),
        });
        for v in values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for ((name, _, values), shape) in params.iter().zip(&shapes) {
        push(name.clone(), shape.clone(), values);
    }
    if let Some(opt) = &ckpt.optimizer {
        if opt.m.len() != params.len() || opt.v.len() != params.len() {
            return Err(Error::Dimension("optimizer state does not match the network".into()));
        }
        for (i, ((name, _, _), shape)) in params.iter().zip(&shapes).enumerate() {
            push(format!("adam.m.{name}"), shape.clone(), &opt.m[i]);
            push(format!("adam.v.{name}"), shape.clone(), &opt.v[i]);
        }
    }
    let header = Header {
        version: FORMAT_VERSION,
        network_config: ckpt.network_config.clone(),
        train_config: ckpt.train_config.clone(),
        meta: ckpt.meta.clone(),
        optimizer_step: ckpt.optimizer.as_ref().map(|o| o.step),
        tensors: records,
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn section<'a>(bytes: &'a [u8], start: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    start
        .checked_add(len)
        .and_then(|end| bytes.get(start..end))
        .ok_or_else(|| Error::Format(format!("file truncated in {what}")))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if section(bytes, 0, 8, "magic")? != MAGIC {
        return Err(Error::Format("bad magic; not a checkpoint file".into()));
    }
    let hlen = u64::from_le_bytes(section(bytes, 8, 8, "header length")?.try_into().unwrap());
    let hlen = usize::try_from(hlen).map_err(|_| Error::Format("header length overflows".into()))?;
    let header: Header = serde_json::from_slice(section(bytes, 16, hlen, "header")?)
        .map_err(|e| Error::Format(format!("header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            header.version
        )));
    }
    let payload = &bytes[16 + hlen..];
    let read_tensor = |rec: &TensorRecord| -> Result<Vec<f32>> {
        if rec.shape.iter().product::<usize>() != rec.len {
            return Err(Error::Format(format!("{}: shape {:?} disagrees with length {}", rec.name, rec.shape, rec.len)));
        }
        let raw = section(payload, rec.offset, rec.len * 4, &format!("payload of {}", rec.name))?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    };

    let cfg = header.network_config.clone();
    cfg.validate()?;
    let mut network = Network::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    let shapes = param_shapes(&network);
    let find = |name: &str| header.tensors.iter().find(|r| r.name == name);
    let n_params;
    {
        let mut params = network.named_params_mut();
        n_params = params.len();
        for ((name, _, dst), shape) in params.iter_mut().zip(&shapes) {
            let rec = find(name).ok_or_else(|| Error::Format(format!("manifest lacks {name}")))?;
            if &rec.shape != shape {
                return Err(Error::Format(format!("{name}: stored shape {:?}, expected {shape:?}", rec.shape)));
            }
            dst.copy_from_slice(&read_tensor(rec)?);
        }
    }
    let optimizer = match header.optimizer_step {
        None => None,
        Some(step) => {
            let mut m = Vec::with_capacity(n_params);
            let mut v = Vec::with_capacity(n_params);
            for (name, _, _) in network.named_params() {
                for (prefix, out) in [("adam.m.", &mut m), ("adam.v.", &mut v)] {
                    let key = format!("{prefix}{name}");
                    let rec = find(&key).ok_or_else(|| Error::Format(format!("manifest lacks {key}")))?;
                    out.push(read_tensor(rec)?);
                }
            }
            Some(OptimizerState { step, m, v })
        }
    };
    network.validate(&cfg)?;
    Ok(Checkpoint {
        network_config: cfg,
        train_config: header.train_config,
        meta: header.meta,
        network,
        optimizer,
    })
}

pub fn save(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::neuron::SpikeMode;

    fn sample(seed: u64, with_opt: bool) -> Checkpoint {
        let cfg = NetworkConfig {
            channels: 4,
            embedding_dim: 3,
            kernel: 3,
            n_spiking_conv: 2,
            spike_mode: SpikeMode::Binary,
            ..NetworkConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut network = Network::<f32>::init(&cfg, &mut rng).unwrap();
        for (_, _, p) in network.named_params_mut() {
            for x in p.iter_mut() {
                *x = rng.gen_range(-2.0..2.0);
            }
        }
        let optimizer = with_opt.then(|| {
            let mut st = OptimizerState::new(&network);
            st.step = 17;
            for v in st.m.iter_mut().chain(st.v.iter_mut()) {
                v.iter_mut().for_each(|x| *x = rng.gen());
            }
            st
        });
        Checkpoint {
            network_config: cfg,
            train_config: TrainConfig::default(),
            meta: CheckpointMeta {
                epoch: 3,
                val_f1: 0.625,
                seed,
            },
            network,
            optimizer,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for with_opt in [false, true] {
            let ck = sample(5, with_opt);
            let back = from_bytes(&to_bytes(&ck).unwrap()).unwrap();
            assert_eq!(back, ck);
            for ((_, _, a), (_, _, b)) in ck.network.named_params().iter().zip(back.network.named_params()) {
                let bits = |s: &[f32]| s.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a), bits(b));
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample(9, true);
        save(&ck, &path).unwrap();
        assert_eq!(load(&path).unwrap(), ck);
        assert_eq!(&fs::read(&path).unwrap()[..8], MAGIC);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = to_bytes(&sample(1, false)).unwrap();
        bytes[..8].copy_from_slice(b"XXXXXXXX");
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(m)) if m.contains("magic")));
    }

    #[test]
    fn truncation_names_the_section() {
        let bytes = to_bytes(&sample(1, true)).unwrap();
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let cases = [(4, "magic"), (12, "header length"), (16 + hlen / 2, "header"), (bytes.len() - 3, "payload of adam.v.")];
        for (cut, what) in cases {
            match from_bytes(&bytes[..cut]) {
                Err(Error::Format(m)) => assert!(m.contains(what), "{cut}: {m}"),
                other => panic!("{cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let bytes = to_bytes(&sample(1, false)).unwrap();
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[16..16 + hlen]).unwrap().replacen("\"version\":1", "\"version\":7", 1);
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&bytes[16 + hlen..]);
        assert!(matches!(from_bytes(&out), Err(Error::Format(m)) if m.contains("version 7")));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load("/nonexistent/dir/x.ckpt").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/x.ckpt"));
    }
}
