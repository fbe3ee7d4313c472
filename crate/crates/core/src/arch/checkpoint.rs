use std::collections::HashMap;
use std::path::Path;

use super::config::NetworkConfig;
use super::network::Network;
use crate::kpkernel::KernelDisposition;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A named tensor of a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Everything needed to rebuild a network and resume its training.
///
/// Layout, little-endian: magic, `u32` version, `u64` length + config JSON,
/// `u64` step, `u64` seed, `u64` record count, then per record `u32` name
/// length + name, `u32` rank, `u64` dims, `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    /// Number of training steps already taken.
    pub step: u64,
    /// Seed of the batch sampler; with `step` this is the sampler state.
    pub seed: u64,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn from_network(net: &Network, step: u64, seed: u64) -> Checkpoint {
        let mut records = Vec::new();
        for (l, kd) in net.kernels().iter().enumerate() {
            records.push(Record {
                name: format!("kernel{l}.points"),
                shape: vec![kd.len(), 3],
                values: kd.points.iter().flatten().copied().collect(),
            });
            records.push(Record {
                name: format!("kernel{l}.geometry"),
                shape: vec![2],
                values: vec![kd.radius, kd.influence],
            });
        }
        for p in net.params().iter() {
            records.push(Record {
                name: p.name.clone(),
                shape: p.shape.clone(),
                values: p.value.clone(),
            });
            records.push(Record {
                name: format!("{}.momentum", p.name),
                shape: p.shape.clone(),
                values: p.momentum_buffer.clone(),
            });
        }
        for s in net.running_stats() {
            records.push(Record {
                name: format!("{}.running_mean", s.name),
                shape: vec![s.mean.len()],
                values: s.mean.clone(),
            });
            records.push(Record {
                name: format!("{}.running_var", s.name),
                shape: vec![s.var.len()],
                values: s.var.clone(),
            });
        }
        Checkpoint {
            config: net.config().clone(),
            step,
            seed,
            records,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
            for &d in &r.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &r.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(
                "bad magic bytes, not a checkpoint".into(),
            ));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let len = r.len("config length")?;
        let json = r.take(len, "config")?;
        let config: NetworkConfig =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let step = r.u64("step")?;
        let seed = r.u64("seed")?;
        let count = r.len("record count")?;
        let mut records = Vec::new();
        for i in 0..count {
            let what = format!("record {i}");
            let name_len = r.u32(&what)? as usize;
            let name = std::str::from_utf8(r.take(name_len, &what)?)
                .map_err(|_| Error::Checkpoint(format!("{what}: name is not UTF-8")))?
                .to_string();
            let rank = r.u32(&name)? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.len(&name)?);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
            let raw = r.take(numel.saturating_mul(8), &name)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            records.push(Record {
                name,
                shape,
                values,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last record",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config,
            step,
            seed,
            records,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes)
    }

    /// Rebuilds the network. With `expected`, the stored config must match
    /// it; the first differing field is named in the error.
    pub fn to_network(&self, expected: Option<&NetworkConfig>) -> Result<Network> {
        if let Some(cfg) = expected {
            if let Some(field) = cfg.first_difference(&self.config) {
                return Err(Error::Checkpoint(format!(
                    "config mismatch in field {field}: checkpoint has {}, expected {}",
                    field_value(&self.config, &field),
                    field_value(cfg, &field)
                )));
            }
        }
        let mut net = Network::new(self.config.clone(), 0)?;
        let mut by_name: HashMap<&str, &Record> = HashMap::new();
        for r in &self.records {
            if by_name.insert(r.name.as_str(), r).is_some() {
                return Err(Error::Checkpoint(format!("duplicate record {}", r.name)));
            }
        }
        let mut used = 0usize;
        let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let r = by_name
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing record {name}")))?;
            if r.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "record {name} has shape {:?}, expected {shape:?}",
                    r.shape
                )));
            }
            used += 1;
            Ok(r.values.clone())
        };
        let mut kernels = Vec::new();
        for (l, kd) in net.kernels().iter().enumerate() {
            let pts = take(&format!("kernel{l}.points"), &[kd.len(), 3])?;
            let geo = take(&format!("kernel{l}.geometry"), &[2])?;
            let points = pts.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            kernels.push(
                KernelDisposition::new(points, geo[0], geo[1])
                    .map_err(|e| Error::Checkpoint(e.to_string()))?,
            );
        }
        net.set_kernels(kernels)?;
        for p in net.params_mut().iter_mut() {
            p.value = take(&p.name, &p.shape)?;
            p.momentum_buffer = take(&format!("{}.momentum", p.name), &p.shape)?;
        }
        for s in net.running_stats_mut() {
            s.mean = take(&format!("{}.running_mean", s.name), &[s.mean.len()])?;
            s.var = take(&format!("{}.running_var", s.name), &[s.var.len()])?;
        }
        if used != self.records.len() {
            return Err(Error::Checkpoint(format!(
                "{} records do not belong to this network",
                self.records.len() - used
            )));
        }
        Ok(net)
    }
}

fn field_value(cfg: &NetworkConfig, field: &str) -> String {
    serde_json::to_value(cfg)
        .ok()
        .and_then(|v| v.get(field).map(|x| x.to_string()))
        .unwrap_or_default()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated file while reading {what} at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?)
            .map_err(|_| Error::Checkpoint(format!("{what} does not fit in memory")))
    }
}

pub fn save_checkpoint(net: &Network, step: u64, seed: u64, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint::from_network(net, step, seed).save(path)
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
    expected: Option<&NetworkConfig>,
) -> Result<(Network, Checkpoint)> {
    let ckpt = Checkpoint::load(path)?;
    let net = ckpt.to_network(expected)?;
    Ok((net, ckpt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::build_pyramid;
    use crate::nncore::Mode;
    use crate::pccore::LabeledCloud;

    fn small_config(stack_depth: usize) -> NetworkConfig {
        NetworkConfig {
            num_layers: 3,
            radii: vec![0.2, 0.4, 0.8],
            cell_sizes: vec![0.2, 0.4, 0.8],
            channels: vec![4, 6, 8],
            stack_depth,
            kernel_size: 7,
            ..NetworkConfig::tiny()
        }
    }

    fn probe() -> LabeledCloud {
        LabeledCloud::from_coords(
            (0..200)
                .map(|i| {
                    [
                        (i % 10) as f64 * 0.15,
                        (i / 10 % 5) as f64 * 0.15,
                        (i / 50) as f64 * 0.1,
                    ]
                })
                .collect(),
        )
    }

    #[test]
    fn round_trip_is_exact() {
        let mut net = Network::new(small_config(3), 5).unwrap();
        net.params_mut()
            .iter_mut()
            .for_each(|p| p.momentum_buffer.iter_mut().for_each(|m| *m = 0.25));
        let ckpt = Checkpoint::from_network(&net, 17, 99);
        let bytes = ckpt.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.encode(), bytes);
        let net2 = back.to_network(Some(&small_config(3))).unwrap();
        let batch = build_pyramid(&probe(), net.config()).unwrap();
        let a = net.logits(&batch, Mode::Eval).unwrap();
        let b = net2.logits(&batch, Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(Checkpoint::from_network(&net2, 17, 99).encode(), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let net = Network::new(small_config(1), 0).unwrap();
        let bytes = Checkpoint::from_network(&net, 0, 0).encode();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(
            matches!(Checkpoint::decode(&bad), Err(Error::Checkpoint(m)) if m.contains("magic"))
        );
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 3]).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(Checkpoint::decode(&v2).is_err());
    }

    #[test]
    fn stack_depth_mismatch_is_named() {
        let net = Network::new(small_config(3), 0).unwrap();
        let ckpt = Checkpoint::from_network(&net, 0, 0);
        let err = ckpt.to_network(Some(&small_config(2))).unwrap_err();
        assert!(err.to_string().contains("stack_depth"), "{err}");
    }
}
