//! Binary checkpoints: `FLPC` magic, `u32` version, length-prefixed JSON
//! header, `f32` parameters, then the optimizer moments. Little-endian.

use crate::autodiff::{AdamConfig, OptimizerState};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::policy::{ArchConfig, PolicyParams};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"FLPC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Iterations completed.
    pub iteration: u64,
    pub skipped_iterations: u64,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub config: Config,
    pub optimizer: OptimizerState,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: ArchConfig,
    config: Config,
    meta: TrainingMeta,
    n_params: u64,
    optimizer: OptimizerHeader,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
    warnings: u64,
}

fn write_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    out.reserve(xs.len() * 4);
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n = self.params.len();
        if self.optimizer.m.len() != n || self.optimizer.v.len() != n {
            return Err(Error::contract("optimizer state does not match the parameter count"));
        }
        let header = Header {
            arch: self.params.arch.clone(),
            config: self.config.clone(),
            meta: self.meta.clone(),
            n_params: n as u64,
            optimizer: OptimizerHeader {
                config: self.optimizer.config,
                step: self.optimizer.step,
                warnings: self.optimizer.warnings,
            },
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 12 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        write_f32s(&mut out, &self.params.values);
        write_f32s(&mut out, &self.optimizer.m);
        write_f32s(&mut out, &self.optimizer.v);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let hlen = r.u32("header length")? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen, "header")?)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let n = usize::try_from(header.n_params).map_err(|_| Error::Format("parameter count overflows".into()))?;
        let values = r.f32s(n, "parameters")?;
        let m = r.f32s(n, "first moments")?;
        let v = r.f32s(n, "second moments")?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let params = PolicyParams::from_values(&header.arch, values)
            .map_err(|e| Error::Format(format!("parameters do not fit the architecture: {e}")))?;
        Ok(Checkpoint {
            params,
            config: header.config,
            optimizer: OptimizerState {
                config: header.optimizer.config,
                m,
                v,
                step: header.optimizer.step,
                warnings: header.optimizer.warnings,
            },
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(Error::at(path))?;
        f.write_all(&bytes).map_err(Error::at(path))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(Error::at(path))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated(format!("checkpoint ends inside the {what}")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let len = n.checked_mul(4).ok_or_else(|| Error::Format("parameter count overflows".into()))?;
        let raw = self.take(len, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::init_params;

    fn sample() -> Checkpoint {
        let arch = ArchConfig {
            encoder: vec![8],
            hidden: 4,
            head: vec![5],
            ..ArchConfig::default()
        };
        let params = init_params(&arch, 3).unwrap();
        let mut opt = OptimizerState::new(params.len(), AdamConfig::default());
        opt.m.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 1e-3);
        opt.v.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f32).sqrt());
        opt.step = 17;
        Checkpoint {
            config: Config {
                arch: arch.clone(),
                ..Config::default()
            },
            params,
            optimizer: opt,
            meta: TrainingMeta {
                iteration: 17,
                skipped_iterations: 1,
                wall_time_secs: 12.5,
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn distinct_load_errors() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
        let mut v2 = bytes.clone();
        v2[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&v2), Err(Error::Version { found: 2, expected: 1 })));
        for cut in [2, 6, 11, 40, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Truncated(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(Error::Format(_))));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        let c = sample();
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), c);
        assert!(matches!(Checkpoint::load(&dir.path().join("missing")), Err(Error::Path { .. })));
    }
}
