//! Versioned binary checkpoints of named networks.
//!
//! Layout: magic `DEARNET1`, `u32` version, `u32` descriptor length, JSON descriptor
//! (names, architectures, free-form metadata), then per network a `u64` parameter
//! count followed by little-endian `f64` parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mlp, MlpArch};
use crate::smdp::io::{read_f64_column, read_u32, read_u64};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"DEARNET1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Descriptor {
    nets: Vec<(String, MlpArch)>,
    meta: serde_json::Value,
}

/// A set of named networks plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub nets: Vec<(String, Mlp)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self { nets: Vec::new(), meta }
    }

    pub fn with(mut self, name: &str, net: &Mlp) -> Self {
        self.nets.push((name.to_string(), net.clone()));
        self
    }

    pub fn get(&self, name: &str) -> Result<&Mlp> {
        self.nets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::DescriptorMismatch { expected: name.to_string(), found: self.names().join(",") })
    }

    fn names(&self) -> Vec<String> {
        self.nets.iter().map(|(n, _)| n.clone()).collect()
    }

    /// The network `name`, required to have architecture `arch`.
    pub fn expect(&self, name: &str, arch: &MlpArch) -> Result<Mlp> {
        let net = self.get(name)?;
        if net.arch() != arch {
            return Err(Error::DescriptorMismatch {
                expected: format!("{name}: {arch:?}"),
                found: format!("{name}: {:?}", net.arch()),
            });
        }
        Ok(net.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let desc = Descriptor {
            nets: self.nets.iter().map(|(n, m)| (n.clone(), m.arch().clone())).collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&desc)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, net) in &self.nets {
            w.write_all(&(net.params().len() as u64).to_le_bytes())?;
            for p in net.params() {
                w.write_all(&p.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format { path: path.into(), reason: reason.into() };
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let len = read_u32(&mut r)? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let desc: Descriptor = serde_json::from_slice(&json)?;
        let mut nets = Vec::with_capacity(desc.nets.len());
        for (name, arch) in desc.nets {
            let n = read_u64(&mut r)? as usize;
            if n != arch.param_count() {
                return Err(Error::DescriptorMismatch {
                    expected: format!("{name}: {} parameters", arch.param_count()),
                    found: format!("{n} parameters"),
                });
            }
            let params = read_f64_column(&mut r, n)?;
            nets.push((name, Mlp::from_params(arch, params)?));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { nets, meta: desc.meta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcapprox::{Activation, OutputActivation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_and_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let arch = MlpArch::new(3, &[5], 2, Activation::Tanh, OutputActivation::Logistic);
        let net = Mlp::init(arch.clone(), &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        Checkpoint::new(serde_json::json!({"step": 7})).with("q", &net).save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back.meta["step"], 7);
        assert_eq!(back.expect("q", &arch).unwrap(), net);
        let other = MlpArch::new(3, &[6], 2, Activation::Tanh, OutputActivation::Logistic);
        assert!(matches!(back.expect("q", &other), Err(Error::DescriptorMismatch { .. })));
        assert!(matches!(back.get("v"), Err(Error::DescriptorMismatch { .. })));
    }

    #[test]
    fn truncated_file_fails() {
        let net = Mlp::zeros(MlpArch::new(2, &[], 1, Activation::Relu, OutputActivation::Identity));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        Checkpoint::new(serde_json::Value::Null).with("n", &net).save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(Checkpoint::load(&p).is_err());
    }
}
