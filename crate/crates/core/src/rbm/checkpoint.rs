//! Versioned binary RBM checkpoint with a JSON sidecar describing the group.
//!
//! Layout (little endian): magic `SRBM`, `u32` version, `u32` n_visible,
//! `u32` n_hidden, then `f64` arrays: comp_mean, comp_std, vis_bias, hid_bias,
//! weights (row-major `n_hidden x n_visible`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Rbm, RbmGroupSpec, Standardizer, VISIBLE_SIGMA};
use crate::error::{Error, Result};
use crate::volume::io::{read_json, write_atomic, write_json};

pub const RBM_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SRBM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmSidecar {
    pub format_version: u32,
    pub group: RbmGroupSpec,
    pub n_visible: usize,
    pub n_hidden: usize,
    pub visible_sigma: f64,
    #[serde(default)]
    pub flagged_components: Vec<usize>,
}

fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

pub fn save_rbm(path: &Path, rbm: &Rbm) -> Result<()> {
    let m = rbm.n_visible;
    let n = rbm.n_hidden;
    let mut bytes = Vec::with_capacity(16 + 8 * (3 * m + n + n * m));
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&RBM_FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(m as u32).to_le_bytes());
    bytes.extend_from_slice(&(n as u32).to_le_bytes());
    for arr in [&rbm.stats.mean, &rbm.stats.std, &rbm.vis_bias, &rbm.hid_bias, &rbm.weights] {
        for v in arr.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)?;
    let sidecar = RbmSidecar {
        format_version: RBM_FORMAT_VERSION,
        group: rbm.spec.clone(),
        n_visible: m,
        n_hidden: n,
        visible_sigma: VISIBLE_SIGMA,
        flagged_components: rbm.stats.flagged.clone(),
    };
    write_json(&sidecar_path(path), &sidecar)
}

pub fn load_rbm(path: &Path) -> Result<Rbm> {
    let sidecar: RbmSidecar = read_json(&sidecar_path(path))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Data(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not an RBM checkpoint"));
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    let version = word(4);
    if version != RBM_FORMAT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let m = word(8) as usize;
    let n = word(12) as usize;
    if m != sidecar.n_visible || n != sidecar.n_hidden || m != sidecar.group.n_visible() {
        return Err(bad("header disagrees with sidecar"));
    }
    let expected = 16 + 8 * (3 * m + n + n * m);
    if bytes.len() != expected {
        return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut floats = bytes[16..].chunks_exact(8).map(|c| {
        f64::from_le_bytes(c.try_into().expect("8-byte chunk"))
    });
    let mut take = |len: usize| -> Vec<f64> { floats.by_ref().take(len).collect() };
    let mean = take(m);
    let std = take(m);
    let vis = take(m);
    let hid = take(n);
    let weights = take(n * m);
    let stats = Standardizer { mean, std, flagged: sidecar.flagged_components };
    Rbm::from_parts(sidecar.group, weights, vis, hid, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::PATCH_2D;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut rbm = Rbm::new(RbmGroupSpec::haemo(PATCH_2D), 7, 0.3, &mut rng).unwrap();
        rbm.hid_bias[2] = -0.125;
        rbm.stats.mean[0] = 3.5;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rbm_haemo.bin");
        save_rbm(&p, &rbm).unwrap();
        assert!(dir.path().join("rbm_haemo.json").exists());
        assert_eq!(load_rbm(&p).unwrap(), rbm);
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rbm = Rbm::new(RbmGroupSpec::haemo(PATCH_2D), 2, 0.3, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.bin");
        save_rbm(&p, &rbm).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_rbm(&p).is_err());
    }
}
