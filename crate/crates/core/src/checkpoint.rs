//! Binary policy checkpoints.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic      8 bytes  "BRTCKPT\0"
//! version    u32
//! obs_dim    u32
//! hidden     u32
//! action_dim u32
//! iteration  u64
//! parent     i64      (-1 = fresh init)
//! reward     f64
//! phi_len    u32
//! phi        phi_len x f64
//! theta_len  u64
//! theta      theta_len x f64
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::policy::{Arch, Policy};
use crate::space::ParamVector;

pub const MAGIC: &[u8; 8] = b"BRTCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

/// History metadata stored alongside the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub iteration: u64,
    pub parent: Option<u64>,
    pub reward: f64,
    pub phi: ParamVector,
}

pub fn file_name(iteration: u64) -> String {
    format!("ckpt_{iteration}.bin")
}

pub fn encode(policy: &Policy, meta: &CheckpointMeta) -> Vec<u8> {
    let arch = policy.arch();
    let mut buf = Vec::with_capacity(64 + 8 * (meta.phi.len() + policy.params().len()));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [arch.obs_dim, arch.hidden, arch.action_dim] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&meta.iteration.to_le_bytes());
    let parent = meta.parent.map_or(-1, |p| p as i64);
    buf.extend_from_slice(&parent.to_le_bytes());
    buf.extend_from_slice(&meta.reward.to_le_bytes());
    buf.extend_from_slice(&(meta.phi.len() as u32).to_le_bytes());
    for v in meta.phi.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(policy.params().len() as u64).to_le_bytes());
    for v in policy.params() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn save(path: &Path, policy: &Policy, meta: &CheckpointMeta) -> Result<()> {
    fs::write(path, encode(policy, meta))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::CheckpointCorrupt {
            path: PathBuf::from(self.path),
            reason: reason.into(),
        }
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.corrupt(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(slice.try_into().expect("slice has length N"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if self.bytes.len().saturating_sub(self.pos) < n.saturating_mul(8) {
            return Err(self.corrupt(format!("truncated: {n} floats declared")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Decodes a checkpoint, checking it against `expected` architecture.
pub fn decode(bytes: &[u8], path: &Path, expected: Arch) -> Result<(Policy, CheckpointMeta)> {
    let mut r = Reader { bytes, pos: 0, path };
    let magic: [u8; 8] = r.take()?;
    if &magic != MAGIC {
        return Err(r.corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let arch = Arch::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if arch != expected {
        return Err(Error::CheckpointArch {
            found: arch.as_tuple(),
            expected: expected.as_tuple(),
        });
    }
    let iteration = r.u64()?;
    let parent = r.i64()?;
    let reward = r.f64()?;
    let phi_len = r.u32()? as usize;
    let phi = r.f64s(phi_len)?;
    let theta_len = r.u64()? as usize;
    if theta_len != arch.param_count() {
        return Err(r.corrupt(format!(
            "parameter count {theta_len} does not match architecture ({})",
            arch.param_count()
        )));
    }
    let theta = r.f64s(theta_len)?;
    if r.pos != bytes.len() {
        return Err(r.corrupt("trailing bytes"));
    }
    let policy = Policy::from_params(arch, theta).map_err(|e| r.corrupt(e.to_string()))?;
    let meta = CheckpointMeta {
        iteration,
        parent: u64::try_from(parent).ok(),
        reward,
        phi: ParamVector(phi),
    };
    Ok((policy, meta))
}

pub fn load(path: &Path, expected: Arch) -> Result<(Policy, CheckpointMeta)> {
    let bytes = fs::read(path)?;
    decode(&bytes, path, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            iteration: 3,
            parent: Some(2),
            reward: 412.5,
            phi: ParamVector(vec![0.75, 1.0]),
        }
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(file_name(3));
        let p = Policy::init(Arch::new(3, 16, 1), 8);
        save(&path, &p, &meta()).unwrap();
        let (q, m) = load(&path, p.arch()).unwrap();
        assert_eq!(q, p);
        assert_eq!(m, meta());
    }

    #[test]
    fn bootstrap_parent_round_trips_as_none() {
        let p = Policy::init(Arch::new(3, 4, 1), 1);
        let m = CheckpointMeta {
            parent: None,
            ..meta()
        };
        let (_, back) = decode(&encode(&p, &m), Path::new("x"), p.arch()).unwrap();
        assert_eq!(back.parent, None);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let p = Policy::init(Arch::new(3, 16, 1), 8);
        let bytes = encode(&p, &meta());
        for cut in [0, 5, 20, bytes.len() - 1] {
            let err = decode(&bytes[..cut], Path::new("x"), p.arch()).unwrap_err();
            assert!(matches!(err, Error::CheckpointCorrupt { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn arch_mismatch_is_distinct() {
        let p = Policy::init(Arch::new(3, 16, 1), 8);
        let err = decode(&encode(&p, &meta()), Path::new("x"), Arch::new(4, 16, 1)).unwrap_err();
        assert!(matches!(err, Error::CheckpointArch { .. }));
    }

    #[test]
    fn version_mismatch_is_distinct() {
        let p = Policy::init(Arch::new(3, 16, 1), 8);
        let mut bytes = encode(&p, &meta());
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = decode(&bytes, Path::new("x"), p.arch()).unwrap_err();
        assert!(matches!(err, Error::CheckpointVersion { found: 7, .. }));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(theta in prop::collection::vec(-1e300f64..1e300, 13)) {
            let p = Policy::from_params(Arch::new(2, 3, 1), theta).unwrap();
            let (q, _) = decode(&encode(&p, &meta()), Path::new("x"), p.arch()).unwrap();
            let a: Vec<u64> = p.params().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = q.params().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
