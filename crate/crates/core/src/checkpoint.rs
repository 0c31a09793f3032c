//! Binary agent checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! b"ESIL1"
//! u32 actor layer count, then that many u32 layer sizes
//! u32 critic layer count, then that many u32 layer sizes
//! u8  head kind: 0 categorical, 1 gaussian
//! u64 parameter count
//! f64 parameters in agent layout (actor | log_std | critic)
//! ```

use std::fs;
use std::path::Path;

use crate::agent::{Agent, PolicyHead};
use crate::error::{EsilError, Result};
use crate::nn::Mlp;

const MAGIC: &[u8; 5] = b"ESIL1";

pub fn to_bytes(agent: &Agent) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for sizes in [agent.actor().layer_sizes(), agent.critic().layer_sizes()] {
        out.extend((sizes.len() as u32).to_le_bytes());
        for &s in sizes {
            out.extend((s as u32).to_le_bytes());
        }
    }
    out.push(u8::from(agent.head().is_gaussian()));
    let params = agent.params();
    out.extend((params.len() as u64).to_le_bytes());
    for v in params.values() {
        out.extend(v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            EsilError::Checkpoint(format!(
                "truncated checkpoint: needed {n} bytes for {what} at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn sizes(&mut self, what: &str) -> Result<Vec<usize>> {
        let n = self.u32(what)? as usize;
        if !(2..=64).contains(&n) {
            return Err(EsilError::Checkpoint(format!("implausible {what} layer count {n}")));
        }
        (0..n).map(|_| Ok(self.u32(what)? as usize)).collect()
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Agent> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(EsilError::Checkpoint("bad magic: not an agent checkpoint".into()));
    }
    let actor_sizes = r.sizes("actor")?;
    let critic_sizes = r.sizes("critic")?;
    let gaussian = match r.take(1, "head kind")?[0] {
        0 => false,
        1 => true,
        k => return Err(EsilError::Checkpoint(format!("unknown head kind {k}"))),
    };
    let count = r.u64("parameter count")? as usize;
    let actor_n = crate::nn::mlp::param_count(&actor_sizes);
    let critic_n = crate::nn::mlp::param_count(&critic_sizes);
    let out_dim = *actor_sizes.last().expect("at least two layers");
    let log_std_n = if gaussian { out_dim } else { 0 };
    if count != actor_n + log_std_n + critic_n {
        return Err(EsilError::dim("checkpoint parameter count", actor_n + log_std_n + critic_n, count));
    }
    let raw = r.take(count.saturating_mul(8), "parameters")?;
    if r.pos != bytes.len() {
        return Err(EsilError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let actor = Mlp::from_params(&actor_sizes, values[..actor_n].to_vec())?;
    let critic = Mlp::from_params(&critic_sizes, values[actor_n + log_std_n..].to_vec())?;
    let head = if gaussian {
        PolicyHead::Gaussian {
            log_std: values[actor_n..actor_n + log_std_n].to_vec(),
        }
    } else {
        PolicyHead::Categorical { actions: out_dim }
    };
    Agent::from_parts(actor, critic, head)
}

pub fn save(agent: &Agent, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(agent)).map_err(|e| EsilError::io(path, e))
}

pub fn load(path: &Path) -> Result<Agent> {
    from_bytes(&fs::read(path).map_err(|e| EsilError::io(path, e))?)
}

/// Loads `path` into `agent`, which must have the same architecture.
pub fn load_into(agent: &mut Agent, path: &Path) -> Result<()> {
    let loaded = load(path)?;
    check_compatible(agent, &loaded)?;
    *agent = loaded;
    Ok(())
}

/// Errors unless both agents share layer sizes and head kind.
pub fn check_compatible(expected: &Agent, actual: &Agent) -> Result<()> {
    for (what, e, a) in [
        ("actor layer sizes", expected.actor().layer_sizes(), actual.actor().layer_sizes()),
        ("critic layer sizes", expected.critic().layer_sizes(), actual.critic().layer_sizes()),
    ] {
        if e != a {
            return Err(EsilError::Checkpoint(format!(
                "{what} mismatch: expected {e:?}, checkpoint has {a:?}"
            )));
        }
    }
    if expected.head().is_gaussian() != actual.head().is_gaussian() {
        return Err(EsilError::Checkpoint("policy head kind mismatch".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvKind, EnvRng};
    use rand::SeedableRng;

    fn agent(kind: EnvKind, hidden: &[usize]) -> Agent {
        let spec = kind.spec();
        let mut rng = EnvRng::seed_from_u64(1);
        Agent::new(spec.policy_input_dim(), &spec.action_space, hidden, &mut rng).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        for kind in EnvKind::ALL {
            let a = agent(kind, &[6, 5]);
            let b = from_bytes(&to_bytes(&a)).unwrap();
            let bits = |x: &Agent| x.params().values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = to_bytes(&agent(EnvKind::PointPush, &[4]));
        for cut in [0, 3, 7, 20, bytes.len() - 1] {
            let err = from_bytes(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("truncated"), "{cut}: {err}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn architecture_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        save(&agent(EnvKind::EmptyRoom, &[8]), &path).unwrap();
        let mut other = agent(EnvKind::EmptyRoom, &[16]);
        assert!(load_into(&mut other, &path).unwrap_err().to_string().contains("mismatch"));
        let mut same = agent(EnvKind::EmptyRoom, &[8]);
        load_into(&mut same, &path).unwrap();
    }
}
