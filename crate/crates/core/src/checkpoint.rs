//! Binary trainer checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SISLABCK"
//! version    u32
//! count      u32      number of fields
//! field*     name_len u16, name (UTF-8), tag u8, len u64, payload
//! ```
//!
//! Tags: 0 = `len` f64 values, 1 = `len` u64 values, 2 = `len` raw bytes.
//! Fields may appear in any order; unknown fields are ignored on load.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{AdamState, ParamVector};
use crate::safety_index::SafetyIndexParams;
use crate::trainer::{Counters, NetworkBundle, OptimizerStates, RngState, Trainer};

pub const MAGIC: &[u8; 8] = b"SISLABCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
enum Value {
    F64(Vec<f64>),
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

/// Everything needed to resume evaluation or verification of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub counters: Counters,
    pub zeta: SafetyIndexParams,
    pub nets: NetworkBundle,
    pub opt: OptimizerStates,
    pub rng: RngState,
    pub eval_rng: RngState,
}

fn bad(field: &str, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn from_trainer(config: &RunConfig, trainer: &Trainer) -> Self {
        let (rng, eval_rng) = trainer.rng_states();
        Self {
            config: RunConfig {
                trainer: trainer.config.clone(),
                ..config.clone()
            },
            config_hash: config.hash(),
            seed: trainer.seed,
            counters: trainer.counters,
            zeta: trainer.zeta,
            nets: trainer.nets.clone(),
            opt: trainer.opt.clone(),
            rng,
            eval_rng,
        }
    }

    fn fields(&self) -> Vec<(String, Value)> {
        let mut f: Vec<(String, Value)> = Vec::new();
        let mut put = |name: &str, v: Value| f.push((name.to_string(), v));
        put("config_toml", Value::Bytes(self.config.to_toml().into_bytes()));
        put("config_hash", Value::Bytes(self.config_hash.clone().into_bytes()));
        put("seed", Value::U64(vec![self.seed]));
        let c = self.counters;
        put(
            "counters",
            Value::U64(vec![
                c.env_steps,
                c.grad_steps,
                c.policy_updates,
                c.multiplier_updates,
                c.sis_updates,
                c.episodes,
                c.rejected_steps,
            ]),
        );
        let z = self.zeta;
        put("zeta", Value::F64(vec![z.sigma, z.n, z.k, z.eta_d, z.d_min]));
        let n = &self.nets;
        for (name, p) in [
            ("policy", &n.policy),
            ("q1", &n.q1),
            ("q2", &n.q2),
            ("q1_target", &n.q1_target),
            ("q2_target", &n.q2_target),
            ("q_phi", &n.q_phi),
            ("multiplier", &n.multiplier),
        ] {
            put(&format!("params.{name}"), Value::F64(p.0.clone()));
        }
        put("params.log_alpha", Value::F64(vec![n.log_alpha]));
        let o = &self.opt;
        for (name, s) in [
            ("policy", &o.policy),
            ("q1", &o.q1),
            ("q2", &o.q2),
            ("q_phi", &o.q_phi),
            ("multiplier", &o.multiplier),
            ("log_alpha", &o.log_alpha),
        ] {
            put(&format!("adam.{name}.m"), Value::F64(s.m.clone()));
            put(&format!("adam.{name}.v"), Value::F64(s.v.clone()));
            put(&format!("adam.{name}.t"), Value::U64(vec![s.t]));
            put(&format!("adam.{name}.hyper"), Value::F64(vec![s.beta1, s.beta2, s.eps]));
        }
        for (name, r) in [("rng", &self.rng), ("eval_rng", &self.eval_rng)] {
            put(&format!("{name}.seed"), Value::Bytes(r.seed.to_vec()));
            put(
                &format!("{name}.position"),
                Value::U64(vec![r.stream, r.word_pos as u64, (r.word_pos >> 64) as u64]),
            );
        }
        f
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let fields = self.fields();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(fields.len() as u32).to_le_bytes());
        for (name, v) in fields {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match v {
                Value::F64(xs) => {
                    out.push(0);
                    out.extend_from_slice(&(xs.len() as u64).to_le_bytes());
                    for x in xs {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Value::U64(xs) => {
                    out.push(1);
                    out.extend_from_slice(&(xs.len() as u64).to_le_bytes());
                    for x in xs {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Value::Bytes(b) => {
                    out.push(2);
                    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
                    out.extend_from_slice(&b);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take("magic", 8)? != MAGIC {
            return Err(bad("magic", "not a checkpoint file"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(bad("version", format!("found {version}, this build reads {VERSION}")));
        }
        let count = r.u32("count")?;
        let mut map = BTreeMap::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take("field name", 2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(r.take("field name", len)?.to_vec())
                .map_err(|_| bad("field name", "not UTF-8"))?;
            let tag = r.take(&name, 1)?[0];
            let n = r.u64(&name)? as usize;
            let value = match tag {
                0 => Value::F64(
                    r.take(&name, n.checked_mul(8).ok_or_else(|| bad(&name, "length overflow"))?)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
                1 => Value::U64(
                    r.take(&name, n.checked_mul(8).ok_or_else(|| bad(&name, "length overflow"))?)?
                        .chunks_exact(8)
                        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
                2 => Value::Bytes(r.take(&name, n)?.to_vec()),
                t => return Err(bad(&name, format!("unknown type tag {t}"))),
            };
            map.insert(name, value);
        }
        Fields(map).build()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, field: &str, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(bad(field, "truncated")),
        }
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(field, 4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(field, 8)?.try_into().expect("8 bytes")))
    }
}

struct Fields(BTreeMap<String, Value>);

impl Fields {
    fn get(&self, name: &str) -> Result<&Value> {
        self.0.get(name).ok_or_else(|| bad(name, "missing"))
    }

    fn f64s(&self, name: &str, len: Option<usize>) -> Result<Vec<f64>> {
        match self.get(name)? {
            Value::F64(v) if len.is_none_or(|l| l == v.len()) => Ok(v.clone()),
            Value::F64(v) => Err(bad(name, format!("expected {} values, found {}", len.unwrap_or(0), v.len()))),
            _ => Err(bad(name, "expected f64 values")),
        }
    }

    fn u64s(&self, name: &str, len: usize) -> Result<Vec<u64>> {
        match self.get(name)? {
            Value::U64(v) if v.len() == len => Ok(v.clone()),
            Value::U64(v) => Err(bad(name, format!("expected {len} values, found {}", v.len()))),
            _ => Err(bad(name, "expected u64 values")),
        }
    }

    fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.get(name)? {
            Value::Bytes(b) => Ok(b),
            _ => Err(bad(name, "expected bytes")),
        }
    }

    fn text(&self, name: &str) -> Result<String> {
        String::from_utf8(self.bytes(name)?.to_vec()).map_err(|_| bad(name, "not UTF-8"))
    }

    fn rng(&self, name: &str) -> Result<RngState> {
        let s = self.bytes(&format!("{name}.seed"))?;
        let seed: [u8; 32] = s
            .try_into()
            .map_err(|_| bad(&format!("{name}.seed"), "expected 32 bytes"))?;
        let p = self.u64s(&format!("{name}.position"), 3)?;
        Ok(RngState {
            seed,
            stream: p[0],
            word_pos: (p[1] as u128) | ((p[2] as u128) << 64),
        })
    }

    fn adam(&self, name: &str, len: usize) -> Result<AdamState> {
        let h = self.f64s(&format!("adam.{name}.hyper"), Some(3))?;
        Ok(AdamState {
            m: self.f64s(&format!("adam.{name}.m"), Some(len))?,
            v: self.f64s(&format!("adam.{name}.v"), Some(len))?,
            t: self.u64s(&format!("adam.{name}.t"), 1)?[0],
            beta1: h[0],
            beta2: h[1],
            eps: h[2],
        })
    }

    fn build(self) -> Result<Checkpoint> {
        let config = RunConfig::from_toml(&self.text("config_toml")?)
            .map_err(|e| bad("config_toml", e.to_string()))?;
        let seed = self.u64s("seed", 1)?[0];
        let c = self.u64s("counters", 7)?;
        let counters = Counters {
            env_steps: c[0],
            grad_steps: c[1],
            policy_updates: c[2],
            multiplier_updates: c[3],
            sis_updates: c[4],
            episodes: c[5],
            rejected_steps: c[6],
        };
        let z = self.f64s("zeta", Some(5))?;
        let zeta = SafetyIndexParams {
            sigma: z[0],
            n: z[1],
            k: z[2],
            eta_d: z[3],
            d_min: z[4],
        };
        // Shapes come from the stored config; parameters are then overwritten.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut nets = NetworkBundle::new(&config.networks, 1.0, &mut rng)
            .map_err(|e| bad("config_toml", e.to_string()))?;
        let (np, nc, nm) = (
            nets.policy_net.num_params(),
            nets.critic_net.num_params(),
            nets.multiplier_net.num_params(),
        );
        let pv = |name: &str, len: usize| -> Result<ParamVector> {
            Ok(ParamVector(self.f64s(&format!("params.{name}"), Some(len))?))
        };
        nets.policy = pv("policy", np)?;
        nets.q1 = pv("q1", nc)?;
        nets.q2 = pv("q2", nc)?;
        nets.q1_target = pv("q1_target", nc)?;
        nets.q2_target = pv("q2_target", nc)?;
        nets.q_phi = pv("q_phi", nc)?;
        nets.multiplier = pv("multiplier", nm)?;
        nets.log_alpha = self.f64s("params.log_alpha", Some(1))?[0];
        let opt = OptimizerStates {
            policy: self.adam("policy", np)?,
            q1: self.adam("q1", nc)?,
            q2: self.adam("q2", nc)?,
            q_phi: self.adam("q_phi", nc)?,
            multiplier: self.adam("multiplier", nm)?,
            log_alpha: self.adam("log_alpha", 1)?,
        };
        Ok(Checkpoint {
            config,
            config_hash: self.text("config_hash")?,
            seed,
            counters,
            zeta,
            nets,
            opt,
            rng: self.rng("rng")?,
            eval_rng: self.rng("eval_rng")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::PointEnv;

    fn sample() -> Checkpoint {
        let mut cfg = RunConfig::default();
        cfg.networks.hidden = vec![6, 5];
        cfg.trainer.batch_size = 8;
        cfg.trainer.buffer_capacity = 200;
        cfg.trainer.warmup_steps = 20;
        cfg.trainer.eval_interval = 1000;
        let env = PointEnv::new(cfg.env.clone()).unwrap();
        let mut t = Trainer::new(
            cfg.trainer.clone(),
            env,
            &cfg.networks,
            cfg.initial_index().unwrap(),
            11,
        )
        .unwrap();
        t.train(80).unwrap();
        Checkpoint::from_trainer(&cfg, &t)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        for (a, b) in c.nets.policy.iter().zip(back.nets.policy.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.zeta, c.zeta);
    }

    #[test]
    fn version_mismatch_refused() {
        let mut bytes = sample().to_bytes();
        bytes[8..12].copy_from_slice(&(VERSION + 1).to_le_bytes());
        match Checkpoint::from_bytes(&bytes) {
            Err(Error::Checkpoint { field, .. }) => assert_eq!(field, "version"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn corruption_names_a_field() {
        let bytes = sample().to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(b"NOTACKPT\x01\x00\x00\x00"),
            Err(Error::Checkpoint { ref field, .. }) if field == "magic"
        ));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(Checkpoint::from_bytes(cut), Err(Error::Checkpoint { .. })));
    }
}
