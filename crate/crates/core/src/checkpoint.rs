//! Binary snapshot of a [`Trainer`] that resumes bit-exactly.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "SV2CKPT\0"
//! version u32
//! digest  u32 length + UTF-8 (sha256 of the config text)
//! config  u32 length + UTF-8 (resolved key=value text)
//! rng     32-byte seed, u64 stream, u128 word position
//! count   u32
//! arrays  count x { u32 name length, name, u32 ndim, ndim x u64 dims, f64 values }
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::normalizers::{RewardScaler, RunningStat};
use crate::params::ParamStore;
use crate::trainer::Trainer;

pub const MAGIC: &[u8; 8] = b"SV2CKPT\0";
pub const VERSION: u32 = 1;

/// A named f64 array with its shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub digest: String,
    pub config_text: String,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub arrays: BTreeMap<String, Array>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(bad("unexpected end of checkpoint"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(
            self.take(16)?.try_into().expect("16 bytes"),
        ))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("string is not UTF-8"))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.digest);
        put_str(&mut out, &self.config_text);
        out.extend_from_slice(&self.rng_seed);
        out.extend_from_slice(&self.rng_stream.to_le_bytes());
        out.extend_from_slice(&self.rng_word_pos.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, a) in &self.arrays {
            put_str(&mut out, name);
            out.extend_from_slice(&(a.dims.len() as u32).to_le_bytes());
            for &d in &a.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in &a.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let digest = r.string()?;
        let config_text = r.string()?;
        let rng_seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let rng_stream = r.u64()?;
        let rng_word_pos = r.u128()?;
        let count = r.u32()?;
        let mut arrays = BTreeMap::new();
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let dims = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| bad("array too large"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.insert(name, Array { dims, data });
        }
        if !r.buf.is_empty() {
            return Err(bad("trailing bytes after the last array"));
        }
        Ok(Self {
            digest,
            config_text,
            rng_seed,
            rng_stream,
            rng_word_pos,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::File::create(&tmp)?.write_all(&self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::Config(format!("cannot open checkpoint {}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Parses the embedded config and checks it against the stored digest.
    pub fn config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig::parse(&self.config_text)?;
        if cfg.digest() != self.digest {
            return Err(bad("config digest does not match the embedded config"));
        }
        Ok(cfg)
    }

    fn array(&self, name: &str) -> Result<Vec<f64>> {
        self.arrays
            .get(name)
            .map(|a| a.data.clone())
            .ok_or_else(|| bad(format!("missing array '{name}'")))
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        self.array(name)?
            .first()
            .copied()
            .ok_or_else(|| bad(format!("array '{name}' is empty")))
    }

    /// Captures every piece of mutable trainer state.
    pub fn capture(t: &Trainer) -> Self {
        let mut arrays = BTreeMap::new();
        let mut put = |name: String, dims: Vec<usize>, data: Vec<f64>| {
            arrays.insert(name, Array { dims, data });
        };
        let put_store =
            |prefix: &str, s: &ParamStore, put: &mut dyn FnMut(String, Vec<usize>, Vec<f64>)| {
                for p in s.iter() {
                    put(
                        format!("{prefix}/{}", p.name),
                        p.value.shape().to_vec(),
                        p.value.data().to_vec(),
                    );
                }
            };
        let a = &t.agent;
        put_store("actor", &a.actor.store, &mut put);
        for (k, c) in a.critics.iter().enumerate() {
            put_store(&format!("critic{k}"), &c.store, &mut put);
        }
        for (k, c) in a.targets.iter().enumerate() {
            put_store(&format!("target{k}"), &c.store, &mut put);
        }
        let vec1 = |v: Vec<f64>| (vec![v.len()], v);
        let mut put_vec = |name: &str, v: Vec<f64>| {
            let (d, v) = vec1(v);
            put(name.to_string(), d, v);
        };
        put_vec("opt/actor", a.actor_opt.to_vec());
        for (k, o) in a.critic_opts.iter().enumerate() {
            put_vec(&format!("opt/critic{k}"), o.to_vec());
        }
        put_vec("opt/alpha", a.alpha_opt.to_vec());
        put_vec("log_alpha", vec![a.log_alpha]);
        put_vec(
            "counters",
            vec![
                a.updates as f64,
                t.env_step as f64,
                f64::from(u8::from(t.episode_start)),
            ],
        );
        put_vec("obs_stat/mean", t.obs_stat.mean().to_vec());
        put_vec("obs_stat/var", t.obs_stat.var().to_vec());
        put_vec("obs_stat/count", vec![t.obs_stat.count() as f64]);
        put_vec("reward_scaler", t.reward_scaler.to_vec());
        put_vec("env/state", t.env.state());
        put_vec("env/obs", t.current_obs.clone());
        for (name, v) in t.buffer.arrays() {
            put_vec(name, v);
        }
        let cfg = &t.cfg;
        Self {
            digest: cfg.digest(),
            config_text: cfg.to_text(),
            rng_seed: t.rng.get_seed(),
            rng_stream: t.rng.get_stream(),
            rng_word_pos: t.rng.get_word_pos(),
            arrays,
        }
    }

    /// Rebuilds a trainer positioned exactly where the snapshot was taken.
    pub fn restore(&self) -> Result<Trainer> {
        let cfg = self.config()?;
        let mut t = Trainer::new(&cfg)?;
        let load_store = |prefix: &str, s: &mut ParamStore| -> Result<()> {
            for p in s.iter_mut() {
                let key = format!("{prefix}/{}", p.name);
                let a = self
                    .arrays
                    .get(&key)
                    .ok_or_else(|| bad(format!("missing array '{key}'")))?;
                if a.dims != p.value.shape() {
                    return Err(bad(format!("shape mismatch for '{key}'")));
                }
                p.value.data_mut().copy_from_slice(&a.data);
            }
            Ok(())
        };
        let a = &mut t.agent;
        load_store("actor", &mut a.actor.store)?;
        for (k, c) in a.critics.iter_mut().enumerate() {
            load_store(&format!("critic{k}"), &mut c.store)?;
        }
        for (k, c) in a.targets.iter_mut().enumerate() {
            load_store(&format!("target{k}"), &mut c.store)?;
        }
        a.actor_opt.load_vec(&self.array("opt/actor")?)?;
        for (k, o) in a.critic_opts.iter_mut().enumerate() {
            o.load_vec(&self.array(&format!("opt/critic{k}"))?)?;
        }
        a.alpha_opt.load_vec(&self.array("opt/alpha")?)?;
        a.log_alpha = self.scalar("log_alpha")?;
        let counters = self.array("counters")?;
        let [updates, env_step, episode_start] = counters[..] else {
            return Err(bad("counters need 3 values"));
        };
        a.updates = updates as u64;
        t.env_step = env_step as u64;
        t.episode_start = episode_start != 0.0;
        t.obs_stat = RunningStat::from_parts(
            self.array("obs_stat/mean")?,
            self.array("obs_stat/var")?,
            self.scalar("obs_stat/count")? as u64,
        )?;
        t.reward_scaler = RewardScaler::from_vec(&self.array("reward_scaler")?)?;
        t.env.restore(&self.array("env/state")?)?;
        t.current_obs = self.array("env/obs")?;
        t.buffer.load_arrays(&|name| self.array(name))?;
        t.rng = ChaCha8Rng::from_seed(self.rng_seed);
        t.rng.set_stream(self.rng_stream);
        t.rng.set_word_pos(self.rng_word_pos);
        Ok(t)
    }
}
