//! Streaming observation statistics and the return-based reward scaler.

use crate::error::{Error, Result};

/// Per-dimension running mean and variance.
///
/// Starts from `mean = 0`, `var = 0`, `count = 0` and follows
/// `mean += delta / t`, `var += (delta^2 - var) / t` with
/// `delta = x - mean_old`. The variance recursion is not the unbiased sample
/// variance; the first update sets `var` to the squared first sample.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStat {
    mean: Vec<f64>,
    var: Vec<f64>,
    count: u64,
}

impl RunningStat {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![0.0; dim],
            count: 0,
        }
    }

    /// Rebuilds a stat from saved parts.
    pub fn from_parts(mean: Vec<f64>, var: Vec<f64>, count: u64) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::Usage("mean and var lengths differ".into()));
        }
        if var.iter().any(|v| *v < 0.0) {
            return Err(Error::Usage("negative variance".into()));
        }
        Ok(Self { mean, var, count })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Usage(format!(
                "running stat of dim {} fed a sample of dim {}",
                self.dim(),
                x.len()
            )));
        }
        self.count += 1;
        let t = self.count as f64;
        for ((m, v), &o) in self.mean.iter_mut().zip(self.var.iter_mut()).zip(x) {
            let delta = o - *m;
            *m += delta / t;
            *v += (delta * delta - *v) / t;
        }
        Ok(())
    }

    /// `(x - mean) / sqrt(var + eps)` elementwise.
    pub fn normalize(&self, x: &[f64], eps: f64) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::Usage("normalize before any update".into()));
        }
        if x.len() != self.dim() {
            return Err(Error::Usage(format!(
                "running stat of dim {} applied to dim {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((o, m), v)| (o - m) / (v + eps).sqrt())
            .collect())
    }

    /// Normalizes a row-major batch in place.
    pub fn normalize_batch(&self, batch: &mut [f64], eps: f64) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Usage("normalize before any update".into()));
        }
        let d = self.dim();
        if batch.len() % d != 0 {
            return Err(Error::Usage("batch length not a multiple of dim".into()));
        }
        let inv: Vec<f64> = self.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        for row in batch.chunks_mut(d) {
            for j in 0..d {
                row[j] = (row[j] - self.mean[j]) * inv[j];
            }
        }
        Ok(())
    }
}

/// Rescales rewards by the spread of a running discounted return.
///
/// The reward is divided by `max(sqrt(var_G + eps), G_run_max / G_max)` and
/// never centered, so reward signs are preserved.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardScaler {
    gamma: f64,
    support_max: f64,
    eps: f64,
    bounded: bool,
    ret: f64,
    ret_stat: RunningStat,
    running_max: f64,
}

impl RewardScaler {
    pub fn new(gamma: f64, support_max: f64, eps: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1), got {gamma}"
            )));
        }
        if support_max <= 0.0 {
            return Err(Error::Config(format!(
                "return support maximum must be positive, got {support_max}"
            )));
        }
        Ok(Self {
            gamma,
            support_max,
            eps,
            bounded: true,
            ret: 0.0,
            ret_stat: RunningStat::new(1),
            running_max: 0.0,
        })
    }

    /// Drops the `G_run_max / G_max` term from the denominator.
    pub fn without_bounding(mut self) -> Self {
        self.bounded = false;
        self
    }

    pub fn is_bounded(&self) -> bool {
        self.bounded
    }

    pub fn running_return(&self) -> f64 {
        self.ret
    }

    pub fn running_max(&self) -> f64 {
        self.running_max
    }

    pub fn return_stat(&self) -> &RunningStat {
        &self.ret_stat
    }

    /// Current divisor applied to rewards.
    pub fn denominator(&self) -> f64 {
        let spread = (self.ret_stat.var()[0] + self.eps).sqrt();
        if self.bounded {
            spread.max(self.running_max / self.support_max)
        } else {
            spread
        }
    }

    /// Feeds one environment reward and returns its scaled value.
    pub fn step(&mut self, reward: f64, episode_start: bool) -> f64 {
        if episode_start {
            self.ret = 0.0;
        }
        self.ret = self.gamma * self.ret + reward;
        self.ret_stat
            .update(&[self.ret])
            .expect("scalar return statistic");
        self.running_max = self.running_max.max(self.ret);
        reward / self.denominator()
    }

    /// Saved as `[gamma, support_max, eps, bounded, ret, mean, var, count, running_max]`.
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.gamma,
            self.support_max,
            self.eps,
            if self.bounded { 1.0 } else { 0.0 },
            self.ret,
            self.ret_stat.mean()[0],
            self.ret_stat.var()[0],
            self.ret_stat.count() as f64,
            self.running_max,
        ]
    }

    pub fn from_vec(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::Checkpoint(
                "reward scaler state needs 9 values".into(),
            ));
        }
        let mut s = Self::new(v[0], v[1], v[2])?;
        s.bounded = v[3] != 0.0;
        s.ret = v[4];
        s.ret_stat = RunningStat::from_parts(vec![v[5]], vec![v[6]], v[7] as u64)?;
        s.running_max = v[8];
        Ok(s)
    }
}
