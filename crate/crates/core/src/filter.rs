//! Running mean/std observation filter (Welford form).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Observation, OBS_DIM};

const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
#[error("observation component {0} is not finite")]
pub struct NonFiniteObservation(pub usize);

/// Normalized feature vector produced by [`ObservationFilter::apply`].
pub type Features = [f64; OBS_DIM];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationFilter {
    count: u64,
    mean: [f64; OBS_DIM],
    m2: [f64; OBS_DIM],
    /// Symmetric clip applied to normalized outputs, if any.
    clip: Option<f64>,
}

impl Default for ObservationFilter {
    fn default() -> Self {
        Self::new(None)
    }
}

impl ObservationFilter {
    pub fn new(clip: Option<f64>) -> Self {
        Self {
            count: 0,
            mean: [0.0; OBS_DIM],
            m2: [0.0; OBS_DIM],
            clip,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64; OBS_DIM] {
        &self.mean
    }

    pub fn clip(&self) -> Option<f64> {
        self.clip
    }

    /// Sum of squared deviations per component.
    pub fn m2(&self) -> &[f64; OBS_DIM] {
        &self.m2
    }

    /// Rebuilds a filter from its accumulator fields.
    pub fn from_parts(count: u64, mean: [f64; OBS_DIM], m2: [f64; OBS_DIM], clip: Option<f64>) -> Self {
        Self { count, mean, m2, clip }
    }

    /// Sample variance per component; `None` while fewer than two samples.
    pub fn variance(&self) -> Option<[f64; OBS_DIM]> {
        if self.count < 2 {
            return None;
        }
        let n = (self.count - 1) as f64;
        Some(self.m2.map(|m| m / n))
    }

    /// Sample standard deviation, 1.0 per component while undefined.
    pub fn std(&self) -> [f64; OBS_DIM] {
        match self.variance() {
            Some(v) => v.map(f64::sqrt),
            None => [1.0; OBS_DIM],
        }
    }

    pub fn update(&mut self, obs: &Observation) -> Result<(), NonFiniteObservation> {
        self.update_raw(obs.as_array())
    }

    pub fn update_raw(&mut self, x: &[f64; OBS_DIM]) -> Result<(), NonFiniteObservation> {
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(NonFiniteObservation(i));
        }
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *mean;
            *mean += delta / n;
            *m2 += delta * (v - *mean);
        }
        Ok(())
    }

    /// Folds another accumulator into this one (Chan et al. parallel update).
    pub fn merge(&mut self, other: &ObservationFilter) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            self.count = other.count;
            self.mean = other.mean;
            self.m2 = other.m2;
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for i in 0..OBS_DIM {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    /// `(obs - mean) / max(std, 1e-8)`, optionally clipped. Does not mutate.
    pub fn apply(&self, obs: &Observation) -> Features {
        self.apply_raw(obs.as_array())
    }

    pub fn apply_raw(&self, x: &[f64; OBS_DIM]) -> Features {
        let std = self.std();
        let mut out = [0.0; OBS_DIM];
        for i in 0..OBS_DIM {
            let mut z = (x[i] - self.mean[i]) / std[i].max(STD_FLOOR);
            if let Some(c) = self.clip {
                z = z.clamp(-c, c);
            }
            out[i] = z;
        }
        out
    }

    /// Order-sensitive fingerprint of the filter contents.
    pub fn checksum(&self) -> u64 {
        let mut h = crate::rng::Fnv64::new();
        h.write_u64(self.count);
        for v in self.mean.iter().chain(self.m2.iter()) {
            h.write_u64(v.to_bits());
        }
        h.finish()
    }
}
