//! Pairing and noise schedules for the two decoding strategies.

use crate::error::{Error, Result};

/// One slot of a decoder pair: a real chunk or the zero-latent filler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Chunk(usize),
    Pad,
}

impl Slot {
    pub fn chunk(self) -> Option<usize> {
        match self {
            Slot::Chunk(i) => Some(i),
            Slot::Pad => None,
        }
    }
}

/// `(left, right)` pairs for every step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSchedule {
    pub steps: Vec<Vec<(Slot, Slot)>>,
}

impl PairSchedule {
    pub fn total_pairs(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }
}

/// Pairs of adjacent chunks. Odd steps start at chunk 0; even steps are
/// shifted by one, so chunk 0 meets a PAD on its left. Out-of-range
/// partners at either end become PAD.
pub fn pair_schedule(t_chunks: usize, s_steps: usize) -> PairSchedule {
    let slot = |i: isize| {
        if i >= 0 && (i as usize) < t_chunks {
            Slot::Chunk(i as usize)
        } else {
            Slot::Pad
        }
    };
    let t = t_chunks as isize;
    let steps = (0..s_steps)
        .map(|s| {
            let mut left = -((s % 2) as isize);
            let mut pairs = Vec::new();
            while left < t {
                pairs.push((slot(left), slot(left + 1)));
                left += 2;
            }
            pairs
        })
        .collect();
    PairSchedule { steps }
}

/// Linear ladder from `sigma_max` down to `sigma_end`; a single step uses
/// `sigma_max` alone.
pub fn cond_noise_schedule(s_steps: usize, sigma_max: f64, sigma_end: f64) -> Result<Vec<f64>> {
    if s_steps == 0 {
        return Err(Error::Config("parallel decoding needs at least one step".into()));
    }
    if !(sigma_end > 0.0 && sigma_end < sigma_max) {
        return Err(Error::Config(format!("need 0 < sigma_end < sigma_max, got {sigma_end} and {sigma_max}")));
    }
    if s_steps == 1 {
        return Ok(vec![sigma_max]);
    }
    let last = (s_steps - 1) as f64;
    Ok((0..s_steps)
        .map(|s| if s + 1 == s_steps { sigma_end } else { sigma_max + (sigma_end - sigma_max) * s as f64 / last })
        .collect())
}

/// Geometric ladder `σ_max·(σ_min/σ_max)^(i/steps)` for `i < steps`, used
/// for multistep sampling of one autoregressive chunk.
pub fn ar_sigma_ladder(steps: usize, sigma_max: f64, sigma_min: f64) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::Config("autoregressive decoding needs at least one denoising step".into()));
    }
    Ok((0..steps).map(|i| sigma_max * (sigma_min / sigma_max).powf(i as f64 / steps as f64)).collect())
}
