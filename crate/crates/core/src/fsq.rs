//! Finite scalar quantization: tanh-bounded values rounded onto `2n + 1`
//! levels per dimension, plus the per-chunk rounding bypass used in training
//! and the base-`(2n + 1)` token packing.

use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance for accepting a value as lying on the quantization grid.
pub const GRID_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsqConfig {
    n: u32,
    d: usize,
    dropout_p: f64,
}

impl FsqConfig {
    pub fn new(n: u32, d: usize, dropout_p: f64) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Config(format!("fsq needs n >= 1 and d >= 1, got n={n}, d={d}")));
        }
        if !(0.0..=1.0).contains(&dropout_p) {
            return Err(Error::Config(format!("dropout_p must be in [0,1], got {dropout_p}")));
        }
        let cfg = FsqConfig { n, d, dropout_p };
        if cfg.codebook_size().is_none() {
            return Err(Error::Config(format!("codebook ({})^{d} overflows u64", cfg.levels())));
        }
        Ok(cfg)
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn levels(&self) -> u64 {
        2 * self.n as u64 + 1
    }

    pub fn codebook_size(&self) -> Option<u64> {
        self.levels().checked_pow(u32::try_from(self.d).ok()?)
    }
}

/// `[K × d_lat]` values for one chunk, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSet {
    values: Vec<f32>,
    k: usize,
    d_lat: usize,
    quantized: bool,
}

impl LatentSet {
    pub fn new(values: Vec<f32>, k: usize, d_lat: usize, quantized: bool) -> Result<Self> {
        if values.len() != k * d_lat {
            return Err(Error::Dimension(format!("{} values do not fill [{k} × {d_lat}]", values.len())));
        }
        if values.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Data("latent values must lie in [-1, 1]".into()));
        }
        Ok(LatentSet { values, k, d_lat, quantized })
    }

    pub fn zeros(k: usize, d_lat: usize) -> Self {
        LatentSet { values: vec![0.0; k * d_lat], k, d_lat, quantized: false }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d_lat(&self) -> usize {
        self.d_lat
    }

    pub fn quantized(&self) -> bool {
        self.quantized
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenChunk {
    pub indices: Vec<u64>,
}

/// Round half away from zero, matching `ste_round` in the autodiff engine.
fn round_level(x: f64, n: u32) -> f64 {
    (x * n as f64).round() / n as f64
}

/// `round(n·tanh z)/n` over a `[K × d_lat]` pre-activation block.
pub fn quantize(z: &[f32], k: usize, d_lat: usize, cfg: &FsqConfig) -> Result<LatentSet> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite pre-activation".into()));
    }
    let values = z.iter().map(|&v| round_level((v as f64).tanh(), cfg.n) as f32).collect();
    LatentSet::new(values, k, d_lat, true)
}

/// `tanh z` without rounding.
pub fn bound(z: &[f32], k: usize, d_lat: usize) -> Result<LatentSet> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite pre-activation".into()));
    }
    LatentSet::new(z.iter().map(|&v| (v as f64).tanh() as f32).collect(), k, d_lat, false)
}

/// One Bernoulli draw per chunk: `true` means skip rounding.
pub fn draw_bypass(rng: &mut impl Rng, p: f64) -> bool {
    // gen_bool panics outside [0,1]; callers validate through FsqConfig.
    rng.gen_bool(p)
}

/// Training-time bottleneck. Outside training the caller picks the path
/// explicitly, so `training = false` is rejected.
pub fn fsq_dropout(
    z: &[f32],
    k: usize,
    d_lat: usize,
    cfg: &FsqConfig,
    rng: &mut impl Rng,
    training: bool,
) -> Result<LatentSet> {
    if !training {
        return Err(Error::Usage("fsq_dropout is a training-mode operation; call quantize or bound".into()));
    }
    if draw_bypass(rng, cfg.dropout_p) {
        bound(z, k, d_lat)
    } else {
        quantize(z, k, d_lat, cfg)
    }
}

fn digit(v: f32, n: u32) -> Result<u64> {
    let scaled = v as f64 * n as f64;
    let r = scaled.round();
    if (scaled - r).abs() > GRID_TOLERANCE * n as f64 || r.abs() > n as f64 {
        return Err(Error::Data(format!("value {v} is not on the {}-level grid", 2 * n + 1)));
    }
    Ok((r as i64 + n as i64) as u64)
}

pub fn levels_to_indices(lat: &LatentSet, cfg: &FsqConfig) -> Result<TokenChunk> {
    if !lat.quantized {
        return Err(Error::Data("latent set is not quantized".into()));
    }
    if lat.d_lat % cfg.d != 0 {
        return Err(Error::Dimension(format!("d_lat {} not a multiple of fsq d {}", lat.d_lat, cfg.d)));
    }
    let base = cfg.levels();
    let indices = lat
        .values
        .chunks_exact(cfg.d)
        .map(|group| {
            group.iter().rev().try_fold(0u64, |acc, &v| Ok(acc * base + digit(v, cfg.n)?))
        })
        .collect::<Result<_>>()?;
    Ok(TokenChunk { indices })
}

pub fn indices_to_levels(tok: &TokenChunk, cfg: &FsqConfig, d_lat: usize) -> Result<LatentSet> {
    if d_lat % cfg.d != 0 {
        return Err(Error::Dimension(format!("d_lat {d_lat} not a multiple of fsq d {}", cfg.d)));
    }
    let size = cfg.codebook_size().expect("validated at construction");
    let base = cfg.levels();
    let n = cfg.n as f64;
    let mut values = Vec::with_capacity(tok.indices.len() * cfg.d);
    for &idx in &tok.indices {
        if idx >= size {
            return Err(Error::Data(format!("token {idx} outside codebook of size {size}")));
        }
        let mut rest = idx;
        for _ in 0..cfg.d {
            let d = (rest % base) as f64;
            rest /= base;
            values.push(((d - n) / n) as f32);
        }
    }
    let k = values.len() / d_lat;
    LatentSet::new(values, k, d_lat, true)
}

/// Raw token rate for any codebook with `levels_per_dim^d` entries.
pub fn bitrate_for_levels(levels_per_dim: f64, d: usize, k: usize, chunk_seconds: f64) -> Result<f64> {
    if !(chunk_seconds > 0.0) {
        return Err(Error::Config(format!("chunk duration must be positive, got {chunk_seconds}")));
    }
    Ok(k as f64 * d as f64 * levels_per_dim.log2() / chunk_seconds)
}

/// `k · log2((2n+1)^d) / chunk_seconds` bits per second.
pub fn bitrate(cfg: &FsqConfig, k: usize, chunk_seconds: f64) -> Result<f64> {
    bitrate_for_levels(cfg.levels() as f64, cfg.d, k, chunk_seconds)
}
