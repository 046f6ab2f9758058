//! Run profiles. `full` holds the published full-scale settings, `toy` the
//! desk-scale ones every test trains against. A TOML file may name a base
//! profile and override any subset of fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub sample_rate: u32,
    pub channels: usize,
    pub window: usize,
    pub hop: usize,
    pub t_chunk: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl SignalConfig {
    pub fn bins(&self) -> usize {
        self.window / 2
    }

    /// Real channels in the spectrogram: real and imaginary per audio channel.
    pub fn spec_channels(&self) -> usize {
        2 * self.channels
    }

    pub fn chunk_seconds(&self) -> f64 {
        (self.t_chunk * self.hop) as f64 / self.sample_rate as f64
    }

    /// Samples spanned by one chunk of STFT frames.
    pub fn chunk_samples(&self) -> usize {
        (self.t_chunk - 1) * self.hop + self.window
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsqSettings {
    pub n: u32,
    pub d: usize,
    pub dropout_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdmConfig {
    pub sigma_data: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub conv_channels: Vec<usize>,
    pub conv_layers: Vec<usize>,
    /// (frequency, time) factor of each downsampling stage between levels.
    pub downsample: Vec<[usize; 2]>,
    pub encoder_blocks: usize,
    pub upsampler_blocks: usize,
    pub decoder_blocks: usize,
    pub hidden_dim: usize,
    pub head_dim: usize,
    pub mlp_mult: usize,
    pub k_summary: usize,
    pub d_lat: usize,
    pub sigma_embed_channels: usize,
    pub edm: EdmConfig,
}

impl ModelConfig {
    pub fn freq_factor(&self) -> usize {
        self.downsample.iter().map(|s| s[0]).product()
    }

    pub fn time_factor(&self) -> usize {
        self.downsample.iter().map(|s| s[1]).product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rectified: bool,
    pub ema_momentum: f64,
    pub p_mean: f64,
    pub p_std: f64,
    pub delta0: f64,
    pub e_k: f64,
    pub mix_p: f64,
    pub checkpoint_every: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    pub sigma_end: f64,
    pub ar_steps: usize,
    pub parallel_steps: usize,
    pub use_ema: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub name: String,
    pub signal: SignalConfig,
    pub fsq: FsqSettings,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
}

const EDM: EdmConfig = EdmConfig { sigma_data: 0.5, sigma_min: 0.002, sigma_max: 80.0 };

impl Profile {
    pub fn full() -> Self {
        Profile {
            name: "full".into(),
            signal: SignalConfig {
                sample_rate: 44_100,
                channels: 2,
                window: 2048,
                hop: 1024,
                t_chunk: 32,
                alpha: 0.65,
                beta: 0.34,
            },
            fsq: FsqSettings { n: 5, d: 4, dropout_p: 0.75 },
            model: ModelConfig {
                conv_channels: vec![64, 128, 256, 512],
                conv_layers: vec![3, 3, 3, 1],
                downsample: vec![[2, 2], [4, 1], [2, 2]],
                encoder_blocks: 12,
                upsampler_blocks: 12,
                decoder_blocks: 12,
                hidden_dim: 512,
                head_dim: 128,
                mlp_mult: 4,
                k_summary: 128,
                d_lat: 4,
                sigma_embed_channels: 512,
                edm: EDM,
            },
            train: TrainConfig {
                batch_size: 20,
                steps: 2_000_000,
                lr: 1e-4,
                beta1: 0.9,
                beta2: 0.999,
                rectified: true,
                ema_momentum: 0.9999,
                p_mean: -1.0,
                p_std: 1.4,
                delta0: 0.1,
                e_k: 2.0,
                mix_p: 0.5,
                checkpoint_every: 10_000,
                seed: 0,
            },
            decode: DecodeConfig { sigma_end: 0.002, ar_steps: 1, parallel_steps: 4, use_ema: true },
        }
    }

    pub fn toy() -> Self {
        Profile {
            name: "toy".into(),
            signal: SignalConfig {
                sample_rate: 16_000,
                channels: 1,
                window: 128,
                hop: 64,
                t_chunk: 16,
                alpha: 0.65,
                beta: 0.34,
            },
            fsq: FsqSettings { n: 5, d: 4, dropout_p: 0.75 },
            model: ModelConfig {
                conv_channels: vec![4, 8, 16, 32],
                conv_layers: vec![1, 1, 1, 1],
                downsample: vec![[2, 2], [2, 1], [2, 2]],
                encoder_blocks: 2,
                upsampler_blocks: 2,
                decoder_blocks: 2,
                hidden_dim: 64,
                head_dim: 16,
                mlp_mult: 2,
                k_summary: 16,
                d_lat: 4,
                sigma_embed_channels: 32,
                edm: EDM,
            },
            train: TrainConfig {
                batch_size: 8,
                steps: 2_000,
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                rectified: false,
                ema_momentum: 0.995,
                p_mean: -1.0,
                p_std: 1.4,
                delta0: 0.1,
                e_k: 2.0,
                mix_p: 0.5,
                checkpoint_every: 0,
                seed: 0,
            },
            decode: DecodeConfig { sigma_end: 0.002, ar_steps: 1, parallel_steps: 4, use_ema: true },
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Config(format!("unknown profile {other:?} (expected full or toy)"))),
        }
    }

    /// Parses a TOML profile. The optional top-level `base` key selects the
    /// preset to start from (default `toy`); every other table overrides
    /// fields of that preset.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut overlay: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let base = match overlay.remove("base") {
            None => "toy".to_string(),
            Some(toml::Value::String(s)) => s,
            Some(v) => return Err(Error::Config(format!("base must be a string, got {v}"))),
        };
        let mut merged = toml::Table::try_from(Self::by_name(&base)?)
            .map_err(|e| Error::Config(e.to_string()))?;
        if !overlay.contains_key("name") {
            overlay.insert("name".into(), toml::Value::String("custom".into()));
        }
        merge(&mut merged, overlay);
        let profile: Profile =
            toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    /// Checks every cross-field constraint before any work starts.
    pub fn validate(&self) -> Result<()> {
        let s = &self.signal;
        let m = &self.model;
        let bad = |msg: String| Err(Error::Config(msg));
        if s.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if !(1..=2).contains(&s.channels) {
            return bad(format!("channels must be 1 or 2, got {}", s.channels));
        }
        if !s.hop.is_power_of_two() || s.window != 2 * s.hop {
            return bad(format!("need power-of-two hop and window = 2·hop, got {}/{}", s.window, s.hop));
        }
        if s.t_chunk == 0 {
            return bad("t_chunk must be positive".into());
        }
        if !(s.alpha > 0.0 && s.alpha <= 1.0) || !(s.beta > 0.0) {
            return bad(format!("transform needs 0 < alpha <= 1 and beta > 0, got {} {}", s.alpha, s.beta));
        }
        if self.fsq.n == 0 || self.fsq.d == 0 || !(0.0..=1.0).contains(&self.fsq.dropout_p) {
            return bad(format!("invalid fsq settings {:?}", self.fsq));
        }
        if self.fsq.d != m.d_lat {
            return bad(format!("fsq.d = {} differs from model.d_lat = {}", self.fsq.d, m.d_lat));
        }
        let levels = m.conv_channels.len();
        if levels == 0 || m.conv_layers.len() != levels || m.downsample.len() + 1 != levels {
            return bad("conv_channels, conv_layers and downsample stages disagree in length".into());
        }
        for f in m.downsample.iter().flatten() {
            if !f.is_power_of_two() {
                return bad(format!("downsample factors must be powers of two, got {f}"));
            }
        }
        if s.bins() % m.freq_factor() != 0 {
            return bad(format!("F = {} not divisible by frequency downsampling {}", s.bins(), m.freq_factor()));
        }
        if s.t_chunk % m.time_factor() != 0 {
            return bad(format!("t_chunk = {} not divisible by time downsampling {}", s.t_chunk, m.time_factor()));
        }
        if m.head_dim == 0 || m.hidden_dim % m.head_dim != 0 {
            return bad(format!("hidden_dim {} not divisible by head_dim {}", m.hidden_dim, m.head_dim));
        }
        if m.k_summary == 0 || m.d_lat == 0 || m.mlp_mult == 0 {
            return bad("k_summary, d_lat and mlp_mult must be positive".into());
        }
        if m.sigma_embed_channels < 4 || m.sigma_embed_channels % 2 != 0 {
            return bad("sigma_embed_channels must be even and at least 4".into());
        }
        let e = &m.edm;
        if !(e.sigma_min > 0.0 && e.sigma_min < e.sigma_max && e.sigma_data > 0.0) {
            return bad(format!("invalid noise range {e:?}"));
        }
        let t = &self.train;
        if t.batch_size == 0 || !(0.0..=1.0).contains(&t.mix_p) {
            return bad("batch_size must be positive and mix_p in [0,1]".into());
        }
        if !(t.ema_momentum > 0.0 && t.ema_momentum < 1.0) {
            return bad(format!("ema_momentum must be in (0,1), got {}", t.ema_momentum));
        }
        if !(t.delta0 > 0.0 && t.delta0 < 1.0) || t.e_k < 1.0 || t.p_std <= 0.0 {
            return bad("delta0 must be in (0,1), e_k >= 1 and p_std > 0".into());
        }
        let d = &self.decode;
        if d.ar_steps == 0 || d.parallel_steps == 0 {
            return bad("decode step counts must be positive".into());
        }
        if !(d.sigma_end >= e.sigma_min && d.sigma_end < e.sigma_max) {
            return bad(format!("sigma_end {} outside [sigma_min, sigma_max)", d.sigma_end));
        }
        Ok(())
    }

    /// True when two profiles describe the same model and signal layout,
    /// so weights trained under one can run under the other.
    pub fn compatible_with(&self, other: &Profile) -> bool {
        self.signal == other.signal && self.fsq.n == other.fsq.n && self.fsq.d == other.fsq.d && self.model == other.model
    }
}

fn merge(into: &mut toml::Table, from: toml::Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => merge(dst, src),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}
