//! Deterministic synthetic audio for training and tests.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::signal::WaveformBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipKind {
    /// A few harmonics of a steady fundamental.
    Tone,
    /// Linear frequency sweep.
    Sweep,
    /// Exponential frequency sweep.
    Chirp,
    /// Gated, smoothed white noise.
    NoiseBurst,
}

impl ClipKind {
    pub const ALL: [ClipKind; 4] = [ClipKind::Tone, ClipKind::Sweep, ClipKind::Chirp, ClipKind::NoiseBurst];

    pub fn name(self) -> &'static str {
        match self {
            ClipKind::Tone => "tone",
            ClipKind::Sweep => "sweep",
            ClipKind::Chirp => "chirp",
            ClipKind::NoiseBurst => "noise",
        }
    }
}

/// Short fade at both ends so clips start and stop without clicks.
fn fade(x: &mut [f64], sample_rate: u32) {
    let n = ((sample_rate as f64 * 0.01) as usize).min(x.len() / 2);
    for i in 0..n {
        let g = i as f64 / n as f64;
        x[i] *= g;
        let j = x.len() - 1 - i;
        x[j] *= g;
    }
}

fn phase_signal(n: usize, sample_rate: u32, amp: f64, freq_at: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            phase += TAU * freq_at(t) / sample_rate as f64;
            amp * phase.sin()
        })
        .collect()
}

pub fn clip(kind: ClipKind, rng: &mut impl Rng, sample_rate: u32, channels: usize, seconds: f64) -> Result<WaveformBuffer> {
    if !(seconds > 0.0) || channels == 0 {
        return Err(Error::Config(format!("need a positive duration and channel count, got {seconds} s, {channels} ch")));
    }
    let n = (seconds * sample_rate as f64).round() as usize;
    let nyq = sample_rate as f64 / 2.0;
    let amp = rng.gen_range(0.2..0.5);
    let mut x = match kind {
        ClipKind::Tone => {
            let f0 = rng.gen_range(0.01..0.08) * nyq;
            let harmonics = rng.gen_range(1..=3);
            let mut x = vec![0.0; n];
            for h in 1..=harmonics {
                let part = phase_signal(n, sample_rate, amp / h as f64, |_| f0 * h as f64);
                x.iter_mut().zip(part).for_each(|(a, b)| *a += b);
            }
            x
        }
        ClipKind::Sweep => {
            let (f0, f1) = (rng.gen_range(0.02..0.2) * nyq, rng.gen_range(0.2..0.6) * nyq);
            phase_signal(n, sample_rate, amp, |t| f0 + (f1 - f0) * t / seconds)
        }
        ClipKind::Chirp => {
            let (f0, f1) = (rng.gen_range(0.01..0.05) * nyq, rng.gen_range(0.3..0.7) * nyq);
            phase_signal(n, sample_rate, amp, |t| f0 * (f1 / f0).powf(t / seconds))
        }
        ClipKind::NoiseBurst => {
            let period = rng.gen_range(0.1..0.3) * sample_rate as f64;
            let duty = rng.gen_range(0.3..0.7);
            let mut lp = 0.0;
            (0..n)
                .map(|i| {
                    let e: f64 = StandardNormal.sample(rng);
                    lp = 0.7 * lp + 0.3 * e;
                    let on = (i as f64 % period) < duty * period;
                    if on {
                        amp * 0.5 * lp
                    } else {
                        0.0
                    }
                })
                .collect()
        }
    };
    fade(&mut x, sample_rate);
    let mono: Vec<f32> = x.iter().map(|&v| v as f32).collect();
    // Extra channels get a fixed gain so they stay correlated but distinct.
    let chans = (0..channels).map(|c| mono.iter().map(|&v| v * (1.0 - 0.2 * c as f32)).collect()).collect();
    WaveformBuffer::new(sample_rate, chans)
}

/// Named clip for a generated set.
#[derive(Debug, Clone)]
pub struct CorpusClip {
    pub name: String,
    pub wave: WaveformBuffer,
}

/// `count` clips cycling through `kinds`, reproducible from `seed`.
pub fn generate(
    kinds: &[ClipKind],
    count: usize,
    seed: u64,
    sample_rate: u32,
    channels: usize,
    seconds: f64,
) -> Result<Vec<CorpusClip>> {
    if kinds.is_empty() {
        return Err(Error::Config("no clip kinds requested".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let kind = kinds[i % kinds.len()];
            Ok(CorpusClip { name: format!("{}_{i:03}.wav", kind.name()), wave: clip(kind, &mut rng, sample_rate, channels, seconds)? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = generate(&ClipKind::ALL, 8, 7, 16_000, 1, 0.5).unwrap();
        let b = generate(&ClipKind::ALL, 8, 7, 16_000, 1, 0.5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.wave.channels(), y.wave.channels());
            assert_eq!(x.wave.n_samples(), 8000);
            assert!(x.wave.channel(0).iter().all(|v| v.abs() <= 1.0));
            assert!(x.wave.channel(0).iter().any(|&v| v != 0.0));
        }
        assert_eq!(a[1].name, "sweep_001.wav");
    }
}
