//! Reconstruction metrics: scale-invariant SDR and log-spectral distance.

use crate::error::{Error, Result};
use crate::signal::{magnitude_frames, WaveformBuffer};

/// SI-SDR values are clamped to `±SI_SDR_CAP` dB.
pub const SI_SDR_CAP: f64 = 100.0;
pub const LSD_WINDOW: usize = 1024;
pub const LSD_HOP: usize = 512;
/// Magnitudes below this are clamped before taking log10.
const LSD_FLOOR: f64 = 1e-8;

fn check_shapes(reference: &WaveformBuffer, estimate: &WaveformBuffer) -> Result<()> {
    if reference.n_channels() != estimate.n_channels() || reference.n_samples() != estimate.n_samples() {
        return Err(Error::Dimension(format!(
            "reference is {} ch × {} samples, estimate is {} ch × {} samples",
            reference.n_channels(),
            reference.n_samples(),
            estimate.n_channels(),
            estimate.n_samples()
        )));
    }
    Ok(())
}

fn si_sdr_channel(r: &[f32], e: &[f32]) -> f64 {
    let dot: f64 = r.iter().zip(e).map(|(&a, &b)| a as f64 * b as f64).sum();
    let rr: f64 = r.iter().map(|&a| (a as f64).powi(2)).sum();
    let alpha = dot / rr;
    let (mut target, mut noise) = (0.0f64, 0.0f64);
    for (&a, &b) in r.iter().zip(e) {
        let t = alpha * a as f64;
        target += t * t;
        noise += (t - b as f64).powi(2);
    }
    if noise == 0.0 {
        // A silent estimate has no target component either; count it as worst.
        return if target == 0.0 { -SI_SDR_CAP } else { SI_SDR_CAP };
    }
    if target == 0.0 {
        return -SI_SDR_CAP;
    }
    (10.0 * (target / noise).log10()).clamp(-SI_SDR_CAP, SI_SDR_CAP)
}

/// Mean over channels with a non-silent reference.
pub fn si_sdr(reference: &WaveformBuffer, estimate: &WaveformBuffer) -> Result<f64> {
    check_shapes(reference, estimate)?;
    let scores: Vec<f64> = reference
        .channels()
        .iter()
        .zip(estimate.channels())
        .filter(|(r, _)| r.iter().any(|&x| x != 0.0))
        .map(|(r, e)| si_sdr_channel(r, e))
        .collect();
    if scores.is_empty() {
        return Err(Error::Undefined("SI-SDR of an all-zero reference".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// RMS of the log10 magnitude difference over every frame, bin and channel.
pub fn log_spectral_distance(reference: &WaveformBuffer, estimate: &WaveformBuffer) -> Result<f64> {
    check_shapes(reference, estimate)?;
    let (mut sum, mut count) = (0.0f64, 0usize);
    for (r, e) in reference.channels().iter().zip(estimate.channels()) {
        let mr = magnitude_frames(r, LSD_WINDOW, LSD_HOP);
        let me = magnitude_frames(e, LSD_WINDOW, LSD_HOP);
        for (fr, fe) in mr.iter().zip(&me) {
            for (&a, &b) in fr.iter().zip(fe) {
                let d = a.max(LSD_FLOOR).log10() - b.max(LSD_FLOOR).log10();
                sum += d * d;
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { (sum / count as f64).sqrt() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub file: String,
    pub si_sdr_db: f64,
    pub lsd: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push(&mut self, file: impl Into<String>, reference: &WaveformBuffer, estimate: &WaveformBuffer) -> Result<()> {
        let row = MetricRow {
            file: file.into(),
            si_sdr_db: si_sdr(reference, estimate)?,
            lsd: log_spectral_distance(reference, estimate)?,
        };
        self.rows.push(row);
        Ok(())
    }

    /// Aggregate row named `mean`; `None` for an empty report.
    pub fn mean(&self) -> Option<MetricRow> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        Some(MetricRow {
            file: "mean".into(),
            si_sdr_db: self.rows.iter().map(|r| r.si_sdr_db).sum::<f64>() / n,
            lsd: self.rows.iter().map(|r| r.lsd).sum::<f64>() / n,
        })
    }
}
