//! Waveforms, complex spectrograms and the amplitude-compressed chunk view
//! the networks consume.
//!
//! A spectrogram stores `C = 2·channels` real planes of shape `[F × T]`,
//! real and imaginary parts interleaved per audio channel, time innermost.
//! `F = window/2`: the DFT has `window/2 + 1` non-redundant bins, and the
//! Nyquist bin is real, as is DC. Its value is parked in the otherwise
//! unused imaginary slot of the DC bin so the representation stays
//! power-of-two sized without losing information.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WaveformBuffer {
    sample_rate: u32,
    channels: Vec<Vec<f32>>,
}

impl WaveformBuffer {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f32>>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        if !(1..=2).contains(&channels.len()) {
            return Err(Error::Data(format!("expected 1 or 2 channels, got {}", channels.len())));
        }
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::Data("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite sample".into()));
        }
        Ok(WaveformBuffer { sample_rate, channels })
    }

    pub fn silence(sample_rate: u32, n_channels: usize, n_samples: usize) -> Result<Self> {
        Self::new(sample_rate, vec![vec![0.0; n_samples]; n_channels])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.channels[0].len()
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f32>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f32>> {
        self.channels
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate as f64
    }

    /// Copy of samples `[start, start + len)`, zero-filled past the end.
    pub fn crop(&self, start: usize, len: usize) -> WaveformBuffer {
        let channels = self
            .channels
            .iter()
            .map(|c| (start..start + len).map(|i| c.get(i).copied().unwrap_or(0.0)).collect())
            .collect();
        WaveformBuffer { sample_rate: self.sample_rate, channels }
    }

    /// Truncates or zero-pads every channel to `len` samples.
    pub fn resized(mut self, len: usize) -> WaveformBuffer {
        for c in &mut self.channels {
            c.resize(len, 0.0);
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformParams {
    pub alpha: f64,
    pub beta: f64,
}

impl TransformParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) || !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Config(format!("need 0 < alpha <= 1 and beta > 0, got {alpha}, {beta}")));
        }
        Ok(TransformParams { alpha, beta })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    data: Vec<f32>,
    channels: usize,
    bins: usize,
    frames: usize,
    window: usize,
    hop: usize,
    transformed: bool,
}

impl ComplexSpectrogram {
    pub fn zeros(channels: usize, bins: usize, frames: usize, window: usize, hop: usize, transformed: bool) -> Self {
        assert!(channels % 2 == 0, "spectrogram channel count must be even");
        ComplexSpectrogram {
            data: vec![0.0; channels * bins * frames],
            channels,
            bins,
            frames,
            window,
            hop,
            transformed,
        }
    }

    pub fn from_data(
        data: Vec<f32>,
        channels: usize,
        bins: usize,
        frames: usize,
        window: usize,
        hop: usize,
        transformed: bool,
    ) -> Result<Self> {
        if channels % 2 != 0 || data.len() != channels * bins * frames {
            return Err(Error::Dimension(format!(
                "spectrogram data of length {} does not fit [{channels} × {bins} × {frames}] with even channels",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite spectrogram entry".into()));
        }
        Ok(ComplexSpectrogram { data, channels, bins, frames, window, hop, transformed })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn transformed(&self) -> bool {
        self.transformed
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.bins, self.frames]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    fn idx(&self, c: usize, f: usize, t: usize) -> usize {
        (c * self.bins + f) * self.frames + t
    }

    pub fn get(&self, c: usize, f: usize, t: usize) -> f32 {
        self.data[self.idx(c, f, t)]
    }

    /// Frames `[start, start + len)`, zero-padded past the end.
    pub fn frames_range(&self, start: usize, len: usize) -> ComplexSpectrogram {
        let mut out = ComplexSpectrogram::zeros(self.channels, self.bins, len, self.window, self.hop, self.transformed);
        let avail = self.frames.saturating_sub(start).min(len);
        for c in 0..self.channels {
            for f in 0..self.bins {
                let src = self.idx(c, f, start);
                let dst = out.idx(c, f, 0);
                out.data[dst..dst + avail].copy_from_slice(&self.data[src..src + avail]);
            }
        }
        out
    }

    fn set_transformed(mut self, on: bool) -> Self {
        self.transformed = on;
        self
    }
}

/// Two temporally consecutive chunks: the unit the decoder works on.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPair {
    pub left: ComplexSpectrogram,
    pub right: ComplexSpectrogram,
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

fn check_geometry(window: usize, hop: usize) -> Result<()> {
    if !window.is_power_of_two() || !hop.is_power_of_two() || window != 2 * hop {
        return Err(Error::Config(format!(
            "window and hop must be powers of two with window = 2·hop, got {window}/{hop}"
        )));
    }
    Ok(())
}

pub fn frame_count(n_samples: usize, window: usize, hop: usize) -> usize {
    if n_samples < window {
        0
    } else {
        (n_samples - window) / hop + 1
    }
}

pub fn stft(wave: &WaveformBuffer, window: usize, hop: usize) -> Result<ComplexSpectrogram> {
    check_geometry(window, hop)?;
    let n = wave.n_samples();
    if n < window {
        return Err(Error::Length(format!("{n} samples is shorter than one {window}-sample window")));
    }
    let frames = frame_count(n, window, hop);
    let bins = window / 2;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let w = hann(window);
    let mut spec = ComplexSpectrogram::zeros(2 * wave.n_channels(), bins, frames, window, hop, false);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    for (a, samples) in wave.channels().iter().enumerate() {
        for t in 0..frames {
            let frame = &samples[t * hop..t * hop + window];
            for (b, (&x, &wi)) in buf.iter_mut().zip(frame.iter().zip(&w)) {
                *b = Complex::new(x as f64 * wi, 0.0);
            }
            fft.process(&mut buf);
            let (re, im) = (2 * a, 2 * a + 1);
            let i = spec.idx(re, 0, t);
            spec.data[i] = buf[0].re as f32;
            let i = spec.idx(im, 0, t);
            spec.data[i] = buf[bins].re as f32;
            for f in 1..bins {
                let i = spec.idx(re, f, t);
                spec.data[i] = buf[f].re as f32;
                let i = spec.idx(im, f, t);
                spec.data[i] = buf[f].im as f32;
            }
        }
    }
    Ok(spec)
}

/// Weighted overlap-add inverse. Output length is `(T − 1)·hop + window`.
/// Samples whose summed squared window falls below a small floor (the first
/// and last few of the signal) are attenuated rather than amplified.
pub fn istft(spec: &ComplexSpectrogram, sample_rate: u32) -> Result<WaveformBuffer> {
    if spec.transformed {
        return Err(Error::State("istft needs an untransformed spectrogram; apply amp_inverse first".into()));
    }
    let (window, hop, bins, frames) = (spec.window, spec.hop, spec.bins, spec.frames);
    check_geometry(window, hop)?;
    if bins != window / 2 {
        return Err(Error::Dimension(format!("{bins} bins does not match window {window}")));
    }
    const NORM_FLOOR: f64 = 1e-2;
    let len = if frames == 0 { 0 } else { (frames - 1) * hop + window };
    let ifft: Arc<dyn Fft<f64>> = FftPlanner::<f64>::new().plan_fft_inverse(window);
    let w = hann(window);
    let mut norm = vec![0.0f64; len];
    for t in 0..frames {
        for (i, wi) in w.iter().enumerate() {
            norm[t * hop + i] += wi * wi;
        }
    }
    let mut channels = Vec::with_capacity(spec.channels / 2);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    for a in 0..spec.channels / 2 {
        let (re, im) = (2 * a, 2 * a + 1);
        let mut acc = vec![0.0f64; len];
        for t in 0..frames {
            buf[0] = Complex::new(spec.get(re, 0, t) as f64, 0.0);
            buf[bins] = Complex::new(spec.get(im, 0, t) as f64, 0.0);
            for f in 1..bins {
                let c = Complex::new(spec.get(re, f, t) as f64, spec.get(im, f, t) as f64);
                buf[f] = c;
                buf[window - f] = c.conj();
            }
            ifft.process(&mut buf);
            let scale = 1.0 / window as f64;
            for i in 0..window {
                acc[t * hop + i] += buf[i].re * scale * w[i];
            }
        }
        channels.push(acc.iter().zip(&norm).map(|(&y, &n)| (y / n.max(NORM_FLOOR)) as f32).collect());
    }
    WaveformBuffer::new(sample_rate, channels)
}

/// `c ↦ β|c|^α e^{i∠c}` per complex bin. The packed DC/Nyquist bin is
/// transformed as two independent real values.
pub fn amp_transform(spec: &ComplexSpectrogram, params: TransformParams) -> Result<ComplexSpectrogram> {
    if spec.transformed {
        return Err(Error::State("spectrogram is already amplitude-transformed".into()));
    }
    let f = |m: f64| params.beta * m.powf(params.alpha);
    Ok(map_magnitudes(spec, f).set_transformed(true))
}

pub fn amp_inverse(spec: &ComplexSpectrogram, params: TransformParams) -> Result<ComplexSpectrogram> {
    if !spec.transformed {
        return Err(Error::State("spectrogram is not amplitude-transformed".into()));
    }
    let f = |m: f64| (m / params.beta).powf(1.0 / params.alpha);
    Ok(map_magnitudes(spec, f).set_transformed(false))
}

/// Rescales every complex bin so its magnitude becomes `f(|c|)`; scaling both
/// parts by the same positive factor leaves the phase untouched.
fn map_magnitudes(spec: &ComplexSpectrogram, f: impl Fn(f64) -> f64) -> ComplexSpectrogram {
    let mut out = spec.clone();
    let rescale = |x: f64, y: f64| -> (f64, f64) {
        let m = x.hypot(y);
        if m == 0.0 {
            (0.0, 0.0)
        } else {
            let s = f(m) / m;
            (x * s, y * s)
        }
    };
    for a in 0..spec.channels / 2 {
        for fb in 0..spec.bins {
            for t in 0..spec.frames {
                let (ir, ii) = (spec.idx(2 * a, fb, t), spec.idx(2 * a + 1, fb, t));
                let (x, y) = (spec.data[ir] as f64, spec.data[ii] as f64);
                let (nx, ny) = if fb == 0 { (rescale(x, 0.0).0, rescale(y, 0.0).0) } else { rescale(x, y) };
                out.data[ir] = nx as f32;
                out.data[ii] = ny as f32;
            }
        }
    }
    out
}

/// Splits along time into `ceil(T / t_chunk)` chunks; the last is zero-padded.
pub fn chunk(spec: &ComplexSpectrogram, t_chunk: usize) -> Result<Vec<ComplexSpectrogram>> {
    if t_chunk == 0 {
        return Err(Error::Config("t_chunk must be positive".into()));
    }
    if !spec.transformed {
        return Err(Error::State("chunking expects an amplitude-transformed spectrogram".into()));
    }
    let count = spec.frames.div_ceil(t_chunk);
    Ok((0..count).map(|i| spec.frames_range(i * t_chunk, t_chunk)).collect())
}

/// Concatenates chunks along time and keeps the first `frames` frames.
pub fn unchunk(chunks: &[ComplexSpectrogram], frames: usize) -> Result<ComplexSpectrogram> {
    let first = chunks.first().ok_or_else(|| Error::Length("no chunks to join".into()))?;
    let tc = first.frames;
    if chunks.iter().any(|c| c.shape() != first.shape() || c.transformed != first.transformed) {
        return Err(Error::Dimension("chunks differ in shape or transform state".into()));
    }
    if frames > tc * chunks.len() {
        return Err(Error::Length(format!("{frames} frames requested from {} chunks of {tc}", chunks.len())));
    }
    let mut out =
        ComplexSpectrogram::zeros(first.channels, first.bins, frames, first.window, first.hop, first.transformed);
    for (k, ch) in chunks.iter().enumerate() {
        let start = k * tc;
        if start >= frames {
            break;
        }
        let n = tc.min(frames - start);
        for c in 0..first.channels {
            for f in 0..first.bins {
                let src = ch.idx(c, f, 0);
                let dst = out.idx(c, f, start);
                out.data[dst..dst + n].copy_from_slice(&ch.data[src..src + n]);
            }
        }
    }
    Ok(out)
}

/// Magnitudes of all `window/2 + 1` bins per frame, per channel, for
/// metrics. Signals shorter than a window are zero-padded to one frame.
pub fn magnitude_frames(samples: &[f32], window: usize, hop: usize) -> Vec<Vec<f64>> {
    let padded;
    let x = if samples.len() < window {
        padded = {
            let mut v = samples.to_vec();
            v.resize(window, 0.0);
            v
        };
        &padded[..]
    } else {
        samples
    };
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let w = hann(window);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    (0..frame_count(x.len(), window, hop))
        .map(|t| {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(x[t * hop + i] as f64 * w[i], 0.0);
            }
            fft.process(&mut buf);
            buf[..=window / 2].iter().map(|c| c.norm()).collect()
        })
        .collect()
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<WaveformBuffer> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let n_ch = spec.channels as usize;
    if !(1..=2).contains(&n_ch) {
        return Err(Error::Data(format!("expected mono or stereo WAV, got {n_ch} channels")));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader.samples::<f32>().collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Int, bits @ 8..=32) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f32;
            reader.samples::<i32>().map(|s| s.map(|v| v as f32 * scale)).collect::<std::result::Result<_, _>>()?
        }
        (fmt, bits) => return Err(Error::Data(format!("unsupported WAV sample format {fmt:?}/{bits}"))),
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / n_ch); n_ch];
    for frame in interleaved.chunks_exact(n_ch) {
        for (c, &s) in frame.iter().enumerate() {
            channels[c].push(s);
        }
    }
    WaveformBuffer::new(spec.sample_rate, channels)
}

/// Writes 32-bit float PCM.
pub fn write_wav(path: impl AsRef<Path>, wave: &WaveformBuffer) -> Result<()> {
    let spec = hound::WavSpec {
        channels: wave.n_channels() as u16,
        sample_rate: wave.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for i in 0..wave.n_samples() {
        for c in &wave.channels {
            writer.write_sample(c[i])?;
        }
    }
    writer.finalize()?;
    Ok(())
}
