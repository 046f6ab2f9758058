//! End-to-end encoding and the two decoding strategies.
//!
//! Autoregressive decoding walks the chunks in order. The previous decoded
//! chunk sits clean (σ_min) in the left slot and the target is sampled in the
//! right slot, so only one pair is ever alive. Parallel decoding denoises all
//! pairs of a step at once, re-noises the estimates and re-pairs them one
//! position over, so its activations grow with the sequence.

pub mod format;
mod schedule;

use std::str::FromStr;

use dualcodec_autodiff::{meter, Graph, NdArray};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use schedule::{ar_sigma_ladder, cond_noise_schedule, pair_schedule, PairSchedule, Slot};

use crate::config::Profile;
use crate::error::{Error, Result};
use crate::fsq::{self, FsqConfig, LatentSet, TokenChunk};
use crate::net::{ChunkGeometry, Model};
use crate::signal::{self, ComplexSpectrogram, TransformParams, WaveformBuffer};

/// Chunks per encoder or upsampler graph.
const BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Continuous,
    Discrete,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(Mode::Continuous),
            "discrete" => Ok(Mode::Discrete),
            _ => Err(Error::Usage(format!("unknown mode {s:?}; expected continuous or discrete"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Autoregressive,
    Parallel,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ar" | "autoregressive" => Ok(Strategy::Autoregressive),
            "parallel" => Ok(Strategy::Parallel),
            _ => Err(Error::Usage(format!("unknown strategy {s:?}; expected ar or parallel"))),
        }
    }
}

/// Signal settings needed to turn payloads back into audio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamMeta {
    pub sample_rate: u32,
    pub channels: u16,
    pub window: u32,
    pub hop: u32,
    pub t_chunk: u32,
    pub n_samples: u64,
}

impl StreamMeta {
    pub fn from_profile(p: &Profile, n_samples: usize) -> Self {
        let s = &p.signal;
        StreamMeta {
            sample_rate: s.sample_rate,
            channels: s.channels as u16,
            window: s.window as u32,
            hop: s.hop as u32,
            t_chunk: s.t_chunk as u32,
            n_samples: n_samples as u64,
        }
    }

    /// Chunks needed to cover `n_samples` with zero-padded final chunk.
    pub fn expected_chunks(&self) -> usize {
        let frames = signal::frame_count(self.n_samples as usize, self.window as usize, self.hop as usize);
        frames.div_ceil(self.t_chunk.max(1) as usize)
    }

    pub fn check_against(&self, p: &Profile) -> Result<()> {
        let want = StreamMeta::from_profile(p, self.n_samples as usize);
        if *self != want {
            return Err(Error::Config(format!(
                "stream was encoded with {} Hz / {} ch / window {} / hop {} / t_chunk {}, profile {:?} uses {} Hz / {} ch / window {} / hop {} / t_chunk {}",
                self.sample_rate,
                self.channels,
                self.window,
                self.hop,
                self.t_chunk,
                p.name,
                want.sample_rate,
                want.channels,
                want.window,
                want.hop,
                want.t_chunk
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Continuous(Vec<LatentSet>),
    /// Packed indices; `n` fixes the `2n + 1` levels per dimension.
    Discrete { n: u32, chunks: Vec<TokenChunk> },
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::Continuous(c) => c.len(),
            Payload::Discrete { chunks, .. } => chunks.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> Mode {
        match self {
            Payload::Continuous(_) => Mode::Continuous,
            Payload::Discrete { .. } => Mode::Discrete,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    pub meta: StreamMeta,
    /// Summary embeddings per chunk (also the token count per chunk).
    pub k: usize,
    pub d_lat: usize,
    pub payload: Payload,
}

impl EncodedSequence {
    pub fn new(meta: StreamMeta, k: usize, d_lat: usize, payload: Payload) -> Result<Self> {
        if payload.is_empty() {
            return Err(Error::Length("an encoded sequence needs at least one chunk".into()));
        }
        let expected = meta.expected_chunks();
        if payload.len() != expected {
            return Err(Error::Data(format!(
                "{} chunks stored but {} samples need {expected}",
                payload.len(),
                meta.n_samples
            )));
        }
        let ok = match &payload {
            Payload::Continuous(c) => c.iter().all(|l| l.k() == k && l.d_lat() == d_lat),
            Payload::Discrete { n, chunks } => *n > 0 && chunks.iter().all(|t| t.indices.len() == k),
        };
        if !ok {
            return Err(Error::Dimension(format!("chunk payloads do not all have shape [{k} × {d_lat}]")));
        }
        Ok(EncodedSequence { meta, k, d_lat, payload })
    }

    pub fn chunk_count(&self) -> usize {
        self.payload.len()
    }

    pub fn mode(&self) -> Mode {
        self.payload.mode()
    }

    /// Rounds a continuous payload onto the `2n + 1`-level grid and packs it.
    pub fn quantized(&self, n: u32) -> Result<EncodedSequence> {
        let Payload::Continuous(chunks) = &self.payload else {
            return Err(Error::Usage("sequence is already discrete".into()));
        };
        let cfg = FsqConfig::new(n, self.d_lat, 0.0)?;
        let packed = chunks
            .iter()
            .map(|l| {
                let q: Vec<f32> = l.values().iter().map(|&v| ((v as f64 * n as f64).round() / n as f64) as f32).collect();
                fsq::levels_to_indices(&LatentSet::new(q, l.k(), l.d_lat(), true)?, &cfg)
            })
            .collect::<Result<_>>()?;
        EncodedSequence::new(self.meta, self.k, self.d_lat, Payload::Discrete { n, chunks: packed })
    }
}

/// One payload access during decoding: which chunk was read, and how many
/// chunks had already been emitted at that moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PayloadRead {
    pub chunk: usize,
    pub emitted: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeReport {
    /// Pair evaluations, counting PAD-filled pairs.
    pub decoder_calls: usize,
    /// High-water mark of live tensor storage above the starting level.
    pub peak_activation_bytes: usize,
    pub payload_reads: Vec<PayloadRead>,
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub wave: WaveformBuffer,
    pub report: DecodeReport,
}

/// One slot of a decoder pair.
struct Side<'c> {
    cc: &'c [NdArray<f32>],
    x: Vec<f32>,
    sigma: f64,
}

pub struct Codec<'a> {
    profile: &'a Profile,
    model: &'a Model<f32>,
    tparams: TransformParams,
    geom: ChunkGeometry,
}

impl<'a> Codec<'a> {
    pub fn new(profile: &'a Profile, model: &'a Model<f32>) -> Result<Self> {
        profile.validate()?;
        let geom = ChunkGeometry::from(&profile.signal);
        if model.net().geometry() != geom || *model.net().config() != profile.model {
            return Err(Error::Config(format!("model does not match profile {:?}", profile.name)));
        }
        let tparams = TransformParams::new(profile.signal.alpha, profile.signal.beta)?;
        Ok(Codec { profile, model, tparams, geom })
    }

    fn chunk_len(&self) -> usize {
        self.geom.channels * self.geom.bins * self.geom.frames
    }

    fn chunk_shape(&self, b: usize) -> [usize; 4] {
        [b, self.geom.channels, self.geom.bins, self.geom.frames]
    }

    pub fn encode_sequence(&self, wave: &WaveformBuffer, mode: Mode) -> Result<EncodedSequence> {
        let s = &self.profile.signal;
        if wave.sample_rate() != s.sample_rate || wave.n_channels() != s.channels {
            return Err(Error::Config(format!(
                "input is {} Hz / {} ch, profile expects {} Hz / {} ch",
                wave.sample_rate(),
                wave.n_channels(),
                s.sample_rate,
                s.channels
            )));
        }
        if wave.n_samples() < s.chunk_samples() {
            return Err(Error::Length(format!(
                "{} samples is shorter than one chunk ({} samples)",
                wave.n_samples(),
                s.chunk_samples()
            )));
        }
        let spec = signal::amp_transform(&signal::stft(wave, s.window, s.hop)?, self.tparams)?;
        let chunks = signal::chunk(&spec, s.t_chunk)?;
        let (k, d_lat) = (self.profile.model.k_summary, self.profile.model.d_lat);
        let fsq_cfg = FsqConfig::new(self.profile.fsq.n, self.profile.fsq.d, self.profile.fsq.dropout_p)?;
        let mut latents = Vec::with_capacity(chunks.len());
        let mut tokens = Vec::with_capacity(chunks.len());
        for batch in chunks.chunks(BATCH) {
            let mut g = Graph::<f32>::new();
            g.set_grad_enabled(false);
            let data = batch.iter().flat_map(|c| c.data().iter().copied()).collect();
            let x = g.constant(NdArray::from_vec(&self.chunk_shape(batch.len()), data)?);
            let z = self.model.net().encode(&mut g, self.model.params(), x)?;
            for item in g.value(z).data().chunks_exact(k * d_lat) {
                match mode {
                    Mode::Continuous => latents.push(fsq::bound(item, k, d_lat)?),
                    Mode::Discrete => {
                        tokens.push(fsq::levels_to_indices(&fsq::quantize(item, k, d_lat, &fsq_cfg)?, &fsq_cfg)?)
                    }
                }
            }
        }
        let payload = match mode {
            Mode::Continuous => Payload::Continuous(latents),
            Mode::Discrete => Payload::Discrete { n: fsq_cfg.n(), chunks: tokens },
        };
        let tokens_per_chunk = match mode {
            Mode::Continuous => k,
            Mode::Discrete => k * d_lat / fsq_cfg.d(),
        };
        EncodedSequence::new(StreamMeta::from_profile(self.profile, wave.n_samples()), tokens_per_chunk, d_lat, payload)
    }

    /// Checks that a sequence was produced under this codec's profile.
    pub fn check_sequence(&self, seq: &EncodedSequence) -> Result<()> {
        seq.meta.check_against(self.profile)?;
        let m = &self.profile.model;
        let ok = match &seq.payload {
            Payload::Continuous(_) => seq.k == m.k_summary && seq.d_lat == m.d_lat,
            Payload::Discrete { n, .. } => {
                *n == self.profile.fsq.n && seq.d_lat == self.profile.fsq.d && seq.k * seq.d_lat == m.k_summary * m.d_lat
            }
        };
        if !ok {
            return Err(Error::Config(format!(
                "payload shape [{} × {}] does not match profile {:?} (K = {}, d_lat = {}, n = {})",
                seq.k, seq.d_lat, self.profile.name, m.k_summary, m.d_lat, self.profile.fsq.n
            )));
        }
        Ok(())
    }

    /// Bounded latents of chunk `i` as the upsampler consumes them.
    fn latent(&self, seq: &EncodedSequence, i: usize) -> Result<Vec<f32>> {
        match &seq.payload {
            Payload::Continuous(c) => Ok(c[i].values().to_vec()),
            Payload::Discrete { n, chunks } => {
                let cfg = FsqConfig::new(*n, seq.d_lat, 0.0)?;
                Ok(fsq::indices_to_levels(&chunks[i], &cfg, self.profile.model.d_lat)?.values().to_vec())
            }
        }
    }

    /// Cross-connection maps per latent set, each level `[1, c, f, t]`.
    fn upsample(&self, lats: &[Vec<f32>]) -> Result<Vec<Vec<NdArray<f32>>>> {
        let (k, d_lat) = (self.profile.model.k_summary, self.profile.model.d_lat);
        let mut out = Vec::with_capacity(lats.len());
        for batch in lats.chunks(BATCH) {
            let b = batch.len();
            let mut g = Graph::<f32>::new();
            g.set_grad_enabled(false);
            let data = batch.iter().flatten().copied().collect();
            let lat = g.constant(NdArray::from_vec(&[b, k, d_lat], data)?);
            let cc = self.model.net().upsample(&mut g, self.model.params(), lat)?;
            for i in 0..b {
                let levels = cc
                    .levels
                    .iter()
                    .map(|&v| {
                        let a = g.value(v);
                        let s = a.shape();
                        let per = s[1] * s[2] * s[3];
                        NdArray::from_vec(&[1, s[1], s[2], s[3]], a.data()[i * per..(i + 1) * per].to_vec())
                    })
                    .collect::<std::result::Result<_, _>>()?;
                out.push(levels);
            }
        }
        Ok(out)
    }

    /// Runs the decoder once over a batch of pairs.
    fn denoise(&self, pairs: &[(Side, Side)]) -> Result<Vec<(Vec<f32>, Vec<f32>)>> {
        let b = pairs.len();
        let mut g = Graph::<f32>::new();
        g.set_grad_enabled(false);
        let shape = self.chunk_shape(b);
        let stack = |g: &mut Graph<f32>, right: bool| -> Result<_> {
            let data = pairs.iter().flat_map(|(l, r)| if right { &r.x } else { &l.x }).copied().collect();
            Ok(g.constant(NdArray::from_vec(&shape, data)?))
        };
        let xl = stack(&mut g, false)?;
        let xr = stack(&mut g, true)?;
        let levels = pairs[0].0.cc.len();
        let cc_side = |g: &mut Graph<f32>, right: bool| -> Result<crate::net::CrossConnections> {
            let mut vars = Vec::with_capacity(levels);
            for l in 0..levels {
                let s = pairs[0].0.cc[l].shape();
                let data =
                    pairs.iter().flat_map(|(a, c)| if right { c.cc[l].data() } else { a.cc[l].data() }).copied().collect();
                vars.push(g.constant(NdArray::from_vec(&[b, s[1], s[2], s[3]], data)?));
            }
            Ok(crate::net::CrossConnections { levels: vars })
        };
        let cl = cc_side(&mut g, false)?;
        let cr = cc_side(&mut g, true)?;
        let sl: Vec<f64> = pairs.iter().map(|(l, _)| l.sigma).collect();
        let sr: Vec<f64> = pairs.iter().map(|(_, r)| r.sigma).collect();
        let (ol, or) = self.model.net().decode_denoise(&mut g, self.model.params(), xl, xr, &sl, &sr, &cl, &cr)?;
        let n = self.chunk_len();
        let (vl, vr) = (g.value(ol).data(), g.value(or).data());
        Ok((0..b).map(|i| (vl[i * n..(i + 1) * n].to_vec(), vr[i * n..(i + 1) * n].to_vec())).collect())
    }

    fn noise(&self, rng: &mut ChaCha8Rng, base: Option<&[f32]>, sigma: f64) -> Vec<f32> {
        let n = self.chunk_len();
        (0..n)
            .map(|i| {
                let e: f32 = StandardNormal.sample(rng);
                base.map_or(0.0, |b| b[i]) + (sigma * e as f64) as f32
            })
            .collect()
    }

    /// Chunk-by-chunk decoding of a discrete payload.
    pub fn decode_autoregressive(&self, seq: &EncodedSequence, denoise_steps: usize, seed: u64) -> Result<Decoded> {
        self.require(seq, Mode::Discrete)?;
        self.run(seq, Strategy::Autoregressive, denoise_steps, seed)
    }

    /// Shifted-pair decoding of a discrete payload.
    pub fn decode_parallel(&self, seq: &EncodedSequence, s_steps: usize, seed: u64) -> Result<Decoded> {
        self.require(seq, Mode::Discrete)?;
        self.run(seq, Strategy::Parallel, s_steps, seed)
    }

    /// Decodes a continuous payload as is, without rounding it to the grid.
    pub fn decode_latents_direct(
        &self,
        seq: &EncodedSequence,
        strategy: Strategy,
        steps: usize,
        seed: u64,
    ) -> Result<Decoded> {
        self.require(seq, Mode::Continuous)?;
        self.run(seq, strategy, steps, seed)
    }

    /// Dispatches on the payload type: tokens go through the standard paths,
    /// continuous latents through [`Codec::decode_latents_direct`].
    pub fn decode(&self, seq: &EncodedSequence, strategy: Strategy, steps: usize, seed: u64) -> Result<Decoded> {
        self.check_sequence(seq)?;
        self.run(seq, strategy, steps, seed)
    }

    fn require(&self, seq: &EncodedSequence, mode: Mode) -> Result<()> {
        if seq.mode() != mode {
            let hint = match mode {
                Mode::Discrete => "use decode_latents_direct for continuous payloads",
                Mode::Continuous => "use decode_autoregressive or decode_parallel for token payloads",
            };
            return Err(Error::Usage(format!("payload is {:?}; {hint}", seq.mode())));
        }
        self.check_sequence(seq)
    }

    fn run(&self, seq: &EncodedSequence, strategy: Strategy, steps: usize, seed: u64) -> Result<Decoded> {
        meter::reset_peak();
        let base = meter::live_bytes();
        let mut reads = Vec::new();
        let (chunks, calls) = match strategy {
            Strategy::Autoregressive => self.autoregressive(seq, steps, seed, &mut reads)?,
            Strategy::Parallel => self.parallel(seq, steps, seed, &mut reads)?,
        };
        let peak = meter::peak_bytes().saturating_sub(base);
        let wave = self.synthesize(seq, chunks)?;
        Ok(Decoded { wave, report: DecodeReport { decoder_calls: calls, peak_activation_bytes: peak, payload_reads: reads } })
    }

    fn autoregressive(
        &self,
        seq: &EncodedSequence,
        steps: usize,
        seed: u64,
        reads: &mut Vec<PayloadRead>,
    ) -> Result<(Vec<Vec<f32>>, usize)> {
        let edm = &self.profile.model.edm;
        let ladder = ar_sigma_ladder(steps, edm.sigma_max, edm.sigma_min)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zero_lat = vec![0.0; self.profile.model.k_summary * self.profile.model.d_lat];
        let mut prev = (self.upsample(std::slice::from_ref(&zero_lat))?.remove(0), vec![0.0; self.chunk_len()]);
        let mut out = Vec::with_capacity(seq.chunk_count());
        let mut calls = 0;
        for t in 0..seq.chunk_count() {
            reads.push(PayloadRead { chunk: t, emitted: out.len() });
            let cc = self.upsample(&[self.latent(seq, t)?])?.remove(0);
            let mut x = self.noise(&mut rng, None, ladder[0]);
            for (i, &sigma) in ladder.iter().enumerate() {
                let left = Side { cc: &prev.0, x: prev.1.clone(), sigma: edm.sigma_min };
                let right = Side { cc: &cc, x, sigma };
                let est = self.denoise(&[(left, right)])?.remove(0).1;
                calls += 1;
                x = match ladder.get(i + 1) {
                    Some(&next) => self.noise(&mut rng, Some(&est), (next * next - edm.sigma_min * edm.sigma_min).sqrt()),
                    None => est,
                };
            }
            out.push(x.clone());
            prev = (cc, x);
        }
        Ok((out, calls))
    }

    fn parallel(
        &self,
        seq: &EncodedSequence,
        steps: usize,
        seed: u64,
        reads: &mut Vec<PayloadRead>,
    ) -> Result<(Vec<Vec<f32>>, usize)> {
        let edm = &self.profile.model.edm;
        let sigmas = cond_noise_schedule(steps, edm.sigma_max, self.profile.decode.sigma_end.max(edm.sigma_min))?;
        let t = seq.chunk_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lats = (0..t)
            .map(|i| {
                reads.push(PayloadRead { chunk: i, emitted: 0 });
                self.latent(seq, i)
            })
            .collect::<Result<Vec<_>>>()?;
        let cc = self.upsample(&lats)?;
        let zero_lat = vec![0.0; self.profile.model.k_summary * self.profile.model.d_lat];
        let pad_cc = self.upsample(std::slice::from_ref(&zero_lat))?.remove(0);
        let schedule = pair_schedule(t, steps);
        let mut est: Vec<Vec<f32>> = vec![vec![0.0; self.chunk_len()]; t];
        let mut calls = 0;
        for (pairs, &sigma) in schedule.steps.iter().zip(&sigmas) {
            let mut side = |slot: Slot| match slot {
                Slot::Chunk(i) => Side { cc: &cc[i], x: self.noise(&mut rng, Some(&est[i]), sigma), sigma },
                Slot::Pad => Side { cc: &pad_cc, x: self.noise(&mut rng, None, sigma), sigma },
            };
            let jobs: Vec<(Side, Side)> = pairs.iter().map(|&(l, r)| (side(l), side(r))).collect();
            let outs = self.denoise(&jobs)?;
            drop(jobs);
            calls += pairs.len();
            for (&(l, r), (ol, or)) in pairs.iter().zip(outs) {
                if let Slot::Chunk(i) = l {
                    est[i] = ol;
                }
                if let Slot::Chunk(i) = r {
                    est[i] = or;
                }
            }
        }
        Ok((est, calls))
    }

    /// Joins decoded chunks and inverts the spectrogram pipeline.
    fn synthesize(&self, seq: &EncodedSequence, chunks: Vec<Vec<f32>>) -> Result<WaveformBuffer> {
        let s = &self.profile.signal;
        let g = self.geom;
        let specs = chunks
            .into_iter()
            .map(|d| ComplexSpectrogram::from_data(d, g.channels, g.bins, g.frames, s.window, s.hop, true))
            .collect::<Result<Vec<_>>>()?;
        let n = seq.meta.n_samples as usize;
        let frames = signal::frame_count(n, s.window, s.hop);
        let spec = signal::unchunk(&specs, frames)?;
        let spec = signal::amp_inverse(&spec, self.tparams)?;
        Ok(signal::istft(&spec, s.sample_rate)?.resized(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::WaveformBuffer;

    fn tone(profile: &Profile, chunks: usize) -> WaveformBuffer {
        let s = &profile.signal;
        let n = (chunks * s.t_chunk - 1) * s.hop + s.window;
        let x = (0..n).map(|i| 0.4 * (i as f32 * 0.07).sin()).collect();
        WaveformBuffer::new(s.sample_rate, vec![x]).unwrap()
    }

    #[test]
    fn encode_shapes_and_ranges() {
        let p = Profile::toy();
        let model = Model::new(&p.model, (&p.signal).into(), 3).unwrap();
        let codec = Codec::new(&p, &model).unwrap();
        let w = tone(&p, 3);
        let cont = codec.encode_sequence(&w, Mode::Continuous).unwrap();
        assert_eq!(cont.chunk_count(), 3);
        let Payload::Continuous(c) = &cont.payload else { panic!() };
        assert!(c.iter().flat_map(|l| l.values()).all(|v| v.abs() < 1.0));
        let disc = codec.encode_sequence(&w, Mode::Discrete).unwrap();
        let Payload::Discrete { chunks, .. } = &disc.payload else { panic!() };
        assert!(chunks.iter().flat_map(|t| &t.indices).all(|&i| i < 14_641));
        assert_eq!(cont.quantized(5).unwrap(), disc);
    }

    #[test]
    fn too_short_input() {
        let p = Profile::toy();
        let model = Model::new(&p.model, (&p.signal).into(), 3).unwrap();
        let codec = Codec::new(&p, &model).unwrap();
        let w = WaveformBuffer::silence(p.signal.sample_rate, 1, p.signal.chunk_samples() - 1).unwrap();
        assert!(matches!(codec.encode_sequence(&w, Mode::Discrete), Err(Error::Length(_))));
    }

    #[test]
    fn call_counts_and_length() {
        let p = Profile::toy();
        let model = Model::new(&p.model, (&p.signal).into(), 3).unwrap();
        let codec = Codec::new(&p, &model).unwrap();
        let w = tone(&p, 3);
        let seq = codec.encode_sequence(&w, Mode::Discrete).unwrap();
        let ar = codec.decode_autoregressive(&seq, 2, 0).unwrap();
        assert_eq!(ar.report.decoder_calls, 6);
        assert_eq!(ar.wave.n_samples(), w.n_samples());
        let par = codec.decode_parallel(&seq, 3, 0).unwrap();
        assert_eq!(par.report.decoder_calls, pair_schedule(3, 3).total_pairs());
        assert!(matches!(codec.decode_parallel(&seq, 0, 0), Err(Error::Config(_))));
        let cont = codec.encode_sequence(&w, Mode::Continuous).unwrap();
        assert!(matches!(codec.decode_parallel(&cont, 1, 0), Err(Error::Usage(_))));
        assert!(matches!(codec.decode_latents_direct(&seq, Strategy::Parallel, 1, 0), Err(Error::Usage(_))));
    }
}
