//! On-disk containers for encoded sequences.
//!
//! Token files (`DCTK`): version `u32`, n `u16`, d `u16`, tokens per chunk
//! `u32`, chunk count `u64`, then `u16` indices chunk-major. Latent files
//! (`DCLT`): version `u32`, K `u32`, d_lat `u32`, chunk count `u64`, then
//! `f32` values chunk-major. Both end with the stream metadata block:
//! sample rate `u32`, channels `u16`, window `u32`, hop `u32`, t_chunk `u32`,
//! original sample count `u64`. Everything is little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::{EncodedSequence, Payload, StreamMeta};
use crate::error::{Error, Result};
use crate::fsq::{LatentSet, TokenChunk};

pub const TOKEN_MAGIC: &[u8; 4] = b"DCTK";
pub const LATENT_MAGIC: &[u8; 4] = b"DCLT";
pub const VERSION: u32 = 1;

/// Parsed file header, without the payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Header {
    Tokens { n: u16, d: u16, per_chunk: u32, chunks: u64 },
    Latents { k: u32, d_lat: u32, chunks: u64 },
}

impl Header {
    pub fn chunk_count(&self) -> u64 {
        match self {
            Header::Tokens { chunks, .. } | Header::Latents { chunks, .. } => *chunks,
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("file truncated: needed {n} bytes at offset {}, have {}", self.pos, self.buf.len()))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn write_meta(out: &mut Vec<u8>, m: &StreamMeta) {
    out.extend_from_slice(&m.sample_rate.to_le_bytes());
    out.extend_from_slice(&m.channels.to_le_bytes());
    out.extend_from_slice(&m.window.to_le_bytes());
    out.extend_from_slice(&m.hop.to_le_bytes());
    out.extend_from_slice(&m.t_chunk.to_le_bytes());
    out.extend_from_slice(&m.n_samples.to_le_bytes());
}

fn read_meta(c: &mut Cursor) -> Result<StreamMeta> {
    Ok(StreamMeta {
        sample_rate: c.u32()?,
        channels: c.u16()?,
        window: c.u32()?,
        hop: c.u32()?,
        t_chunk: c.u32()?,
        n_samples: c.u64()?,
    })
}

fn narrow<T: TryFrom<usize>>(v: usize, what: &str) -> Result<T> {
    T::try_from(v).map_err(|_| Error::Format(format!("{what} = {v} does not fit the file header")))
}

pub fn to_bytes(seq: &EncodedSequence) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match &seq.payload {
        Payload::Discrete { n, chunks } => {
            out.extend_from_slice(TOKEN_MAGIC);
            out.extend_from_slice(&VERSION.to_le_bytes());
            out.extend_from_slice(&narrow::<u16>(*n as usize, "n")?.to_le_bytes());
            out.extend_from_slice(&narrow::<u16>(seq.d_lat, "d")?.to_le_bytes());
            out.extend_from_slice(&narrow::<u32>(seq.k, "tokens per chunk")?.to_le_bytes());
            out.extend_from_slice(&(chunks.len() as u64).to_le_bytes());
            for ch in chunks {
                for &i in &ch.indices {
                    let v = u16::try_from(i).map_err(|_| Error::Data(format!("token {i} exceeds u16 storage")))?;
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Payload::Continuous(chunks) => {
            out.extend_from_slice(LATENT_MAGIC);
            out.extend_from_slice(&VERSION.to_le_bytes());
            out.extend_from_slice(&narrow::<u32>(seq.k, "K")?.to_le_bytes());
            out.extend_from_slice(&narrow::<u32>(seq.d_lat, "d_lat")?.to_le_bytes());
            out.extend_from_slice(&(chunks.len() as u64).to_le_bytes());
            for ch in chunks {
                for &v in ch.values() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    write_meta(&mut out, &seq.meta);
    Ok(out)
}

fn read_header(c: &mut Cursor) -> Result<Header> {
    let magic = c.take(4)?;
    let header = if magic == TOKEN_MAGIC {
        check_version(c.u32()?)?;
        Header::Tokens { n: c.u16()?, d: c.u16()?, per_chunk: c.u32()?, chunks: c.u64()? }
    } else if magic == LATENT_MAGIC {
        check_version(c.u32()?)?;
        Header::Latents { k: c.u32()?, d_lat: c.u32()?, chunks: c.u64()? }
    } else {
        return Err(Error::Format(format!("unknown magic {:?}", String::from_utf8_lossy(magic))));
    };
    Ok(header)
}

fn check_version(v: u32) -> Result<()> {
    if v != VERSION {
        return Err(Error::Format(format!("unsupported format version {v}")));
    }
    Ok(())
}

/// Reads only the header and metadata block, checking that the file is
/// exactly as long as the header implies.
pub fn inspect_bytes(bytes: &[u8]) -> Result<(Header, StreamMeta)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let header = read_header(&mut c)?;
    let payload = payload_bytes(&header)?;
    c.take(payload)?;
    let meta = read_meta(&mut c)?;
    if c.pos != bytes.len() {
        return Err(Error::Data(format!("{} trailing bytes after metadata", bytes.len() - c.pos)));
    }
    Ok((header, meta))
}

fn payload_bytes(h: &Header) -> Result<usize> {
    let (per_chunk, width, chunks) = match *h {
        Header::Tokens { per_chunk, chunks, .. } => (per_chunk as u64, 2u64, chunks),
        Header::Latents { k, d_lat, chunks } => (k as u64 * d_lat as u64, 4u64, chunks),
    };
    per_chunk
        .checked_mul(width)
        .and_then(|b| b.checked_mul(chunks))
        .and_then(|b| usize::try_from(b).ok())
        .ok_or_else(|| Error::Format("header sizes overflow".into()))
}

pub fn from_bytes(bytes: &[u8]) -> Result<EncodedSequence> {
    let (header, meta) = inspect_bytes(bytes)?;
    let mut c = Cursor { buf: bytes, pos: 0 };
    read_header(&mut c)?;
    let seq = match header {
        Header::Tokens { n, d, per_chunk, chunks } => {
            if n == 0 || d == 0 || per_chunk == 0 {
                return Err(Error::Data(format!("invalid token header n={n} d={d} per_chunk={per_chunk}")));
            }
            let size = (2 * n as u64 + 1).checked_pow(d as u32).unwrap_or(u64::MAX);
            let mut out = Vec::with_capacity(chunks as usize);
            for _ in 0..chunks {
                let indices = (0..per_chunk)
                    .map(|_| {
                        let i = c.u16()? as u64;
                        if i >= size {
                            return Err(Error::Data(format!("token {i} outside codebook of size {size}")));
                        }
                        Ok(i)
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.push(TokenChunk { indices });
            }
            EncodedSequence::new(meta, per_chunk as usize, d as usize, Payload::Discrete { n: n as u32, chunks: out })?
        }
        Header::Latents { k, d_lat, chunks } => {
            if k == 0 || d_lat == 0 {
                return Err(Error::Data(format!("invalid latent header K={k} d_lat={d_lat}")));
            }
            let per = k as usize * d_lat as usize;
            let mut out = Vec::with_capacity(chunks as usize);
            for _ in 0..chunks {
                let raw = c.take(per * 4)?;
                let values: Vec<f32> =
                    raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data("non-finite latent value".into()));
                }
                out.push(LatentSet::new(values, k as usize, d_lat as usize, false)?);
            }
            EncodedSequence::new(meta, k as usize, d_lat as usize, Payload::Continuous(out))?
        }
    };
    Ok(seq)
}

pub fn write(path: impl AsRef<Path>, seq: &EncodedSequence) -> Result<()> {
    let bytes = to_bytes(seq)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<EncodedSequence> {
    from_bytes(&read_all(path)?)
}

pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

/// Human-readable summary figures for an encoded file.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub header: Header,
    pub meta: StreamMeta,
    pub chunk_seconds: f64,
    /// Raw token bitrate in bits per second; only meaningful for token files,
    /// but latent files report what their tokenized form would cost.
    pub bitrate_bps: Option<f64>,
    pub latent_rate_hz: f64,
    /// Audio samples per stored latent value.
    pub compression: f64,
}

/// Channel count of the reference latent view used for the latent rate:
/// `K·d_lat` values per chunk are read as frames of this many channels.
pub const LATENT_VIEW_CHANNELS: usize = 64;

pub fn summarize(header: Header, meta: StreamMeta) -> Result<Summary> {
    if meta.sample_rate == 0 || meta.hop == 0 || meta.t_chunk == 0 {
        return Err(Error::Data(format!("invalid stream metadata {meta:?}")));
    }
    let chunk_seconds = meta.t_chunk as f64 * meta.hop as f64 / meta.sample_rate as f64;
    let (values_per_chunk, bitrate_bps) = match header {
        Header::Tokens { n, d, per_chunk, .. } => (
            per_chunk as f64 * d as f64,
            Some(crate::fsq::bitrate_for_levels(2.0 * n as f64 + 1.0, d as usize, per_chunk as usize, chunk_seconds)?),
        ),
        Header::Latents { k, d_lat, .. } => (k as f64 * d_lat as f64, None),
    };
    let latent_rate_hz = values_per_chunk / LATENT_VIEW_CHANNELS as f64 / chunk_seconds;
    let samples = meta.channels as f64 * meta.t_chunk as f64 * meta.hop as f64;
    Ok(Summary { header, meta, chunk_seconds, bitrate_bps, latent_rate_hz, compression: samples / values_per_chunk })
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.header {
            Header::Tokens { n, d, per_chunk, chunks } => {
                writeln!(f, "format: DCTK (discrete tokens)")?;
                writeln!(f, "levels per dim: {} (n = {n}), d = {d}", 2 * n + 1)?;
                writeln!(f, "tokens per chunk: {per_chunk}")?;
                writeln!(f, "chunks: {chunks}")?;
            }
            Header::Latents { k, d_lat, chunks } => {
                writeln!(f, "format: DCLT (continuous latents)")?;
                writeln!(f, "K = {k}, d_lat = {d_lat}")?;
                writeln!(f, "chunks: {chunks}")?;
            }
        }
        let m = &self.meta;
        writeln!(f, "sample rate: {} Hz, channels: {}", m.sample_rate, m.channels)?;
        writeln!(f, "window: {}, hop: {}, frames per chunk: {}", m.window, m.hop, m.t_chunk)?;
        writeln!(f, "samples: {} ({:.3} s)", m.n_samples, m.n_samples as f64 / m.sample_rate as f64)?;
        writeln!(f, "chunk duration: {:.5} s", self.chunk_seconds)?;
        if let Some(b) = self.bitrate_bps {
            writeln!(f, "bitrate: {:.2} kbps", b / 1000.0)?;
        }
        writeln!(f, "latent rate: {:.2} Hz (~{:.0} Hz)", self.latent_rate_hz, self.latent_rate_hz)?;
        write!(f, "compression: {}x", format_ratio(self.compression))
    }
}

fn format_ratio(r: f64) -> String {
    if (r - r.round()).abs() < 1e-9 {
        format!("{}", r.round() as u64)
    } else {
        format!("{r:.2}")
    }
}
