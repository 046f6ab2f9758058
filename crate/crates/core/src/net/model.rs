//! Encoder, upsampler and consistency decoder.
//!
//! Token layout: the patchifier turns a `[C × F × T]` chunk into an
//! `F' × T'` grid of `N = F'·T'` audio tokens (frequency-major). The encoder
//! appends `K` learned summary tokens and keeps only those at the output.
//! The upsampler does the reverse: `K` latent tokens plus `N` mask tokens in,
//! audio tokens out, de-patchified into one cross-connection map per level.
//! The decoder runs a left/right chunk pair as a batch of `2B` through its
//! convolutions, so convolutions never mix the two chunks, and as one
//! `2N`-token sequence through the masked transformer.

use dualcodec_autodiff::{Graph, Init, NdArray, ParamBuilder, ParamId, ParamStore, Scalar, Var};

use super::edm::EdmCoefficients;
use super::embed::sigma_embed;
use super::layers::{blocks, Block, Conv, DePatchifier, Linear, Norm, Patchifier};
use super::mask::chunked_causal_mask;
use crate::config::{ModelConfig, SignalConfig};
use crate::error::{Error, Result};

/// Shape of one spectrogram chunk as the networks see it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkGeometry {
    pub channels: usize,
    pub bins: usize,
    pub frames: usize,
}

impl From<&SignalConfig> for ChunkGeometry {
    fn from(s: &SignalConfig) -> Self {
        ChunkGeometry { channels: s.spec_channels(), bins: s.bins(), frames: s.t_chunk }
    }
}

/// Upsampler feature maps, one per resolution level (index 0 = full
/// resolution), each `[B, c_l, F_l, T_l]`.
#[derive(Debug, Clone)]
pub struct CrossConnections {
    pub levels: Vec<Var>,
}

#[derive(Debug, Clone)]
struct Encoder {
    patch: Patchifier,
    to_hidden: Linear,
    pos: ParamId,
    summary: ParamId,
    blocks: Vec<Block>,
    norm: Norm,
    to_lat: Linear,
}

#[derive(Debug, Clone)]
struct Upsampler {
    from_lat: Linear,
    mask_emb: ParamId,
    pos: ParamId,
    blocks: Vec<Block>,
    norm: Norm,
    to_feat: Linear,
    depatch: DePatchifier,
}

#[derive(Debug, Clone)]
struct Decoder {
    patch: Patchifier,
    to_hidden: Linear,
    pos: ParamId,
    sigma_in: Linear,
    sigma_out: Linear,
    blocks: Vec<Block>,
    norm: Norm,
    to_feat: Linear,
    depatch: DePatchifier,
    conv_out: Conv,
}

/// Parameter layout of the three networks. Holds ids only.
#[derive(Debug, Clone)]
pub struct Network {
    cfg: ModelConfig,
    geom: ChunkGeometry,
    edm: EdmCoefficients,
    /// `(c_l, F_l, T_l)` per level.
    levels: Vec<[usize; 3]>,
    enc: Encoder,
    up: Upsampler,
    dec: Decoder,
}

fn down_len(n: usize, factor: usize) -> usize {
    // kernel 4 / stride 2 / pad 1 halves; kernel 3 / stride 1 / pad 1 keeps.
    if factor == 2 {
        (n + 2 - 4) / 2 + 1
    } else {
        n
    }
}

fn up_len(n: usize, factor: usize) -> usize {
    if factor == 2 {
        (n - 1) * 2 - 2 + 4
    } else {
        n
    }
}

fn stage_halvings(f: usize) -> usize {
    f.trailing_zeros() as usize
}

impl Network {
    pub fn build(cfg: &ModelConfig, geom: ChunkGeometry, pb: &mut ParamBuilder) -> Result<Network> {
        let nl = cfg.conv_channels.len();
        if nl == 0 || cfg.conv_layers.len() != nl || cfg.downsample.len() + 1 != nl {
            return Err(Error::Config("conv_channels, conv_layers and downsample disagree in length".into()));
        }
        if geom.bins % cfg.freq_factor() != 0 || geom.frames % cfg.time_factor() != 0 {
            return Err(Error::Config(format!(
                "chunk {}×{} not divisible by downsampling {}×{}",
                geom.bins,
                geom.frames,
                cfg.freq_factor(),
                cfg.time_factor()
            )));
        }
        if cfg.head_dim == 0 || cfg.hidden_dim % cfg.head_dim != 0 {
            return Err(Error::Config("hidden_dim must be a multiple of head_dim".into()));
        }

        // Level shapes going down, then the de-patchifier's going up; they
        // must agree exactly for cross-connections and skips to line up.
        let mut levels = vec![[cfg.conv_channels[0], geom.bins, geom.frames]];
        for (l, f) in cfg.downsample.iter().enumerate() {
            let [_, mut fl, mut tl] = levels[l];
            for i in 0..stage_halvings(f[0]).max(stage_halvings(f[1])) {
                fl = down_len(fl, if i < stage_halvings(f[0]) { 2 } else { 1 });
                tl = down_len(tl, if i < stage_halvings(f[1]) { 2 } else { 1 });
            }
            levels.push([cfg.conv_channels[l + 1], fl, tl]);
        }
        for (l, f) in cfg.downsample.iter().enumerate().rev() {
            let [_, mut fl, mut tl] = levels[l + 1];
            let steps = stage_halvings(f[0]).max(stage_halvings(f[1]));
            for i in (0..steps).rev() {
                fl = up_len(fl, if i < stage_halvings(f[0]) { 2 } else { 1 });
                tl = up_len(tl, if i < stage_halvings(f[1]) { 2 } else { 1 });
            }
            if [fl, tl] != levels[l][1..] {
                return Err(Error::Symmetry(format!(
                    "de-patchifier level {l} would be {fl}×{tl}, patchifier level is {}×{}",
                    levels[l][1], levels[l][2]
                )));
            }
        }

        let [c_low, f_low, t_low] = levels[nl - 1];
        let n_tok = f_low * t_low;
        let (h, k) = (cfg.hidden_dim, cfg.k_summary);
        let (ch, ly, ds) = (&cfg.conv_channels, &cfg.conv_layers, &cfg.downsample);
        let pos_init = Init::Normal(0.02);

        let enc = Encoder {
            patch: Patchifier::new(pb, "enc.patch", geom.channels, ch, ly, ds),
            to_hidden: Linear::standard(pb, "enc.to_hidden", c_low, h),
            pos: pb.add("enc.pos", &[n_tok + k, h], pos_init),
            summary: pb.add("enc.summary", &[k, h], Init::Normal(1.0)),
            blocks: blocks(pb, "enc.tf", cfg.encoder_blocks, h, cfg.head_dim, cfg.mlp_mult, None),
            norm: Norm::affine(pb, "enc.out_norm", h),
            to_lat: Linear::standard(pb, "enc.to_lat", h, cfg.d_lat),
        };
        let up = Upsampler {
            from_lat: Linear::standard(pb, "up.from_lat", cfg.d_lat, h),
            mask_emb: pb.add("up.mask", &[n_tok, h], Init::Zeros),
            pos: pb.add("up.pos", &[k + n_tok, h], pos_init),
            blocks: blocks(pb, "up.tf", cfg.upsampler_blocks, h, cfg.head_dim, cfg.mlp_mult, None),
            norm: Norm::affine(pb, "up.out_norm", h),
            to_feat: Linear::standard(pb, "up.to_feat", h, c_low),
            depatch: DePatchifier::new(pb, "up.depatch", ch, ly, ds),
        };
        let dec = Decoder {
            patch: Patchifier::new(pb, "dec.patch", geom.channels, ch, ly, ds),
            to_hidden: Linear::standard(pb, "dec.to_hidden", c_low, h),
            pos: pb.add("dec.pos", &[2 * n_tok, h], pos_init),
            sigma_in: Linear::standard(pb, "dec.sigma.in", cfg.sigma_embed_channels, h),
            sigma_out: Linear::standard(pb, "dec.sigma.out", h, h),
            blocks: blocks(pb, "dec.tf", cfg.decoder_blocks, h, cfg.head_dim, cfg.mlp_mult, Some(h)),
            norm: Norm::affine(pb, "dec.out_norm", h),
            to_feat: Linear::standard(pb, "dec.to_feat", h, c_low),
            depatch: DePatchifier::new(pb, "dec.depatch", ch, ly, ds),
            conv_out: Conv::same(pb, "dec.patch.out", ch[0], geom.channels, 1.0),
        };
        Ok(Network { cfg: cfg.clone(), geom, edm: EdmCoefficients::from(&cfg.edm), levels, enc, up, dec })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> ChunkGeometry {
        self.geom
    }

    pub fn edm(&self) -> &EdmCoefficients {
        &self.edm
    }

    /// `(c_l, F_l, T_l)` of every patchifier level.
    pub fn level_shapes(&self) -> &[[usize; 3]] {
        &self.levels
    }

    fn token_grid(&self) -> (usize, usize, usize) {
        let [c, f, t] = *self.levels.last().expect("at least one level");
        (c, f, t)
    }

    fn check_chunks(&self, shape: &[usize], what: &str) -> Result<usize> {
        let g = self.geom;
        if shape.len() != 4 || shape[1..] != [g.channels, g.bins, g.frames] {
            return Err(Error::Dimension(format!(
                "{what}: expected [B, {}, {}, {}], got {shape:?}",
                g.channels, g.bins, g.frames
            )));
        }
        Ok(shape[0])
    }

    /// Map `[B, c, F', T']` to tokens `[B, N, c]`.
    fn to_tokens<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (c, f, t) = self.token_grid();
        let b = g.shape(x)[0];
        let x = g.reshape(x, &[b, c, f * t])?;
        Ok(g.permute(x, &[0, 2, 1])?)
    }

    fn from_tokens<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (c, f, t) = self.token_grid();
        let b = g.shape(x)[0];
        let x = g.permute(x, &[0, 2, 1])?;
        Ok(g.reshape(x, &[b, c, f, t])?)
    }

    /// `x [B, C, F, T]` → pre-activation latents `[B, K, d_lat]`.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let b = self.check_chunks(g.shape(x), "encode")?;
        let e = &self.enc;
        let (k, h) = (self.cfg.k_summary, self.cfg.hidden_dim);
        let (low, _) = e.patch.forward(g, p, x, None)?;
        let tok = self.to_tokens(g, low)?;
        let n = g.shape(tok)[1];
        let tok = e.to_hidden.forward(g, p, tok)?;
        let summary = g.param(p, e.summary);
        let summary = g.broadcast_to(summary, &[b, k, h])?;
        let mut t = g.concat(&[tok, summary], 1)?;
        let pos = g.param(p, e.pos);
        t = g.add(t, pos)?;
        for blk in &e.blocks {
            t = blk.forward(g, p, t, None, None)?;
        }
        let s = g.slice(t, 1, n, k)?;
        let s = e.norm.forward(g, p, s, None)?;
        e.to_lat.forward(g, p, s)
    }

    /// Bounded latents `[B, K, d_lat]` → cross-connection maps.
    pub fn upsample<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, lat: Var) -> Result<CrossConnections> {
        let s = g.shape(lat).to_vec();
        let (k, h) = (self.cfg.k_summary, self.cfg.hidden_dim);
        if s.len() != 3 || s[1..] != [k, self.cfg.d_lat] {
            return Err(Error::Dimension(format!("upsample: expected [B, {k}, {}], got {s:?}", self.cfg.d_lat)));
        }
        let b = s[0];
        let u = &self.up;
        let (_, f, t) = self.token_grid();
        let n = f * t;
        let x = u.from_lat.forward(g, p, lat)?;
        let m = g.param(p, u.mask_emb);
        let m = g.broadcast_to(m, &[b, n, h])?;
        let mut x = g.concat(&[x, m], 1)?;
        let pos = g.param(p, u.pos);
        x = g.add(x, pos)?;
        for blk in &u.blocks {
            x = blk.forward(g, p, x, None, None)?;
        }
        let x = g.slice(x, 1, k, n)?;
        let x = u.norm.forward(g, p, x, None)?;
        let x = u.to_feat.forward(g, p, x)?;
        let x = self.from_tokens(g, x)?;
        Ok(CrossConnections { levels: u.depatch.forward(g, p, x, None)? })
    }

    fn check_cc<T: Scalar>(&self, g: &Graph<T>, cc: &CrossConnections, b: usize, side: &str) -> Result<()> {
        if cc.levels.len() != self.levels.len() {
            return Err(Error::Symmetry(format!(
                "{side} cross-connections have {} levels, patchifier has {}",
                cc.levels.len(),
                self.levels.len()
            )));
        }
        for (l, (&v, s)) in cc.levels.iter().zip(&self.levels).enumerate() {
            if g.shape(v) != [b, s[0], s[1], s[2]] {
                return Err(Error::Symmetry(format!(
                    "{side} cross-connection level {l} is {:?}, expected {:?}",
                    g.shape(v),
                    [b, s[0], s[1], s[2]]
                )));
            }
        }
        Ok(())
    }

    /// Per-item coefficient column `[2B, 1, 1, 1]`.
    fn coeff_column<T: Scalar>(&self, g: &mut Graph<T>, sigmas: &[f64], f: impl Fn(f64) -> f64) -> Var {
        let vals: Vec<T> = sigmas.iter().map(|&s| T::from_f64_lossy(f(s))).collect();
        g.constant(NdArray::from_vec(&[sigmas.len(), 1, 1, 1], vals).expect("column"))
    }

    /// Denoises a chunk pair. Inputs are `[B, C, F, T]`, one σ per item and
    /// side; returns the left and right estimates.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_denoise<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        noisy_left: Var,
        noisy_right: Var,
        sigma_left: &[f64],
        sigma_right: &[f64],
        cc_left: &CrossConnections,
        cc_right: &CrossConnections,
    ) -> Result<(Var, Var)> {
        let b = self.check_chunks(g.shape(noisy_left), "decode left")?;
        if self.check_chunks(g.shape(noisy_right), "decode right")? != b
            || sigma_left.len() != b
            || sigma_right.len() != b
        {
            return Err(Error::Dimension(format!("decode: batch {b} disagrees with right input or sigma counts")));
        }
        for &s in sigma_left.iter().chain(sigma_right) {
            self.edm.check(s)?;
        }
        self.check_cc(g, cc_left, b, "left")?;
        self.check_cc(g, cc_right, b, "right")?;

        let d = &self.dec;
        let h = self.cfg.hidden_dim;
        let sigmas: Vec<f64> = sigma_left.iter().chain(sigma_right).copied().collect();
        let x = g.concat(&[noisy_left, noisy_right], 0)?;
        let c_in = self.coeff_column(g, &sigmas, |s| self.edm.c_in(s));
        let xin = g.mul(x, c_in)?;
        let cc: Vec<Var> = cc_left
            .levels
            .iter()
            .zip(&cc_right.levels)
            .map(|(&l, &r)| g.concat(&[l, r], 0))
            .collect::<std::result::Result<_, _>>()?;

        let (low, skips) = d.patch.forward(g, p, xin, Some(&cc))?;
        let tok = self.to_tokens(g, low)?;
        let n = g.shape(tok)[1];
        let tok = d.to_hidden.forward(g, p, tok)?;
        // [2B, N, H] (left items then right items) → [B, 2N, H] (left tokens then right tokens).
        let tok = g.reshape(tok, &[2, b, n, h])?;
        let tok = g.permute(tok, &[1, 0, 2, 3])?;
        let mut t = g.reshape(tok, &[b, 2 * n, h])?;
        let pos = g.param(p, d.pos);
        t = g.add(t, pos)?;

        let e = self.cfg.sigma_embed_channels;
        let mut emb = Vec::with_capacity(b * 2 * e);
        for i in 0..b {
            for s in [sigma_left[i], sigma_right[i]] {
                emb.extend(sigma_embed(s, e)?.into_iter().map(T::from_f64_lossy));
            }
        }
        let emb = g.constant(NdArray::from_vec(&[b, 2, e], emb)?);
        let cond = d.sigma_in.forward(g, p, emb)?;
        let cond = g.gelu(cond);
        let cond = d.sigma_out.forward(g, p, cond)?;

        let mask = chunked_causal_mask::<T>(n, n);
        for blk in &d.blocks {
            t = blk.forward(g, p, t, Some(cond), Some(&mask))?;
        }
        let t = d.norm.forward(g, p, t, None)?;
        let t = d.to_feat.forward(g, p, t)?;
        let c_low = g.shape(t)[2];
        let t = g.reshape(t, &[b, 2, n, c_low])?;
        let t = g.permute(t, &[1, 0, 2, 3])?;
        let t = g.reshape(t, &[2 * b, n, c_low])?;
        let low = self.from_tokens(g, t)?;
        let maps = d.depatch.forward(g, p, low, Some(&skips))?;
        let raw = d.conv_out.forward(g, p, maps[0])?;

        let c_skip = self.coeff_column(g, &sigmas, |s| self.edm.c_skip(s));
        let c_out = self.coeff_column(g, &sigmas, |s| self.edm.c_out(s));
        let skip = g.mul(x, c_skip)?;
        let out = g.mul(raw, c_out)?;
        let out = g.add(skip, out)?;
        Ok((g.slice(out, 0, 0, b)?, g.slice(out, 0, b, b)?))
    }
}

/// Parameter totals by component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub transformer: usize,
    pub convolutional: usize,
    pub other: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.transformer + self.convolutional + self.other
    }
}

/// Counts parameters without allocating them.
pub fn param_breakdown(cfg: &ModelConfig, geom: ChunkGeometry) -> Result<ParamBreakdown> {
    let mut pb = ParamBuilder::new();
    Network::build(cfg, geom, &mut pb)?;
    let mut out = ParamBreakdown { transformer: 0, convolutional: 0, other: 0 };
    for spec in pb.specs() {
        let n: usize = spec.shape.iter().product();
        if spec.name.contains(".block") {
            out.transformer += n;
        } else if spec.name.contains("patch") {
            out.convolutional += n;
        } else {
            out.other += n;
        }
    }
    Ok(out)
}

/// A network layout together with parameter values.
#[derive(Clone)]
pub struct Model<T: Scalar> {
    net: Network,
    params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(cfg: &ModelConfig, geom: ChunkGeometry, seed: u64) -> Result<Self> {
        let mut pb = ParamBuilder::new();
        let net = Network::build(cfg, geom, &mut pb)?;
        Ok(Model { net, params: pb.materialize(seed) })
    }

    /// Pairs a layout with existing values; names and shapes must match.
    pub fn with_params(cfg: &ModelConfig, geom: ChunkGeometry, params: ParamStore<T>) -> Result<Self> {
        let mut pb = ParamBuilder::new();
        let net = Network::build(cfg, geom, &mut pb)?;
        let specs = pb.specs();
        if specs.len() != params.len()
            || specs.iter().zip(params.ids()).any(|(s, id)| s.name != params.name(id) || s.shape != params.value(id).shape())
        {
            return Err(Error::Config("parameter set does not match the model layout".into()));
        }
        Ok(Model { net, params })
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { net: self.net.clone(), params: self.params.cast() }
    }
}
