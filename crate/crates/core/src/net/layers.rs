//! Building blocks shared by the three networks. Each holds only parameter
//! ids; values live in a `ParamStore` so one layout serves f32 training and
//! f64 gradient checks alike.

use dualcodec_autodiff::{Graph, Init, NdArray, ParamBuilder, ParamId, ParamStore, Scalar, Var};

use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

fn lecun(fan_in: usize) -> Init {
    Init::Normal(1.0 / (fan_in as f64).sqrt())
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, name: &str, din: usize, dout: usize, init: Init) -> Self {
        Linear { w: pb.add(format!("{name}.w"), &[din, dout], init), b: pb.add(format!("{name}.b"), &[dout], Init::Zeros) }
    }

    pub fn standard(pb: &mut ParamBuilder, name: &str, din: usize, dout: usize) -> Self {
        Self::new(pb, name, din, dout, lecun(din))
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(p, self.w), g.param(p, self.b));
        let y = g.matmul(x, w)?;
        Ok(g.add(y, b)?)
    }
}

/// Strided convolution, or its transpose when `transpose` is set.
#[derive(Debug, Clone)]
pub(crate) struct Conv {
    w: ParamId,
    b: ParamId,
    stride: (usize, usize),
    pad: (usize, usize),
    transpose: bool,
}

/// Kernel, stride and padding along one axis for a resampling factor of 1 or 2.
fn axis_geometry(factor: usize) -> (usize, usize, usize) {
    if factor == 2 {
        (4, 2, 1)
    } else {
        (3, 1, 1)
    }
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    fn build(
        pb: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        transpose: bool,
        gain: f64,
    ) -> Self {
        let fan_in = cin * kernel.0 * kernel.1 / if transpose { stride.0 * stride.1 } else { 1 };
        let std = gain / (fan_in as f64).sqrt();
        let shape = if transpose { [cin, cout, kernel.0, kernel.1] } else { [cout, cin, kernel.0, kernel.1] };
        Conv {
            w: pb.add(format!("{name}.w"), &shape, Init::Normal(std)),
            b: pb.add(format!("{name}.b"), &[cout], Init::Zeros),
            stride,
            pad,
            transpose,
        }
    }

    pub fn same(pb: &mut ParamBuilder, name: &str, cin: usize, cout: usize, gain: f64) -> Self {
        Self::build(pb, name, cin, cout, (3, 3), (1, 1), (1, 1), false, gain)
    }

    /// Resampling convolution for frequency/time factors in {1, 2}.
    pub fn resample(pb: &mut ParamBuilder, name: &str, cin: usize, cout: usize, factor: (usize, usize), up: bool) -> Self {
        let (kf, sf, pf) = axis_geometry(factor.0);
        let (kt, st, pt) = axis_geometry(factor.1);
        Self::build(pb, name, cin, cout, (kf, kt), (sf, st), (pf, pt), up, 1.0)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(p, self.w), g.param(p, self.b));
        Ok(if self.transpose {
            g.conv_transpose2d(x, w, Some(b), self.stride, self.pad)?
        } else {
            g.conv2d(x, w, Some(b), self.stride, self.pad)?
        })
    }
}

/// Splits a power-of-two (freq, time) stage factor into factor-2 sub-steps.
fn sub_steps(factor: [usize; 2]) -> Vec<(usize, usize)> {
    let (mut f, mut t) = (factor[0], factor[1]);
    let mut steps = Vec::new();
    while f > 1 || t > 1 {
        let sf = if f > 1 { 2 } else { 1 };
        let st = if t > 1 { 2 } else { 1 };
        steps.push((sf, st));
        f /= sf;
        t /= st;
    }
    steps
}

/// `x + conv3×3(gelu(x))`.
#[derive(Debug, Clone)]
pub(crate) struct ResLayer {
    conv: Conv,
}

impl ResLayer {
    fn new(pb: &mut ParamBuilder, name: &str, c: usize) -> Self {
        ResLayer { conv: Conv::same(pb, name, c, c, 0.5) }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = g.gelu(x);
        let h = self.conv.forward(g, p, h)?;
        Ok(g.add(x, h)?)
    }
}

#[derive(Debug, Clone)]
struct Level {
    res: Vec<ResLayer>,
    /// Convolutions leaving this level (down: to the next level; up: to the previous one).
    resample: Vec<Conv>,
}

fn run_level<T: Scalar>(level: &Level, g: &mut Graph<T>, p: &ParamStore<T>, mut h: Var) -> Result<Var> {
    for r in &level.res {
        h = r.forward(g, p, h)?;
    }
    Ok(h)
}

/// Strided convolutional downsampling stack from spectrogram to token grid.
#[derive(Debug, Clone)]
pub(crate) struct Patchifier {
    conv_in: Conv,
    levels: Vec<Level>,
}

impl Patchifier {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        in_channels: usize,
        channels: &[usize],
        layers: &[usize],
        downsample: &[[usize; 2]],
    ) -> Self {
        let conv_in = Conv::same(pb, &format!("{name}.in"), in_channels, channels[0], 1.0);
        let levels = (0..channels.len())
            .map(|l| {
                let c = channels[l];
                let res = (0..layers[l]).map(|i| ResLayer::new(pb, &format!("{name}.l{l}.res{i}"), c)).collect();
                let resample = match downsample.get(l) {
                    None => Vec::new(),
                    Some(&f) => sub_steps(f)
                        .into_iter()
                        .enumerate()
                        .map(|(i, s)| {
                            let cin = if i == 0 { c } else { channels[l + 1] };
                            Conv::resample(pb, &format!("{name}.l{l}.down{i}"), cin, channels[l + 1], s, false)
                        })
                        .collect(),
                };
                Level { res, resample }
            })
            .collect();
        Patchifier { conv_in, levels }
    }

    /// Returns the lowest-resolution map and the per-level outputs (skips).
    /// `inject[l]` is added on entering level `l`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        x: Var,
        inject: Option<&[Var]>,
    ) -> Result<(Var, Vec<Var>)> {
        let mut h = self.conv_in.forward(g, p, x)?;
        let mut skips = Vec::with_capacity(self.levels.len());
        for (l, level) in self.levels.iter().enumerate() {
            if let Some(cc) = inject {
                if g.shape(cc[l]) != g.shape(h) {
                    return Err(Error::Symmetry(format!(
                        "cross-connection level {l} has shape {:?}, patchifier level has {:?}",
                        g.shape(cc[l]),
                        g.shape(h)
                    )));
                }
                h = g.add(h, cc[l])?;
            }
            h = run_level(level, g, p, h)?;
            skips.push(h);
            for c in &level.resample {
                h = c.forward(g, p, h)?;
            }
        }
        Ok((h, skips))
    }
}

/// Transposed-convolution stack mirroring a [`Patchifier`] level by level.
#[derive(Debug, Clone)]
pub(crate) struct DePatchifier {
    levels: Vec<Level>,
}

impl DePatchifier {
    pub fn new(pb: &mut ParamBuilder, name: &str, channels: &[usize], layers: &[usize], downsample: &[[usize; 2]]) -> Self {
        let levels = (0..channels.len())
            .map(|l| {
                let c = channels[l];
                let res = (0..layers[l]).map(|i| ResLayer::new(pb, &format!("{name}.l{l}.res{i}"), c)).collect();
                let resample = if l == 0 {
                    Vec::new()
                } else {
                    let steps: Vec<_> = sub_steps(downsample[l - 1]).into_iter().rev().collect();
                    let last = steps.len() - 1;
                    steps
                        .into_iter()
                        .enumerate()
                        .map(|(i, s)| {
                            let cout = if i == last { channels[l - 1] } else { c };
                            Conv::resample(pb, &format!("{name}.l{l}.up{i}"), c, cout, s, true)
                        })
                        .collect()
                };
                Level { res, resample }
            })
            .collect();
        DePatchifier { levels }
    }

    /// Runs from the lowest-resolution level up; `skips[l]` is added on
    /// entering level `l`. Returns each level's output, index 0 = full resolution.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        mut h: Var,
        skips: Option<&[Var]>,
    ) -> Result<Vec<Var>> {
        let n = self.levels.len();
        let mut maps = vec![h; n];
        for l in (0..n).rev() {
            if let Some(s) = skips {
                h = g.add(h, s[l])?;
            }
            h = run_level(&self.levels[l], g, p, h)?;
            maps[l] = h;
            for c in &self.levels[l].resample {
                h = c.forward(g, p, h)?;
            }
        }
        Ok(maps)
    }
}

/// Layer norm followed by either a learned affine map or a scale/shift
/// predicted per token group from a conditioning vector.
#[derive(Debug, Clone)]
pub(crate) enum Norm {
    Affine { gain: ParamId, bias: ParamId },
    Adaptive(Linear),
}

impl Norm {
    pub fn affine(pb: &mut ParamBuilder, name: &str, dim: usize) -> Self {
        Norm::Affine { gain: pb.add(format!("{name}.g"), &[dim], Init::Ones), bias: pb.add(format!("{name}.b"), &[dim], Init::Zeros) }
    }

    pub fn adaptive(pb: &mut ParamBuilder, name: &str, cond_dim: usize, dim: usize) -> Self {
        Norm::Adaptive(Linear::new(pb, &format!("{name}.mod"), cond_dim, 2 * dim, Init::Normal(0.02)))
    }

    /// `x [B, N, H]`; `cond [B, G, Hc]` splits the N tokens into G equal groups.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var, cond: Option<Var>) -> Result<Var> {
        let h = g.layer_norm(x, T::from_f64_lossy(LN_EPS))?;
        match self {
            Norm::Affine { gain, bias } => {
                let (gv, bv) = (g.param(p, *gain), g.param(p, *bias));
                let h = g.mul(h, gv)?;
                Ok(g.add(h, bv)?)
            }
            Norm::Adaptive(lin) => {
                let cond = cond.ok_or_else(|| Error::Usage("adaptive norm needs a conditioning input".into()))?;
                let xs = g.shape(x).to_vec();
                let (b, n, hd) = (xs[0], xs[1], xs[2]);
                let groups = g.shape(cond)[1];
                let m = lin.forward(g, p, cond)?;
                let scale = g.slice(m, 2, 0, hd)?;
                let scale = g.reshape(scale, &[b, groups, 1, hd])?;
                let scale = g.add_scalar(scale, T::one());
                let shift = g.slice(m, 2, hd, hd)?;
                let shift = g.reshape(shift, &[b, groups, 1, hd])?;
                let h = g.reshape(h, &[b, groups, n / groups, hd])?;
                let h = g.mul(h, scale)?;
                let h = g.add(h, shift)?;
                Ok(g.reshape(h, &[b, n, hd])?)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    norm1: Norm,
    qkv: Linear,
    proj: Linear,
    norm2: Norm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
    head_dim: usize,
}

impl Block {
    pub fn new(pb: &mut ParamBuilder, name: &str, hidden: usize, head_dim: usize, mlp_mult: usize, cond_dim: Option<usize>) -> Self {
        let norm = |pb: &mut ParamBuilder, n: &str| match cond_dim {
            Some(c) => Norm::adaptive(pb, &format!("{name}.{n}"), c, hidden),
            None => Norm::affine(pb, &format!("{name}.{n}"), hidden),
        };
        let out_init = |din: usize| Init::Normal(0.5 / (din as f64).sqrt());
        Block {
            norm1: norm(pb, "norm1"),
            qkv: Linear::standard(pb, &format!("{name}.qkv"), hidden, 3 * hidden),
            proj: Linear::new(pb, &format!("{name}.proj"), hidden, hidden, out_init(hidden)),
            norm2: norm(pb, "norm2"),
            fc1: Linear::standard(pb, &format!("{name}.fc1"), hidden, mlp_mult * hidden),
            fc2: Linear::new(pb, &format!("{name}.fc2"), mlp_mult * hidden, hidden, out_init(mlp_mult * hidden)),
            heads: hidden / head_dim,
            head_dim,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        x: Var,
        cond: Option<Var>,
        mask: Option<&NdArray<T>>,
    ) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (b, n, hd) = (s[0], s[1], s[2]);
        let (nh, dh) = (self.heads, self.head_dim);

        let h = self.norm1.forward(g, p, x, cond)?;
        let qkv = self.qkv.forward(g, p, h)?;
        let qkv = g.reshape(qkv, &[b, n, 3, nh, dh])?;
        let qkv = g.permute(qkv, &[2, 0, 3, 1, 4])?;
        let mut parts = [qkv; 3];
        for (i, part) in parts.iter_mut().enumerate() {
            let t = g.slice(qkv, 0, i, 1)?;
            *part = g.reshape(t, &[b, nh, n, dh])?;
        }
        let a = g.attention(parts[0], parts[1], parts[2], mask)?;
        let a = g.permute(a, &[0, 2, 1, 3])?;
        let a = g.reshape(a, &[b, n, hd])?;
        let a = self.proj.forward(g, p, a)?;
        let x = g.add(x, a)?;

        let h = self.norm2.forward(g, p, x, cond)?;
        let h = self.fc1.forward(g, p, h)?;
        let h = g.gelu(h);
        let h = self.fc2.forward(g, p, h)?;
        Ok(g.add(x, h)?)
    }
}

pub(crate) fn blocks(
    pb: &mut ParamBuilder,
    name: &str,
    count: usize,
    hidden: usize,
    head_dim: usize,
    mlp_mult: usize,
    cond_dim: Option<usize>,
) -> Vec<Block> {
    (0..count).map(|i| Block::new(pb, &format!("{name}.block{i}"), hidden, head_dim, mlp_mult, cond_dim)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_factors_split_into_halvings() {
        assert_eq!(sub_steps([2, 2]), vec![(2, 2)]);
        assert_eq!(sub_steps([4, 1]), vec![(2, 1), (2, 1)]);
        assert_eq!(sub_steps([4, 2]), vec![(2, 2), (2, 1)]);
        assert!(sub_steps([1, 1]).is_empty());
    }

    #[test]
    fn depatchifier_inverts_patchifier_shapes() {
        let mut pb = ParamBuilder::new();
        let ch = [4, 6, 8, 8];
        let ly = [1, 1, 1, 1];
        let ds = [[2, 2], [4, 1], [2, 2]];
        let pat = Patchifier::new(&mut pb, "p", 2, &ch, &ly, &ds);
        let de = DePatchifier::new(&mut pb, "d", &ch, &ly, &ds);
        let store = pb.materialize::<f32>(0);
        let mut g = Graph::<f32>::inference();
        let x = g.constant(NdArray::zeros(&[2, 2, 32, 8]));
        let (low, skips) = pat.forward(&mut g, &store, x, None).unwrap();
        assert_eq!(g.shape(low), &[2, 8, 2, 2]);
        let maps = de.forward(&mut g, &store, low, Some(&skips)).unwrap();
        for (m, s) in maps.iter().zip(&skips) {
            assert_eq!(g.shape(*m), g.shape(*s));
        }
    }
}
