//! Consistency training: the teacher sees a chunk pair at noise `σ`, the
//! student the same pair and noise draw at `σ + Δσ`, and the pseudo-Huber
//! distance between their outputs, divided by `Δσ`, is minimised.

use dualcodec_autodiff::{Adam, AdamConfig, EmaState, Graph, NdArray, Scalar, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::Profile;
use crate::error::{Error, Result};
use crate::fsq::{draw_bypass, FsqConfig};
use crate::net::{ChunkGeometry, CrossConnections, Model, Network};
use crate::signal::{amp_transform, stft, TransformParams, WaveformBuffer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSampler {
    pub p_mean: f64,
    pub p_std: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl NoiseSampler {
    pub fn from_profile(p: &Profile) -> Self {
        NoiseSampler {
            p_mean: p.train.p_mean,
            p_std: p.train.p_std,
            sigma_min: p.model.edm.sigma_min,
            sigma_max: p.model.edm.sigma_max,
        }
    }

    /// `ln σ` before clamping.
    pub fn sample_log(&self, rng: &mut impl Rng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.p_mean + self.p_std * z
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        self.sample_log(rng).exp().clamp(self.sigma_min, self.sigma_max)
    }
}

/// `Δσ(u) = delta0^(1 + (e_k − 1)·u)` over training progress `u ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaSigmaSchedule {
    pub delta0: f64,
    pub e_k: f64,
    pub total_steps: u64,
}

impl DeltaSigmaSchedule {
    pub fn at(&self, u: f64) -> f64 {
        self.delta0.powf(1.0 + (self.e_k - 1.0) * u.clamp(0.0, 1.0))
    }

    pub fn at_step(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.at(0.0);
        }
        self.at(step as f64 / self.total_steps as f64)
    }
}

/// Scale of the pseudo-Huber distance for data of `dim` values.
pub fn huber_c(dim: usize) -> f64 {
    0.00054 * (dim as f64).sqrt()
}

/// `√(‖a − b‖² + c²) − c`.
pub fn pseudo_huber(a: &[f32], b: &[f32], c: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("pseudo_huber: {} vs {} values", a.len(), b.len())));
    }
    if !(c > 0.0) {
        return Err(Error::Config(format!("pseudo-Huber scale must be positive, got {c}")));
    }
    let d2: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok((d2 + c * c).sqrt() - c)
}

/// Training crops for one step: `[B × 2 × C × F × T]`, the two chunks of
/// each item consecutive in time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    data: Vec<f32>,
    batch: usize,
    geom: ChunkGeometry,
}

impl TrainBatch {
    pub fn new(data: Vec<f32>, batch: usize, geom: ChunkGeometry) -> Result<Self> {
        let want = batch * 2 * geom.channels * geom.bins * geom.frames;
        if batch == 0 || data.len() != want {
            return Err(Error::Dimension(format!("batch data has {} values, expected {want}", data.len())));
        }
        Ok(TrainBatch { data, batch, geom })
    }

    /// Transforms each crop and takes its first `2·t_chunk` frames.
    pub fn from_waves(waves: &[WaveformBuffer], profile: &Profile) -> Result<Self> {
        let s = &profile.signal;
        let geom = ChunkGeometry::from(s);
        let params = TransformParams::new(s.alpha, s.beta)?;
        let mut data = Vec::with_capacity(waves.len() * 2 * geom.channels * geom.bins * geom.frames);
        for w in waves {
            let spec = amp_transform(&stft(w, s.window, s.hop)?, params)?;
            if spec.frames() < 2 * s.t_chunk {
                return Err(Error::Length(format!("crop yields {} frames, need {}", spec.frames(), 2 * s.t_chunk)));
            }
            for half in 0..2 {
                data.extend_from_slice(spec.frames_range(half * s.t_chunk, s.t_chunk).data());
            }
        }
        Self::new(data, waves.len(), geom)
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn geometry(&self) -> ChunkGeometry {
        self.geom
    }

    pub fn chunk_len(&self) -> usize {
        self.geom.channels * self.geom.bins * self.geom.frames
    }

    pub fn left(&self, i: usize) -> &[f32] {
        let n = self.chunk_len();
        &self.data[2 * i * n..(2 * i + 1) * n]
    }

    pub fn right(&self, i: usize) -> &[f32] {
        let n = self.chunk_len();
        &self.data[(2 * i + 1) * n..(2 * i + 2) * n]
    }

    fn side<T: Scalar>(&self, right: bool) -> NdArray<T> {
        let g = self.geom;
        let data = (0..self.batch)
            .flat_map(|i| if right { self.right(i) } else { self.left(i) }.iter())
            .map(|&v| T::from_f64_lossy(v as f64))
            .collect();
        NdArray::from_vec(&[self.batch, g.channels, g.bins, g.frames], data).expect("batch shape")
    }
}

/// Crop length that yields exactly `2·t_chunk` STFT frames.
pub fn crop_samples(profile: &Profile) -> usize {
    let s = &profile.signal;
    (2 * s.t_chunk - 1) * s.hop + s.window
}

/// Replaces each item, with probability `p`, by itself plus another
/// randomly chosen item (from the unmixed batch). No renormalisation.
pub fn random_mix(waves: &[WaveformBuffer], rng: &mut impl Rng, p: f64) -> Result<Vec<WaveformBuffer>> {
    if waves.len() < 2 {
        return Err(Error::Length("random mixing needs a batch of at least two".into()));
    }
    let mut out = Vec::with_capacity(waves.len());
    for (i, w) in waves.iter().enumerate() {
        if !rng.gen_bool(p) {
            out.push(w.clone());
            continue;
        }
        let mut j = rng.gen_range(0..waves.len() - 1);
        if j >= i {
            j += 1;
        }
        let other = &waves[j];
        if other.n_samples() != w.n_samples() || other.n_channels() != w.n_channels() {
            return Err(Error::Dimension("batch items differ in shape".into()));
        }
        let channels = w
            .channels()
            .iter()
            .zip(other.channels())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        out.push(WaveformBuffer::new(w.sample_rate(), channels)?);
    }
    Ok(out)
}

/// Every random quantity of one consistency-loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CtDraws {
    /// Teacher noise levels, one per item and side.
    pub sigma_left: Vec<f64>,
    pub sigma_right: Vec<f64>,
    /// Student noise levels, teacher level plus `delta_sigma`.
    pub student_left: Vec<f64>,
    pub student_right: Vec<f64>,
    pub delta_sigma: f64,
    pub eps_left: Vec<f32>,
    pub eps_right: Vec<f32>,
    /// Per chunk, left items first then right items: skip rounding.
    pub bypass: Vec<bool>,
}

impl CtDraws {
    /// Teacher levels are log-normal, capped at `σ_max − Δσ` so the student
    /// stays in range.
    pub fn sample(
        rng: &mut impl Rng,
        batch: &TrainBatch,
        sampler: &NoiseSampler,
        delta_sigma: f64,
        dropout_p: f64,
    ) -> Self {
        let b = batch.batch_size();
        let pair = |rng: &mut _| {
            let sigma = sampler.sample(rng).min(sampler.sigma_max - delta_sigma);
            (sigma, sigma + delta_sigma)
        };
        let (mut sigma_left, mut sigma_right) = (Vec::with_capacity(b), Vec::with_capacity(b));
        let (mut student_left, mut student_right) = (Vec::with_capacity(b), Vec::with_capacity(b));
        for _ in 0..b {
            let (t, s) = pair(rng);
            sigma_left.push(t);
            student_left.push(s);
            let (t, s) = pair(rng);
            sigma_right.push(t);
            student_right.push(s);
        }
        let n = b * batch.chunk_len();
        let mut normal = |n: usize| -> Vec<f32> { (0..n).map(|_| StandardNormal.sample(rng)).collect() };
        let eps_left = normal(n);
        let eps_right = normal(n);
        let bypass = (0..2 * b).map(|_| draw_bypass(rng, dropout_p)).collect();
        CtDraws { sigma_left, sigma_right, student_left, student_right, delta_sigma, eps_left, eps_right, bypass }
    }

    /// Per-item loss weight: the inverse of the mean σ gap of its two chunks,
    /// `1/Δσ` for draws from [`CtDraws::sample`].
    pub fn weights(&self) -> Vec<f64> {
        (0..self.sigma_left.len())
            .map(|i| {
                let gap = (self.student_left[i] - self.sigma_left[i]) + (self.student_right[i] - self.sigma_right[i]);
                2.0 / gap
            })
            .collect()
    }

    fn describe(&self) -> String {
        format!(
            "sigma_left={:?} sigma_right={:?} delta_sigma={}",
            self.sigma_left, self.sigma_right, self.delta_sigma
        )
    }
}

/// Teacher outputs for a batch, left and right, `[B, C, F, T]`.
#[derive(Debug, Clone)]
pub struct TeacherOutput<T> {
    pub left: NdArray<T>,
    pub right: NdArray<T>,
}

/// One evaluated consistency loss and the graph that produced it.
pub struct CtLoss<T: Scalar> {
    pub graph: Graph<T>,
    pub loss: Var,
    pub value: f64,
    pub student: (Var, Var),
    pub teacher: (Var, Var),
    pub noisy_student: (Var, Var),
    pub noisy_teacher: (Var, Var),
}

impl<T: Scalar> CtLoss<T> {
    pub fn teacher_output(&self) -> TeacherOutput<T> {
        TeacherOutput {
            left: self.graph.value(self.teacher.0).clone(),
            right: self.graph.value(self.teacher.1).clone(),
        }
    }
}

/// `tanh`, then straight-through rounding for every chunk not bypassed.
pub fn bottleneck<T: Scalar>(g: &mut Graph<T>, z: Var, bypass: &[bool], n: u32) -> Result<Var> {
    let t = g.tanh(z);
    if bypass.iter().all(|&b| b) {
        return Ok(t);
    }
    let q = g.ste_round(t, n);
    if bypass.iter().all(|&b| !b) {
        return Ok(q);
    }
    let parts: Vec<Var> = bypass
        .iter()
        .enumerate()
        .map(|(i, &skip)| g.slice(if skip { t } else { q }, 0, i, 1))
        .collect::<std::result::Result<_, _>>()?;
    Ok(g.concat(&parts, 0)?)
}

fn split_cc<T: Scalar>(g: &mut Graph<T>, cc: &CrossConnections, b: usize) -> Result<(CrossConnections, CrossConnections)> {
    let mut left = Vec::with_capacity(cc.levels.len());
    let mut right = Vec::with_capacity(cc.levels.len());
    for &v in &cc.levels {
        left.push(g.slice(v, 0, 0, b)?);
        right.push(g.slice(v, 0, b, b)?);
    }
    Ok((CrossConnections { levels: left }, CrossConnections { levels: right }))
}

fn noisy<T: Scalar>(g: &mut Graph<T>, x: Var, eps: &[f32], sigmas: &[f64]) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let per = eps.len() / sigmas.len();
    let xv = g.value(x).data();
    let data = xv
        .iter()
        .zip(eps)
        .enumerate()
        .map(|(i, (&xv, &e))| xv + T::from_f64_lossy(sigmas[i / per] * e as f64))
        .collect();
    Ok(g.constant(NdArray::from_vec(&shape, data)?))
}

/// Per-item squared distance `[B]` between two `[B, ...]` tensors.
fn sq_dist<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let s = g.shape(a).to_vec();
    let d = g.sub(a, b)?;
    let d2 = g.mul(d, d)?;
    let d2 = g.reshape(d2, &[s[0], s[1..].iter().product()])?;
    Ok(g.sum_axis(d2, 1)?)
}

/// Evaluates the consistency loss. With `teacher` given, those outputs are
/// used as fixed targets instead of running the teacher branch.
pub fn ct_loss<T: Scalar>(
    model: &Model<T>,
    batch: &TrainBatch,
    draws: &CtDraws,
    fsq_levels: u32,
    teacher: Option<&TeacherOutput<T>>,
) -> Result<CtLoss<T>> {
    let net: &Network = model.net();
    let p = model.params();
    let b = batch.batch_size();
    if [&draws.sigma_left, &draws.sigma_right, &draws.student_left, &draws.student_right].iter().any(|v| v.len() != b)
        || draws.bypass.len() != 2 * b
        || draws.eps_left.len() != b * batch.chunk_len()
        || draws.eps_right.len() != b * batch.chunk_len()
    {
        return Err(Error::Dimension("noise draws do not match the batch".into()));
    }
    let weights = draws.weights();
    if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(Error::Config(format!("student noise must exceed teacher noise ({})", draws.describe())));
    }
    let mut g = Graph::new();
    let xl = g.constant(batch.side(false));
    let xr = g.constant(batch.side(true));

    let x = g.concat(&[xl, xr], 0)?;
    let z = net.encode(&mut g, p, x)?;
    let lat = bottleneck(&mut g, z, &draws.bypass, fsq_levels)?;
    let cc = net.upsample(&mut g, p, lat)?;
    let (cc_l, cc_r) = split_cc(&mut g, &cc, b)?;

    let (s_l, s_r) = (&draws.student_left, &draws.student_right);
    let ns_l = noisy(&mut g, xl, &draws.eps_left, s_l)?;
    let ns_r = noisy(&mut g, xr, &draws.eps_right, s_r)?;
    let nt_l = noisy(&mut g, xl, &draws.eps_left, &draws.sigma_left)?;
    let nt_r = noisy(&mut g, xr, &draws.eps_right, &draws.sigma_right)?;

    let teacher_vars = match teacher {
        Some(t) => (g.constant(t.left.clone()), g.constant(t.right.clone())),
        None => {
            let prev = g.set_grad_enabled(false);
            let tl: Vec<Var> = cc_l.levels.iter().map(|&v| g.detach(v)).collect();
            let tr: Vec<Var> = cc_r.levels.iter().map(|&v| g.detach(v)).collect();
            let out = net.decode_denoise(
                &mut g,
                p,
                nt_l,
                nt_r,
                &draws.sigma_left,
                &draws.sigma_right,
                &CrossConnections { levels: tl },
                &CrossConnections { levels: tr },
            );
            g.set_grad_enabled(prev);
            out?
        }
    };
    let student = net.decode_denoise(&mut g, p, ns_l, ns_r, s_l, s_r, &cc_l, &cc_r)?;

    let dl = sq_dist(&mut g, student.0, teacher_vars.0)?;
    let dr = sq_dist(&mut g, student.1, teacher_vars.1)?;
    let d2 = g.add(dl, dr)?;
    let c = huber_c(2 * batch.chunk_len());
    let h = g.add_scalar(d2, T::from_f64_lossy(c * c));
    let h = g.sqrt(h)?;
    let h = g.add_scalar(h, T::from_f64_lossy(-c));
    let w = g.constant(NdArray::from_vec(&[b], weights.iter().map(|&w| T::from_f64_lossy(w)).collect())?);
    let h = g.mul(h, w)?;
    let loss = g.mean(h);
    let value = g.value(loss).item().to_f64_lossy();
    Ok(CtLoss {
        graph: g,
        loss,
        value,
        student,
        teacher: teacher_vars,
        noisy_student: (ns_l, ns_r),
        noisy_teacher: (nt_l, nt_r),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub raw_loss: f64,
    pub smoothed_loss: f64,
    pub lr: f64,
    pub delta_sigma: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "step,raw_loss,smoothed_loss,lr,delta_sigma";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.raw_loss, self.smoothed_loss, self.lr, self.delta_sigma)
    }
}

/// Weight of the newest value in the smoothed loss.
const SMOOTHING: f64 = 0.02;

/// Walks the dataset in shuffled epochs, wrapping around when exhausted.
struct DataCursor {
    order: Vec<usize>,
    pos: usize,
}

impl DataCursor {
    fn next(&mut self, rng: &mut impl Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Training state: raw weights, optimizer, EMA and the data/noise stream.
pub struct Trainer {
    profile: Profile,
    dataset: Vec<WaveformBuffer>,
    model: Model<f32>,
    opt: Adam<f32>,
    ema: EmaState<f32>,
    rng: ChaCha8Rng,
    cursor: DataCursor,
    sampler: NoiseSampler,
    schedule: DeltaSigmaSchedule,
    fsq: FsqConfig,
    step: u64,
    smoothed: Option<f64>,
}

impl Trainer {
    /// `total_steps` drives the learning-rate and Δσ schedules.
    pub fn new(profile: &Profile, dataset: Vec<WaveformBuffer>, total_steps: u64) -> Result<Self> {
        profile.validate()?;
        if dataset.is_empty() {
            return Err(Error::Length("training needs at least one clip".into()));
        }
        let s = &profile.signal;
        for w in &dataset {
            if w.sample_rate() != s.sample_rate || w.n_channels() != s.channels {
                return Err(Error::Config(format!(
                    "clip is {} Hz / {} ch, profile expects {} Hz / {} ch",
                    w.sample_rate(),
                    w.n_channels(),
                    s.sample_rate,
                    s.channels
                )));
            }
        }
        let t = &profile.train;
        let model = Model::new(&profile.model, ChunkGeometry::from(s), t.seed)?;
        let opt = Adam::new(
            model.params(),
            AdamConfig { lr: t.lr, beta1: t.beta1, beta2: t.beta2, eps: 1e-8, rectified: t.rectified, total_steps },
        );
        let ema = EmaState::new(model.params(), t.ema_momentum)?;
        let mut rng = ChaCha8Rng::seed_from_u64(t.seed ^ 0x5eed_da7a);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        Ok(Trainer {
            profile: profile.clone(),
            dataset,
            model,
            opt,
            ema,
            rng,
            cursor: DataCursor { order, pos: 0 },
            sampler: NoiseSampler::from_profile(profile),
            schedule: DeltaSigmaSchedule { delta0: t.delta0, e_k: t.e_k, total_steps },
            fsq: FsqConfig::new(profile.fsq.n, profile.fsq.d, profile.fsq.dropout_p)?,
            step: 0,
            smoothed: None,
        })
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn ema(&self) -> &EmaState<f32> {
        &self.ema
    }

    /// Model carrying the EMA weights.
    pub fn ema_model(&self) -> Result<Model<f32>> {
        let params = self.ema.apply_to(self.model.params())?;
        Model::with_params(&self.profile.model, self.model.net().geometry(), params)
    }

    fn next_batch(&mut self) -> Result<TrainBatch> {
        let len = crop_samples(&self.profile);
        let mut crops = Vec::with_capacity(self.profile.train.batch_size);
        for _ in 0..self.profile.train.batch_size {
            let clip = &self.dataset[self.cursor.next(&mut self.rng)];
            let start = if clip.n_samples() > len { self.rng.gen_range(0..=clip.n_samples() - len) } else { 0 };
            crops.push(clip.crop(start, len));
        }
        if crops.len() >= 2 && self.profile.train.mix_p > 0.0 {
            crops = random_mix(&crops, &mut self.rng, self.profile.train.mix_p)?;
        }
        TrainBatch::from_waves(&crops, &self.profile)
    }

    /// One optimisation step.
    pub fn step(&mut self) -> Result<LossRecord> {
        let batch = self.next_batch()?;
        let delta_sigma = self.schedule.at_step(self.step);
        let draws = CtDraws::sample(&mut self.rng, &batch, &self.sampler, delta_sigma, self.fsq.dropout_p());
        let mut out = ct_loss(&self.model, &batch, &draws, self.fsq.n(), None)?;
        if !out.value.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step, loss: out.value, detail: draws.describe() });
        }
        out.graph.backward(out.loss)?;
        let params = self.model.params_mut();
        params.zero_grads();
        params.accumulate_grads(&out.graph);
        drop(out.graph);
        let lr = self.opt.step(params)?;
        self.ema.update(self.model.params())?;
        self.step += 1;
        let smoothed = match self.smoothed {
            None => out.value,
            Some(s) => (1.0 - SMOOTHING) * s + SMOOTHING * out.value,
        };
        self.smoothed = Some(smoothed);
        Ok(LossRecord { step: self.step, raw_loss: out.value, smoothed_loss: smoothed, lr, delta_sigma })
    }
}

/// Runs `steps` optimisation steps, handing every record to `on_record`.
pub fn train_loop(
    profile: &Profile,
    dataset: Vec<WaveformBuffer>,
    steps: u64,
    mut on_record: impl FnMut(&LossRecord, &Trainer) -> Result<()>,
) -> Result<Trainer> {
    let mut trainer = Trainer::new(profile, dataset, steps)?;
    for _ in 0..steps {
        let rec = trainer.step()?;
        on_record(&rec, &trainer)?;
    }
    Ok(trainer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_schedule_endpoints() {
        let s = DeltaSigmaSchedule { delta0: 0.1, e_k: 2.0, total_steps: 100 };
        assert!((s.at(0.0) - 0.1).abs() < 1e-15);
        assert!((s.at(1.0) - 0.01).abs() < 1e-15);
        assert!((s.at(0.5) - 0.1f64.powf(1.5)).abs() < 1e-15);
        assert!((s.at_step(50) - s.at(0.5)).abs() < 1e-15);
    }

    #[test]
    fn student_noise_sits_delta_sigma_above_teacher_noise() {
        // A wide sampler so some draws hit the σ_max cap.
        let s = NoiseSampler { p_mean: 3.0, p_std: 2.0, sigma_min: 0.002, sigma_max: 80.0 };
        let geom = ChunkGeometry { channels: 2, bins: 4, frames: 4 };
        let batch = TrainBatch::new(vec![0.0; 16 * 2 * 32], 16, geom).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = CtDraws::sample(&mut rng, &batch, &s, 0.1, 0.5);
        let mut capped = 0;
        for (teacher, student) in [(&d.sigma_left, &d.student_left), (&d.sigma_right, &d.student_right)] {
            for (&t, &st) in teacher.iter().zip(student) {
                assert!(t >= 0.002 && st <= 80.0 + 1e-12);
                assert!((st - t - 0.1).abs() < 1e-12);
                capped += usize::from(st >= 80.0 - 1e-12);
            }
        }
        assert!(capped > 0);
        assert!(d.weights().iter().all(|w| (w - 10.0).abs() < 1e-9));
    }

    #[test]
    fn pseudo_huber_examples() {
        assert_eq!(pseudo_huber(&[1.0, 2.0], &[1.0, 2.0], 0.1).unwrap(), 0.0);
        let far = pseudo_huber(&[3.0, 4.0], &[0.0, 0.0], 0.1).unwrap();
        assert!((far - (25.01f64.sqrt() - 0.1)).abs() < 1e-12, "{far}");
    }

    #[test]
    fn sampler_clamps() {
        let s = NoiseSampler { p_mean: -1.0, p_std: 1.4, sigma_min: 0.002, sigma_max: 80.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..10_000).map(|_| s.sample(&mut rng)).all(|v| (0.002..=80.0).contains(&v)));
    }

    #[test]
    fn mixing_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = WaveformBuffer::new(10, vec![vec![1.0, 2.0]]).unwrap();
        let silence = WaveformBuffer::new(10, vec![vec![0.0, 0.0]]).unwrap();
        let batch = vec![a.clone(), silence.clone()];
        assert_eq!(random_mix(&batch, &mut rng, 0.0).unwrap(), batch);
        let mixed = random_mix(&batch, &mut rng, 1.0).unwrap();
        assert_eq!(mixed[0], a);
        assert_eq!(mixed[1], a);
    }
}
