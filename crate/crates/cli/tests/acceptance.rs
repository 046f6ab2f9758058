//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use anyhow::{anyhow, ensure, Context, Result};
use dualcodec::codec::format::{self, Header};
use dualcodec::codec::{pair_schedule, Codec, Mode, Slot, StreamMeta, Strategy};
use dualcodec::corpus::{self, ClipKind};
use dualcodec::fsq::{self, indices_to_levels, levels_to_indices, quantize, FsqConfig, TokenChunk};
use dualcodec::metrics::{log_spectral_distance, si_sdr};
use dualcodec::net::{ChunkGeometry, CrossConnections, Model};
use dualcodec::signal::{amp_inverse, amp_transform, istft, stft, TransformParams, WaveformBuffer};
use dualcodec::train::{ct_loss, CtDraws, NoiseSampler, TrainBatch, Trainer};
use dualcodec::Profile;
use dualcodec_autodiff::{Graph, NdArray};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRAIN_SEEDS: [u64; 3] = [0, 1, 2];
const TRAIN_CLIPS: usize = 32;
const HELD_OUT_CLIPS: usize = 4;
const CLIP_SECONDS: f64 = 2.0;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict { pass, detail: detail.into() }
    }
}

fn check(id: u32, name: &str, f: impl FnOnce() -> Result<Verdict>) -> bool {
    let start = Instant::now();
    let v = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => v,
        Ok(Err(e)) => Verdict::new(false, format!("error: {e:#}")),
        Err(p) => {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Verdict::new(false, format!("panic: {}", msg.unwrap_or_default()))
        }
    };
    let tag = if v.pass { "PASS" } else { "FAIL" };
    println!("{tag} [{id:>2}] {name}: {} ({:.1} s)", v.detail, start.elapsed().as_secs_f64());
    v.pass
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| <StandardNormal as Distribution<f32>>::sample(&StandardNormal, rng)).collect()
}

fn configuration_arithmetic() -> Result<Verdict> {
    let p = Profile::full();
    let cfg = FsqConfig::new(p.fsq.n, p.fsq.d, p.fsq.dropout_p)?;
    let size = cfg.codebook_size().context("codebook size overflow")?;

    let s = &p.signal;
    let (k, d) = (p.model.k_summary, p.model.d_lat);
    let chunk = StreamMeta::from_profile(&p, s.chunk_samples());
    let summary = format::summarize(Header::Tokens { n: p.fsq.n as u16, d: d as u16, per_chunk: k as u32, chunks: 1 }, chunk)?;
    let bitrate = summary.bitrate_bps.context("token summary has no bitrate")?;

    // Independent recomputation from the raw figures.
    let chunk_seconds = 32.0 * 1024.0 / 44_100.0;
    let oracle_bitrate = 128.0 * 14_641f64.log2() / chunk_seconds;
    let oracle_ratio = (2.0 * 32.0 * 1024.0) / (128.0 * 4.0);
    let oracle_rate = 128.0 * 4.0 / 64.0 / chunk_seconds;

    let text = summary.to_string();
    let ok = size == 14_641
        && (bitrate / 1000.0 - 2.38).abs() <= 0.01
        && (bitrate - oracle_bitrate).abs() < 1e-9
        && summary.compression == 128.0
        && oracle_ratio == 128.0
        && (summary.latent_rate_hz - oracle_rate).abs() < 1e-9
        && (summary.latent_rate_hz * 100.0).round() / 100.0 == 10.77
        && summary.latent_rate_hz.round() == 11.0
        && text.contains("2.38 kbps")
        && text.contains("128x");
    Ok(Verdict::new(
        ok,
        format!(
            "codebook {size}, bitrate {:.4} kbps, compression {}x, latent rate {:.4} Hz",
            bitrate / 1000.0,
            summary.compression,
            summary.latent_rate_hz
        ),
    ))
}

fn toy_model(seed: u64) -> Result<(Profile, Model<f32>)> {
    let p = Profile::toy();
    let m = Model::new(&p.model, ChunkGeometry::from(&p.signal), seed)?;
    Ok((p, m))
}

/// Left and right decoder estimates for one pair in an inference graph.
fn denoise_pair(model: &Model<f32>, z: [&[f32]; 2], x: [&[f32]; 2], sigma: [f64; 2]) -> Result<(Vec<f32>, Vec<f32>)> {
    let net = model.net();
    let (cfg, geom, p) = (net.config(), net.geometry(), model.params());
    let mut g = Graph::<f32>::inference();
    let mut cc: Vec<CrossConnections> = Vec::new();
    for z in z {
        let lat = g.constant(NdArray::from_vec(&[1, cfg.k_summary, cfg.d_lat], z.to_vec())?);
        let lat = g.tanh(lat);
        cc.push(net.upsample(&mut g, p, lat)?);
    }
    let shape = [1, geom.channels, geom.bins, geom.frames];
    let xl = g.constant(NdArray::from_vec(&shape, x[0].to_vec())?);
    let xr = g.constant(NdArray::from_vec(&shape, x[1].to_vec())?);
    let (l, r) = net.decode_denoise(&mut g, p, xl, xr, &[sigma[0]], &[sigma[1]], &cc[0], &cc[1])?;
    Ok((g.value(l).data().to_vec(), g.value(r).data().to_vec()))
}

fn sizes(p: &Profile) -> (usize, usize) {
    let g = ChunkGeometry::from(&p.signal);
    (g.channels * g.bins * g.frames, p.model.k_summary * p.model.d_lat)
}

fn boundary_condition() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut trials = 0;
    for seed in 0..4 {
        let (p, m) = toy_model(seed)?;
        let (n, zl) = sizes(&p);
        let s = p.model.edm.sigma_min;
        for _ in 0..5 {
            let (za, zb, xa, xb) = (normal(&mut rng, zl), normal(&mut rng, zl), normal(&mut rng, n), normal(&mut rng, n));
            let (l, r) = denoise_pair(&m, [&za, &zb], [&xa, &xb], [s, s])?;
            if l != xa || r != xb {
                return Ok(Verdict::new(false, format!("output differs from input (weights seed {seed})")));
            }
            trials += 1;
        }
    }
    Ok(Verdict::new(true, format!("{trials} random weight/input draws returned the input bitwise")))
}

fn causality() -> Result<Verdict> {
    let (p, m) = toy_model(7)?;
    let (n, zl) = sizes(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (z_left, x_left) = (normal(&mut rng, zl), normal(&mut rng, n));
    let (reference, _) = denoise_pair(&m, [&z_left, &normal(&mut rng, zl)], [&x_left, &normal(&mut rng, n)], [2.0, 2.0])?;
    let edm = p.model.edm;
    for trial in 0..50 {
        let scale = rng.gen_range(0.1f32..40.0);
        let z: Vec<f32> = normal(&mut rng, zl).iter().map(|v| v * scale).collect();
        let x: Vec<f32> = normal(&mut rng, n).iter().map(|v| v * scale).collect();
        let sigma = rng.gen_range(edm.sigma_min..edm.sigma_max);
        let (left, _) = denoise_pair(&m, [&z_left, &z], [&x_left, &x], [2.0, sigma])?;
        if left != reference {
            return Ok(Verdict::new(false, format!("left output changed in trial {trial}")));
        }
    }
    Ok(Verdict::new(true, "left output bitwise identical across 50 right-side payload/noise draws"))
}

fn gradients() -> Result<Verdict> {
    let (p, m) = toy_model(3)?;
    let mut model = m.cast::<f64>();
    let geom = ChunkGeometry::from(&p.signal);
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let data: Vec<f32> = normal(&mut rng, 2 * geom.channels * geom.bins * geom.frames).iter().map(|v| 0.5 * v).collect();
    let batch = TrainBatch::new(data, 1, geom)?;
    let mut draws = CtDraws::sample(&mut rng, &batch, &NoiseSampler::from_profile(&p), 0.05, 1.0);
    // Rounding is piecewise constant, so differences are taken on the tanh path.
    draws.bypass.iter_mut().for_each(|b| *b = true);
    let levels = p.fsq.n;
    let teacher = ct_loss(&model, &batch, &draws, levels, None)?.teacher_output();

    let mut out = ct_loss(&model, &batch, &draws, levels, Some(&teacher))?;
    out.graph.backward(out.loss)?;
    let store = model.params_mut();
    store.zero_grads();
    store.accumulate_grads(&out.graph);
    let ids: Vec<_> = store.ids().collect();
    let grads: Vec<Vec<f64>> =
        ids.iter().map(|&id| store.grad(id).map(|g| g.to_vec()).ok_or_else(|| anyhow!("missing gradient"))).collect::<Result<_>>()?;
    let total: usize = ids.iter().map(|&id| store.value(id).data().len()).sum();

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut flat = rng.gen_range(0..total);
        let mut slot = 0;
        while flat >= model.params().value(ids[slot]).data().len() {
            flat -= model.params().value(ids[slot]).data().len();
            slot += 1;
        }
        let id = ids[slot];
        let orig = model.params().value(id).data()[flat];
        let h = 1e-6 * orig.abs().max(1.0);
        let mut at = |v: f64| -> Result<f64> {
            model.params_mut().value_mut(id).data_mut()[flat] = v;
            Ok(ct_loss(&model, &batch, &draws, levels, Some(&teacher))?.value)
        };
        let numeric = (at(orig + h)? - at(orig - h)?) / (2.0 * h);
        at(orig)?;
        let analytic = grads[slot][flat];
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale == 0.0 { 0.0 } else { (analytic - numeric).abs() / scale };
        if rel > 1e-3 {
            let name = model.params().name(id).to_string();
            return Ok(Verdict::new(false, format!("{name}[{flat}]: analytic {analytic:e} vs numeric {numeric:e}")));
        }
        worst = worst.max(rel);
    }
    Ok(Verdict::new(true, format!("20 parameters, worst relative error {worst:.2e}")))
}

fn fsq_suite() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let cfg = FsqConfig::new(5, 4, 0.0)?;
    let on_grid = |v: f32, n: f64| {
        let s = v as f64 * n;
        (s - s.round()).abs() < 1e-6 && s.abs() <= n
    };

    let z: Vec<f32> = normal(&mut rng, 4 * 256).iter().map(|v| 3.0 * v).collect();
    let q = quantize(&z, 256, 4, &cfg)?;
    let pre: Vec<f32> = q.values().iter().map(|&v| (v as f64).clamp(-0.999_999, 0.999_999).atanh() as f32).collect();
    let idempotent = quantize(&pre, 256, 4, &cfg)?.values() == q.values();

    let small = FsqConfig::new(1, 3, 0.0)?;
    let mut codes = std::collections::BTreeSet::new();
    let mut bijective = true;
    for idx in 0..27u64 {
        let lat = indices_to_levels(&TokenChunk { indices: vec![idx] }, &small, 3)?;
        bijective &= levels_to_indices(&lat, &small)?.indices == vec![idx];
        codes.insert(lat.values().iter().map(|&v| v as i32).collect::<Vec<_>>());
    }
    bijective &= codes.len() == 27;

    let uniform: Vec<f32> = (0..10_000 * 4).map(|_| rng.gen_range(-1.0f64..1.0).atanh() as f32).collect();
    let uq = quantize(&uniform, 10_000, 4, &cfg)?;
    let used: Vec<usize> = (0..4)
        .map(|d| {
            uq.values().iter().skip(d).step_by(4).map(|&v| (v * 5.0).round() as i32).collect::<std::collections::BTreeSet<_>>().len()
        })
        .collect();
    let utilized = used.iter().all(|&u| u == 11);

    let zd: Vec<f32> = normal(&mut rng, 64);
    let tanh = fsq::bound(&zd, 16, 4)?;
    let (pass_cfg, grid_cfg) = (FsqConfig::new(5, 4, 1.0)?, FsqConfig::new(5, 4, 0.0)?);
    let mut passthrough = true;
    let mut aligned = true;
    for _ in 0..100 {
        passthrough &= fsq::fsq_dropout(&zd, 16, 4, &pass_cfg, &mut rng, true)?.values() == tanh.values();
        aligned &= fsq::fsq_dropout(&zd, 16, 4, &grid_cfg, &mut rng, true)?.values().iter().all(|&v| on_grid(v, 5.0));
    }
    let oracle_tanh = zd.iter().zip(tanh.values()).all(|(&x, &t)| (x as f64).tanh() as f32 == t);

    let ok = idempotent && bijective && utilized && passthrough && aligned && oracle_tanh;
    Ok(Verdict::new(
        ok,
        format!(
            "idempotent {idempotent}, 27-code bijection {bijective}, levels used per dim {used:?}, p=1 passthrough {}, p=0 on grid {aligned}",
            passthrough && oracle_tanh
        ),
    ))
}

fn parallel_schedule() -> Result<Verdict> {
    use Slot::{Chunk as C, Pad as P};
    let expected: [((usize, usize), Vec<Vec<(Slot, Slot)>>); 3] = [
        (
            (5, 3),
            vec![
                vec![(C(0), C(1)), (C(2), C(3)), (C(4), P)],
                vec![(P, C(0)), (C(1), C(2)), (C(3), C(4))],
                vec![(C(0), C(1)), (C(2), C(3)), (C(4), P)],
            ],
        ),
        (
            (2, 4),
            vec![
                vec![(C(0), C(1))],
                vec![(P, C(0)), (C(1), P)],
                vec![(C(0), C(1))],
                vec![(P, C(0)), (C(1), P)],
            ],
        ),
        ((1, 1), vec![vec![(C(0), P)]]),
    ];
    for ((t, s), want) in &expected {
        let got = pair_schedule(*t, *s).steps;
        if &got != want {
            return Ok(Verdict::new(false, format!("T={t} S={s}: got {got:?}")));
        }
    }
    for t in 1..=64 {
        for s in 1..=8 {
            for (k, step) in pair_schedule(t, s).steps.iter().enumerate() {
                let mut count = vec![0; t];
                for &(l, r) in step {
                    if let (Some(a), Some(b)) = (l.chunk(), r.chunk()) {
                        ensure!(b == a + 1, "T={t} S={s} step {k}: non-adjacent pair");
                    }
                    for i in [l.chunk(), r.chunk()].into_iter().flatten() {
                        count[i] += 1;
                    }
                }
                if count.iter().any(|&c| c != 1) {
                    return Ok(Verdict::new(false, format!("T={t} S={s} step {k} is not a partition: {count:?}")));
                }
            }
        }
    }
    Ok(Verdict::new(true, "3 hand-enumerated schedules match; partition holds for T <= 64, S <= 8"))
}

fn rel_err(a: &[f32], b: &[f32]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    let den: f64 = b.iter().map(|&y| (y as f64).powi(2)).sum();
    (num / den).sqrt()
}

fn signal_round_trips() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst_amp = 0.0f64;
    let mut worst_stft = 0.0f64;
    for p in [Profile::toy(), Profile::full()] {
        let s = &p.signal;
        let n = 20 * s.hop + s.window;
        let chans = (0..s.channels).map(|_| (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).collect();
        let w = WaveformBuffer::new(s.sample_rate, chans)?;
        let spec = stft(&w, s.window, s.hop)?;
        let params = TransformParams::new(s.alpha, s.beta)?;
        let back = amp_inverse(&amp_transform(&spec, params)?, params)?;
        worst_amp = worst_amp.max(rel_err(back.data(), spec.data()));
        let y = istft(&spec, s.sample_rate)?;
        for c in 0..s.channels {
            let interior = s.window..n - s.window;
            worst_stft = worst_stft.max(rel_err(&y.channel(c)[interior.clone()], &w.channel(c)[interior]));
        }
    }
    Ok(Verdict::new(
        worst_amp <= 1e-6 && worst_stft <= 1e-4,
        format!("amplitude transform {worst_amp:.2e}, stft interior {worst_stft:.2e} (relative)"),
    ))
}

/// Models and data shared by the training-dependent criteria.
struct Trained {
    profile: Profile,
    models: Vec<Model<f32>>,
    loss_ratios: Vec<f64>,
    held_out: Vec<WaveformBuffer>,
}

fn train_models() -> Result<Trained> {
    let profile = Profile::toy();
    let s = &profile.signal;
    let tones = |count, seed| -> Result<Vec<WaveformBuffer>> {
        Ok(corpus::generate(&[ClipKind::Tone], count, seed, s.sample_rate, s.channels, CLIP_SECONDS)?
            .into_iter()
            .map(|c| c.wave)
            .collect())
    };
    let train = tones(TRAIN_CLIPS, 1)?;
    let held_out = tones(HELD_OUT_CLIPS, 99)?;
    let mut models = Vec::new();
    let mut loss_ratios = Vec::new();
    for seed in TRAIN_SEEDS {
        let mut p = profile.clone();
        p.train.seed = seed;
        let mut trainer = Trainer::new(&p, train.clone(), p.train.steps)?;
        let mut first = Vec::with_capacity(100);
        let mut last = f64::NAN;
        for _ in 0..p.train.steps {
            let rec = trainer.step()?;
            if first.len() < 100 {
                first.push(rec.smoothed_loss);
            }
            last = rec.smoothed_loss;
        }
        // Smoothed loss at the end against the smoothed loss over the first 100 steps.
        let start = first.iter().sum::<f64>() / first.len() as f64;
        loss_ratios.push(last / start);
        models.push(if p.decode.use_ema { trainer.ema_model()? } else { trainer.model().clone() });
    }
    Ok(Trained { profile, models, loss_ratios, held_out })
}

fn decode_held_out(t: &Trained, model: &Model<f32>, steps: usize) -> Result<Vec<WaveformBuffer>> {
    let codec = Codec::new(&t.profile, model)?;
    t.held_out
        .iter()
        .map(|w| {
            let seq = codec.encode_sequence(w, Mode::Discrete)?;
            Ok(codec.decode_parallel(&seq, steps, 0)?.wave)
        })
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn training_smoke(t: &Trained) -> Result<Verdict> {
    let mut gains = Vec::new();
    let mut scores = Vec::new();
    let steps = t.profile.decode.parallel_steps;
    for model in &t.models {
        let est = decode_held_out(t, model, steps)?;
        let mut per_clip = Vec::new();
        for (r, e) in t.held_out.iter().zip(&est) {
            let zero = WaveformBuffer::silence(r.sample_rate(), r.n_channels(), r.n_samples())?;
            let (sd, base) = (si_sdr(r, e)?, si_sdr(r, &zero)?);
            per_clip.push((sd, sd - base));
        }
        scores.push(mean(per_clip.iter().map(|x| x.0)));
        gains.push(mean(per_clip.iter().map(|x| x.1)));
    }
    let ratio = median(t.loss_ratios.clone());
    let gain = median(gains);
    Ok(Verdict::new(
        ratio < 0.5 && gain >= 10.0,
        format!(
            "loss end/start median {ratio:.3} (per seed {:?}); held-out SI-SDR {:?} dB, median gain over silence {gain:.1} dB",
            t.loss_ratios.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            scores.iter().map(|s| (s * 10.0).round() / 10.0).collect::<Vec<_>>()
        ),
    ))
}

fn strategy_ordering(t: &Trained) -> Result<Verdict> {
    let mut lsd = BTreeMap::new();
    for steps in [1, 4] {
        let mut per_seed = Vec::new();
        for model in &t.models {
            let est = decode_held_out(t, model, steps)?;
            let d: Vec<f64> = t.held_out.iter().zip(&est).map(|(r, e)| log_spectral_distance(r, e)).collect::<Result<_, _>>()?;
            per_seed.push(mean(d.into_iter()));
        }
        lsd.insert(steps, per_seed);
    }
    let (one, four) = (median(lsd[&1].clone()), median(lsd[&4].clone()));
    Ok(Verdict::new(four <= one, format!("median LSD S=4 {four:.4} vs S=1 {one:.4} (per seed S=4 {:?}, S=1 {:?})", lsd[&4], lsd[&1])))
}

fn memory_scaling(model: &Model<f32>) -> Result<Verdict> {
    let p = Profile::toy();
    let codec = Codec::new(&p, model)?;
    let s = &p.signal;
    let mut ar = Vec::new();
    let mut par = Vec::new();
    for t in [4usize, 8, 16] {
        let n = (t * s.t_chunk - 1) * s.hop + s.window;
        let x = (0..n).map(|i| 0.3 * (i as f32 * 0.04).sin()).collect();
        let seq = codec.encode_sequence(&WaveformBuffer::new(s.sample_rate, vec![x])?, Mode::Discrete)?;
        ar.push(codec.decode(&seq, Strategy::Autoregressive, p.decode.ar_steps, 0)?.report.peak_activation_bytes);
        par.push(codec.decode(&seq, Strategy::Parallel, p.decode.parallel_steps, 0)?.report.peak_activation_bytes);
    }
    let constant = ar.iter().all(|&b| b == ar[0]);
    let lo = (par[1] as f64 - par[0] as f64) / 4.0;
    let hi = (par[2] as f64 - par[1] as f64) / 8.0;
    let linear = lo > 0.0 && (hi / lo - 1.0).abs() < 0.1;
    Ok(Verdict::new(
        constant && linear,
        format!("peak bytes at T=4/8/16: autoregressive {ar:?}, parallel {par:?} (per-chunk growth {lo:.0} then {hi:.0})"),
    ))
}

fn cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>> {
    let out = Command::new(env!("CARGO_BIN_EXE_dualcodec")).args(args).current_dir(dir).output()?;
    ensure!(out.status.success(), "dualcodec {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    Ok(out.stdout)
}

fn pipeline(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    cli(dir, &["gen-corpus", "--out", "data", "--count", "4", "--seconds", "0.5", "--seed", "3"])?;
    cli(dir, &["train", "--data", "data", "--steps", "3", "--out", "model.dckp", "--seed", "5"])?;
    fs::create_dir_all(dir.join("ref"))?;
    fs::copy(dir.join("data/tone_000.wav"), dir.join("ref/tone_000.wav"))?;
    let mut stdout = Vec::new();
    for mode in ["discrete", "continuous"] {
        let stream = format!("{mode}.bin");
        cli(dir, &["encode", "--checkpoint", "model.dckp", "--input", "data/tone_000.wav", "--output", &stream, "--mode", mode])?;
        stdout.extend(cli(dir, &["inspect", &stream])?);
        for strategy in ["ar", "parallel"] {
            let out_dir = format!("est_{mode}_{strategy}");
            fs::create_dir_all(dir.join(&out_dir))?;
            let wav = format!("{out_dir}/tone_000.wav");
            cli(dir, &["decode", "--checkpoint", "model.dckp", "--input", &stream, "--output", &wav, "--strategy", strategy, "--seed", "11"])?;
            cli(dir, &["eval", "--reference", "ref", "--estimate", &out_dir, "--output", &format!("{out_dir}.csv")])?;
        }
    }
    let mut files = BTreeMap::new();
    files.insert("inspect stdout".to_string(), stdout);
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(dir)?.display().to_string(), fs::read(&path)?);
            }
        }
    }
    Ok(files)
}

fn cli_determinism() -> Result<Verdict> {
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    ensure!(first.keys().eq(second.keys()), "runs produced different file sets");
    Ok(Verdict::new(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} outputs bitwise identical across two end-to-end runs", first.len())
        } else {
            format!("differing outputs: {differing:?}")
        },
    ))
}

fn main() {
    let mut results = vec![
        check(1, "configuration arithmetic", configuration_arithmetic),
        check(2, "boundary condition at sigma_min", boundary_condition),
        check(3, "left-chunk causality", causality),
        check(4, "gradient check against finite differences", gradients),
        check(5, "FSQ suite", fsq_suite),
        check(6, "parallel pair schedule", parallel_schedule),
        check(7, "signal round trips", signal_round_trips),
    ];

    let start = Instant::now();
    let trained = catch_unwind(train_models).map_err(|_| anyhow!("training panicked")).and_then(|r| r);
    eprintln!("trained {} toy models in {:.0} s", TRAIN_SEEDS.len(), start.elapsed().as_secs_f64());
    match &trained {
        Ok(t) => {
            results.push(check(8, "toy training smoke test", || training_smoke(t)));
            results.push(check(9, "parallel S=4 no worse than S=1 (LSD)", || strategy_ordering(t)));
            results.push(check(10, "activation memory scaling", || memory_scaling(&t.models[0])));
        }
        Err(e) => {
            for (id, name) in [(8, "toy training smoke test"), (9, "parallel S=4 no worse than S=1 (LSD)")] {
                results.push(check(id, name, || Err(anyhow!("training failed: {e:#}"))));
            }
            results.push(check(10, "activation memory scaling", || memory_scaling(&toy_model(0)?.1)));
        }
    }
    results.push(check(11, "CLI determinism", cli_determinism));

    let passed = results.iter().filter(|&&r| r).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
