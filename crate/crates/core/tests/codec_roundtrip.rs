use dualcodec::codec::{Codec, EncodedSequence, Mode, Payload, Strategy};
use dualcodec::fsq::LatentSet;
use dualcodec::net::Model;
use dualcodec::signal::WaveformBuffer;
use dualcodec::Profile;

fn setup() -> (Profile, Model<f32>) {
    let p = Profile::toy();
    let m = Model::new(&p.model, (&p.signal).into(), 5).unwrap();
    (p, m)
}

/// A tone exactly `chunks` chunks long, plus `extra` samples.
fn tone(p: &Profile, chunks: usize, extra: usize) -> WaveformBuffer {
    let s = &p.signal;
    let n = (chunks * s.t_chunk - 1) * s.hop + s.window + extra;
    let x = (0..n).map(|i| 0.3 * (i as f32 * 0.05).sin() + 0.1 * (i as f32 * 0.31).sin()).collect();
    WaveformBuffer::new(s.sample_rate, vec![x]).unwrap()
}

fn with_latents(seq: &EncodedSequence, f: impl Fn(f32) -> f32) -> EncodedSequence {
    let Payload::Continuous(sets) = &seq.payload else { panic!("expected continuous payload") };
    let sets = sets
        .iter()
        .map(|l| LatentSet::new(l.values().iter().map(|&v| f(v)).collect(), l.k(), l.d_lat(), false).unwrap())
        .collect();
    EncodedSequence::new(seq.meta, seq.k, seq.d_lat, Payload::Continuous(sets)).unwrap()
}

#[test]
fn decoded_length_matches_input() {
    let (p, m) = setup();
    let codec = Codec::new(&p, &m).unwrap();
    for (chunks, extra) in [(1, 0), (2, 17), (3, 0), (2, 1000)] {
        let w = tone(&p, chunks, extra);
        let seq = codec.encode_sequence(&w, Mode::Discrete).unwrap();
        for strategy in [Strategy::Autoregressive, Strategy::Parallel] {
            let out = codec.decode(&seq, strategy, 2, 1).unwrap();
            assert_eq!(out.wave.n_samples(), w.n_samples(), "{chunks} chunks + {extra}, {strategy:?}");
            assert_eq!(out.wave.n_channels(), 1);
            assert!(out.wave.channel(0).iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn on_grid_latents_decode_like_tokens() {
    let (p, m) = setup();
    let codec = Codec::new(&p, &m).unwrap();
    let cont = codec.encode_sequence(&tone(&p, 3, 0), Mode::Continuous).unwrap();
    let n = p.fsq.n as f32;
    let on_grid = with_latents(&cont, |v| (v * n).round() / n);
    let tokens = cont.quantized(p.fsq.n).unwrap();
    for strategy in [Strategy::Autoregressive, Strategy::Parallel] {
        let a = codec.decode_latents_direct(&on_grid, strategy, 2, 3).unwrap();
        let b = codec.decode(&tokens, strategy, 2, 3).unwrap();
        assert_eq!(a.wave, b.wave, "{strategy:?}");
        let c = codec.decode_latents_direct(&cont, strategy, 2, 3).unwrap();
        assert_ne!(c.wave, b.wave, "{strategy:?}");
    }
}

#[test]
fn fixed_seed_is_reproducible() {
    let (p, m) = setup();
    let codec = Codec::new(&p, &m).unwrap();
    let w = tone(&p, 3, 5);
    let seq = codec.encode_sequence(&w, Mode::Discrete).unwrap();
    assert_eq!(seq, codec.encode_sequence(&w, Mode::Discrete).unwrap());
    for strategy in [Strategy::Autoregressive, Strategy::Parallel] {
        let a = codec.decode(&seq, strategy, 3, 42).unwrap();
        let b = codec.decode(&seq, strategy, 3, 42).unwrap();
        assert_eq!(a.wave, b.wave);
        assert_eq!(a.report, b.report);
        let c = codec.decode(&seq, strategy, 3, 43).unwrap();
        assert_ne!(a.wave, c.wave);
    }
}

#[test]
fn autoregressive_reads_each_chunk_only_after_emitting_the_previous_ones() {
    let (p, m) = setup();
    let codec = Codec::new(&p, &m).unwrap();
    let seq = codec.encode_sequence(&tone(&p, 5, 0), Mode::Discrete).unwrap();
    let out = codec.decode_autoregressive(&seq, 2, 0).unwrap();
    let reads: Vec<(usize, usize)> = out.report.payload_reads.iter().map(|r| (r.chunk, r.emitted)).collect();
    assert_eq!(reads, (0..5).map(|t| (t, t)).collect::<Vec<_>>());
    assert_eq!(out.report.decoder_calls, 10);
}

#[test]
fn activation_memory_scales_with_strategy() {
    let (p, m) = setup();
    let codec = Codec::new(&p, &m).unwrap();
    let mut ar = Vec::new();
    let mut par = Vec::new();
    for t in [4, 8, 16] {
        let seq = codec.encode_sequence(&tone(&p, t, 0), Mode::Discrete).unwrap();
        ar.push(codec.decode_autoregressive(&seq, 2, 0).unwrap().report.peak_activation_bytes);
        par.push(codec.decode_parallel(&seq, 2, 0).unwrap().report.peak_activation_bytes);
    }
    assert!(ar.iter().all(|&b| b == ar[0] && b > 0), "autoregressive peaks {ar:?}");
    // Equal spacing in T (4 → 8 → 16 doubles the step) must show as equal
    // growth per chunk.
    let per_chunk_lo = (par[1] - par[0]) as f64 / 4.0;
    let per_chunk_hi = (par[2] - par[1]) as f64 / 8.0;
    assert!(per_chunk_lo > 0.0, "parallel peaks {par:?}");
    assert!((per_chunk_hi / per_chunk_lo - 1.0).abs() < 0.1, "parallel peaks {par:?}");
}
