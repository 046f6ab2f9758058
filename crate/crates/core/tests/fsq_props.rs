use std::collections::HashSet;

use dualcodec::fsq::{
    bound, fsq_dropout, indices_to_levels, levels_to_indices, quantize, FsqConfig, LatentSet, TokenChunk,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn on_grid(v: f32, n: u32) -> bool {
    let s = v as f64 * n as f64;
    (s - s.round()).abs() < 1e-6 && s.abs() <= n as f64 + 1e-9
}

proptest! {
    #[test]
    fn quantize_is_idempotent(z in prop::collection::vec(-6.0f32..6.0, 8), n in 1u32..8) {
        let cfg = FsqConfig::new(n, 4, 0.5).unwrap();
        let q = quantize(&z, 2, 4, &cfg).unwrap();
        // Re-quantizing grid points through atanh must land on the same grid points.
        let back: Vec<f32> = q.values().iter().map(|&v| (v as f64).clamp(-0.999_999, 0.999_999).atanh() as f32).collect();
        let again = quantize(&back, 2, 4, &cfg).unwrap();
        prop_assert_eq!(q.values(), again.values());
        prop_assert!(q.values().iter().all(|&v| on_grid(v, n)));
    }

    #[test]
    fn pack_then_unpack_is_identity(z in prop::collection::vec(-4.0f32..4.0, 12), n in 1u32..6) {
        let cfg = FsqConfig::new(n, 3, 0.0).unwrap();
        let q = quantize(&z, 4, 3, &cfg).unwrap();
        let tok = levels_to_indices(&q, &cfg).unwrap();
        let back = indices_to_levels(&tok, &cfg, 3).unwrap();
        prop_assert_eq!(back.values(), q.values());
    }
}

#[test]
fn every_code_round_trips_for_three_levels_cubed() {
    let cfg = FsqConfig::new(1, 3, 0.0).unwrap();
    assert_eq!(cfg.codebook_size(), Some(27));
    let mut seen = HashSet::new();
    for idx in 0..27u64 {
        let lat = indices_to_levels(&TokenChunk { indices: vec![idx] }, &cfg, 3).unwrap();
        assert!(lat.values().iter().all(|&v| v == -1.0 || v == 0.0 || v == 1.0));
        assert!(seen.insert(lat.values().iter().map(|&v| v as i32).collect::<Vec<_>>()));
        assert_eq!(levels_to_indices(&lat, &cfg).unwrap().indices, vec![idx]);
    }
    assert_eq!(seen.len(), 27);
    // And every grid point maps to a distinct index.
    let mut indices = HashSet::new();
    for a in -1i32..=1 {
        for b in -1i32..=1 {
            for c in -1i32..=1 {
                let lat = LatentSet::new(vec![a as f32, b as f32, c as f32], 1, 3, true).unwrap();
                indices.insert(levels_to_indices(&lat, &cfg).unwrap().indices[0]);
            }
        }
    }
    assert_eq!(indices.len(), 27);
}

#[test]
fn uniform_stimulus_uses_every_level_in_every_dimension() {
    let cfg = FsqConfig::new(5, 4, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z: Vec<f32> = (0..10_000 * 4).map(|_| (rng.gen_range(-1.0f64..1.0)).atanh() as f32).collect();
    let q = quantize(&z, 10_000, 4, &cfg).unwrap();
    for dim in 0..4 {
        let levels: HashSet<i64> =
            q.values().iter().skip(dim).step_by(4).map(|&v| (v as f64 * 5.0).round() as i64).collect();
        assert_eq!(levels.len(), 11, "dimension {dim} used {levels:?}");
    }
}

#[test]
fn dropout_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z: Vec<f32> = (0..64).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
    let always = FsqConfig::new(5, 4, 1.0).unwrap();
    let never = FsqConfig::new(5, 4, 0.0).unwrap();
    let tanh = bound(&z, 16, 4).unwrap();
    for _ in 0..50 {
        let out = fsq_dropout(&z, 16, 4, &always, &mut rng, true).unwrap();
        assert_eq!(out.values(), tanh.values());
        assert!(!out.quantized());
        let out = fsq_dropout(&z, 16, 4, &never, &mut rng, true).unwrap();
        assert!(out.quantized());
        assert!(out.values().iter().all(|&v| on_grid(v, 5)));
    }
    // tanh passthrough matches the f64 oracle bit for bit after rounding to f32.
    for (&v, &x) in tanh.values().iter().zip(&z) {
        assert_eq!(v, (x as f64).tanh() as f32);
    }
    assert!(fsq_dropout(&z, 16, 4, &always, &mut rng, false).is_err());
}

#[test]
fn full_codebook_size() {
    assert_eq!(FsqConfig::new(5, 4, 0.75).unwrap().codebook_size(), Some(11u64.pow(4)));
}
