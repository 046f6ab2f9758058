use dualcodec::metrics::{log_spectral_distance, si_sdr};
use dualcodec::signal::WaveformBuffer;
use proptest::prelude::*;

fn mono(x: Vec<f32>) -> WaveformBuffer {
    WaveformBuffer::new(16_000, vec![x]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn si_sdr_ignores_estimate_scale(
        r in prop::collection::vec(-1.0f32..1.0, 512),
        noise in prop::collection::vec(-0.3f32..0.3, 512),
        gain in 0.1f32..10.0,
    ) {
        prop_assume!(r.iter().any(|&v| v.abs() > 1e-3));
        let e: Vec<f32> = r.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let scaled: Vec<f32> = e.iter().map(|v| v * gain).collect();
        let a = si_sdr(&mono(r.clone()), &mono(e)).unwrap();
        let b = si_sdr(&mono(r), &mono(scaled)).unwrap();
        prop_assert!((a - b).abs() < 1e-3, "{} vs {}", a, b);
    }

    #[test]
    fn lsd_is_a_pseudo_metric(
        a in prop::collection::vec(-1.0f32..1.0, 1500),
        b in prop::collection::vec(-1.0f32..1.0, 1500),
        c in prop::collection::vec(-1.0f32..1.0, 1500),
    ) {
        let (a, b, c) = (mono(a), mono(b), mono(c));
        let ab = log_spectral_distance(&a, &b).unwrap();
        let bc = log_spectral_distance(&b, &c).unwrap();
        let ac = log_spectral_distance(&a, &c).unwrap();
        prop_assert_eq!(log_spectral_distance(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(ab, log_spectral_distance(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert!(ac <= ab + bc + 1e-9);
    }
}
