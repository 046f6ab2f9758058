use crate::error::{Error, Result};

/// Lowest and highest angular frequency applied to `ln σ`. The lowest has a
/// period (about 25) longer than the whole `ln σ` range of the default
/// noise interval, so no two noise levels in range share an embedding.
const OMEGA_LO: f64 = 0.25;
const OMEGA_HI: f64 = 25.0;

/// `[sin(ω_i ln σ)…, cos(ω_i ln σ)…]` with `ω_i` geometrically spaced.
pub fn sigma_embed(sigma: f64, channels: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("sigma must be positive and finite, got {sigma}")));
    }
    if channels < 4 || channels % 2 != 0 {
        return Err(Error::Config(format!("sigma embedding width must be even and >= 4, got {channels}")));
    }
    let half = channels / 2;
    let ls = sigma.ln();
    let omega = |i: usize| OMEGA_LO * (OMEGA_HI / OMEGA_LO).powf(i as f64 / (half - 1) as f64);
    let mut out = Vec::with_capacity(channels);
    out.extend((0..half).map(|i| (omega(i) * ls).sin()));
    out.extend((0..half).map(|i| (omega(i) * ls).cos()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_distinct() {
        let a = sigma_embed(0.7, 32).unwrap();
        assert_eq!(a, sigma_embed(0.7, 32).unwrap());
        let b = sigma_embed(1.4, 32).unwrap();
        let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(dist > 0.1, "{dist}");
        for s in [0.002, 80.0] {
            assert!(sigma_embed(s, 512).unwrap().iter().all(|v| v.is_finite()));
        }
        assert!(sigma_embed(0.0, 32).is_err());
    }
}
