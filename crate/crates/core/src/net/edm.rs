//! Consistency-function parameterization `f(x, σ) = c_skip(σ)·x + c_out(σ)·F(x, σ)`.

use crate::config::EdmConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdmCoefficients {
    pub sigma_data: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl From<&EdmConfig> for EdmCoefficients {
    fn from(c: &EdmConfig) -> Self {
        EdmCoefficients { sigma_data: c.sigma_data, sigma_min: c.sigma_min, sigma_max: c.sigma_max }
    }
}

impl EdmCoefficients {
    pub fn check(&self, sigma: f64) -> Result<()> {
        if !(sigma >= self.sigma_min && sigma <= self.sigma_max) {
            return Err(Error::Domain(format!(
                "sigma {sigma} outside [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        Ok(())
    }

    pub fn c_skip(&self, sigma: f64) -> f64 {
        let sd2 = self.sigma_data * self.sigma_data;
        let s = sigma - self.sigma_min;
        sd2 / (s * s + sd2)
    }

    pub fn c_out(&self, sigma: f64) -> f64 {
        self.sigma_data * (sigma - self.sigma_min) / (self.sigma_data * self.sigma_data + sigma * sigma).sqrt()
    }

    pub fn c_in(&self, sigma: f64) -> f64 {
        1.0 / (sigma * sigma + self.sigma_data * self.sigma_data).sqrt()
    }
}

/// Array form of the wrap, for callers holding plain buffers.
pub fn edm_wrap(raw: &[f32], noisy: &[f32], sigma: f64, coeffs: &EdmCoefficients) -> Result<Vec<f32>> {
    coeffs.check(sigma)?;
    if raw.len() != noisy.len() {
        return Err(Error::Dimension(format!("edm_wrap: {} raw vs {} noisy values", raw.len(), noisy.len())));
    }
    let (cs, co) = (coeffs.c_skip(sigma) as f32, coeffs.c_out(sigma) as f32);
    Ok(noisy.iter().zip(raw).map(|(&x, &f)| x * cs + f * co).collect())
}
