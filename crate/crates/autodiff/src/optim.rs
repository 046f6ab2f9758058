//! Adam/RAdam with cosine learning-rate decay, and parameter EMA.

use crate::array::NdArray;
use crate::error::{invalid, Error, Result};
use crate::params::ParamStore;
use crate::Scalar;

/// `lr(u) = initial · ½(1 + cos πu)` for training progress `u ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub initial: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn at_progress(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        self.initial * 0.5 * (1.0 + (std::f64::consts::PI * u).cos())
    }

    pub fn at_step(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.initial;
        }
        self.at_progress(step as f64 / self.total_steps as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Apply the RAdam variance rectification.
    pub rectified: bool,
    pub total_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rectified: true,
            total_steps: 2_000_000,
        }
    }
}

/// Optimizer state: first/second moments per parameter and the step count.
pub struct Adam<T> {
    cfg: AdamConfig,
    schedule: CosineSchedule,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        let zeros = |_| store.ids().map(|id| vec![T::zero(); store.value(id).numel()]).collect();
        Adam {
            cfg,
            schedule: CosineSchedule {
                initial: cfg.lr,
                total_steps: cfg.total_steps,
            },
            step: 0,
            m: zeros(()),
            v: zeros(()),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Learning rate the next call to [`Adam::step`] will use.
    pub fn current_lr(&self) -> f64 {
        self.schedule.at_step(self.step)
    }

    /// Apply one update from the gradients held in `store`. Parameters
    /// without a gradient are treated as having a zero gradient. If any
    /// gradient is non-finite nothing is modified.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<f64> {
        if self.m.len() != store.len() {
            return Err(invalid("adam", "parameter store does not match optimizer state"));
        }
        for id in store.ids() {
            if let Some(g) = store.grad(id) {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteGradient {
                        name: store.name(id).to_string(),
                    });
                }
            }
        }
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as f64;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.cfg;
        let bc1 = 1.0 - beta1.powf(t);
        let bc2 = 1.0 - beta2.powf(t);

        // RAdam: use the adaptive term only once its variance is tractable.
        let rect = if self.cfg.rectified {
            let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
            let rho_t = rho_inf - 2.0 * t * beta2.powf(t) / bc2;
            (rho_t > 5.0).then(|| {
                (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt()
            })
        } else {
            Some(1.0)
        };

        let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
        let (ib1, ib2) = (T::one() - b1, T::one() - b2);
        for id in store.ids() {
            let i = id.index();
            let grad = store.grad(id).map(|g| g.to_vec());
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            match &grad {
                Some(g) => {
                    for ((mj, vj), &gj) in m.iter_mut().zip(v.iter_mut()).zip(g) {
                        *mj = b1 * *mj + ib1 * gj;
                        *vj = b2 * *vj + ib2 * gj * gj;
                    }
                }
                None => {
                    m.iter_mut().for_each(|x| *x = b1 * *x);
                    v.iter_mut().for_each(|x| *x = b2 * *x);
                }
            }
            let data = store.value_mut(id).data_mut();
            match rect {
                Some(r) => {
                    let step = T::from_f64_lossy(lr * r / bc1);
                    let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
                    let e = T::from_f64_lossy(eps);
                    for ((p, &mj), &vj) in data.iter_mut().zip(m.iter()).zip(v.iter()) {
                        *p -= step * mj / ((vj * inv_bc2).sqrt() + e);
                    }
                }
                None => {
                    let step = T::from_f64_lossy(lr / bc1);
                    for (p, &mj) in data.iter_mut().zip(m.iter()) {
                        *p -= step * mj;
                    }
                }
            }
        }
        Ok(lr)
    }
}

/// Exponential moving average of parameters.
pub struct EmaState<T> {
    shadow: Vec<NdArray<T>>,
    momentum: f64,
}

impl<T: Scalar> EmaState<T> {
    /// Shadow initialised to a copy of the current parameters.
    pub fn new(store: &ParamStore<T>, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) || momentum == 0.0 {
            return Err(invalid("ema", format!("momentum {momentum} outside (0, 1)")));
        }
        Ok(EmaState {
            shadow: store.ids().map(|id| store.value(id).map(|x| x)).collect(),
            momentum,
        })
    }

    pub fn from_shadow(shadow: Vec<NdArray<T>>, momentum: f64) -> Self {
        EmaState { shadow, momentum }
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn shadow(&self) -> &[NdArray<T>] {
        &self.shadow
    }

    /// `shadow ← momentum·shadow + (1 − momentum)·param`
    pub fn update(&mut self, store: &ParamStore<T>) -> Result<()> {
        if self.shadow.len() != store.len() {
            return Err(invalid("ema", "parameter count changed"));
        }
        let mu = T::from_f64_lossy(self.momentum);
        let one_minus = T::from_f64_lossy(1.0 - self.momentum);
        for (s, id) in self.shadow.iter_mut().zip(store.ids()) {
            let p = store.value(id);
            if s.shape() != p.shape() {
                return Err(crate::error::shape_err("ema", s.shape(), p.shape()));
            }
            for (a, &b) in s.data_mut().iter_mut().zip(p.data()) {
                *a = mu * *a + one_minus * b;
            }
        }
        Ok(())
    }

    /// Copy of `store` with values replaced by the shadow.
    pub fn apply_to(&self, store: &ParamStore<T>) -> Result<ParamStore<T>> {
        let mut out = store.clone();
        for (s, id) in self.shadow.iter().zip(store.ids()) {
            out.set(id, s.clone())?;
        }
        Ok(out)
    }
}
