//! Trained-model files: raw and EMA weights plus the profile they belong to.
//!
//! Arrays live under `raw/`, `ema/` and `meta/`. The profile is stored as its
//! TOML text, one byte per `f32`, so a checkpoint is self-describing.

use std::path::Path;

use dualcodec_autodiff::checkpoint::Checkpoint;
use dualcodec_autodiff::{NdArray, ParamStore};

use crate::config::Profile;
use crate::error::{Error, Result};
use crate::net::{ChunkGeometry, Model};
use crate::train::Trainer;

const PROFILE_KEY: &str = "meta/profile";
const STEPS_KEY: &str = "meta/steps";

#[derive(Clone)]
pub struct ModelCheckpoint {
    pub profile: Profile,
    pub raw: ParamStore<f32>,
    pub ema: ParamStore<f32>,
    pub steps: u64,
}

impl ModelCheckpoint {
    pub fn from_trainer(t: &Trainer) -> Result<Self> {
        Ok(ModelCheckpoint {
            profile: t.profile().clone(),
            raw: t.model().params().clone(),
            ema: t.ema_model()?.into_params(),
            steps: t.steps_done(),
        })
    }

    /// Raw or EMA weights as a ready model.
    pub fn model(&self, use_ema: bool) -> Result<Model<f32>> {
        let params = if use_ema { &self.ema } else { &self.raw };
        Model::with_params(&self.profile.model, ChunkGeometry::from(&self.profile.signal), params.clone())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let text = self.profile.to_toml_string();
        ck.push(PROFILE_KEY, &[text.len()], text.bytes().map(f32::from).collect());
        // Split into two exactly representable halves.
        ck.push(STEPS_KEY, &[2], vec![(self.steps >> 20) as f32, (self.steps & 0xF_FFFF) as f32]);
        for (ns, store) in [("raw", &self.raw), ("ema", &self.ema)] {
            for id in store.ids() {
                let v = store.value(id);
                ck.push(format!("{ns}/{}", store.name(id)), v.shape(), v.data().to_vec());
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let text = ck.get(PROFILE_KEY).ok_or_else(|| Error::Data("checkpoint has no profile".into()))?;
        let bytes = text
            .data
            .iter()
            .map(|&b| if (0.0..=255.0).contains(&b) && b.fract() == 0.0 { Ok(b as u8) } else { Err(()) })
            .collect::<std::result::Result<Vec<u8>, ()>>()
            .map_err(|_| Error::Data("checkpoint profile is not byte text".into()))?;
        let text = String::from_utf8(bytes).map_err(|e| Error::Data(format!("checkpoint profile: {e}")))?;
        let profile = Profile::from_toml_str(&text)?;
        let steps = match ck.get(STEPS_KEY) {
            Some(a) if a.data.len() == 2 => ((a.data[0] as u64) << 20) | a.data[1] as u64,
            _ => return Err(Error::Data("checkpoint has no step count".into())),
        };
        let geom = ChunkGeometry::from(&profile.signal);
        let template = Model::<f32>::new(&profile.model, geom, 0)?.into_params();
        let load = |ns: &str| -> Result<ParamStore<f32>> {
            let mut store = template.clone();
            let expected = store.len();
            let mut seen = 0;
            for (name, arr) in ck.namespace(ns) {
                let id = store
                    .find(name)
                    .ok_or_else(|| Error::Data(format!("checkpoint parameter {ns}/{name} is not part of the model")))?;
                store.set(id, NdArray::from_vec(&arr.shape, arr.data.clone())?)?;
                seen += 1;
            }
            if seen != expected {
                return Err(Error::Data(format!("checkpoint holds {seen} of {expected} {ns} parameters")));
            }
            Ok(store)
        };
        Ok(ModelCheckpoint { raw: load("raw")?, ema: load("ema")?, profile, steps })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_bytes() {
        let p = Profile::toy();
        let raw = Model::<f32>::new(&p.model, (&p.signal).into(), 1).unwrap().into_params();
        let ema = Model::<f32>::new(&p.model, (&p.signal).into(), 2).unwrap().into_params();
        let ck = ModelCheckpoint { profile: p.clone(), raw, ema, steps: 1_234_567 };
        let mut bytes = Vec::new();
        ck.to_checkpoint().write_to(&mut bytes).unwrap();
        let back = ModelCheckpoint::from_checkpoint(&Checkpoint::read_from(&mut bytes.as_slice()).unwrap()).unwrap();
        assert_eq!(back.profile, p);
        assert_eq!(back.steps, 1_234_567);
        for id in ck.raw.ids() {
            assert_eq!(back.raw.value(id).data(), ck.raw.value(id).data());
            assert_eq!(back.ema.value(id).data(), ck.ema.value(id).data());
        }
    }
}
