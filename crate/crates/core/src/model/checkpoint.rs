use std::path::Path;

use crate::container::{Container, Entry};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

use super::config::ModelConfig;
use super::net::Model;

const KIND: &str = "model";

impl<T: Scalar> Model<T> {
    pub fn to_container(&self) -> Container {
        let meta = format!("kind={KIND}\ndtype={}\n{}", T::DTYPE.name(), self.cfg.to_kv());
        let mut c = Container::new(meta);
        for (name, t) in self.params.iter() {
            c.push(Entry::from_tensor(name, t));
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if !c.meta.lines().any(|l| l == format!("kind={KIND}")) {
            return Err(Error::Checkpoint("not a model checkpoint".into()));
        }
        let cfg = ModelConfig::from_kv(&c.meta)?;
        let mut model = Self::init(&cfg, 0)?;
        Self::load_params(&mut model, c)?;
        Ok(model)
    }

    /// Overwrites this model's parameters from `c`, demanding the exact layout.
    pub fn load_params(&mut self, c: &Container) -> Result<()> {
        if c.entries.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model has {}",
                c.entries.len(),
                self.params.len()
            )));
        }
        for slot in 0..self.params.len() {
            let name = self.params.name(slot).to_string();
            let e = c.require(&name)?;
            let want = self.params.get(slot).shape().to_vec();
            if e.shape != want {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: checkpoint shape {:?}, model expects {want:?}",
                    e.shape
                )));
            }
            *self.params.get_mut(slot) = e.to_tensor()?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}
