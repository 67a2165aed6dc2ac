use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Unfreeze groups, ordered from the top of the network to the bottom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    /// N-gram attention, position tables, BiLSTM, CRF and task heads.
    NonCore,
    Bilstm2,
    Bilstm1,
    Highway,
    Projection,
    Convolutions,
    CharEmbeddings,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::NonCore,
        ParamGroup::Bilstm2,
        ParamGroup::Bilstm1,
        ParamGroup::Highway,
        ParamGroup::Projection,
        ParamGroup::Convolutions,
        ParamGroup::CharEmbeddings,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&g| g == self).unwrap()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::NonCore => "non_core",
            ParamGroup::Bilstm2 => "bilstm2",
            ParamGroup::Bilstm1 => "bilstm1",
            ParamGroup::Highway => "highway",
            ParamGroup::Projection => "projection",
            ParamGroup::Convolutions => "convolutions",
            ParamGroup::CharEmbeddings => "char_embeddings",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown parameter group `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
    pub group: ParamGroup,
}

impl Parameter {
    /// CRF parameters are excluded from the L2 penalty.
    pub fn is_crf(&self) -> bool {
        self.name.starts_with("crf.")
    }
}

/// Initial values for a parameter.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Const(f64),
    Uniform(f64),
    /// Glorot-uniform with the given fan-in and fan-out.
    Xavier(usize, usize),
}

/// Declarative description of one parameter: used both to create fresh
/// parameters and to re-attach to loaded ones.
#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], group: ParamGroup, init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            group,
            init,
        }
    }

    fn build<R: Rng>(&self, rng: &mut R) -> Tensor {
        match self.init {
            Init::Zeros => Tensor::zeros(&self.shape),
            Init::Const(v) => Tensor::filled(&self.shape, v),
            Init::Uniform(b) => Tensor::uniform(&self.shape, b, rng),
            Init::Xavier(fan_in, fan_out) => {
                let b = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::uniform(&self.shape, b, rng)
            }
        }
    }
}

/// Owns every parameter of a model, addressed by [`ParamId`] or by name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, group: ParamGroup) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            tensor,
            trainable: true,
            group,
        });
        Ok(ParamId(id))
    }

    /// Creates parameters from `specs` in order, drawing initial values from `rng`.
    pub fn register<R: Rng>(&mut self, specs: &[ParamSpec], rng: &mut R) -> Result<Vec<ParamId>> {
        specs
            .iter()
            .map(|s| self.add(s.name.clone(), s.build(rng), s.group))
            .collect()
    }

    /// Looks up existing parameters matching `specs`, checking shapes.
    pub fn resolve(&self, specs: &[ParamSpec]) -> Result<Vec<ParamId>> {
        specs
            .iter()
            .map(|s| {
                let id = self
                    .id_of(&s.name)
                    .ok_or_else(|| Error::Load(format!("missing parameter `{}`", s.name)))?;
                let have = self.get(id).tensor.shape();
                if have != s.shape.as_slice() {
                    return Err(Error::Load(format!(
                        "parameter `{}` has shape {:?}, expected {:?}",
                        s.name, have, s.shape
                    )));
                }
                Ok(id)
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &[f64] {
        self.params[id.0].tensor.values()
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id_of(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn gradients(&self) -> Gradients {
        Gradients {
            bufs: self.params.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
        }
    }

    /// Adds `grads` into the parameters' gradient buffers. Frozen parameters
    /// are skipped so their buffers stay zero.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (p, g) in self.params.iter_mut().zip(&grads.bufs) {
            if p.trainable {
                p.tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// SHA-256 over the little-endian bytes of every parameter whose name
    /// starts with `prefix`, in insertion order.
    pub fn checksum(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| p.name.starts_with(prefix)) {
            h.update(p.name.as_bytes());
            for v in p.tensor.values() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Per-parameter gradient scratch space, aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Gradients {
    bufs: Vec<Vec<f64>>,
}

impl Gradients {
    #[inline]
    pub fn buf(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.bufs[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.bufs[id.0]
    }

    /// Moves a buffer out so several can be borrowed mutably at once; pair
    /// with [`Gradients::restore`].
    pub fn take(&mut self, id: ParamId) -> Vec<f64> {
        std::mem::take(&mut self.bufs[id.0])
    }

    pub fn restore(&mut self, id: ParamId, buf: Vec<f64>) {
        self.bufs[id.0] = buf;
    }

    pub fn zero(&mut self) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bufs.iter().flatten().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        for b in &mut self.bufs {
            b.iter_mut().for_each(|x| *x *= s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::zeros(&[2]), ParamGroup::NonCore).unwrap();
        assert!(s.add("a", Tensor::zeros(&[2]), ParamGroup::NonCore).is_err());
    }

    #[test]
    fn frozen_params_receive_no_gradient() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::zeros(&[2]), ParamGroup::NonCore).unwrap();
        let b = s.add("b", Tensor::zeros(&[2]), ParamGroup::Highway).unwrap();
        s.get_mut(b).trainable = false;
        let mut g = s.gradients();
        g.buf(a).copy_from_slice(&[1.0, 2.0]);
        g.buf(b).copy_from_slice(&[3.0, 4.0]);
        s.accumulate(&g).unwrap();
        assert_eq!(s.get(a).tensor.grad().unwrap(), &[1.0, 2.0]);
        assert!(s.get(b).tensor.grad().is_none());
    }

    #[test]
    fn group_names_round_trip() {
        for g in ParamGroup::ALL {
            assert_eq!(g.as_str().parse::<ParamGroup>().unwrap(), g);
        }
        assert!("decoder".parse::<ParamGroup>().is_err());
    }
}
