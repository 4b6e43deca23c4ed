use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Element, Shape, Tape, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RCNK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named learned parameters, iterated in lexicographic name order.
///
/// Also owns the momentum buffers used by [`ParameterStore::sgd_step`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore<T: Element = f32> {
    entries: BTreeMap<String, Tensor<T>>,
    velocity: BTreeMap<String, Vec<T>>,
}

impl<T: Element> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore { entries: BTreeMap::new(), velocity: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.entries.insert(name, tensor.with_requires_grad(true));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|t| t.shape().numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.entries.values_mut().for_each(Tensor::zero_grad);
    }

    /// Adds the parameter gradients recorded on `tape` into this store.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>) -> Result<()> {
        for (name, g) in tape.param_grads() {
            let t = self.entries.get_mut(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
            t.accumulate_grad(g)?;
        }
        Ok(())
    }

    /// Multiplies every stored gradient by `factor`.
    pub fn scale_grads(&mut self, factor: T) {
        for t in self.entries.values_mut() {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|v| *v = *v * factor);
            }
        }
    }

    /// Euclidean norm of all stored gradients, accumulated in f64.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .filter_map(|t| t.grad())
            .flat_map(|g| g.iter().map(|v| v.as_f64() * v.as_f64()))
            .sum::<f64>()
            .sqrt()
    }

    /// Momentum SGD with L2 decay:
    /// `v = momentum·v + grad + weight_decay·param`, `param -= lr·v`.
    /// Gradients are cleared afterwards.
    pub fn sgd_step(&mut self, lr: T, momentum: T, weight_decay: T) -> Result<()> {
        let missing: Vec<String> =
            self.entries.iter().filter(|(_, t)| t.grad().is_none()).map(|(k, _)| k.clone()).collect();
        if !missing.is_empty() {
            return Err(Error::MissingGrad(missing));
        }
        for (name, t) in self.entries.iter_mut() {
            let g = t.grad_mut().take().expect("checked above");
            let v = self.velocity.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.len()]);
            for ((vi, &gi), &pi) in v.iter_mut().zip(&g).zip(t.data()) {
                *vi = momentum * *vi + gi + weight_decay * pi;
            }
            if lr != T::zero() {
                for (p, &vi) in t.data_mut().iter_mut().zip(v.iter()) {
                    *p = *p - lr * vi;
                }
            }
        }
        Ok(())
    }

    /// Forgets momentum state, e.g. between training stages.
    pub fn reset_optimizer(&mut self) {
        self.velocity.clear();
    }

    pub fn cast<U: Element>(&self) -> ParameterStore<U> {
        ParameterStore {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            velocity: BTreeMap::new(),
        }
    }
}

impl ParameterStore<f32> {
    /// Serializes values (not gradients or momentum) in the `RCNK` layout:
    /// magic, version u32, entry count u32, then per entry a u16 name
    /// length, the UTF-8 name, four u32 extents and the f32 payload. All
    /// integers and floats are little-endian.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let count = u32::try_from(self.entries.len()).map_err(|_| Error::Format("too many entries".into()))?;
        w.write_all(&count.to_le_bytes())?;
        for (name, t) in &self.entries {
            let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            for d in t.shape().0 {
                let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent too large in {name}")))?;
                w.write_all(&d.to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Format(format!("entry name: {e}")))?;
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = read_u32(&mut r)? as usize;
            }
            let shape = Shape(dims);
            let mut raw = vec![0u8; shape.numel() * 4];
            r.read_exact(&mut raw)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            store.insert(name, Tensor::from_vec(shape, data)?)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_checkpoint(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
