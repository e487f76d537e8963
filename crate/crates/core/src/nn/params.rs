use std::collections::BTreeMap;

use candle_core::{Shape, Tensor, Var};

use crate::error::{Error, Result};
use crate::tensor::{self, Rng};

/// Named, ordered collection of trainable variables.
#[derive(Clone, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("tensors", &self.vars.len())
            .field("elements", &self.num_elements())
            .finish()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<Var> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("bad parameter name {name:?}")));
        }
        if self.vars.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
        }
        let var = Var::from_tensor(&value.to_dtype(tensor::DTYPE)?)?;
        self.vars.insert(name, var.clone());
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.keys().cloned().collect()
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Copies every tensor into fresh storage.
    pub fn deep_copy(&self) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for (name, var) in &self.vars {
            out.insert(name.clone(), var.as_tensor().copy()?)?;
        }
        Ok(out)
    }

    /// Flattened values of every tensor, in name order.
    pub fn snapshot(&self) -> Result<Vec<(String, Vec<f64>)>> {
        self.vars
            .iter()
            .map(|(n, v)| Ok((n.clone(), tensor::to_vec(v.as_tensor())?)))
            .collect()
    }

    /// Overwrites the named tensor in place (shape must match).
    pub fn assign(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        var.set(&value.to_dtype(tensor::DTYPE)?)?;
        Ok(())
    }

    /// Zeroes every tensor whose name starts with `prefix`; returns how many.
    pub fn zero_prefix(&self, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for (name, var) in &self.vars {
            if name.starts_with(prefix) {
                var.set(&var.zeros_like()?)?;
                n += 1;
            }
        }
        Ok(n)
    }

    /// True if any variable of `self` shares a tensor with `other`.
    pub fn shares_storage_with(&self, other: &ParamStore) -> bool {
        self.vars
            .values()
            .any(|a| other.vars.values().any(|b| a.id() == b.id()))
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

/// Creates or fetches parameters under a name prefix.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: Option<&'a mut Rng>,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    /// Initializing builder: every requested variable is freshly drawn.
    pub fn init(store: &'a mut ParamStore, rng: &'a mut Rng) -> Self {
        Self { store, rng: Some(rng), prefix: String::new() }
    }

    /// Loading builder: every requested variable must already exist with the right shape.
    pub fn load(store: &'a mut ParamStore) -> Self {
        Self { store, rng: None, prefix: String::new() }
    }

    pub fn sub(&mut self, name: &str) -> ParamBuilder<'_> {
        let prefix = self.path(name);
        ParamBuilder { store: &mut *self.store, rng: self.rng.as_deref_mut(), prefix }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn var<S: Into<Shape>>(&mut self, name: &str, shape: S, init: Init) -> Result<Var> {
        let shape = shape.into();
        let path = self.path(name);
        match self.rng.as_deref_mut() {
            Some(rng) => {
                let t = match init {
                    Init::Zeros => tensor::zeros(shape)?,
                    Init::Ones => Tensor::ones(shape, tensor::DTYPE, &tensor::DEVICE)?,
                    Init::Normal(std) => (tensor::randn(shape, rng)? * std)?,
                };
                self.store.insert(path, t)
            }
            None => {
                let var = self
                    .store
                    .get(&path)
                    .ok_or_else(|| Error::Config(format!("missing parameter {path}")))?;
                if var.shape() != &shape {
                    return Err(Error::Config(format!(
                        "parameter {path}: expected shape {:?}, found {:?}",
                        shape.dims(),
                        var.dims()
                    )));
                }
                Ok(var.clone())
            }
        }
    }
}
