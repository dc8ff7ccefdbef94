use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// One learnable array with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub requires_grad: bool,
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<f64>) -> ParamId {
        let name = name.into();
        assert_eq!(value.len(), shape.iter().product::<usize>(), "param {name}: bad length");
        assert!(self.find(&name).is_none(), "duplicate param {name}");
        let n = value.len();
        self.params.push(ParamTensor {
            name,
            shape: shape.to_vec(),
            value,
            grad: vec![0.0; n],
            requires_grad: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.params.iter_mut()
    }

    /// Total number of scalars across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn set_requires_grad(&mut self, prefix: &str, on: bool) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.requires_grad = on;
        }
    }

    /// Copies values from `other`, matched by name and shape.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let Some(id) = other.find(&p.name) else {
                bail!(Format, "missing parameter {}", p.name);
            };
            let src = other.get(id);
            if src.shape != p.shape {
                bail!(Dimension, "parameter {}: shape {:?} vs {:?}", p.name, src.shape, p.shape);
            }
            p.value.copy_from_slice(&src.value);
        }
        Ok(())
    }
}
