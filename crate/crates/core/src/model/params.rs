use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Named trainable tensors. Order is stable and defines the checkpoint
/// layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
    decay: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub decay: bool,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array2<f64>, decay: bool) {
        self.names.push(name.into());
        self.tensors.push(value);
        self.decay.push(decay);
    }

    /// Glorot-uniform weight matrix, decayed.
    pub fn push_glorot<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let w = Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit));
        self.push(name, w, true);
    }

    /// Zero bias row, not decayed.
    pub fn push_bias(&mut self, name: &str, cols: usize) {
        self.push(name, Array2::zeros((1, cols)), false);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn decay_mask(&self) -> &[bool] {
        &self.decay
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        self.names
            .iter()
            .zip(&self.tensors)
            .zip(&self.decay)
            .map(|((name, t), &decay)| ParamSpec {
                name: name.clone(),
                rows: t.nrows(),
                cols: t.ncols(),
                decay,
            })
            .collect()
    }

    /// Rebuilds from specs and a flat row-major buffer.
    pub fn from_flat(specs: &[ParamSpec], flat: &[f64]) -> Result<Self> {
        let total: usize = specs.iter().map(|s| s.rows * s.cols).sum();
        if total != flat.len() {
            return Err(Error::Malformed(format!(
                "parameter blob holds {} values, manifest describes {total}",
                flat.len()
            )));
        }
        let mut out = Params::new();
        let mut at = 0;
        for s in specs {
            let len = s.rows * s.cols;
            let t = Array2::from_shape_vec((s.rows, s.cols), flat[at..at + len].to_vec())
                .map_err(|e| Error::Malformed(e.to_string()))?;
            out.push(s.name.clone(), t, s.decay);
            at += len;
        }
        Ok(out)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.iter().copied())
            .collect()
    }

    /// Places every tensor on `tape` as a leaf.
    pub fn leaves(&self, tape: &mut Tape<'_>) -> Result<ParamVars> {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamVars {
            names: self.names.clone(),
            vars,
        })
    }

    /// Places every tensor on `tape` as a constant (evaluation).
    pub fn constants(&self, tape: &mut Tape<'_>) -> Result<ParamVars> {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(ParamVars {
            names: self.names.clone(),
            vars,
        })
    }
}

/// Tape handles of a [`Params`] set, addressable by name.
#[derive(Debug, Clone)]
pub struct ParamVars {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn from_parts(names: Vec<String>, vars: Vec<Var>) -> Self {
        ParamVars { names, vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
