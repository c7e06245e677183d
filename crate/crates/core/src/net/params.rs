//! Named parameter storage. Parameters live outside any tape; each forward
//! pass materializes them as leaves so gradients can be read back by name.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::net::tensor::{Tape, Var};
use crate::rng::stream_rng;

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Ordered collection of named parameters. Creation order is the canonical
/// order used for serialization, so it must be deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    pub params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Register a weight matrix initialized uniform in +-1/sqrt(fan_in),
    /// seeded per-name so initialization is order-independent.
    pub fn init_matrix(&mut self, seed: u64, name: &str, rows: usize, cols: usize) {
        let bound = 1.0 / (rows as f64).sqrt();
        let mut rng = stream_rng(seed, name);
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, rows, cols, data);
    }

    /// Register a zero-initialized parameter (biases, norm offsets).
    pub fn init_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, rows, cols, vec![0.0; rows * cols]);
    }

    /// Register a one-initialized parameter (norm gains).
    pub fn init_ones(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, rows, cols, vec![1.0; rows * cols]);
    }

    fn insert(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter {name}"
        );
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            rows,
            cols,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| Error::WeightsMismatch(format!("unknown parameter {name}")))
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }
}

/// One forward pass worth of parameter leaves: lazily mirrors a ParamStore
/// onto a tape and remembers the Var for each name so gradients can be
/// collected afterwards.
pub struct TapeParams<'a> {
    pub store: &'a ParamStore,
    pub vars: HashMap<String, Var>,
}

impl<'a> TapeParams<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        TapeParams {
            store,
            vars: HashMap::new(),
        }
    }

    pub fn get(&mut self, tape: &mut Tape, name: &str) -> Var {
        if let Some(&v) = self.vars.get(name) {
            return v;
        }
        let p = self
            .store
            .get(name)
            .unwrap_or_else(|_| panic!("unknown parameter {name}"));
        let v = tape.leaf(p.rows, p.cols, p.data.clone());
        self.vars.insert(name.to_string(), v);
        v
    }

    /// Gradient per parameter in store order (zeros for unused parameters).
    pub fn collect_grads(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.store
            .params
            .iter()
            .map(|p| match self.vars.get(&p.name) {
                Some(&v) => tape.grad(v).to_vec(),
                None => vec![0.0; p.data.len()],
            })
            .collect()
    }
}
