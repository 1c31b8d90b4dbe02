//! Named trainable parameters and their accumulated gradients.
//!
//! Parameters live outside any tape: a [`ParamStore`] owns the values and a
//! gradient buffer per parameter, and tapes bind them by [`ParamId`]. The
//! optimizer reads accumulated gradients and writes values under exclusive
//! access; tape construction only ever reads values.

use std::collections::HashMap;

use rand::Rng;
use serde_json::{json, Value};

use super::tensor::Tensor;
use crate::error::DataError;

/// Checkpoint schema version.
pub const CHECKPOINT_SCHEMA: u64 = 1;

/// Handle to a parameter registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Registry of named parameters with accumulated gradients.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter under a hierarchical name such as
    /// `"decoder.gru.w_z"`. Names must be unique within a store.
    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let (r, c) = value.shape();
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id.0);
        self.entries.push(Entry { name, value, grad: Tensor::zeros(r, c) });
        id
    }

    /// Matrix init: uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` with
    /// `fan_in` the number of input columns.
    pub fn register_matrix(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let limit = 1.0 / (cols as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        self.register(name, Tensor::new(rows, cols, data))
    }

    /// Bias / vector init: zeros.
    pub fn register_vector(&mut self, name: impl Into<String>, rows: usize) -> ParamId {
        self.register(name, Tensor::zeros(rows, 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn add_to_grad(&mut self, id: ParamId, delta: &Tensor) {
        self.entries[id.0].grad.add_assign(delta);
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.iter_mut() {
            e.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.grad.sum_of_squares())
            .sum::<f64>()
            .sqrt()
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Snapshot of all values, for best-checkpoint tracking.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) {
        assert_eq!(snapshot.len(), self.entries.len(), "snapshot length mismatch");
        for (e, t) in self.entries.iter_mut().zip(snapshot) {
            assert_eq!(e.value.shape(), t.shape(), "snapshot shape mismatch for {}", e.name);
            e.value = t.clone();
        }
    }

    /// Serializes values as a name -> {shape, data} map.
    pub fn to_json(&self) -> Value {
        let mut params = serde_json::Map::new();
        for e in &self.entries {
            params.insert(
                e.name.clone(),
                json!({
                    "shape": [e.value.rows(), e.value.cols()],
                    "data": e.value.as_slice(),
                }),
            );
        }
        json!({ "schema": CHECKPOINT_SCHEMA, "params": params })
    }

    /// Restores values by name. Every registered parameter must be present
    /// with a matching shape; unknown names in the file are an error.
    pub fn load_json(&mut self, v: &Value) -> Result<(), DataError> {
        let schema = v
            .get("schema")
            .and_then(Value::as_u64)
            .ok_or_else(|| DataError::Checkpoint("missing schema field".into()))?;
        if schema != CHECKPOINT_SCHEMA {
            return Err(DataError::Checkpoint(format!(
                "unsupported schema {schema}, expected {CHECKPOINT_SCHEMA}"
            )));
        }
        let params = v
            .get("params")
            .and_then(Value::as_object)
            .ok_or_else(|| DataError::Checkpoint("missing params map".into()))?;
        for name in params.keys() {
            if !self.by_name.contains_key(name) {
                return Err(DataError::Checkpoint(format!("unknown parameter {name}")));
            }
        }
        for i in 0..self.entries.len() {
            let name = self.entries[i].name.clone();
            let entry = params
                .get(&name)
                .ok_or_else(|| DataError::Checkpoint(format!("missing parameter {name}")))?;
            let shape: Vec<usize> = entry
                .get("shape")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_u64).map(|x| x as usize).collect())
                .ok_or_else(|| DataError::Checkpoint(format!("{name}: missing shape")))?;
            let data: Vec<f64> = entry
                .get("data")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(Value::as_f64).collect())
                .ok_or_else(|| DataError::Checkpoint(format!("{name}: missing data")))?;
            if shape.len() != 2 || shape[0] * shape[1] != data.len() {
                return Err(DataError::Checkpoint(format!("{name}: inconsistent shape")));
            }
            let t = Tensor::new(shape[0], shape[1], data);
            if t.shape() != self.entries[i].value.shape() {
                return Err(DataError::Checkpoint(format!(
                    "{name}: shape {:?} does not match registered {:?}",
                    t.shape(),
                    self.entries[i].value.shape()
                )));
            }
            self.entries[i].value = t;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, tags};

    #[test]
    fn register_and_lookup() {
        let mut store = ParamStore::new();
        let id = store.register("a.b", Tensor::scalar(2.0));
        assert_eq!(store.lookup("a.b"), Some(id));
        assert_eq!(store.value(id).scalar_value(), 2.0);
        assert_eq!(store.grad(id).scalar_value(), 0.0);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_name_panics() {
        let mut store = ParamStore::new();
        store.register("x", Tensor::scalar(0.0));
        store.register("x", Tensor::scalar(1.0));
    }

    #[test]
    fn matrix_init_within_fan_in_bound() {
        let mut rng = substream(1, &[tags::INIT]);
        let mut store = ParamStore::new();
        let id = store.register_matrix("w", 8, 16, &mut rng);
        let limit = 1.0 / 4.0;
        assert!(store.value(id).as_slice().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = substream(2, &[tags::INIT]);
        let mut store = ParamStore::new();
        store.register_matrix("w", 3, 4, &mut rng);
        store.register_vector("b", 3);
        let json = store.to_json();

        let mut other = ParamStore::new();
        let mut rng2 = substream(3, &[tags::INIT]);
        other.register_matrix("w", 3, 4, &mut rng2);
        other.register_vector("b", 3);
        other.load_json(&json).unwrap();
        for (a, b) in store.ids().zip(other.ids()) {
            assert_eq!(store.value(a), other.value(b));
        }
    }

    #[test]
    fn checkpoint_shape_mismatch_rejected() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::zeros(2, 2));
        let json = store.to_json();

        let mut other = ParamStore::new();
        other.register("w", Tensor::zeros(3, 2));
        assert!(other.load_json(&json).is_err());
    }
}
