//! Learnable mark embeddings and the fixed sinusoidal embedding of
//! inter-event gaps, shared by encoder and decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffgraph::{Graph, NodeId, ParamId, ParamStore};
use crate::error::ModelError;

/// A `K x d_mark` table of learnable mark vectors.
#[derive(Clone, Copy, Debug)]
pub struct MarkEmbedding {
    pub table: ParamId,
    pub k: usize,
    pub d_mark: usize,
}

impl MarkEmbedding {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        k: usize,
        d_mark: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let table = store.register_matrix(name, k, d_mark, rng);
        MarkEmbedding { table, k, d_mark }
    }

    /// Row `mark` of the table as a differentiable `(d_mark, 1)` node.
    pub fn embed(&self, g: &mut Graph, store: &ParamStore, mark: usize) -> Result<NodeId, ModelError> {
        if mark >= self.k {
            return Err(ModelError::MarkOutOfRange { mark, k: self.k });
        }
        let table = g.param(store, self.table);
        Ok(g.table_row(table, mark))
    }
}

/// The fixed continuous positional embedding of a time gap.
///
/// `embed(t, t_prev)` maps `dt = t - t_prev` to
/// `[sin(a_0 dt), .., sin(a_{m-1} dt), cos(a_0 dt), .., cos(a_{m-1} dt)]`
/// with `m = d_time / 2` frequencies `a_j = exp(-j ln(t_max) / d_time)`.
/// Deterministic, parameter-free.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TemporalEmbeddingSpec {
    pub d_time: usize,
    pub t_max: f64,
    alpha: Vec<f64>,
}

impl TemporalEmbeddingSpec {
    /// `t_max` is floored at 1 so the frequency ladder stays non-increasing.
    pub fn new(d_time: usize, t_max: f64) -> Self {
        assert!(d_time > 0 && d_time % 2 == 0, "d_time must be even and positive, got {d_time}");
        let t_max = t_max.max(1.0);
        let m = d_time / 2;
        let alpha = (0..m)
            .map(|j| (-(j as f64) * t_max.ln() / d_time as f64).exp())
            .collect();
        TemporalEmbeddingSpec { d_time, t_max, alpha }
    }

    /// Builds the spec from a training split, taking `t_max` as the
    /// largest gap between consecutive events.
    pub fn from_train_split(d_time: usize, train: &crate::events::Dataset) -> Self {
        Self::new(d_time, train.max_consecutive_gap())
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Embedding values for time `t` anchored at the previous event time
    /// `t_prev` (0 at the start of a sequence).
    pub fn embed(&self, t: f64, t_prev: f64) -> Result<Vec<f64>, ModelError> {
        if t < t_prev {
            return Err(ModelError::NonCausalQuery { t, t_last: t_prev });
        }
        let dt = t - t_prev;
        let m = self.d_time / 2;
        let mut out = Vec::with_capacity(self.d_time);
        for j in 0..m {
            out.push((self.alpha[j] * dt).sin());
        }
        for j in 0..m {
            out.push((self.alpha[j] * dt).cos());
        }
        Ok(out)
    }

    /// Embedding as a constant graph node.
    pub fn embed_node(&self, g: &mut Graph, t: f64, t_prev: f64) -> Result<NodeId, ModelError> {
        Ok(g.column(&self.embed(t, t_prev)?))
    }
}
