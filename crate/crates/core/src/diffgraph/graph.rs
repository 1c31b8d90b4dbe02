//! Define-by-run reverse-mode tape.
//!
//! A [`Graph`] is rebuilt for every forward pass (sequences have variable
//! length, so there is nothing to reuse across passes). Nodes are appended
//! in evaluation order, which makes the index order a topological order:
//! `backward` walks indices in reverse and therefore visits each node at
//! most once. Each edge carries a closure computing the parent's local
//! gradient contribution from the child's output gradient.
//!
//! All arithmetic is in `f64`. Shape mismatches panic with the op name and
//! both shapes; they are bugs in model code, not runtime conditions.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

type GradFn = Box<dyn Fn(&[Tensor], &Tensor) -> Tensor>;

/// Reverse-mode tape over [`Tensor`] values.
#[derive(Default)]
pub struct Graph {
    values: Vec<Tensor>,
    grads: Vec<Option<Tensor>>,
    parents: Vec<Vec<(usize, GradFn)>>,
    param_of: Vec<Option<ParamId>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    /// Gradient accumulated at a node by the last `backward`. Nodes the
    /// root does not depend on report zeros.
    pub fn grad(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.values[id.0].shape();
                Tensor::zeros(r, c)
            }
        }
    }

    fn push(&mut self, value: Tensor, parents: Vec<(usize, GradFn)>) -> NodeId {
        let id = NodeId(self.values.len());
        self.values.push(value);
        self.grads.push(None);
        self.parents.push(parents);
        self.param_of.push(None);
        id
    }

    // ------------------------------------------------------------------
    // leaves
    // ------------------------------------------------------------------

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Vec::new())
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    pub fn column(&mut self, values: &[f64]) -> NodeId {
        self.constant(Tensor::column(values))
    }

    /// Binds a parameter's current value as a leaf node. Repeat bindings
    /// of the same parameter return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let n = self.push(store.value(id).clone(), Vec::new());
        self.param_of[n.0] = Some(id);
        self.param_nodes.insert(id, n);
        n
    }

    // ------------------------------------------------------------------
    // binary elementwise
    // ------------------------------------------------------------------

    fn assert_same_shape(&self, op: &str, a: NodeId, b: NodeId) {
        assert_eq!(
            self.values[a.0].shape(),
            self.values[b.0].shape(),
            "{op}: shape mismatch {:?} vs {:?}",
            self.values[a.0].shape(),
            self.values[b.0].shape()
        );
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_shape("add", a, b);
        let v = self.values[a.0].zip_map(&self.values[b.0], |x, y| x + y);
        self.push(
            v,
            vec![
                (a.0, Box::new(|_: &[Tensor], g: &Tensor| g.clone()) as GradFn),
                (b.0, Box::new(|_: &[Tensor], g: &Tensor| g.clone())),
            ],
        )
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_shape("sub", a, b);
        let v = self.values[a.0].zip_map(&self.values[b.0], |x, y| x - y);
        self.push(
            v,
            vec![
                (a.0, Box::new(|_: &[Tensor], g: &Tensor| g.clone()) as GradFn),
                (b.0, Box::new(|_: &[Tensor], g: &Tensor| g.map(|x| -x))),
            ],
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_shape("mul", a, b);
        let v = self.values[a.0].zip_map(&self.values[b.0], |x, y| x * y);
        let (ai, bi) = (a.0, b.0);
        self.push(
            v,
            vec![
                (ai, Box::new(move |vals: &[Tensor], g: &Tensor| g.zip_map(&vals[bi], |gv, bv| gv * bv)) as GradFn),
                (bi, Box::new(move |vals: &[Tensor], g: &Tensor| g.zip_map(&vals[ai], |gv, av| gv * av))),
            ],
        )
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_shape("div", a, b);
        let v = self.values[a.0].zip_map(&self.values[b.0], |x, y| x / y);
        let (ai, bi) = (a.0, b.0);
        self.push(
            v,
            vec![
                (ai, Box::new(move |vals: &[Tensor], g: &Tensor| g.zip_map(&vals[bi], |gv, bv| gv / bv)) as GradFn),
                (
                    bi,
                    Box::new(move |vals: &[Tensor], g: &Tensor| {
                        let num = g.zip_map(&vals[ai], |gv, av| gv * av);
                        num.zip_map(&vals[bi], |n, bv| -n / (bv * bv))
                    }),
                ),
            ],
        )
    }

    // ------------------------------------------------------------------
    // linear algebra / structure
    // ------------------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, ac) = self.values[a.0].shape();
        let (br, bc) = self.values[b.0].shape();
        assert_eq!(ac, br, "matmul: shape mismatch ({ar}, {ac}) x ({br}, {bc})");
        let v = self.values[a.0].matmul(&self.values[b.0]);
        let (ai, bi) = (a.0, b.0);
        self.push(
            v,
            vec![
                (ai, Box::new(move |vals: &[Tensor], g: &Tensor| g.matmul(&vals[bi].transposed())) as GradFn),
                (bi, Box::new(move |vals: &[Tensor], g: &Tensor| vals[ai].transposed().matmul(g))),
            ],
        )
    }

    /// Stacks column vectors vertically.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_rows: empty input");
        let cols = self.values[parts[0].0].cols();
        let mut data = Vec::new();
        let mut edges: Vec<(usize, GradFn)> = Vec::with_capacity(parts.len());
        let mut offset = 0usize;
        for &p in parts {
            let t = &self.values[p.0];
            assert_eq!(
                t.cols(),
                cols,
                "concat_rows: column mismatch {} vs {cols}",
                t.cols()
            );
            data.extend_from_slice(t.as_slice());
            let rows = t.rows();
            let off = offset;
            edges.push((
                p.0,
                Box::new(move |_: &[Tensor], g: &Tensor| {
                    let gc = g.cols();
                    let mut out = Tensor::zeros(rows, gc);
                    out.as_mut_slice()
                        .copy_from_slice(&g.as_slice()[off * gc..(off + rows) * gc]);
                    out
                }),
            ));
            offset += rows;
        }
        let v = Tensor::new(offset, cols, data);
        self.push(v, edges)
    }

    /// Rows `start .. start + len` of a node.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let (rows, cols) = self.values[a.0].shape();
        assert!(
            start + len <= rows,
            "slice_rows: range {start}..{} out of {rows} rows",
            start + len
        );
        let v = Tensor::new(
            len,
            cols,
            self.values[a.0].as_slice()[start * cols..(start + len) * cols].to_vec(),
        );
        self.push(
            v,
            vec![(
                a.0,
                Box::new(move |_: &[Tensor], g: &Tensor| {
                    let mut out = Tensor::zeros(rows, cols);
                    out.as_mut_slice()[start * cols..(start + len) * cols]
                        .copy_from_slice(g.as_slice());
                    out
                }),
            )],
        )
    }

    /// Row `k` of a `(K, d)` table as a `(d, 1)` column. Gradient flows to
    /// that row only.
    pub fn table_row(&mut self, table: NodeId, k: usize) -> NodeId {
        let (rows, cols) = self.values[table.0].shape();
        assert!(k < rows, "table_row: row {k} out of {rows}");
        let v = Tensor::new(
            cols,
            1,
            self.values[table.0].as_slice()[k * cols..(k + 1) * cols].to_vec(),
        );
        self.push(
            v,
            vec![(
                table.0,
                Box::new(move |_: &[Tensor], g: &Tensor| {
                    let mut out = Tensor::zeros(rows, cols);
                    out.as_mut_slice()[k * cols..(k + 1) * cols].copy_from_slice(g.as_slice());
                    out
                }),
            )],
        )
    }

    // ------------------------------------------------------------------
    // unary
    // ------------------------------------------------------------------

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].map(|x| -x);
        self.push(v, vec![(a.0, Box::new(|_: &[Tensor], g: &Tensor| g.map(|x| -x)) as GradFn)])
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].map(f64::tanh);
        let out = self.values.len();
        self.push(
            v,
            vec![(
                a.0,
                Box::new(move |vals: &[Tensor], g: &Tensor| {
                    g.zip_map(&vals[out], |gv, y| gv * (1.0 - y * y))
                }),
            )],
        )
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].map(sigmoid_scalar);
        let out = self.values.len();
        self.push(
            v,
            vec![(
                a.0,
                Box::new(move |vals: &[Tensor], g: &Tensor| {
                    g.zip_map(&vals[out], |gv, y| gv * y * (1.0 - y))
                }),
            )],
        )
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].map(f64::exp);
        let out = self.values.len();
        self.push(
            v,
            vec![(
                a.0,
                Box::new(move |vals: &[Tensor], g: &Tensor| g.zip_map(&vals[out], |gv, y| gv * y)),
            )],
        )
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].map(f64::ln);
        let ai = a.0;
        self.push(
            v,
            vec![(
                ai,
                Box::new(move |vals: &[Tensor], g: &Tensor| g.zip_map(&vals[ai], |gv, x| gv / x)),
            )],
        )
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a.0].map(softplus_scalar);
        let ai = a.0;
        self.push(
            v,
            vec![(
                ai,
                Box::new(move |vals: &[Tensor], g: &Tensor| {
                    g.zip_map(&vals[ai], |gv, x| gv * sigmoid_scalar(x))
                }),
            )],
        )
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.values[a.0].map(|x| c * x);
        self.push(
            v,
            vec![(a.0, Box::new(move |_: &[Tensor], g: &Tensor| g.map(|x| c * x)) as GradFn)],
        )
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.values[a.0].map(|x| x + c);
        self.push(v, vec![(a.0, Box::new(|_: &[Tensor], g: &Tensor| g.clone()) as GradFn)])
    }

    /// `min(x, cap)` elementwise; gradient is blocked where the input is
    /// clamped. Returns the node and the number of clamped entries.
    pub fn clamp_max(&mut self, a: NodeId, cap: f64) -> (NodeId, usize) {
        let clamped = self.values[a.0]
            .as_slice()
            .iter()
            .filter(|&&x| x > cap)
            .count();
        let v = self.values[a.0].map(|x| x.min(cap));
        let ai = a.0;
        let id = self.push(
            v,
            vec![(
                ai,
                Box::new(move |vals: &[Tensor], g: &Tensor| {
                    g.zip_map(&vals[ai], |gv, x| if x <= cap { gv } else { 0.0 })
                }),
            )],
        );
        (id, clamped)
    }

    // ------------------------------------------------------------------
    // reductions and broadcasts
    // ------------------------------------------------------------------

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.values[a.0].shape();
        let v = Tensor::scalar(self.values[a.0].sum());
        self.push(
            v,
            vec![(
                a.0,
                Box::new(move |_: &[Tensor], g: &Tensor| Tensor::filled(r, c, g.scalar_value())),
            )],
        )
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.values[a.0].len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let m = self.mul(a, b);
        self.sum(m)
    }

    /// Multiplies every entry of `a` by the scalar node `s`.
    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> NodeId {
        assert!(
            self.values[s.0].is_scalar(),
            "scale_by: scale must be scalar, got {:?}",
            self.values[s.0].shape()
        );
        let sv = self.values[s.0].scalar_value();
        let v = self.values[a.0].map(|x| sv * x);
        let (ai, si) = (a.0, s.0);
        self.push(
            v,
            vec![
                (
                    ai,
                    Box::new(move |vals: &[Tensor], g: &Tensor| {
                        let s = vals[si].scalar_value();
                        g.map(|x| s * x)
                    }) as GradFn,
                ),
                (
                    si,
                    Box::new(move |vals: &[Tensor], g: &Tensor| {
                        Tensor::scalar(
                            g.as_slice()
                                .iter()
                                .zip(vals[ai].as_slice())
                                .map(|(gv, av)| gv * av)
                                .sum(),
                        )
                    }),
                ),
            ],
        )
    }

    /// Sums a list of scalar nodes. Summation follows the given order, so
    /// callers control the floating-point association.
    pub fn sum_scalars(&mut self, terms: &[NodeId]) -> NodeId {
        assert!(!terms.is_empty(), "sum_scalars: empty input");
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t);
        }
        acc
    }

    // ------------------------------------------------------------------
    // backward
    // ------------------------------------------------------------------

    /// Backpropagates from a scalar root with seed gradient 1. Returns the
    /// number of nodes visited (each reachable node exactly once).
    pub fn backward(&mut self, root: NodeId) -> usize {
        self.backward_scaled(root, 1.0)
    }

    /// Backpropagates with an arbitrary seed gradient (used to fold batch
    /// averaging into the seed). Node gradients are reset first; parameter
    /// accumulation happens in [`Graph::flush_param_grads`].
    pub fn backward_scaled(&mut self, root: NodeId, seed: f64) -> usize {
        assert!(
            self.values[root.0].is_scalar(),
            "backward: root must be scalar, got shape {:?}",
            self.values[root.0].shape()
        );
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[root.0] = Some(Tensor::scalar(seed));
        let mut visited = 0usize;
        for id in (0..=root.0).rev() {
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            visited += 1;
            for (pid, f) in &self.parents[id] {
                let contrib = f(&self.values, &g);
                match &mut self.grads[*pid] {
                    Some(pg) => pg.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            self.grads[id] = Some(g);
        }
        visited
    }

    /// Adds the gradients of all bound parameter leaves into the store.
    pub fn flush_param_grads(&self, store: &mut ParamStore) {
        for (i, p) in self.param_of.iter().enumerate() {
            if let (Some(pid), Some(g)) = (p, &self.grads[i]) {
                store.add_to_grad(*pid, g);
            }
        }
    }

    /// Convenience: backward then accumulate parameter gradients.
    pub fn backward_params(&mut self, root: NodeId, seed: f64, store: &mut ParamStore) -> usize {
        let visited = self.backward_scaled(root, seed);
        self.flush_param_grads(store);
        visited
    }

    /// Collects parameter gradients into a sparse per-parameter vector
    /// without touching the store (for deterministic parallel reduction).
    pub fn param_grads(&self, n_params: usize) -> Vec<Option<Tensor>> {
        let mut out = vec![None; n_params];
        for (i, p) in self.param_of.iter().enumerate() {
            if let (Some(pid), Some(g)) = (p, &self.grads[i]) {
                match &mut out[pid.index()] {
                    Some(acc) => {
                        let acc: &mut Tensor = acc;
                        acc.add_assign(g);
                    }
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.iter_mut() {
            *g = None;
        }
    }
}
