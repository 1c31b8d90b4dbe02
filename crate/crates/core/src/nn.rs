//! Recurrent cells used by the decoders and the sequence encoder.

use rand::Rng;

use crate::diffgraph::{Graph, NodeId, ParamId, ParamStore};

/// Gated recurrent unit.
///
/// With input `x` and previous state `h`:
/// ```text
/// u = sigmoid(W_z x + U_z h + b_z)        (update gate)
/// r = sigmoid(W_r x + U_r h + b_r)        (reset gate)
/// n = tanh(W_n x + U_n (r . h) + b_n)     (candidate)
/// h' = u . h + (1 - u) . n
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_n: ParamId,
    pub u_n: ParamId,
    pub b_n: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut mat = |suffix: &str, rows, cols| {
            store.register_matrix(format!("{prefix}.{suffix}"), rows, cols, rng)
        };
        let w_z = mat("w_z", hidden, in_dim);
        let u_z = mat("u_z", hidden, hidden);
        let w_r = mat("w_r", hidden, in_dim);
        let u_r = mat("u_r", hidden, hidden);
        let w_n = mat("w_n", hidden, in_dim);
        let u_n = mat("u_n", hidden, hidden);
        let b_z = store.register_vector(format!("{prefix}.b_z"), hidden);
        let b_r = store.register_vector(format!("{prefix}.b_r"), hidden);
        let b_n = store.register_vector(format!("{prefix}.b_n"), hidden);
        GruCell { w_z, u_z, b_z, w_r, u_r, b_r, w_n, u_n, b_n, in_dim, hidden }
    }

    fn gate(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        w: ParamId,
        u: ParamId,
        b: ParamId,
        x: NodeId,
        h: NodeId,
    ) -> NodeId {
        let wp = g.param(store, w);
        let up = g.param(store, u);
        let bp = g.param(store, b);
        let wx = g.matmul(wp, x);
        let uh = g.matmul(up, h);
        let s = g.add(wx, uh);
        g.add(s, bp)
    }

    pub fn step(&self, g: &mut Graph, store: &ParamStore, h: NodeId, x: NodeId) -> NodeId {
        let z_pre = self.gate(g, store, self.w_z, self.u_z, self.b_z, x, h);
        let u = g.sigmoid(z_pre);
        let r_pre = self.gate(g, store, self.w_r, self.u_r, self.b_r, x, h);
        let r = g.sigmoid(r_pre);

        let rh = g.mul(r, h);
        let wn = g.param(store, self.w_n);
        let un = g.param(store, self.u_n);
        let bn = g.param(store, self.b_n);
        let wx = g.matmul(wn, x);
        let urh = g.matmul(un, rh);
        let pre = g.add(wx, urh);
        let pre = g.add(pre, bn);
        let n = g.tanh(pre);

        let keep = g.mul(u, h);
        let neg_u = g.scale(u, -1.0);
        let one_minus_u = g.add_scalar(neg_u, 1.0);
        let take = g.mul(one_minus_u, n);
        g.add(keep, take)
    }
}

/// Continuous-time LSTM: seven gates driving a cell that decays
/// exponentially toward a target cell between events.
///
/// At an event observed at interpolated state `h(t)` with decayed cell
/// `c(t)`:
/// ```text
/// i = sigmoid(W_i x + U_i h(t) + b_i)          (input)
/// f = sigmoid(W_f x + U_f h(t) + b_f)          (forget)
/// zc = tanh(W_c x + U_c h(t) + b_c)            (candidate)
/// o = sigmoid(W_o x + U_o h(t) + b_o)          (output)
/// ib = sigmoid(W_ib x + U_ib h(t) + b_ib)      (target input)
/// fb = sigmoid(W_fb x + U_fb h(t) + b_fb)      (target forget)
/// d = softplus(W_d x + U_d h(t) + b_d)         (decay rate)
/// c' = f . c(t) + i . zc
/// cb' = fb . cb + ib . zc
/// ```
/// and between events `c(t) = cb + (c - cb) exp(-d (t - t_last))`,
/// `h(t) = o . tanh(c(t))`.
#[derive(Clone, Copy, Debug)]
pub struct CtLstmCell {
    gates: [(ParamId, ParamId, ParamId); 7],
    pub in_dim: usize,
    pub hidden: usize,
}

const CT_GATES: [&str; 7] = ["i", "f", "c", "o", "ib", "fb", "d"];

pub struct CtLstmStep {
    pub c: NodeId,
    pub cbar: NodeId,
    pub delta: NodeId,
    pub o: NodeId,
    /// `o . tanh(c')`, the hidden state in the limit t -> t_last from above.
    pub h: NodeId,
}

impl CtLstmCell {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let gates = CT_GATES.map(|name| {
            let w = store.register_matrix(format!("{prefix}.w_{name}"), hidden, in_dim, rng);
            let u = store.register_matrix(format!("{prefix}.u_{name}"), hidden, hidden, rng);
            let b = store.register_vector(format!("{prefix}.b_{name}"), hidden);
            (w, u, b)
        });
        CtLstmCell { gates, in_dim, hidden }
    }

    fn pre(&self, g: &mut Graph, store: &ParamStore, gate: usize, x: NodeId, h: NodeId) -> NodeId {
        let (w, u, b) = self.gates[gate];
        let wp = g.param(store, w);
        let up = g.param(store, u);
        let bp = g.param(store, b);
        let wx = g.matmul(wp, x);
        let uh = g.matmul(up, h);
        let s = g.add(wx, uh);
        g.add(s, bp)
    }

    /// One gate update given the interpolated hidden state `h_t` and
    /// decayed cell `c_t` at the event time.
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        h_t: NodeId,
        c_t: NodeId,
        cbar: NodeId,
        x: NodeId,
    ) -> CtLstmStep {
        let pre_i = self.pre(g, store, 0, x, h_t);
        let i = g.sigmoid(pre_i);
        let pre_f = self.pre(g, store, 1, x, h_t);
        let f = g.sigmoid(pre_f);
        let pre_c = self.pre(g, store, 2, x, h_t);
        let zc = g.tanh(pre_c);
        let pre_o = self.pre(g, store, 3, x, h_t);
        let o = g.sigmoid(pre_o);
        let pre_ib = self.pre(g, store, 4, x, h_t);
        let ib = g.sigmoid(pre_ib);
        let pre_fb = self.pre(g, store, 5, x, h_t);
        let fb = g.sigmoid(pre_fb);
        let pre_d = self.pre(g, store, 6, x, h_t);
        let delta = g.softplus(pre_d);

        let fc = g.mul(f, c_t);
        let iz = g.mul(i, zc);
        let c = g.add(fc, iz);
        let fbcb = g.mul(fb, cbar);
        let ibz = g.mul(ib, zc);
        let cbar_new = g.add(fbcb, ibz);

        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        CtLstmStep { c, cbar: cbar_new, delta, o, h }
    }

    /// Decays the cell from `t_last` to `t` and returns `(c(t), h(t))`.
    pub fn interpolate(
        &self,
        g: &mut Graph,
        c: NodeId,
        cbar: NodeId,
        delta: NodeId,
        o: NodeId,
        dt: f64,
    ) -> (NodeId, NodeId) {
        let diff = g.sub(c, cbar);
        let scaled = g.scale(delta, -dt);
        let decay = g.exp(scaled);
        let moved = g.mul(diff, decay);
        let c_t = g.add(cbar, moved);
        let tc = g.tanh(c_t);
        let h_t = g.mul(o, tc);
        (c_t, h_t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffgraph::Tensor;
    use crate::rng::{substream, tags};

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn gru_step_matches_scalar_reimplementation() {
        // hand-rolled scalar GRU on a size-2 hidden state
        let mut rng = substream(21, &[tags::INIT]);
        let mut store = ParamStore::new();
        let cell = GruCell::register(&mut store, "gru", 3, 2, &mut rng);

        let x = [0.4, -0.7, 1.1];
        let h = [0.2, -0.3];

        let mv = |id: ParamId, inp: &[f64]| -> Vec<f64> {
            let w = store.value(id);
            (0..w.rows())
                .map(|i| (0..w.cols()).map(|j| w.get(i, j) * inp[j]).sum())
                .collect()
        };
        let bval = |id: ParamId, i: usize| store.value(id).get(i, 0);

        let mut expect = [0.0f64; 2];
        let (wzx, uzh) = (mv(cell.w_z, &x), mv(cell.u_z, &h));
        let (wrx, urh) = (mv(cell.w_r, &x), mv(cell.u_r, &h));
        let wnx = mv(cell.w_n, &x);
        let mut rh = [0.0f64; 2];
        for i in 0..2 {
            let r = sig(wrx[i] + urh[i] + bval(cell.b_r, i));
            rh[i] = r * h[i];
        }
        let unrh = mv(cell.u_n, &rh);
        for i in 0..2 {
            let u = sig(wzx[i] + uzh[i] + bval(cell.b_z, i));
            let n = (wnx[i] + unrh[i] + bval(cell.b_n, i)).tanh();
            expect[i] = u * h[i] + (1.0 - u) * n;
        }

        let mut g = Graph::new();
        let xn = g.column(&x);
        let hn = g.column(&h);
        let out = cell.step(&mut g, &store, hn, xn);
        for i in 0..2 {
            assert!(
                (g.value(out).as_slice()[i] - expect[i]).abs() < 1e-14,
                "component {i}"
            );
        }
    }

    #[test]
    fn ct_lstm_no_decay_at_zero_gap() {
        let mut rng = substream(22, &[tags::INIT]);
        let mut store = ParamStore::new();
        let cell = CtLstmCell::register(&mut store, "ct", 2, 3, &mut rng);
        let mut g = Graph::new();
        let c = g.column(&[0.5, -0.2, 0.9]);
        let cbar = g.column(&[0.1, 0.1, 0.1]);
        let delta = g.column(&[1.0, 2.0, 3.0]);
        let o = g.constant(Tensor::filled(3, 1, 1.0));
        let (c_t, _) = cell.interpolate(&mut g, c, cbar, delta, o, 0.0);
        for (a, b) in g.value(c_t).as_slice().iter().zip(g.value(c).as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ct_lstm_decays_to_target() {
        let mut rng = substream(23, &[tags::INIT]);
        let mut store = ParamStore::new();
        let cell = CtLstmCell::register(&mut store, "ct", 2, 3, &mut rng);
        let mut g = Graph::new();
        let c = g.column(&[0.5, -0.2, 0.9]);
        let cbar = g.column(&[0.1, 0.2, 0.3]);
        let delta = g.column(&[1.0, 2.0, 3.0]);
        let o = g.constant(Tensor::filled(3, 1, 1.0));
        let (c_t, _) = cell.interpolate(&mut g, c, cbar, delta, o, 500.0);
        for i in 0..3 {
            assert!((g.value(c_t).as_slice()[i] - g.value(cbar).as_slice()[i]).abs() < 1e-12);
        }
    }
}
