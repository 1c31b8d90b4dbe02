//! Neural Hawkes decoder: a continuous-time LSTM whose cell decays
//! exponentially toward a target cell between events, with
//! `λ_k(t) = softplus((W h(t))_k)` on the interpolated hidden state.
//!
//! State at the sequence start: the initial cell is `W0 z + b0` (or a free
//! parameter without the latent pathway) with output gate 1 and target
//! cell 0, so `h(0+) = tanh(c0)` matches the initial hidden state and the
//! interpolation is continuous at t = 0.

use rand::Rng;

use super::{DecoderState, StateExtras};
use crate::diffgraph::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::embeddings::MarkEmbedding;
use crate::error::ModelError;
use crate::events::Event;
use crate::nn::CtLstmCell;

pub struct NhpDecoder {
    pub k: usize,
    pub hidden: usize,
    pub latent: Option<usize>,
    marks: MarkEmbedding,
    cell: CtLstmCell,
    init: InitParams,
    /// Initial decay rate is `softplus` of this bias, elementwise > 0.
    b_delta0: ParamId,
    head_w: ParamId,
}

enum InitParams {
    Latent { w0: ParamId, b0: ParamId },
    Learned { c0: ParamId },
}

impl NhpDecoder {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        marks: MarkEmbedding,
        k: usize,
        hidden: usize,
        latent: Option<usize>,
        rng: &mut impl Rng,
    ) -> Self {
        let in_dim = marks.d_mark + latent.unwrap_or(0);
        let cell = CtLstmCell::register(store, &format!("{prefix}.ctlstm"), in_dim, hidden, rng);
        let init = match latent {
            Some(l) => InitParams::Latent {
                w0: store.register_matrix(format!("{prefix}.init.w0"), hidden, l, rng),
                b0: store.register_vector(format!("{prefix}.init.b0"), hidden),
            },
            None => InitParams::Learned {
                c0: store.register_vector(format!("{prefix}.init.c0"), hidden),
            },
        };
        let b_delta0 = store.register_vector(format!("{prefix}.init.b_decay"), hidden);
        let head_w = store.register_matrix(format!("{prefix}.head.w_mat"), k, hidden, rng);
        NhpDecoder { k, hidden, latent, marks, cell, init, b_delta0, head_w }
    }

    pub fn cell(&self) -> &CtLstmCell {
        &self.cell
    }

    fn input(&self, g: &mut Graph, store: &ParamStore, mark: usize, z: Option<NodeId>) -> NodeId {
        let emb = self
            .marks
            .embed(g, store, mark)
            .expect("mark validated at load time");
        match (self.latent, z) {
            (Some(_), Some(z)) => g.concat_rows(&[emb, z]),
            (None, None) => emb,
            _ => panic!("decoder latent pathway and z argument disagree"),
        }
    }

    pub(super) fn init_state(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        z: Option<NodeId>,
    ) -> DecoderState {
        let c0 = match (&self.init, z) {
            (InitParams::Latent { w0, b0 }, Some(z)) => {
                assert_eq!(
                    (self.latent.unwrap(), 1),
                    g.value(z).shape(),
                    "z shape mismatch"
                );
                let w = g.param(store, *w0);
                let b = g.param(store, *b0);
                let wz = g.matmul(w, z);
                g.add(wz, b)
            }
            (InitParams::Learned { c0 }, None) => g.param(store, *c0),
            _ => panic!("decoder latent pathway and z argument disagree"),
        };
        let h = g.tanh(c0);
        let cbar = g.constant(Tensor::zeros(self.hidden, 1));
        let bd = g.param(store, self.b_delta0);
        let delta = g.softplus(bd);
        let o = g.constant(Tensor::filled(self.hidden, 1, 1.0));
        DecoderState {
            h,
            t_last: 0.0,
            extras: StateExtras::Nhp { c: c0, cbar, delta, o },
        }
    }

    pub(super) fn update_state(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        s: &DecoderState,
        event: &Event,
        z: Option<NodeId>,
    ) -> Result<DecoderState, ModelError> {
        let StateExtras::Nhp { c, cbar, delta, o } = s.extras else {
            panic!("state does not belong to this decoder")
        };
        let (c_t, h_t) = self
            .cell
            .interpolate(g, c, cbar, delta, o, event.time - s.t_last);
        let x = self.input(g, store, event.mark, z);
        let step = self.cell.step(g, store, h_t, c_t, cbar, x);
        Ok(DecoderState {
            h: step.h,
            t_last: event.time,
            extras: StateExtras::Nhp {
                c: step.c,
                cbar: step.cbar,
                delta: step.delta,
                o: step.o,
            },
        })
    }

    pub(super) fn intensity(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        s: &DecoderState,
        t: f64,
    ) -> NodeId {
        let StateExtras::Nhp { c, cbar, delta, o } = s.extras else {
            panic!("state does not belong to this decoder")
        };
        let (_, h_t) = self.cell.interpolate(g, c, cbar, delta, o, t - s.t_last);
        let w = g.param(store, self.head_w);
        let pre = g.matmul(w, h_t);
        g.softplus(pre)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::DecoderDef;
    use crate::rng::{substream, tags};

    fn fixture(latent: Option<usize>) -> (DecoderDef, ParamStore) {
        let mut rng = substream(51, &[tags::INIT]);
        let mut store = ParamStore::new();
        let marks = MarkEmbedding::register(&mut store, "marks", 3, 4, &mut rng);
        let dec = NhpDecoder::register(&mut store, "decoder", marks, 3, 5, latent, &mut rng);
        (DecoderDef::Nhp(dec), store)
    }

    #[test]
    fn initial_hidden_state_is_tanh_of_cell() {
        let (dec, store) = fixture(Some(2));
        let mut g = Graph::new();
        let z = g.column(&[0.4, -1.0]);
        let s = dec.init_state(&mut g, &store, Some(z));
        let StateExtras::Nhp { c, .. } = s.extras else { unreachable!() };
        for (h, cv) in g.value(s.h).as_slice().iter().zip(g.value(c).as_slice()) {
            assert!((h - cv.tanh()).abs() < 1e-15);
        }
        assert_eq!(s.t_last, 0.0);
    }

    #[test]
    fn initial_decay_is_softplus_of_bias() {
        let (dec, store) = fixture(None);
        let mut g = Graph::new();
        let s = dec.init_state(&mut g, &store, None);
        let StateExtras::Nhp { delta, .. } = s.extras else { unreachable!() };
        // zero-initialized bias: softplus(0) = ln 2, strictly positive
        for d in g.value(delta).as_slice() {
            assert!((d - 2f64.ln()).abs() < 1e-15);
            assert!(*d > 0.0);
        }
    }

    #[test]
    fn intensity_positive_after_updates() {
        let (dec, store) = fixture(None);
        let mut g = Graph::new();
        let s = dec
            .roll_state(
                &mut g,
                &store,
                None,
                &[Event { time: 0.5, mark: 0 }, Event { time: 1.4, mark: 2 }],
            )
            .unwrap();
        for t in [1.5, 2.0, 10.0] {
            let rates = dec.intensity(&mut g, &store, &s, t).unwrap();
            assert!(g.value(rates).as_slice().iter().all(|&r| r > 0.0 && r.is_finite()));
        }
    }
}
