//! Recurrent decoder with a piecewise exponentially decaying rate:
//! `λ_k(t) = exp((W h_i + b)_k + w_k (t - t_i))` on each inter-event
//! interval, with a GRU updating `h_i` per event. The decay `w` is a
//! per-mark vector. Exponents are clamped at +30 before exponentiation so
//! early-training blow-ups stay finite and observable via a counter.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::{DecoderState, StateExtras};
use crate::diffgraph::{Graph, NodeId, ParamId, ParamStore};
use crate::embeddings::MarkEmbedding;
use crate::error::ModelError;
use crate::events::Event;
use crate::nn::GruCell;

const EXPONENT_CAP: f64 = 30.0;

pub struct RmtppDecoder {
    pub k: usize,
    pub hidden: usize,
    pub latent: Option<usize>,
    marks: MarkEmbedding,
    gru: GruCell,
    init: InitParams,
    head_w: ParamId,
    head_decay: ParamId,
    head_bias: ParamId,
    clamp_events: AtomicU64,
}

enum InitParams {
    /// MoE pathway: `h0 = tanh(W0 z + b0)`.
    Latent { w0: ParamId, b0: ParamId },
    /// Decoder-only: `h0` is a free parameter.
    Learned { h0: ParamId },
}

impl RmtppDecoder {
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
        let gru = GruCell::register(store, &format!("{prefix}.gru"), in_dim, hidden, rng);
        let init = match latent {
            Some(l) => InitParams::Latent {
                w0: store.register_matrix(format!("{prefix}.init.w0"), hidden, l, rng),
                b0: store.register_vector(format!("{prefix}.init.b0"), hidden),
            },
            None => InitParams::Learned {
                h0: store.register_vector(format!("{prefix}.init.h0"), hidden),
            },
        };
        let head_w = store.register_matrix(format!("{prefix}.head.w_mat"), k, hidden, rng);
        let head_decay = store.register_vector(format!("{prefix}.head.decay"), k);
        let head_bias = store.register_vector(format!("{prefix}.head.bias"), k);
        RmtppDecoder {
            k,
            hidden,
            latent,
            marks,
            gru,
            init,
            head_w,
            head_decay,
            head_bias,
            clamp_events: AtomicU64::new(0),
        }
    }

    pub fn clamp_events(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    fn head(&self, g: &mut Graph, store: &ParamStore, h: NodeId) -> NodeId {
        let w = g.param(store, self.head_w);
        let b = g.param(store, self.head_bias);
        let wh = g.matmul(w, h);
        g.add(wh, b)
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
        let h = match (&self.init, z) {
            (InitParams::Latent { w0, b0 }, Some(z)) => {
                assert_eq!(
                    (self.latent.unwrap(), 1),
                    g.value(z).shape(),
                    "z shape mismatch"
                );
                let w = g.param(store, *w0);
                let b = g.param(store, *b0);
                let wz = g.matmul(w, z);
                let pre = g.add(wz, b);
                g.tanh(pre)
            }
            (InitParams::Learned { h0 }, None) => g.param(store, *h0),
            _ => panic!("decoder latent pathway and z argument disagree"),
        };
        let head = self.head(g, store, h);
        DecoderState { h, t_last: 0.0, extras: StateExtras::Rmtpp { head } }
    }

    pub(super) fn update_state(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        s: &DecoderState,
        event: &Event,
        z: Option<NodeId>,
    ) -> Result<DecoderState, ModelError> {
        let x = self.input(g, store, event.mark, z);
        let h = self.gru.step(g, store, s.h, x);
        let head = self.head(g, store, h);
        Ok(DecoderState { h, t_last: event.time, extras: StateExtras::Rmtpp { head } })
    }

    pub(super) fn intensity(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        s: &DecoderState,
        t: f64,
    ) -> NodeId {
        let StateExtras::Rmtpp { head } = s.extras else {
            panic!("state does not belong to this decoder")
        };
        let decay = g.param(store, self.head_decay);
        let dt = t - s.t_last;
        let drift = g.scale(decay, dt);
        let exponent = g.add(head, drift);
        let (capped, clamped) = g.clamp_max(exponent, EXPONENT_CAP);
        if clamped > 0 {
            self.clamp_events.fetch_add(clamped as u64, Ordering::Relaxed);
        }
        g.exp(capped)
    }

    /// Exact `∫_a^b Σ_k λ_k(τ) dτ` for the current interval, from node
    /// values (not differentiable). The `w_k -> 0` limit is handled via
    /// `expm1`. Serves as a testing oracle for the Monte-Carlo estimator.
    pub fn compensator_closed_form(
        &self,
        g: &Graph,
        store: &ParamStore,
        s: &DecoderState,
        a: f64,
        b: f64,
    ) -> Result<f64, ModelError> {
        let StateExtras::Rmtpp { head } = s.extras else {
            panic!("state does not belong to this decoder")
        };
        if !(s.t_last <= a && a < b) {
            return Err(ModelError::Invalid(format!(
                "compensator interval ({a}, {b}) must follow t_last={}",
                s.t_last
            )));
        }
        let head = g.value(head).as_slice();
        let w = store.value(self.head_decay).as_slice();
        let len = b - a;
        let mut total = 0.0;
        for (c_k, w_k) in head.iter().zip(w) {
            // exp(c_k + w_k (a - t_last)) * (b - a) * phi(w_k (b - a)),
            // phi(x) = (e^x - 1) / x, phi(0) = 1
            let start = (c_k + w_k * (a - s.t_last)).exp();
            let x = w_k * len;
            let phi = if x.abs() < 1e-12 { 1.0 } else { x.exp_m1() / x };
            total += start * len * phi;
        }
        Ok(total)
    }
}
