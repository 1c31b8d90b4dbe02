//! Neural MTPP decoders behind a shared interface: per-event state update
//! and intensity queries `λ_k(t | history, z)` for any `t` between events.

mod nhp;
mod rmtpp;

pub use nhp::NhpDecoder;
pub use rmtpp::RmtppDecoder;

use crate::diffgraph::{Graph, NodeId, ParamStore};
use crate::error::ModelError;
use crate::events::Event;

/// Everything needed to evaluate `λ(t)` on the interval after the last
/// conditioned event. A pure value: two states with identical fields give
/// identical intensities.
#[derive(Clone, Debug)]
pub struct DecoderState {
    /// Hidden state after the last conditioned event.
    pub h: NodeId,
    /// Time of the last conditioned event (0 at the sequence start).
    pub t_last: f64,
    pub extras: StateExtras,
}

/// Model-specific interpolation state.
#[derive(Clone, Debug)]
pub enum StateExtras {
    /// Cached intensity head `W h + b`, a `(K, 1)` node; the decay term is
    /// added per query.
    Rmtpp { head: NodeId },
    /// Continuous-time LSTM cell, target cell, decay rate, and output gate.
    Nhp { c: NodeId, cbar: NodeId, delta: NodeId, o: NodeId },
}

/// The two decoder families.
pub enum DecoderDef {
    Rmtpp(RmtppDecoder),
    Nhp(NhpDecoder),
}

impl DecoderDef {
    pub fn k(&self) -> usize {
        match self {
            DecoderDef::Rmtpp(d) => d.k,
            DecoderDef::Nhp(d) => d.k,
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            DecoderDef::Rmtpp(d) => d.hidden,
            DecoderDef::Nhp(d) => d.hidden,
        }
    }

    /// Number of intensity-exponent clamp events since construction
    /// (RMTPP only; 0 for NHP).
    pub fn clamp_events(&self) -> u64 {
        match self {
            DecoderDef::Rmtpp(d) => d.clamp_events(),
            DecoderDef::Nhp(_) => 0,
        }
    }

    /// State before any event. `z` must be `Some` exactly when the decoder
    /// was built with a latent pathway.
    pub fn init_state(&self, g: &mut Graph, store: &ParamStore, z: Option<NodeId>) -> DecoderState {
        match self {
            DecoderDef::Rmtpp(d) => d.init_state(g, store, z),
            DecoderDef::Nhp(d) => d.init_state(g, store, z),
        }
    }

    /// Conditions the state on one more event.
    pub fn update_state(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        s: &DecoderState,
        event: &Event,
        z: Option<NodeId>,
    ) -> Result<DecoderState, ModelError> {
        if event.time <= s.t_last {
            return Err(ModelError::NonIncreasingTime { t: event.time, t_last: s.t_last });
        }
        match self {
            DecoderDef::Rmtpp(d) => d.update_state(g, store, s, event, z),
            DecoderDef::Nhp(d) => d.update_state(g, store, s, event, z),
        }
    }

    /// Positive per-mark rates at `t`, strictly after the last conditioned
    /// event. Non-finite rates signal parameter blow-up.
    pub fn intensity(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        s: &DecoderState,
        t: f64,
    ) -> Result<NodeId, ModelError> {
        if t <= s.t_last {
            return Err(ModelError::NonCausalQuery { t, t_last: s.t_last });
        }
        let rates = match self {
            DecoderDef::Rmtpp(d) => d.intensity(g, store, s, t),
            DecoderDef::Nhp(d) => d.intensity(g, store, s, t),
        };
        if !g.value(rates).all_finite() {
            return Err(ModelError::NonFiniteIntensity { clamp_events: self.clamp_events() });
        }
        Ok(rates)
    }

    /// Rolls a fresh state through `events` in order.
    pub fn roll_state(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        z: Option<NodeId>,
        events: &[Event],
    ) -> Result<DecoderState, ModelError> {
        let mut s = self.init_state(g, store, z);
        for e in events {
            s = self.update_state(g, store, &s, e, z)?;
        }
        Ok(s)
    }
}

/// `Σ_k λ_k(t)` as a scalar node.
pub fn total_intensity(g: &mut Graph, rates: NodeId) -> NodeId {
    g.sum(rates)
}

/// `λ_k / Σ λ` as a probability vector node.
pub fn mark_distribution(g: &mut Graph, rates: NodeId) -> NodeId {
    let total = g.sum(rates);
    let one = g.scalar(1.0);
    let inv = g.div(one, total);
    g.scale_by(rates, inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffgraph::Tensor;
    use crate::embeddings::MarkEmbedding;
    use crate::rng::{substream, tags};

    fn rmtpp_fixture(k: usize, hidden: usize, latent: Option<usize>) -> (DecoderDef, ParamStore) {
        let mut rng = substream(31, &[tags::INIT]);
        let mut store = ParamStore::new();
        let marks = MarkEmbedding::register(&mut store, "marks", k, 4, &mut rng);
        let dec = RmtppDecoder::register(&mut store, "decoder", marks, k, hidden, latent, &mut rng);
        (DecoderDef::Rmtpp(dec), store)
    }

    fn nhp_fixture(k: usize, hidden: usize, latent: Option<usize>) -> (DecoderDef, ParamStore) {
        let mut rng = substream(32, &[tags::INIT]);
        let mut store = ParamStore::new();
        let marks = MarkEmbedding::register(&mut store, "marks", k, 4, &mut rng);
        let dec = NhpDecoder::register(&mut store, "decoder", marks, k, hidden, latent, &mut rng);
        (DecoderDef::Nhp(dec), store)
    }

    #[test]
    fn init_state_zero_weights_gives_zero_h() {
        let (dec, mut store) = rmtpp_fixture(3, 4, Some(2));
        for name in ["decoder.init.w0", "decoder.init.b0"] {
            let id = store.lookup(name).unwrap();
            store.value_mut(id).fill(0.0);
        }
        let mut g = Graph::new();
        let z = g.column(&[0.7, -0.3]);
        let s = dec.init_state(&mut g, &store, Some(z));
        assert_eq!(g.value(s.h).as_slice(), &[0.0; 4]);
        assert_eq!(s.t_last, 0.0);
    }

    #[test]
    fn init_state_ignores_w0_when_z_zero() {
        let (dec, mut store) = rmtpp_fixture(3, 4, Some(2));
        let b0 = store.lookup("decoder.init.b0").unwrap();
        store.value_mut(b0).fill(0.4);
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(2, 1));
        let s = dec.init_state(&mut g, &store, Some(z));
        for v in g.value(s.h).as_slice() {
            assert!((v - 0.4f64.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn init_state_grad_wrt_z_matches_fd() {
        let (dec, store) = rmtpp_fixture(3, 4, Some(2));
        let z0 = [0.3, -0.5];
        let eval = |z: &[f64]| -> f64 {
            let mut g = Graph::new();
            let zn = g.column(z);
            let s = dec.init_state(&mut g, &store, Some(zn));
            let total = g.sum(s.h);
            g.value(total).scalar_value()
        };
        let mut g = Graph::new();
        let zn = g.column(&z0);
        let s = dec.init_state(&mut g, &store, Some(zn));
        let total = g.sum(s.h);
        g.backward(total);
        let analytic = g.grad(zn);
        for i in 0..2 {
            let h = 1e-5;
            let mut zp = z0;
            zp[i] += h;
            let mut zm = z0;
            zm[i] -= h;
            let fd = (eval(&zp) - eval(&zm)) / (2.0 * h);
            let rel = (analytic.as_slice()[i] - fd).abs() / (fd.abs() + 1e-8);
            assert!(rel < 1e-4, "z[{i}]: {} vs {fd}", analytic.as_slice()[i]);
        }
    }

    #[test]
    fn rmtpp_zero_head_gives_unit_rates() {
        let (dec, mut store) = rmtpp_fixture(4, 3, None);
        for name in ["decoder.head.w_mat", "decoder.head.decay", "decoder.head.bias"] {
            let id = store.lookup(name).unwrap();
            store.value_mut(id).fill(0.0);
        }
        let mut g = Graph::new();
        let s = dec.init_state(&mut g, &store, None);
        let rates = dec.intensity(&mut g, &store, &s, 0.8).unwrap();
        for v in g.value(rates).as_slice() {
            assert!((v - 1.0).abs() < 1e-15);
        }
        let total = total_intensity(&mut g, rates);
        assert!((g.value(total).scalar_value() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn rmtpp_negative_decay_is_monotone_decreasing() {
        let (dec, mut store) = rmtpp_fixture(2, 3, None);
        let decay = store.lookup("decoder.head.decay").unwrap();
        store.value_mut(decay).fill(-0.7);
        let mut g = Graph::new();
        let s = dec.init_state(&mut g, &store, None);
        let mut prev = f64::INFINITY;
        for t in [0.1, 0.5, 1.5, 4.0] {
            let rates = dec.intensity(&mut g, &store, &s, t).unwrap();
            let v = g.value(rates).as_slice()[0];
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn rmtpp_log_intensity_is_affine_in_t() {
        // three-point collinearity within one inter-event interval
        let (dec, store) = rmtpp_fixture(3, 4, None);
        let mut g = Graph::new();
        let s = dec.init_state(&mut g, &store, None);
        let at = |g: &mut Graph, t: f64| {
            let r = dec.intensity(g, &store, &s, t).unwrap();
            g.value(r).as_slice()[1].ln()
        };
        let (t1, t2, t3) = (0.2, 0.9, 1.6);
        let (l1, l2, l3) = (at(&mut g, t1), at(&mut g, t2), at(&mut g, t3));
        let slope_a = (l2 - l1) / (t2 - t1);
        let slope_b = (l3 - l2) / (t3 - t2);
        assert!((slope_a - slope_b).abs() < 1e-10);
    }

    #[test]
    fn mark_distribution_sums_to_one() {
        let (dec, store) = rmtpp_fixture(5, 4, None);
        let mut g = Graph::new();
        let s = dec.init_state(&mut g, &store, None);
        let rates = dec.intensity(&mut g, &store, &s, 0.3).unwrap();
        let dist = mark_distribution(&mut g, rates);
        let total: f64 = g.value(dist).as_slice().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(g.value(dist).as_slice().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn uniform_rates_give_uniform_marks() {
        let (dec, mut store) = rmtpp_fixture(4, 3, None);
        for name in ["decoder.head.w_mat", "decoder.head.decay", "decoder.head.bias"] {
            let id = store.lookup(name).unwrap();
            store.value_mut(id).fill(0.0);
        }
        let mut g = Graph::new();
        let s = dec.init_state(&mut g, &store, None);
        let rates = dec.intensity(&mut g, &store, &s, 1.0).unwrap();
        let dist = mark_distribution(&mut g, rates);
        for p in g.value(dist).as_slice() {
            assert!((p - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn query_at_or_before_t_last_errors() {
        let (dec, store) = rmtpp_fixture(3, 4, None);
        let mut g = Graph::new();
        let mut s = dec.init_state(&mut g, &store, None);
        s = dec
            .update_state(&mut g, &store, &s, &Event { time: 1.0, mark: 1 }, None)
            .unwrap();
        assert!(dec.intensity(&mut g, &store, &s, 1.0).is_err());
        assert!(dec.intensity(&mut g, &store, &s, 0.5).is_err());
        assert!(dec.intensity(&mut g, &store, &s, 1.01).is_ok());
    }

    #[test]
    fn update_requires_increasing_time() {
        let (dec, store) = rmtpp_fixture(3, 4, None);
        let mut g = Graph::new();
        let s = dec.init_state(&mut g, &store, None);
        let s = dec
            .update_state(&mut g, &store, &s, &Event { time: 0.5, mark: 0 }, None)
            .unwrap();
        assert!(dec
            .update_state(&mut g, &store, &s, &Event { time: 0.5, mark: 1 }, None)
            .is_err());
    }

    #[test]
    fn identical_states_give_identical_intensities() {
        for (dec, store) in [nhp_fixture(3, 4, None), rmtpp_fixture(3, 4, None)] {
            let mut g = Graph::new();
            let s = dec
                .roll_state(&mut g, &store, None, &[Event { time: 0.4, mark: 2 }])
                .unwrap();
            let clone = s.clone();
            for t in [0.5, 1.0, 2.5] {
                let a = dec.intensity(&mut g, &store, &s, t).unwrap();
                let b = dec.intensity(&mut g, &store, &clone, t).unwrap();
                assert_eq!(g.value(a).as_slice(), g.value(b).as_slice());
            }
        }
    }

    #[test]
    fn nhp_interpolation_is_continuous_at_events() {
        let (dec, store) = nhp_fixture(3, 4, Some(2));
        let mut g = Graph::new();
        let z = g.column(&[0.4, -0.2]);
        let mut s = dec.init_state(&mut g, &store, Some(z));
        // continuity at t = 0 for the initial state as well
        for event in [Event { time: 0.7, mark: 1 }, Event { time: 1.3, mark: 0 }] {
            let StateExtras::Nhp { c, cbar, delta, o } = s.extras.clone() else {
                unreachable!()
            };
            let DecoderDef::Nhp(inner) = &dec else { unreachable!() };
            let (_, h_eps) = inner.cell().interpolate(&mut g, c, cbar, delta, o, 1e-12);
            for (a, b) in g.value(h_eps).as_slice().iter().zip(g.value(s.h).as_slice()) {
                assert!((a - b).abs() < 1e-10);
            }
            s = dec.update_state(&mut g, &store, &s, &event, Some(z)).unwrap();
        }
    }

    #[test]
    fn nhp_rates_decay_toward_baseline() {
        // with cbar=0 and o=1 the cell decays to 0, so rates approach
        // softplus(0 matmul) = softplus(0)
        let (dec, store) = nhp_fixture(2, 3, None);
        let DecoderDef::Nhp(inner) = &dec else { unreachable!() };
        let mut g = Graph::new();
        let c = g.column(&[0.8, -0.5, 0.3]);
        let cbar = g.constant(Tensor::zeros(3, 1));
        let delta = g.constant(Tensor::filled(3, 1, 2.0));
        let o = g.constant(Tensor::filled(3, 1, 1.0));
        let s = DecoderState {
            h: c,
            t_last: 0.0,
            extras: StateExtras::Nhp { c, cbar, delta, o },
        };
        // scalar re-evaluation of the interpolation formula at t=0.9
        let t = 0.9;
        let rates = inner.intensity(&mut g, &store, &s, t);
        let w = store.value(store.lookup("decoder.head.w_mat").unwrap()).clone();
        for k in 0..2 {
            let mut pre = 0.0;
            for j in 0..3 {
                let cj = g.value(c).as_slice()[j] * (-2.0 * t).exp();
                pre += w.get(k, j) * cj.tanh();
            }
            let expect = pre.max(0.0) + (-pre.abs()).exp().ln_1p();
            let got = g.value(rates).as_slice()[k];
            assert!((got - expect).abs() < 1e-12, "mark {k}: {got} vs {expect}");
        }
        // far future: rates near softplus(0 . w) per mark
        let far = inner.intensity(&mut g, &store, &s, 1e6);
        for k in 0..2 {
            assert!((g.value(far).as_slice()[k] - 2f64.ln()).abs() < 1e-9);
        }
    }
}
