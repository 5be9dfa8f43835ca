//! Observation encoder: map-initialized recurrent state updated with social
//! attention at every observed frame.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{MapMode, ModelConfig};
use crate::data::{AgentId, ObservationWindow, SelfState};
use crate::error::Result;
use crate::geometry::NeighborView;
use crate::nn::{Activation, Embedding, GruCell, Linear, ParamStore, Tape, Var};

/// Input scaling: meters and m/s are divided by ten before embedding.
pub const INPUT_SCALE: f64 = 0.1;

/// Relative position and velocity of a neighbor, scaled.
pub fn neighbor_input(n: &NeighborView) -> [f64; 4] {
    [
        n.rel_position.x * INPUT_SCALE,
        n.rel_position.y * INPUT_SCALE,
        n.rel_velocity.x * INPUT_SCALE,
        n.rel_velocity.y * INPUT_SCALE,
    ]
}

/// Social features with the bearing encoded as a unit vector.
pub fn social_input(n: &NeighborView) -> [f64; 4] {
    [
        n.social.distance * INPUT_SCALE,
        n.social.bearing.cos(),
        n.social.bearing.sin(),
        n.social.min_predicted_distance * INPUT_SCALE,
    ]
}

pub fn self_input(s: &SelfState) -> [f64; 4] {
    s.map(|v| v * INPUT_SCALE)
}

/// Per-frame attention weights exported for visualization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    /// M-ATTN weights over first-frame neighbors, when M-ATTN is active.
    pub map_attention: Option<Vec<(AgentId, f64)>>,
    /// S-ATTN weights per observed frame (empty lists without S-ATTN or
    /// without neighbors).
    pub social_attention: Vec<Vec<(AgentId, f64)>>,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Decoder initial state h^T (`1 × D`).
    pub hidden: Var,
    /// Final recurrent state q^T before any map concatenation.
    pub q_last: Var,
    pub map_features: Option<Var>,
    pub attention: AttentionRecord,
}

#[derive(Debug, Clone)]
pub struct ObservationEncoder {
    pub s_query: Embedding,
    pub s_key: Embedding,
    pub s_value: Embedding,
    pub m_query: Option<Embedding>,
    pub m_key: Option<Embedding>,
    pub m_value: Embedding,
    pub init: Linear,
    pub gru: GruCell,
    pub indie: Option<Linear>,
    pub features: usize,
    pub embed: usize,
}

fn rows(t: &mut Tape, neighbors: &[NeighborView], f: fn(&NeighborView) -> [f64; 4]) -> Var {
    let data: Vec<f64> = neighbors.iter().flat_map(f).collect();
    t.constant(data, neighbors.len(), 4)
}

impl ObservationEncoder {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let (d, e, f) = (config.hidden, config.embed, config.map_features());
        let tanh = Activation::Tanh;
        let m_attn = config.mode.use_m_attn;
        ObservationEncoder {
            s_query: Embedding::new(store, "enc.s_attn.query", d, e, tanh, rng),
            s_key: Embedding::new(store, "enc.s_attn.key", 4, e, tanh, rng),
            s_value: Embedding::new(store, "enc.s_attn.value", 4, e, tanh, rng),
            m_query: m_attn.then(|| Embedding::new(store, "enc.m_attn.query", f, e, tanh, rng)),
            m_key: m_attn.then(|| Embedding::new(store, "enc.m_attn.key", 4, e, tanh, rng)),
            m_value: Embedding::new(store, "enc.m_attn.value", 4, e, tanh, rng),
            init: Linear::new(store, "enc.init", f + e, d, rng),
            gru: GruCell::new(store, "enc.gru", 4 + e, d, rng),
            indie: (config.mode.map_mode == MapMode::Indie)
                .then(|| Linear::new(store, "enc.indie", d + f, d, rng)),
            features: f,
            embed: e,
        }
    }

    fn attend(
        &self,
        t: &mut Tape,
        query: Var,
        keys: Var,
        values: Var,
        scaled: bool,
    ) -> (Var, Vec<f64>) {
        let mut scores = t.row_dot(keys, query);
        if scaled {
            scores = t.affine(scores, 1.0 / (self.embed as f64).sqrt(), 0.0);
        }
        let w = t.softmax(scores);
        let ctx = t.weighted_sum(w, values);
        let weights = t.value(w).to_vec();
        (ctx, weights)
    }

    /// M-ATTN: map features as query over first-frame neighbors. Returns the
    /// context (`1 × E`) and the weights; zero context for no neighbors.
    pub fn map_attention(
        &self,
        t: &mut Tape,
        map_features: Var,
        neighbors: &[NeighborView],
        scaled: bool,
    ) -> (Var, Vec<f64>) {
        let (Some(fq), Some(fk)) = (self.m_query, self.m_key) else {
            panic!("map_attention requires a model built with M-ATTN");
        };
        if neighbors.is_empty() {
            return (t.zeros(1, self.embed), Vec::new());
        }
        let q = fq.forward(t, map_features);
        let n = rows(t, neighbors, neighbor_input);
        let keys = fk.forward(t, n);
        let values = self.m_value.forward(t, n);
        self.attend(t, q, keys, values, scaled)
    }

    /// S-ATTN: recurrent state as query, social features as keys.
    pub fn social_attention(
        &self,
        t: &mut Tape,
        q: Var,
        neighbors: &[NeighborView],
        scaled: bool,
    ) -> (Var, Vec<f64>) {
        if neighbors.is_empty() {
            return (t.zeros(1, self.embed), Vec::new());
        }
        let query = self.s_query.forward(t, q);
        let k = rows(t, neighbors, social_input);
        let n = rows(t, neighbors, neighbor_input);
        let keys = self.s_key.forward(t, k);
        let values = self.s_value.forward(t, n);
        self.attend(t, query, keys, values, scaled)
    }

    fn sum_pool(&self, t: &mut Tape, emb: Embedding, neighbors: &[NeighborView]) -> Var {
        if neighbors.is_empty() {
            return t.zeros(1, self.embed);
        }
        let n = rows(t, neighbors, neighbor_input);
        let v = emb.forward(t, n);
        t.sum_rows(v)
    }

    /// q¹ from the map features and the first-frame neighbors. The map slot
    /// is zero unless the map is integrated.
    pub fn init_hidden(
        &self,
        t: &mut Tape,
        window: &ObservationWindow,
        map_features: Option<Var>,
        config: &ModelConfig,
    ) -> Result<(Var, Option<Vec<f64>>)> {
        config.mode.validate()?;
        window.validate()?;
        let first = &window.neighbors[0];
        let integrated = config.mode.map_mode == MapMode::Integrated;
        let m_slot = match map_features {
            Some(m) if integrated => m,
            _ => t.zeros(1, self.features),
        };
        let (ctx, weights) = if config.mode.use_m_attn {
            let m = map_features.expect("integrated map mode needs map features");
            let (c, w) = self.map_attention(t, m, first, config.scaled_attention);
            (c, Some(w))
        } else {
            (self.sum_pool(t, self.m_value, first), None)
        };
        let x = t.concat(&[m_slot, ctx]);
        let y = self.init.forward(t, x);
        Ok((t.tanh(y), weights))
    }

    /// Unified observation O^t: self state plus the social context, by
    /// attention with `query` or by sum pooling.
    pub fn observation(
        &self,
        t: &mut Tape,
        query: Var,
        state: &SelfState,
        neighbors: &[NeighborView],
        config: &ModelConfig,
    ) -> (Var, Vec<f64>) {
        let s = t.vector(self_input(state).to_vec());
        let (ctx, weights) = if config.mode.use_s_attn {
            self.social_attention(t, query, neighbors, config.scaled_attention)
        } else {
            (self.sum_pool(t, self.s_value, neighbors), Vec::new())
        };
        (t.concat(&[s, ctx]), weights)
    }

    /// One recurrent update q' = g(O^t, q).
    pub fn encode_step(
        &self,
        t: &mut Tape,
        q: Var,
        state: &SelfState,
        neighbors: &[NeighborView],
        config: &ModelConfig,
    ) -> (Var, Vec<f64>) {
        let (o, weights) = self.observation(t, q, state, neighbors, config);
        (self.gru.forward(t, o, q), weights)
    }

    /// Folds `encode_step` over every observed frame starting from q¹. In
    /// the indie mode the result is combined with the map features.
    pub fn encode_observation(
        &self,
        t: &mut Tape,
        window: &ObservationWindow,
        map_features: Option<Var>,
        config: &ModelConfig,
    ) -> Result<EncoderOutput> {
        let (mut q, m_weights) = self.init_hidden(t, window, map_features, config)?;
        let mut attention = AttentionRecord {
            map_attention: m_weights.map(|w| {
                window.neighbors[0]
                    .iter()
                    .map(|n| n.agent_id)
                    .zip(w)
                    .collect()
            }),
            social_attention: Vec::with_capacity(window.len()),
        };
        for (state, neighbors) in window.self_states.iter().zip(&window.neighbors) {
            let (next, w) = self.encode_step(t, q, state, neighbors, config);
            q = next;
            attention
                .social_attention
                .push(neighbors.iter().map(|n| n.agent_id).zip(w).collect());
        }
        let hidden = match (self.indie, map_features) {
            (Some(proj), Some(m)) => {
                let x = t.concat(&[q, m]);
                let y = proj.forward(t, x);
                t.tanh(y)
            }
            _ => q,
        };
        Ok(EncoderOutput {
            hidden,
            q_last: q,
            map_features,
            attention,
        })
    }
}
