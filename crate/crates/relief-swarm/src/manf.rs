//! The heterogeneous multi-agent network stack: a shared conv extractor
//! over the five global channels, one agent Q-network shared by every
//! agent, and a monotonic hypernetwork mixing network, each with eval and
//! target copies.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::CellIndex;
use crate::nn::{
    avg_pool2, avg_pool2_backward, conv2d, conv2d_backward, dense, dense_backward, load_params,
    relu, relu_backward, save_params, CheckpointDtype, Gradients, NnError, ParameterSet, Tensor,
};
use crate::obs::{GlobalChannels, LocalFeatures, CHANNELS};

pub const CONV_OUT: usize = 10;

#[derive(Debug, Error)]
pub enum ManfError {
    #[error("action mask is empty")]
    EmptyMask,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Everything that fixes the network shapes for one scenario family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetTopology {
    pub height: usize,
    pub width: usize,
    pub n_agents: usize,
    /// Mixing-network hidden width.
    pub embed_dim: usize,
    /// Agent hidden width as a multiple of its input length.
    pub hidden_mult: usize,
    /// When false the global channels feed the agent net flattened raw
    /// (the no-conv ablation).
    pub use_cnn: bool,
}

impl NetTopology {
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Length of the shared state embedding s.
    pub fn state_len(&self) -> usize {
        if self.use_cnn {
            CONV_OUT * (self.height / 2) * (self.width / 2)
        } else {
            CHANNELS * self.cells()
        }
    }

    /// Agent-network input: embedding + location one-hot + id one-hot + urge.
    pub fn agent_input_len(&self) -> usize {
        self.state_len() + self.cells() + self.n_agents + 1
    }

    pub fn agent_hidden(&self) -> usize {
        self.hidden_mult * self.agent_input_len()
    }

    pub fn validate(&self) -> Result<(), ManfError> {
        if self.height == 0 || self.width == 0 || self.n_agents == 0 {
            return Err(ManfError::Dimension("zero topology dimension".into()));
        }
        if self.use_cnn && (self.height % 2 != 0 || self.width % 2 != 0) {
            return Err(ManfError::Dimension(format!(
                "conv extractor needs even grid dims, got {}×{}",
                self.height, self.width
            )));
        }
        if self.embed_dim == 0 || self.hidden_mult == 0 {
            return Err(ManfError::Dimension("zero network width".into()));
        }
        Ok(())
    }
}

/// Fresh parameters for one network copy. Insertion order is fixed so a
/// given seed always produces the same values.
pub fn init_params(topo: &NetTopology, seed: u64) -> ParameterSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParameterSet::new();
    let s_len = topo.state_len();
    let n_in = topo.agent_input_len();
    let hidden = topo.agent_hidden();
    let cells = topo.cells();
    let e = topo.embed_dim;
    let a = topo.n_agents;

    if topo.use_cnn {
        p.insert_glorot(
            "cnn.k",
            &[CONV_OUT, CHANNELS, 3, 3],
            CHANNELS * 9,
            CONV_OUT * 9,
            &mut rng,
        );
        p.insert("cnn.b", Tensor::zeros(&[CONV_OUT]));
    }
    p.insert_glorot("agent.w1", &[n_in, hidden], n_in, hidden, &mut rng);
    p.insert("agent.b1", Tensor::zeros(&[hidden]));
    p.insert_glorot("agent.w2", &[hidden, cells], hidden, cells, &mut rng);
    p.insert("agent.b2", Tensor::zeros(&[cells]));
    p.insert_glorot("mix.hw1.w", &[s_len, a * e], s_len, a * e, &mut rng);
    p.insert("mix.hw1.b", Tensor::zeros(&[a * e]));
    p.insert_glorot("mix.hb1.w", &[s_len, e], s_len, e, &mut rng);
    p.insert("mix.hb1.b", Tensor::zeros(&[e]));
    p.insert_glorot("mix.hw2.w", &[s_len, e], s_len, e, &mut rng);
    p.insert("mix.hw2.b", Tensor::zeros(&[e]));
    p.insert_glorot("mix.hb2.w1", &[s_len, e], s_len, e, &mut rng);
    p.insert("mix.hb2.b1", Tensor::zeros(&[e]));
    p.insert_glorot("mix.hb2.w2", &[e, 1], e, 1, &mut rng);
    p.insert("mix.hb2.b2", Tensor::zeros(&[1]));
    p
}

pub struct EmbedTrace {
    input: Tensor,
    /// Post-relu conv activations; empty in the no-conv configuration.
    conv_act: Tensor,
}

fn channels_tensor(channels: &GlobalChannels, topo: &NetTopology) -> Result<Tensor, ManfError> {
    if channels.height != topo.height || channels.width != topo.width {
        return Err(ManfError::Dimension(format!(
            "channels {}×{} vs topology {}×{}",
            channels.height, channels.width, topo.height, topo.width
        )));
    }
    let expect = CHANNELS * topo.cells();
    if channels.data.len() != expect {
        return Err(ManfError::Dimension(format!(
            "channel payload {} vs expected {expect}",
            channels.data.len()
        )));
    }
    Ok(Tensor::from_vec(
        &[CHANNELS, topo.height, topo.width],
        channels.data.clone(),
    )?)
}

/// The shared state embedding s: conv → relu → 2×2 average pool →
/// flatten, or the raw flattened channels in the no-conv configuration.
pub fn embed(
    channels: &GlobalChannels,
    params: &ParameterSet,
    topo: &NetTopology,
) -> Result<Vec<f64>, ManfError> {
    Ok(embed_with_trace(channels, params, topo)?.0)
}

fn embed_with_trace(
    channels: &GlobalChannels,
    params: &ParameterSet,
    topo: &NetTopology,
) -> Result<(Vec<f64>, EmbedTrace), ManfError> {
    let input = channels_tensor(channels, topo)?;
    if !topo.use_cnn {
        let s = input.data().to_vec();
        return Ok((
            s,
            EmbedTrace {
                input,
                conv_act: Tensor::zeros(&[0]),
            },
        ));
    }
    let pre = conv2d(&input, params.get("cnn.k"), params.get("cnn.b"))?;
    let act = Tensor::from_vec(pre.shape(), relu(pre.data()))?;
    let pooled = avg_pool2(&act)?;
    let s = pooled.data().to_vec();
    Ok((
        s,
        EmbedTrace {
            input,
            conv_act: act,
        },
    ))
}

fn embed_backward(
    trace: &EmbedTrace,
    grad_s: &[f64],
    params: &ParameterSet,
    grads: &mut Gradients,
    topo: &NetTopology,
) {
    if !topo.use_cnn {
        return; // raw channels carry no parameters
    }
    let (h2, w2) = (topo.height / 2, topo.width / 2);
    let grad_pool = Tensor::from_vec(&[CONV_OUT, h2, w2], grad_s.to_vec()).expect("grad shape");
    let mut grad_act = Tensor::zeros(&[CONV_OUT, topo.height, topo.width]);
    avg_pool2_backward(&grad_pool, &mut grad_act);
    let mut grad_pre = Tensor::zeros(&[CONV_OUT, topo.height, topo.width]);
    relu_backward(
        trace.conv_act.data(),
        grad_act.data(),
        grad_pre.data_mut(),
    );
    let mut grad_input = Tensor::zeros(trace.input.shape());
    let mut gk = std::mem::replace(grads.get_mut("cnn.k"), Tensor::zeros(&[0]));
    let mut gb = std::mem::replace(grads.get_mut("cnn.b"), Tensor::zeros(&[0]));
    conv2d_backward(
        &trace.input,
        params.get("cnn.k"),
        &grad_pre,
        &mut gk,
        &mut gb,
        &mut grad_input,
    );
    *grads.get_mut("cnn.k") = gk;
    *grads.get_mut("cnn.b") = gb;
}

pub struct AgentTrace {
    input: Vec<f64>,
    hidden: Vec<f64>,
    pub q: Vec<f64>,
}

fn assemble_agent_input(s: &[f64], local: &LocalFeatures, topo: &NetTopology) -> Vec<f64> {
    let mut u = Vec::with_capacity(topo.agent_input_len());
    u.extend_from_slice(s);
    let mut loc = vec![0.0; topo.cells()];
    loc[local.loc] = 1.0;
    u.extend_from_slice(&loc);
    let mut id = vec![0.0; topo.n_agents];
    id[local.agent_index] = 1.0;
    u.extend_from_slice(&id);
    u.push(local.urge);
    u
}

/// Per-cell Q values for one agent from the shared network. No masking is
/// applied here.
pub fn agent_q(
    s: &[f64],
    local: &LocalFeatures,
    params: &ParameterSet,
    topo: &NetTopology,
) -> Result<Vec<f64>, ManfError> {
    Ok(agent_q_with_trace(s, local, params, topo)?.q)
}

fn agent_q_with_trace(
    s: &[f64],
    local: &LocalFeatures,
    params: &ParameterSet,
    topo: &NetTopology,
) -> Result<AgentTrace, ManfError> {
    if s.len() != topo.state_len() {
        return Err(ManfError::Dimension(format!(
            "state length {} vs topology {}",
            s.len(),
            topo.state_len()
        )));
    }
    if local.loc >= topo.cells() || local.agent_index >= topo.n_agents {
        return Err(ManfError::Dimension(format!(
            "local features (loc {}, agent {}) outside topology",
            local.loc, local.agent_index
        )));
    }
    let input = assemble_agent_input(s, local, topo);
    let hidden = relu(&dense(&input, params.get("agent.w1"), params.get("agent.b1"))?);
    let q = dense(&hidden, params.get("agent.w2"), params.get("agent.b2"))?;
    Ok(AgentTrace { input, hidden, q })
}

/// Backward through the shared agent network for the single chosen cell.
/// Accumulates parameter grads and the state-embedding grad.
fn agent_backward_chosen(
    trace: &AgentTrace,
    action: CellIndex,
    grad_chosen: f64,
    params: &ParameterSet,
    grads: &mut Gradients,
    grad_s: &mut [f64],
) {
    let hidden_len = trace.hidden.len();
    let cells = trace.q.len();
    // Output layer touches only column `action`.
    let w2 = params.get("agent.w2");
    let mut grad_hidden = vec![0.0; hidden_len];
    {
        let gw2 = grads.get_mut("agent.w2").data_mut();
        let w2d = w2.data();
        for i in 0..hidden_len {
            gw2[i * cells + action] += trace.hidden[i] * grad_chosen;
            grad_hidden[i] = w2d[i * cells + action] * grad_chosen;
        }
        grads.get_mut("agent.b2").data_mut()[action] += grad_chosen;
    }
    let mut grad_pre = vec![0.0; hidden_len];
    relu_backward(&trace.hidden, &grad_hidden, &mut grad_pre);
    let mut grad_input = vec![0.0; trace.input.len()];
    {
        let mut gw1 = std::mem::replace(grads.get_mut("agent.w1"), Tensor::zeros(&[0]));
        let mut gb1 = std::mem::replace(grads.get_mut("agent.b1"), Tensor::zeros(&[0]));
        dense_backward(
            &trace.input,
            params.get("agent.w1"),
            &grad_pre,
            &mut gw1,
            &mut gb1,
            &mut grad_input,
        );
        *grads.get_mut("agent.w1") = gw1;
        *grads.get_mut("agent.b1") = gb1;
    }
    for (gs, gi) in grad_s.iter_mut().zip(&grad_input) {
        *gs += gi;
    }
}

pub struct MixTrace {
    state: Vec<f64>,
    q: Vec<f64>,
    w1_raw: Vec<f64>,
    hidden: Vec<f64>,
    w2_raw: Vec<f64>,
    bias_hidden: Vec<f64>,
    pub qtot: f64,
}

/// Monotone mixer: Q_tot = |w2|ᵀ·relu(|W1|ᵀ·q + b1) + b2, with W1, b1, w2,
/// b2 produced by hypernetworks conditioned on the state embedding.
pub fn mix(
    s: &[f64],
    q_chosen: &[f64],
    params: &ParameterSet,
    topo: &NetTopology,
) -> Result<f64, ManfError> {
    Ok(mix_with_trace(s, q_chosen, params, topo)?.qtot)
}

fn mix_with_trace(
    s: &[f64],
    q_chosen: &[f64],
    params: &ParameterSet,
    topo: &NetTopology,
) -> Result<MixTrace, ManfError> {
    if q_chosen.len() != topo.n_agents {
        return Err(ManfError::Dimension(format!(
            "{} chosen Q values for {} agents",
            q_chosen.len(),
            topo.n_agents
        )));
    }
    if s.len() != topo.state_len() {
        return Err(ManfError::Dimension(format!(
            "state length {} vs topology {}",
            s.len(),
            topo.state_len()
        )));
    }
    let e = topo.embed_dim;
    let a = topo.n_agents;
    let w1_raw = dense(s, params.get("mix.hw1.w"), params.get("mix.hw1.b"))?;
    let b1 = dense(s, params.get("mix.hb1.w"), params.get("mix.hb1.b"))?;
    let mut hidden = b1;
    for (ai, &qv) in q_chosen.iter().enumerate() {
        for ei in 0..e {
            hidden[ei] += w1_raw[ai * e + ei].abs() * qv;
        }
    }
    let hidden = relu(&hidden);
    let w2_raw = dense(s, params.get("mix.hw2.w"), params.get("mix.hw2.b"))?;
    let bias_hidden = relu(&dense(s, params.get("mix.hb2.w1"), params.get("mix.hb2.b1"))?);
    let b2 = dense(&bias_hidden, params.get("mix.hb2.w2"), params.get("mix.hb2.b2"))?[0];
    let qtot = w2_raw
        .iter()
        .zip(&hidden)
        .map(|(w, h)| w.abs() * h)
        .sum::<f64>()
        + b2;
    debug_assert_eq!(a, q_chosen.len());
    Ok(MixTrace {
        state: s.to_vec(),
        q: q_chosen.to_vec(),
        w1_raw,
        hidden,
        w2_raw,
        bias_hidden,
        qtot,
    })
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Backward through the mixer. Returns grads w.r.t. the chosen Q values
/// and accumulates parameter grads plus the state-embedding grad.
fn mix_backward(
    trace: &MixTrace,
    grad_qtot: f64,
    params: &ParameterSet,
    grads: &mut Gradients,
    grad_s: &mut [f64],
    topo: &NetTopology,
) -> Vec<f64> {
    let e = topo.embed_dim;
    let a = topo.n_agents;
    let s = &trace.state;

    // Output bias head: b2 = hb2.w2ᵀ·relu(hb2.w1ᵀ·s) + hb2.b2.
    let mut grad_bias_hidden = vec![0.0; e];
    {
        let mut gw = std::mem::replace(grads.get_mut("mix.hb2.w2"), Tensor::zeros(&[0]));
        let mut gb = std::mem::replace(grads.get_mut("mix.hb2.b2"), Tensor::zeros(&[0]));
        dense_backward(
            &trace.bias_hidden,
            params.get("mix.hb2.w2"),
            &[grad_qtot],
            &mut gw,
            &mut gb,
            &mut grad_bias_hidden,
        );
        *grads.get_mut("mix.hb2.w2") = gw;
        *grads.get_mut("mix.hb2.b2") = gb;
    }
    let mut grad_bias_pre = vec![0.0; e];
    relu_backward(&trace.bias_hidden, &grad_bias_hidden, &mut grad_bias_pre);
    {
        let mut gw = std::mem::replace(grads.get_mut("mix.hb2.w1"), Tensor::zeros(&[0]));
        let mut gb = std::mem::replace(grads.get_mut("mix.hb2.b1"), Tensor::zeros(&[0]));
        dense_backward(s, params.get("mix.hb2.w1"), &grad_bias_pre, &mut gw, &mut gb, grad_s);
        *grads.get_mut("mix.hb2.w1") = gw;
        *grads.get_mut("mix.hb2.b1") = gb;
    }

    // |w2| weights.
    let grad_w2_raw: Vec<f64> = trace
        .w2_raw
        .iter()
        .zip(&trace.hidden)
        .map(|(&w, &h)| grad_qtot * h * sign0(w))
        .collect();
    {
        let mut gw = std::mem::replace(grads.get_mut("mix.hw2.w"), Tensor::zeros(&[0]));
        let mut gb = std::mem::replace(grads.get_mut("mix.hw2.b"), Tensor::zeros(&[0]));
        dense_backward(s, params.get("mix.hw2.w"), &grad_w2_raw, &mut gw, &mut gb, grad_s);
        *grads.get_mut("mix.hw2.w") = gw;
        *grads.get_mut("mix.hw2.b") = gb;
    }

    // Hidden layer.
    let grad_hidden: Vec<f64> = trace
        .w2_raw
        .iter()
        .map(|&w| grad_qtot * w.abs())
        .collect();
    let mut grad_hidden_pre = vec![0.0; e];
    relu_backward(&trace.hidden, &grad_hidden, &mut grad_hidden_pre);

    // b1 hypernetwork.
    {
        let mut gw = std::mem::replace(grads.get_mut("mix.hb1.w"), Tensor::zeros(&[0]));
        let mut gb = std::mem::replace(grads.get_mut("mix.hb1.b"), Tensor::zeros(&[0]));
        dense_backward(s, params.get("mix.hb1.w"), &grad_hidden_pre, &mut gw, &mut gb, grad_s);
        *grads.get_mut("mix.hb1.w") = gw;
        *grads.get_mut("mix.hb1.b") = gb;
    }

    // |W1| weights and the chosen-Q grads.
    let mut grad_q = vec![0.0; a];
    let mut grad_w1_raw = vec![0.0; a * e];
    for ai in 0..a {
        for ei in 0..e {
            let w = trace.w1_raw[ai * e + ei];
            grad_q[ai] += grad_hidden_pre[ei] * w.abs();
            grad_w1_raw[ai * e + ei] = grad_hidden_pre[ei] * trace.q[ai] * sign0(w);
        }
    }
    {
        let mut gw = std::mem::replace(grads.get_mut("mix.hw1.w"), Tensor::zeros(&[0]));
        let mut gb = std::mem::replace(grads.get_mut("mix.hw1.b"), Tensor::zeros(&[0]));
        dense_backward(s, params.get("mix.hw1.w"), &grad_w1_raw, &mut gw, &mut gb, grad_s);
        *grads.get_mut("mix.hw1.w") = gw;
        *grads.get_mut("mix.hw1.b") = gb;
    }
    grad_q
}

/// Argmax over the masked cells; ties go to the lowest cell index.
pub fn masked_argmax(q: &[f64], mask: &[CellIndex]) -> Result<CellIndex, ManfError> {
    let mut best: Option<(CellIndex, f64)> = None;
    for &cell in mask {
        let v = q[cell];
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((cell, v)),
        }
    }
    best.map(|(c, _)| c).ok_or(ManfError::EmptyMask)
}

/// Max over the masked cells.
pub fn masked_max(q: &[f64], mask: &[CellIndex]) -> Result<f64, ManfError> {
    masked_argmax(q, mask).map(|c| q[c])
}

/// One full differentiable pass: channels → embedding → per-agent chosen
/// Q values → mixed joint value.
pub struct ForwardCache {
    pub s: Vec<f64>,
    embed: EmbedTrace,
    agents: Vec<AgentTrace>,
    actions: Vec<CellIndex>,
    mix: MixTrace,
}

impl ForwardCache {
    pub fn qtot(&self) -> f64 {
        self.mix.qtot
    }
}

pub fn qtot_forward(
    channels: &GlobalChannels,
    locals: &[LocalFeatures],
    actions: &[CellIndex],
    params: &ParameterSet,
    topo: &NetTopology,
) -> Result<ForwardCache, ManfError> {
    if locals.len() != topo.n_agents || actions.len() != topo.n_agents {
        return Err(ManfError::Dimension(format!(
            "{} locals / {} actions for {} agents",
            locals.len(),
            actions.len(),
            topo.n_agents
        )));
    }
    let (s, embed) = embed_with_trace(channels, params, topo)?;
    let mut agents = Vec::with_capacity(locals.len());
    let mut chosen = Vec::with_capacity(locals.len());
    for (local, &action) in locals.iter().zip(actions) {
        let trace = agent_q_with_trace(&s, local, params, topo)?;
        chosen.push(trace.q[action]);
        agents.push(trace);
    }
    let mix = mix_with_trace(&s, &chosen, params, topo)?;
    Ok(ForwardCache {
        s,
        embed,
        agents,
        actions: actions.to_vec(),
        mix,
    })
}

/// Backward for [`qtot_forward`]: pushes `grad_qtot` through the mixer,
/// the shared agent network, and the conv extractor, accumulating into
/// `grads`.
pub fn qtot_backward(
    cache: &ForwardCache,
    grad_qtot: f64,
    params: &ParameterSet,
    grads: &mut Gradients,
    topo: &NetTopology,
) {
    let mut grad_s = vec![0.0; cache.s.len()];
    let grad_q = mix_backward(&cache.mix, grad_qtot, params, grads, &mut grad_s, topo);
    for (trace, (&action, &gq)) in cache
        .agents
        .iter()
        .zip(cache.actions.iter().zip(&grad_q))
    {
        agent_backward_chosen(trace, action, gq, params, grads, &mut grad_s);
    }
    embed_backward(&cache.embed, &grad_s, params, grads, topo);
}

/// Eval and target network copies plus the trainer step counter.
pub struct PolicyCheckpoint {
    pub topo: NetTopology,
    pub eval: ParameterSet,
    pub target: ParameterSet,
    pub step_counter: u64,
    pub seed: u64,
}

impl PolicyCheckpoint {
    pub fn new(topo: NetTopology, seed: u64) -> Result<Self, ManfError> {
        topo.validate()?;
        let eval = init_params(&topo, seed);
        let target = eval.clone();
        Ok(Self {
            topo,
            eval,
            target,
            step_counter: 0,
            seed,
        })
    }

    /// Copies every eval network (conv extractor included) onto the target
    /// side.
    pub fn sync_targets(&mut self) {
        self.target = self.eval.clone();
    }

    pub fn save(&self, path: &Path) -> Result<(), ManfError> {
        let mut merged = ParameterSet::new();
        for (name, tensor) in self.eval.iter() {
            merged.insert(&format!("eval.{name}"), tensor.clone());
        }
        for (name, tensor) in self.target.iter() {
            merged.insert(&format!("target.{name}"), tensor.clone());
        }
        let meta = serde_json::json!({
            "topology": self.topo,
            "step_counter": self.step_counter,
        });
        let file = File::create(path).map_err(NnError::Io)?;
        save_params(
            BufWriter::new(file),
            &merged,
            CheckpointDtype::F64,
            self.seed,
            meta,
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ManfError> {
        let file = File::open(path).map_err(NnError::Io)?;
        let (merged, header) = load_params(BufReader::new(file))?;
        let topo: NetTopology = serde_json::from_value(header.meta["topology"].clone())
            .map_err(|e| NnError::BadCheckpoint(format!("topology: {e}")))?;
        let step_counter = header.meta["step_counter"].as_u64().unwrap_or(0);
        let mut eval = ParameterSet::new();
        let mut target = ParameterSet::new();
        for (name, tensor) in merged.iter() {
            if let Some(rest) = name.strip_prefix("eval.") {
                eval.insert(rest, tensor.clone());
            } else if let Some(rest) = name.strip_prefix("target.") {
                target.insert(rest, tensor.clone());
            } else {
                return Err(NnError::BadCheckpoint(format!("unexpected entry {name}")).into());
            }
        }
        Ok(Self {
            topo,
            eval,
            target,
            step_counter,
            seed: header.seed,
        })
    }
}
