//! Model configuration, the parameter inventory it implies, and seeded
//! initialization.
//!
//! [`parameter_layout`] is the single source of truth for which named tensors
//! a configuration owns: initialization, checkpoint validation, and the
//! structural tests all derive from it.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EdgeType;
use crate::scalar::Scalar;
use crate::tensor::store::TensorStore;

/// Structural ablations: which parts of the full model are removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// The complete model.
    Full,
    /// No position embeddings in the readout.
    WoPos,
    /// No relation encoder and no position embeddings; attention runs on
    /// item representations alone.
    WoRelPos,
    /// No self-attention stack; the readout consumes raw item embeddings.
    WoSan,
}

/// How the session representation `s_h` is produced from item representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    /// Revert the graph to the sequence, add reversed position embeddings,
    /// and aggregate with soft attention against the last item (the default).
    SoftAttention,
    /// One extra relation-free self-attention layer over the sequence; the
    /// last position's output is the session representation.
    San,
    /// Plain sum over the position-adjusted sequence.
    Sum,
    /// Soft attention directly over graph nodes: no reversion, no positions;
    /// the last session position's node acts as the current interest.
    Graph,
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Binary cross-entropy summed over every item of the softmax output
    /// (the default objective).
    FullBce,
    /// Plain softmax cross-entropy on the target item only.
    TargetCe,
}

macro_rules! impl_str_enum {
    ($ty:ty { $($variant:path => $s:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = match self { $($variant => $s),+ };
                f.write_str(s)
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " '{}'; expected one of: ",
                                $($s, " "),+),
                        other
                    ))),
                }
            }
        }
    };
}

impl_str_enum!(Ablation {
    Ablation::Full => "full",
    Ablation::WoPos => "wo-pos",
    Ablation::WoRelPos => "wo-rel-pos",
    Ablation::WoSan => "wo-san",
});
impl_str_enum!(Readout {
    Readout::SoftAttention => "soft-attention",
    Readout::San => "san",
    Readout::Sum => "sum",
    Readout::Graph => "graph",
});
impl_str_enum!(LossMode {
    LossMode::FullBce => "full-bce",
    LossMode::TargetCe => "target-ce",
});

/// Architecture and variant selection. Serialized into checkpoint headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Vocabulary size n.
    pub n_items: usize,
    /// Embedding width d (even, divisible by `n_heads`).
    pub d_model: usize,
    /// Attention heads H.
    pub n_heads: usize,
    /// Depth of the self-attention stack.
    pub n_layers: usize,
    /// FFN hidden width (default 4·d).
    pub ffn_inner: usize,
    /// Dropout probability on attention weights and FFN outputs.
    pub dropout: f64,
    /// Position-embedding table size; longer sessions keep only their most
    /// recent `max_positions` items in the readout.
    pub max_positions: usize,
    /// Maximum number of edge labels kept per shortest path.
    pub path_cap: usize,
    pub ablation: Ablation,
    pub readout: Readout,
    pub loss_mode: LossMode,
}

impl ModelConfig {
    /// Defaults for everything but the vocabulary size.
    pub fn new(n_items: usize) -> Self {
        ModelConfig {
            n_items,
            d_model: 64,
            n_heads: 4,
            n_layers: 1,
            ffn_inner: 256,
            dropout: 0.2,
            max_positions: 50,
            path_cap: 16,
            ablation: Ablation::Full,
            readout: Readout::SoftAttention,
            loss_mode: LossMode::FullBce,
        }
    }

    /// Width per attention head.
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Hidden width of each GRU direction (two halves concatenate to d).
    pub fn gru_hidden(&self) -> usize {
        self.d_model / 2
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_items == 0 {
            return fail("n_items must be positive".into());
        }
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return fail(format!("d_model must be positive and even, got {}", self.d_model));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "n_heads must be positive and divide d_model ({} heads, d_model {})",
                self.n_heads, self.d_model
            ));
        }
        if self.n_layers == 0 {
            return fail("n_layers must be positive".into());
        }
        if self.ffn_inner == 0 {
            return fail("ffn_inner must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.max_positions == 0 {
            return fail("max_positions must be positive".into());
        }
        if self.path_cap == 0 {
            return fail("path_cap must be positive".into());
        }
        Ok(())
    }

    /// Whether this configuration encodes transition relations.
    pub fn has_relations(&self) -> bool {
        self.ablation != Ablation::WoRelPos
    }

    /// Whether position embeddings exist and are added in the readout.
    pub fn has_positions(&self) -> bool {
        !matches!(self.ablation, Ablation::WoPos | Ablation::WoRelPos)
            && self.readout != Readout::Graph
    }

    /// Whether the self-attention stack runs.
    pub fn has_encoder(&self) -> bool {
        self.ablation != Ablation::WoSan
    }
}

/// How one parameter tensor is filled at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Gaussian, mean 0, standard deviation 0.02.
    Gaussian,
    /// Constant 1 (normalization gains).
    One,
    /// Constant 0 (normalization biases).
    Zero,
}

/// Name, shape, and initialization of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    fn gaussian(name: impl Into<String>, shape: Vec<usize>) -> Self {
        ParamSpec { name: name.into(), shape, init: Init::Gaussian }
    }
}

fn gru_cell_layout(prefix: &str, d: usize, h: usize, out: &mut Vec<ParamSpec>) {
    for gate in ["z", "r", "h"] {
        out.push(ParamSpec::gaussian(format!("{prefix}.w_{gate}"), vec![d, h]));
        out.push(ParamSpec::gaussian(format!("{prefix}.u_{gate}"), vec![h, h]));
        out.push(ParamSpec::gaussian(format!("{prefix}.b_{gate}"), vec![h]));
    }
}

fn encoder_layer_layout(prefix: &str, cfg: &ModelConfig, out: &mut Vec<ParamSpec>) {
    let d = cfg.d_model;
    for proj in ["w_q", "w_k", "w_v", "w_o"] {
        out.push(ParamSpec::gaussian(format!("{prefix}.{proj}"), vec![d, d]));
    }
    out.push(ParamSpec::gaussian(format!("{prefix}.ffn_w1"), vec![d, cfg.ffn_inner]));
    out.push(ParamSpec::gaussian(format!("{prefix}.ffn_b1"), vec![cfg.ffn_inner]));
    out.push(ParamSpec::gaussian(format!("{prefix}.ffn_w2"), vec![cfg.ffn_inner, d]));
    out.push(ParamSpec::gaussian(format!("{prefix}.ffn_b2"), vec![d]));
    for (name, init) in [
        ("norm1_gain", Init::One),
        ("norm1_bias", Init::Zero),
        ("norm2_gain", Init::One),
        ("norm2_bias", Init::Zero),
    ] {
        out.push(ParamSpec { name: format!("{prefix}.{name}"), shape: vec![d], init });
    }
}

/// The exact ordered parameter inventory of a configuration.
pub fn parameter_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.d_model;
    let mut out = Vec::new();
    out.push(ParamSpec::gaussian("item_table", vec![cfg.n_items, d]));
    if cfg.has_relations() {
        out.push(ParamSpec::gaussian("edge_type_table", vec![EdgeType::COUNT, d]));
        gru_cell_layout("gru_fwd", d, cfg.gru_hidden(), &mut out);
        gru_cell_layout("gru_bwd", d, cfg.gru_hidden(), &mut out);
        out.push(ParamSpec::gaussian("relation_split", vec![d, 2 * d]));
    }
    if cfg.has_positions() {
        out.push(ParamSpec::gaussian("position_table", vec![cfg.max_positions, d]));
    }
    if cfg.has_encoder() {
        for layer in 0..cfg.n_layers {
            encoder_layer_layout(&format!("attn.{layer}"), cfg, &mut out);
        }
    }
    if cfg.readout == Readout::San {
        encoder_layer_layout("san", cfg, &mut out);
    }
    if matches!(cfg.readout, Readout::SoftAttention | Readout::Graph) {
        out.push(ParamSpec::gaussian("readout.item_proj", vec![d, d]));
        out.push(ParamSpec::gaussian("readout.interest_proj", vec![d, d]));
        out.push(ParamSpec::gaussian("readout.bias", vec![d]));
        out.push(ParamSpec::gaussian("readout.score", vec![d]));
    }
    out
}

/// Parameter names of a configuration, in layout order.
pub fn expected_parameter_names(cfg: &ModelConfig) -> Vec<String> {
    parameter_layout(cfg).into_iter().map(|s| s.name).collect()
}

/// Initialize all parameters of `cfg` from `seed`. Weights are Gaussian
/// (mean 0, std 0.02) drawn in layout order; normalization gains start at 1
/// and biases at 0 so the residual stream is an identity map at step 0.
pub fn init_parameters<S: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<TensorStore<S>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.02).expect("fixed valid std");
    let mut store = TensorStore::new();
    for spec in parameter_layout(cfg) {
        let numel: usize = spec.shape.iter().product();
        let data: Vec<S> = match spec.init {
            Init::Gaussian => {
                (0..numel).map(|_| S::from_f64(normal.sample(&mut rng))).collect()
            }
            Init::One => vec![S::from_f64(1.0); numel],
            Init::Zero => vec![S::default(); numel],
        };
        store.push(&spec.name, spec.shape, data)?;
    }
    Ok(store)
}

/// Check that `store` holds exactly the parameters `cfg` expects, with the
/// expected shapes. Extra, missing, or misshapen tensors are errors.
pub fn validate_inventory<S: Scalar>(cfg: &ModelConfig, store: &TensorStore<S>) -> Result<()> {
    let layout = parameter_layout(cfg);
    for spec in &layout {
        match store.get(&spec.name) {
            None => {
                return Err(Error::Format(format!(
                    "checkpoint is missing parameter '{}'",
                    spec.name
                )))
            }
            Some(entry) if entry.shape != spec.shape => {
                return Err(Error::Format(format!(
                    "parameter '{}' has shape {:?}, expected {:?}",
                    spec.name, entry.shape, spec.shape
                )))
            }
            Some(_) => {}
        }
    }
    if store.len() != layout.len() {
        let expected: std::collections::HashSet<&str> =
            layout.iter().map(|s| s.name.as_str()).collect();
        let extra: Vec<String> = store
            .names()
            .into_iter()
            .filter(|n| !expected.contains(n.as_str()))
            .collect();
        return Err(Error::Format(format!(
            "checkpoint holds unexpected parameters: {extra:?}"
        )));
    }
    Ok(())
}
