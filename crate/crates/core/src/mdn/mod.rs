//! Mixture density network inference: weights container, the hybrid
//! convolutional / fully connected forward pass and per-agent action mixtures.
//!
//! Pipeline:
//!
//! * scalars → fc1 → ReLU → fc2 → ReLU
//! * grid → conv1 → ReLU → conv2 → ReLU → flatten → fc3 → ReLU
//! * concat(scalar, visual) → fc4 → ReLU → fc5 → ReLU
//! * heads fc6 (softmax weights), fc7 (identity means), fc8 (nnELU variances)
//!
//! Each head emits `2·G·K` values laid out as `[axis][agent slot][component]`
//! with axis 0 longitudinal and axis 1 lateral. Means come out in normalized
//! action units (`[-1, 1]` spans the action bounds) and are mapped back to
//! physical units here; variances are used as emitted.

pub mod format;
pub mod layers;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use format::{load_weights, save_weights};
pub use layers::{conv2d_reflect, conv2d_reflect_view, nnelu, PlaneView, Planes};

use crate::features::{build_features, FeatureConfig, FeatureTensor, SCALAR_LEN, SLOTS};
use crate::gmm::{FactoredActionGmm, Gmm1D};
use crate::scene::{ActionBounds, Scene};

#[derive(Debug, thiserror::Error)]
pub enum MdnError {
    #[error("not an MDNW file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("truncated file: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("payload checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("invalid header: {0}")]
    Header(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input mismatch: {0}")]
    Input(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenWidths {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub n4: usize,
    pub n5: usize,
}

impl Default for HiddenWidths {
    fn default() -> Self {
        HiddenWidths {
            n1: 256,
            n2: 128,
            n3: 64,
            n4: 256,
            n5: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdnMetadata {
    pub components: usize,
    pub agents: usize,
    pub in_channels: usize,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub hidden: HiddenWidths,
    pub features: FeatureConfig,
    pub action_bounds: ActionBounds,
}

impl MdnMetadata {
    pub fn new(components: usize) -> Self {
        MdnMetadata {
            components,
            agents: SLOTS,
            in_channels: 2,
            conv1: ConvSpec {
                filters: 16,
                kernel: 7,
                stride: 4,
                pad: 3,
            },
            conv2: ConvSpec {
                filters: 32,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            hidden: HiddenWidths::default(),
            features: FeatureConfig::default(),
            action_bounds: ActionBounds::default(),
        }
    }

    /// `(height, width)` after conv1 and after conv2.
    pub fn conv_dims(&self) -> Result<[(usize, usize); 2], MdnError> {
        let g = &self.features.grid;
        let h1 = layers::conv_output_dim(g.lat_cells, self.conv1.kernel, self.conv1.stride, self.conv1.pad)?;
        let w1 = layers::conv_output_dim(g.lon_cells, self.conv1.kernel, self.conv1.stride, self.conv1.pad)?;
        let h2 = layers::conv_output_dim(h1, self.conv2.kernel, self.conv2.stride, self.conv2.pad)?;
        let w2 = layers::conv_output_dim(w1, self.conv2.kernel, self.conv2.stride, self.conv2.pad)?;
        Ok([(h1, w1), (h2, w2)])
    }

    pub fn flatten_dim(&self) -> Result<usize, MdnError> {
        let [_, (h2, w2)] = self.conv_dims()?;
        Ok(self.conv2.filters * h2 * w2)
    }

    pub fn head_width(&self) -> usize {
        2 * self.agents * self.components
    }

    /// Tensor names and shapes in file order.
    pub fn expected_shapes(&self) -> Result<Vec<(&'static str, Vec<usize>)>, MdnError> {
        let h = &self.hidden;
        let heads = self.head_width();
        let c1 = &self.conv1;
        let c2 = &self.conv2;
        Ok(vec![
            ("conv1.weight", vec![c1.filters, self.in_channels, c1.kernel, c1.kernel]),
            ("conv1.bias", vec![c1.filters]),
            ("conv2.weight", vec![c2.filters, c1.filters, c2.kernel, c2.kernel]),
            ("conv2.bias", vec![c2.filters]),
            ("fc1.weight", vec![h.n1, SCALAR_LEN]),
            ("fc1.bias", vec![h.n1]),
            ("fc2.weight", vec![h.n2, h.n1]),
            ("fc2.bias", vec![h.n2]),
            ("fc3.weight", vec![h.n3, self.flatten_dim()?]),
            ("fc3.bias", vec![h.n3]),
            ("fc4.weight", vec![h.n4, h.n2 + h.n3]),
            ("fc4.bias", vec![h.n4]),
            ("fc5.weight", vec![h.n5, h.n4]),
            ("fc5.bias", vec![h.n5]),
            ("fc6.weight", vec![heads, h.n5]),
            ("fc6.bias", vec![heads]),
            ("fc7.weight", vec![heads, h.n5]),
            ("fc7.bias", vec![heads]),
            ("fc8.weight", vec![heads, h.n5]),
            ("fc8.bias", vec![heads]),
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Validated network weights. Immutable once built and shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct MdnWeights {
    metadata: MdnMetadata,
    tensors: Vec<Tensor>,
}

/// Which earlier tensor determines the input width of each weight matrix.
const INPUT_SOURCES: &[(&str, &[&str])] = &[
    ("conv2.weight", &["conv1.weight"]),
    ("fc2.weight", &["fc1.weight"]),
    ("fc3.weight", &["conv2.weight"]),
    ("fc4.weight", &["fc2.weight", "fc3.weight"]),
    ("fc5.weight", &["fc4.weight"]),
    ("fc6.weight", &["fc5.weight"]),
    ("fc7.weight", &["fc5.weight"]),
    ("fc8.weight", &["fc5.weight"]),
];

impl MdnWeights {
    pub fn new(metadata: MdnMetadata, tensors: Vec<Tensor>) -> Result<Self, MdnError> {
        if !(2..=3).contains(&metadata.components) {
            return Err(MdnError::Config(format!(
                "components must be 2 or 3, got {}",
                metadata.components
            )));
        }
        if metadata.agents != SLOTS {
            return Err(MdnError::Config(format!("agents must be {SLOTS}, got {}", metadata.agents)));
        }
        metadata
            .action_bounds
            .validate()
            .map_err(MdnError::Config)?;
        let w = MdnWeights { metadata, tensors };
        w.check_shapes()?;
        Ok(w)
    }

    fn check_shapes(&self) -> Result<(), MdnError> {
        let expected = self.metadata.expected_shapes()?;
        for t in &self.tensors {
            if t.data.len() != t.shape.iter().product::<usize>() {
                return Err(MdnError::Shape(format!(
                    "{}: {} values for shape {:?}",
                    t.name,
                    t.data.len(),
                    t.shape
                )));
            }
            if !expected.iter().any(|(n, _)| *n == t.name) {
                return Err(MdnError::Shape(format!("unexpected tensor {}", t.name)));
            }
        }
        for (name, shape) in &expected {
            let t = self
                .find(name)
                .ok_or_else(|| MdnError::Shape(format!("missing tensor {name}")))?;
            if t.shape == *shape {
                continue;
            }
            // Name the producer(s) when the input width is what disagrees.
            if let Some((_, sources)) = INPUT_SOURCES.iter().find(|(n, _)| n == name) {
                if t.shape.len() >= 2 && shape.len() >= 2 && t.shape[0] == shape[0] && t.shape[1] != shape[1] {
                    let produced: Vec<String> = sources
                        .iter()
                        .map(|s| match self.find(s) {
                            Some(src) => format!("{s} outputs {}", src.shape[0]),
                            None => format!("{s} missing"),
                        })
                        .collect();
                    return Err(MdnError::Shape(format!(
                        "{name} takes {} inputs but expects {} ({})",
                        t.shape[1],
                        shape[1],
                        produced.join(" + ")
                    )));
                }
            }
            return Err(MdnError::Shape(format!(
                "{name} has shape {:?}, expected {:?}",
                t.shape, shape
            )));
        }
        Ok(())
    }

    fn find(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn data(&self, name: &str) -> &[f32] {
        &self.find(name).expect("validated tensor present").data
    }

    pub fn metadata(&self) -> &MdnMetadata {
        &self.metadata
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn into_parts(self) -> (MdnMetadata, Vec<Tensor>) {
        (self.metadata, self.tensors)
    }

    pub fn zeros(metadata: MdnMetadata) -> Result<Self, MdnError> {
        let tensors = metadata
            .expected_shapes()?
            .into_iter()
            .map(|(name, shape)| Tensor {
                name: name.to_string(),
                data: vec![0.0; shape.iter().product()],
                shape,
            })
            .collect();
        MdnWeights::new(metadata, tensors)
    }

    /// Uniform `±1/sqrt(fan_in)` initialization; deterministic in `seed`.
    pub fn random(metadata: MdnMetadata, seed: u64) -> Result<Self, MdnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = metadata.expected_shapes()?;
        let mut tensors = Vec::with_capacity(shapes.len());
        let mut fan_in = 1usize;
        for (name, shape) in shapes {
            if name.ends_with(".weight") {
                fan_in = shape[1..].iter().product();
            }
            let bound = 1.0 / (fan_in as f32).sqrt();
            let data = (0..shape.iter().product::<usize>())
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            tensors.push(Tensor {
                name: name.to_string(),
                shape,
                data,
            });
        }
        MdnWeights::new(metadata, tensors)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format::to_bytes(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MdnError> {
        format::from_bytes(bytes)
    }

    fn dense(&self, layer: &str, input: &[f32]) -> Vec<f32> {
        let w = self.data(&format!("{layer}.weight"));
        let b = self.data(&format!("{layer}.bias"));
        layers::dense(w, b, input)
    }

    /// fc1 → ReLU → fc2 → ReLU.
    pub fn scalar_branch(&self, scalars: &[f32]) -> Vec<f32> {
        let mut h = self.dense("fc1", scalars);
        layers::relu_in_place(&mut h);
        let mut h = self.dense("fc2", &h);
        layers::relu_in_place(&mut h);
        h
    }

    /// conv1 → ReLU → conv2 → ReLU → flatten → fc3 → ReLU.
    pub fn visual_branch(&self, grid: &[f32]) -> Result<Vec<f32>, MdnError> {
        let m = &self.metadata;
        let g = &m.features.grid;
        let input = PlaneView {
            channels: m.in_channels,
            height: g.lat_cells,
            width: g.lon_cells,
            data: grid,
        };
        let c1 = &m.conv1;
        let mut x = conv2d_reflect_view(
            input,
            self.data("conv1.weight"),
            c1.filters,
            c1.kernel,
            c1.kernel,
            self.data("conv1.bias"),
            c1.stride,
            c1.pad,
        )?;
        layers::relu_in_place(&mut x.data);
        let c2 = &m.conv2;
        let mut x = conv2d_reflect(
            &x,
            self.data("conv2.weight"),
            c2.filters,
            c2.kernel,
            c2.kernel,
            self.data("conv2.bias"),
            c2.stride,
            c2.pad,
        )?;
        layers::relu_in_place(&mut x.data);
        let mut h = self.dense("fc3", &x.data);
        layers::relu_in_place(&mut h);
        Ok(h)
    }

    /// Shared trunk and heads given both branch embeddings.
    pub fn heads(&self, scalar: &[f32], visual: &[f32]) -> RawHeads {
        let mut joined = Vec::with_capacity(scalar.len() + visual.len());
        joined.extend_from_slice(scalar);
        joined.extend_from_slice(visual);
        let mut h = self.dense("fc4", &joined);
        layers::relu_in_place(&mut h);
        let mut h = self.dense("fc5", &h);
        layers::relu_in_place(&mut h);
        RawHeads {
            mix_logits: self.dense("fc6", &h),
            means: self.dense("fc7", &h),
            var_pre: self.dense("fc8", &h),
        }
    }
}

/// Pre-activation head outputs, each `[axis][slot][component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawHeads {
    pub mix_logits: Vec<f32>,
    pub means: Vec<f32>,
    pub var_pre: Vec<f32>,
}

/// Per-slot action mixtures for one ego viewpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct MdnPrediction {
    pub slots: Vec<FactoredActionGmm>,
    pub valid: Vec<bool>,
    pub slot_agents: Vec<Option<usize>>,
}

impl MdnPrediction {
    /// Mixture for scene agent `agent`, if it occupies a valid slot.
    pub fn for_agent(&self, agent: usize) -> Option<&FactoredActionGmm> {
        self.slot_agents
            .iter()
            .zip(&self.valid)
            .position(|(a, &v)| v && *a == Some(agent))
            .map(|slot| &self.slots[slot])
    }

    /// Mixtures indexed by scene agent.
    pub fn per_agent(&self, agents: usize) -> Vec<Option<FactoredActionGmm>> {
        (0..agents).map(|a| self.for_agent(a).cloned()).collect()
    }
}

fn axis_mixture(
    heads: &RawHeads,
    meta: &MdnMetadata,
    axis: usize,
    slot: usize,
) -> Gmm1D {
    let k = meta.components;
    let base = (axis * meta.agents + slot) * k;
    let b = &meta.action_bounds;
    let (mid, half) = if axis == 0 {
        (0.5 * (b.dv_min + b.dv_max), 0.5 * (b.dv_max - b.dv_min))
    } else {
        (0.5 * (b.dy_min + b.dy_max), 0.5 * (b.dy_max - b.dy_min))
    };
    let logits: Vec<f64> = heads.mix_logits[base..base + k].iter().map(|&v| v as f64).collect();
    let phi = layers::softmax(&logits);
    let mu = heads.means[base..base + k].iter().map(|&v| mid + v as f64 * half).collect();
    let var = heads.var_pre[base..base + k].iter().map(|&v| nnelu(v as f64).max(f64::MIN_POSITIVE)).collect();
    Gmm1D::new(phi, mu, var).expect("softmax and nnelu heads yield a valid mixture")
}

pub fn decode_heads(heads: &RawHeads, meta: &MdnMetadata, valid: Vec<bool>, slot_agents: Vec<Option<usize>>) -> MdnPrediction {
    let slots = (0..meta.agents)
        .map(|s| FactoredActionGmm {
            lon: axis_mixture(heads, meta, 0, s),
            lat: axis_mixture(heads, meta, 1, s),
        })
        .collect();
    MdnPrediction {
        slots,
        valid,
        slot_agents,
    }
}

pub fn forward(weights: &MdnWeights, features: &FeatureTensor) -> Result<MdnPrediction, MdnError> {
    let meta = weights.metadata();
    let g = &meta.features.grid;
    if features.grid_spec.lon_cells != g.lon_cells || features.grid_spec.lat_cells != g.lat_cells {
        return Err(MdnError::Input(format!(
            "grid {}x{} does not match network input {}x{}",
            features.grid_spec.lon_cells, features.grid_spec.lat_cells, g.lon_cells, g.lat_cells
        )));
    }
    if features.grid.len() != meta.in_channels * g.cells_per_channel() {
        return Err(MdnError::Input(format!("grid holds {} values", features.grid.len())));
    }
    if features.scalars.values.len() != SCALAR_LEN {
        return Err(MdnError::Input(format!(
            "scalar vector has {} values, expected {SCALAR_LEN}",
            features.scalars.values.len()
        )));
    }
    let scalar = weights.scalar_branch(&features.scalars.values);
    let visual = weights.visual_branch(&features.grid)?;
    let heads = weights.heads(&scalar, &visual);
    Ok(decode_heads(
        &heads,
        meta,
        features.scalars.mask.clone(),
        features.scalars.slot_agents.clone(),
    ))
}

/// Builds features for `ego` from the scene history (oldest first) and runs the network.
pub fn predict_policy(weights: &MdnWeights, history: &[Scene], ego: usize) -> Result<MdnPrediction, MdnError> {
    if history.is_empty() || ego >= history[history.len() - 1].agent_count() {
        return Err(MdnError::Input("empty history or ego index out of range".into()));
    }
    let features = build_features(history, ego, &weights.metadata().features);
    forward(weights, &features)
}
