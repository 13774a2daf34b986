use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NetConfig, Normalization};
use crate::error::{Error, Result};

/// Location of a dense layer `y = W x + b` in the flat parameter vector.
/// `W` is stored row-major with shape `(outputs, inputs)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearSlot {
    pub weight: usize,
    pub bias: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl LinearSlot {
    fn allocate(cursor: &mut usize, inputs: usize, outputs: usize) -> Self {
        let weight = *cursor;
        let bias = weight + inputs * outputs;
        *cursor = bias + outputs;
        LinearSlot {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight..self.weight + self.inputs * self.outputs
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias..self.bias + self.outputs
    }
}

/// Elementwise `scale * z + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AffineSlot {
    pub scale: usize,
    pub shift: usize,
    pub len: usize,
}

impl AffineSlot {
    fn allocate(cursor: &mut usize, len: usize) -> Self {
        let scale = *cursor;
        let shift = scale + len;
        *cursor = shift + len;
        AffineSlot { scale, shift, len }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSlots {
    pub first: LinearSlot,
    pub first_norm: Option<AffineSlot>,
    pub second: LinearSlot,
    pub second_norm: Option<AffineSlot>,
}

/// Parameter layout: input lifting `2 -> width`, `blocks` residual blocks of
/// two `width -> width` sub-layers, and a `width -> 1` head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub lift: LinearSlot,
    pub blocks: Vec<BlockSlots>,
    pub head: LinearSlot,
    pub total: usize,
}

impl Layout {
    pub fn new(config: &NetConfig) -> Self {
        let w = config.width;
        let mut cursor = 0;
        let lift = LinearSlot::allocate(&mut cursor, 2, w);
        let affine = config.normalization == Normalization::PerLayerAffine;
        let blocks = (0..config.blocks)
            .map(|_| {
                let first = LinearSlot::allocate(&mut cursor, w, w);
                let first_norm = affine.then(|| AffineSlot::allocate(&mut cursor, w));
                let second = LinearSlot::allocate(&mut cursor, w, w);
                let second_norm = affine.then(|| AffineSlot::allocate(&mut cursor, w));
                BlockSlots {
                    first,
                    first_norm,
                    second,
                    second_norm,
                }
            })
            .collect();
        let head = LinearSlot::allocate(&mut cursor, w, 1);
        Layout {
            lift,
            blocks,
            head,
            total: cursor,
        }
    }
}

/// Flat parameter vector of one network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetParams {
    pub config: NetConfig,
    pub seed: u64,
    pub values: Vec<f64>,
    #[serde(skip)]
    layout: Option<Layout>,
}

impl PartialEq for NetParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.seed == other.seed && self.values == other.values
    }
}

impl NetParams {
    pub fn from_values(config: NetConfig, seed: u64, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if values.len() != layout.total {
            return Err(Error::VersionMismatch(format!(
                "parameter vector has {} entries, layout expects {}",
                values.len(),
                layout.total
            )));
        }
        Ok(NetParams {
            config,
            seed,
            values,
            layout: Some(layout),
        })
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        let n = Layout::new(&config).total;
        Self::from_values(config, 0, vec![0.0; n])
    }

    pub fn layout(&self) -> Layout {
        self.layout.clone().unwrap_or_else(|| Layout::new(&self.config))
    }

    /// Rebuilds the cached layout after deserialization and checks its size.
    pub fn restore_layout(&mut self) -> Result<()> {
        self.config.validate()?;
        let layout = Layout::new(&self.config);
        if layout.total != self.values.len() {
            return Err(Error::VersionMismatch(format!(
                "parameter vector has {} entries, layout expects {}",
                self.values.len(),
                layout.total
            )));
        }
        self.layout = Some(layout);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Deterministic initialization: uniform weights with bound
/// `sqrt(6 / (fan_in + fan_out))`, zero biases, unit affine scales.
pub fn init_params(config: &NetConfig, seed: u64) -> Result<NetParams> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut values = vec![0.0; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |slot: &LinearSlot, values: &mut [f64]| {
        let bound = (6.0 / (slot.inputs + slot.outputs) as f64).sqrt();
        for v in &mut values[slot.weight_range()] {
            *v = rng.random_range(-bound..bound);
        }
    };
    fill(&layout.lift, &mut values);
    for block in &layout.blocks {
        fill(&block.first, &mut values);
        fill(&block.second, &mut values);
        for norm in [block.first_norm, block.second_norm].into_iter().flatten() {
            values[norm.scale..norm.scale + norm.len].fill(1.0);
        }
    }
    fill(&layout.head, &mut values);
    NetParams::from_values(*config, seed, values)
}
