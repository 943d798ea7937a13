//! Full QuanvNeXt assembly: windowed embedding, four Cross Residual blocks,
//! windowed projection and global average pooling to two logits.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::block::{BlockToggles, CrossResidualBlock, CrossResidualConfig};
use crate::qsim::FilterCircuit;
use crate::quanv::{QuanvConfig, QuanvLayer};
use crate::tensor::Tensor;

/// Number of output classes (HC / MDD).
pub const CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// 19 channels at 256 Hz, embedding width 32.
    #[serde(rename = "dataset-1")]
    Dataset1,
    /// 128 channels at 250 Hz, embedding width 8.
    #[serde(rename = "dataset-2")]
    Dataset2,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset-1" => Ok(Preset::Dataset1),
            "dataset-2" => Ok(Preset::Dataset2),
            other => Err(Error::config(format!(
                "unknown preset `{other}` (expected dataset-1 or dataset-2)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Dataset1 => "dataset-1",
            Preset::Dataset2 => "dataset-2",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kernel: usize,
    pub padding: usize,
    pub temperature: f64,
}

impl BlockSpec {
    const fn new(kernel: usize, padding: usize, temperature: f64) -> Self {
        Self {
            kernel,
            padding,
            temperature,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub input_length: usize,
    /// Channel count after the embedding, kept constant through the blocks.
    pub width: usize,
    pub embedding_kernel: usize,
    pub embedding_stride: usize,
    pub embedding_temperature: f64,
    pub blocks: Vec<BlockSpec>,
    pub projection_kernel: usize,
    pub projection_stride: usize,
    pub projection_temperature: f64,
    /// Repetitions of the per-qubit unitary layer inside every circuit.
    pub depth: usize,
    pub toggles: BlockToggles,
    /// NAdam learning rate the preset was tuned with.
    pub learning_rate: f64,
}

impl ModelConfig {
    pub fn preset(preset: Preset) -> Self {
        let (in_channels, input_length, width, blocks, learning_rate) = match preset {
            Preset::Dataset1 => (
                19,
                2048,
                32,
                vec![
                    BlockSpec::new(7, 3, 1.5),
                    BlockSpec::new(17, 8, 1.2),
                    BlockSpec::new(11, 5, 0.8),
                    BlockSpec::new(7, 3, 0.5),
                ],
                0.00015,
            ),
            Preset::Dataset2 => (
                128,
                2000,
                8,
                vec![
                    BlockSpec::new(7, 3, 1.5),
                    BlockSpec::new(15, 7, 1.2),
                    BlockSpec::new(9, 4, 0.8),
                    BlockSpec::new(7, 3, 0.5),
                ],
                0.0025,
            ),
        };
        Self {
            in_channels,
            input_length,
            width,
            embedding_kernel: 8,
            embedding_stride: 8,
            embedding_temperature: 1.0,
            blocks,
            projection_kernel: 8,
            projection_stride: 8,
            projection_temperature: 1.0,
            depth: 1,
            toggles: BlockToggles::default(),
            learning_rate,
        }
    }

    /// Same architecture, different raw input geometry.
    pub fn with_input(mut self, channels: usize, length: usize) -> Self {
        self.in_channels = channels;
        self.input_length = length;
        self
    }

    pub fn with_toggles(mut self, toggles: BlockToggles) -> Self {
        self.toggles = toggles;
        self
    }

    pub fn embedding_config(&self) -> QuanvConfig {
        QuanvConfig::new(
            self.in_channels,
            self.width,
            self.embedding_kernel,
            0,
            self.embedding_temperature,
        )
        .with_stride(self.embedding_stride)
        .with_depth(self.depth)
    }

    pub fn block_configs(&self) -> Vec<CrossResidualConfig> {
        self.blocks
            .iter()
            .map(|b| {
                let mut c = CrossResidualConfig::new(self.width, b.kernel, b.padding, b.temperature);
                c.toggles = self.toggles;
                c.depth = self.depth;
                c
            })
            .collect()
    }

    pub fn projection_config(&self) -> QuanvConfig {
        QuanvConfig::new(
            self.width,
            CLASSES,
            self.projection_kernel,
            0,
            self.projection_temperature,
        )
        .with_stride(self.projection_stride)
        .with_depth(self.depth)
    }

    /// `(channels, length)` after the embedding, after each block and after
    /// the projection.
    pub fn stage_shapes(&self) -> Result<Vec<(usize, usize)>> {
        let emb = self.embedding_config();
        let l = emb.output_length(self.input_length)?;
        let mut shapes = vec![(self.width, l)];
        for b in self.block_configs() {
            let bl = b.quanv_config().output_length(l)?;
            debug_assert_eq!(bl, l);
            shapes.push((self.width, bl));
        }
        let lp = self.projection_config().output_length(l)?;
        shapes.push((CLASSES, lp));
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.input_length == 0 || self.width == 0 {
            return Err(Error::config("input channels, length and width must be positive"));
        }
        if self.depth == 0 {
            return Err(Error::config("circuit depth must be positive"));
        }
        self.embedding_config().validate()?;
        for b in self.block_configs() {
            b.validate()?;
        }
        self.projection_config().validate()?;
        self.stage_shapes()
            .map_err(|e| Error::config(format!("layer geometry does not fit the input: {e}")))?;
        Ok(())
    }

    /// Trainable parameter count: `n_filters · 2 · n_qubits · depth` per quanv
    /// layer plus `2 · width` per layer norm.
    pub fn n_params(&self) -> usize {
        self.embedding_config().n_params()
            + self.block_configs().iter().map(|b| b.n_params()).sum::<usize>()
            + self.projection_config().n_params()
    }
}

/// Intermediate outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub embedding: Tensor,
    pub blocks: Vec<Tensor>,
    pub projection: Tensor,
    pub logits: Vec<f64>,
}

/// Handles into a tape holding one recorded forward pass.
pub struct Recorded {
    pub logits: Var,
    pub embedding: Var,
    pub blocks: Vec<Var>,
    pub projection: Var,
    /// Parameter leaves in [`QuanvNeXt::params`] order.
    pub params: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuanvNeXt {
    config: ModelConfig,
    embedding: QuanvLayer,
    blocks: Vec<CrossResidualBlock>,
    projection: QuanvLayer,
}

/// Builds a model with freshly initialized parameters.
pub fn build_model(config: ModelConfig, seed: u64) -> Result<QuanvNeXt> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embedding = QuanvLayer::random(config.embedding_config(), &mut rng)?;
    let blocks = config
        .block_configs()
        .into_iter()
        .map(|b| CrossResidualBlock::random(b, &mut rng))
        .collect::<Result<_>>()?;
    let projection = QuanvLayer::random(config.projection_config(), &mut rng)?;
    Ok(QuanvNeXt {
        config,
        embedding,
        blocks,
        projection,
    })
}

impl QuanvNeXt {
    /// Reassembles a model from stored parts (used by checkpoint loading).
    pub fn from_parts(
        config: ModelConfig,
        embedding: QuanvLayer,
        blocks: Vec<CrossResidualBlock>,
        projection: QuanvLayer,
    ) -> Result<Self> {
        config.validate()?;
        let block_cfgs = config.block_configs();
        if embedding.config() != &config.embedding_config()
            || projection.config() != &config.projection_config()
            || blocks.len() != block_cfgs.len()
            || blocks.iter().zip(&block_cfgs).any(|(b, c)| b.config() != c)
        {
            return Err(Error::config("layers do not match the model configuration"));
        }
        Ok(Self {
            config,
            embedding,
            blocks,
            projection,
        })
    }

    /// Rebuilds a model from flat trainable values and frozen φ, both in the
    /// order of [`Self::params`] and [`Self::phi`].
    pub fn from_flat(config: ModelConfig, params: &[f64], phi: &[f64]) -> Result<Self> {
        config.validate()?;
        let mut rest = phi;
        let mut layer = |cfg: QuanvConfig| -> Result<QuanvLayer> {
            let per = cfg.n_qubits() * cfg.depth;
            let n = cfg.n_filters() * per;
            if rest.len() < n {
                return Err(Error::arg("too few phi values for the model"));
            }
            let (head, tail) = rest.split_at(n);
            rest = tail;
            let filters = head
                .chunks(per)
                .map(|p| {
                    FilterCircuit::new(cfg.n_qubits(), cfg.depth, vec![0.0; per], vec![0.0; per], p.to_vec())
                })
                .collect::<Result<_>>()?;
            QuanvLayer::new(cfg, filters)
        };
        let embedding = layer(config.embedding_config())?;
        let blocks = config
            .block_configs()
            .into_iter()
            .map(|b| {
                let q = layer(b.quanv_config())?;
                CrossResidualBlock::with_layer(b, q)
            })
            .collect::<Result<Vec<_>>>()?;
        let projection = layer(config.projection_config())?;
        if !rest.is_empty() {
            return Err(Error::arg("too many phi values for the model"));
        }
        let mut model = Self::from_parts(config, embedding, blocks, projection)?;
        model.set_params(params)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn embedding(&self) -> &QuanvLayer {
        &self.embedding
    }

    pub fn blocks(&self) -> &[CrossResidualBlock] {
        &self.blocks
    }

    pub fn projection(&self) -> &QuanvLayer {
        &self.projection
    }

    /// Every trainable value: embedding, then each block (quanv θλ, γ, β),
    /// then the projection.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.embedding.params();
        for b in &self.blocks {
            p.extend(b.params());
        }
        p.extend(self.projection.params());
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.config.n_params() {
            return Err(Error::arg(format!(
                "model has {} parameters, got {}",
                self.config.n_params(),
                params.len()
            )));
        }
        let mut rest = params;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head
        };
        self.embedding
            .set_params(take(self.embedding.config().n_params()))?;
        for b in &mut self.blocks {
            let n = b.config().n_params();
            b.set_params(take(n))?;
        }
        let n = self.projection.config().n_params();
        self.projection.set_params(take(n))?;
        Ok(())
    }

    /// Frozen φ of every circuit, in parameter order.
    pub fn phi(&self) -> Vec<f64> {
        let mut p = self.embedding.phi();
        for b in &self.blocks {
            p.extend(b.quanv.phi());
        }
        p.extend(self.projection.phi());
        p
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = (self.config.in_channels, self.config.input_length);
        if x.shape() != want {
            return Err(Error::arg(format!(
                "input shape {:?} does not match the model's {want:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Records a forward pass on `tape`.
    pub fn record(&self, tape: &mut Tape, x: &Tensor) -> Result<Recorded> {
        self.check_input(x)?;
        let input = tape.constant(x.clone());
        let mut params = Vec::new();

        let ep = tape.param(Tensor::column(self.embedding.params()));
        params.push(ep);
        let embedding = tape.quanv(&self.embedding, input, ep)?;

        let mut h = embedding;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (out, leaves) = block.record(tape, h)?;
            params.extend(leaves);
            blocks.push(out);
            h = out;
        }

        let pp = tape.param(Tensor::column(self.projection.params()));
        params.push(pp);
        let projection = tape.quanv(&self.projection, h, pp)?;
        let logits = tape.global_avg_pool(projection)?;
        Ok(Recorded {
            logits,
            embedding,
            blocks,
            projection,
            params,
        })
    }

    /// Logits for one window.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, x)?;
        Ok(tape.value(rec.logits)?.data().to_vec())
    }

    pub fn trace(&self, x: &Tensor) -> Result<ForwardTrace> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, x)?;
        Ok(ForwardTrace {
            embedding: tape.value(rec.embedding)?.clone(),
            blocks: rec
                .blocks
                .iter()
                .map(|&b| tape.value(b).cloned())
                .collect::<Result<_>>()?,
            projection: tape.value(rec.projection)?.clone(),
            logits: tape.value(rec.logits)?.data().to_vec(),
        })
    }

    /// Softmax cross-entropy loss of one window and its gradient with respect
    /// to every trainable parameter (flattened in [`Self::params`] order).
    pub fn loss_and_gradient(&self, x: &Tensor, label: usize) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, x)?;
        let loss = tape.cross_entropy(rec.logits, label)?;
        let value = tape.value(loss)?.get(0, 0);
        let grads = tape.backward(loss)?;
        let mut flat = Vec::with_capacity(self.config.n_params());
        for v in rec.params {
            flat.extend_from_slice(grads.wrt(v)?.data());
        }
        Ok((value, flat))
    }
}
