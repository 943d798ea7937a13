//! The Cross Residual block.
//!
//! Fixed wiring for an input `x` of `C` channels:
//!
//! ```text
//! s   = shuffle(x, 4)
//! q   = mish(layer_norm(quanv(s; c_out = C/2)))
//! a   = shuffle(concat(q, s[..C/2]), 8)
//! out = a + x
//! ```
//!
//! `use_shuffle = false` turns both shuffles into the identity,
//! `use_aggregation = false` replaces the concatenation by a full-width quanv
//! (`c_out = C`) and `use_skip = false` drops the final addition.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::quanv::{QuanvConfig, QuanvLayer};

/// Ablation switches shared by every block of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockToggles {
    pub use_skip: bool,
    pub use_aggregation: bool,
    pub use_shuffle: bool,
}

impl Default for BlockToggles {
    fn default() -> Self {
        Self {
            use_skip: true,
            use_aggregation: true,
            use_shuffle: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossResidualConfig {
    pub channels: usize,
    pub kernel: usize,
    pub padding: usize,
    pub temperature: f64,
    pub shuffle_groups_1: usize,
    pub shuffle_groups_2: usize,
    pub toggles: BlockToggles,
    pub depth: usize,
}

impl CrossResidualConfig {
    pub fn new(channels: usize, kernel: usize, padding: usize, temperature: f64) -> Self {
        Self {
            channels,
            kernel,
            padding,
            temperature,
            shuffle_groups_1: 4,
            shuffle_groups_2: 8,
            toggles: BlockToggles::default(),
            depth: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c == 0 || self.kernel == 0 {
            return Err(Error::config("block channels and kernel must be positive"));
        }
        // stride 1 keeps L iff the padded span loses exactly k − 1 positions
        if self.padding.checked_mul(2) != Some(self.kernel - 1) {
            return Err(Error::config(format!(
                "kernel {} with padding {} does not preserve length",
                self.kernel, self.padding
            )));
        }
        if self.toggles.use_shuffle {
            for g in [self.shuffle_groups_1, self.shuffle_groups_2] {
                if g == 0 || !c.is_multiple_of(g) {
                    return Err(Error::config(format!(
                        "{c} channels are not divisible by {g} shuffle groups"
                    )));
                }
            }
        }
        if self.toggles.use_aggregation && !c.is_multiple_of(2) {
            return Err(Error::config(format!(
                "aggregation needs an even channel count, got {c}"
            )));
        }
        self.quanv_config().validate()
    }

    /// Width of the quantum branch.
    pub fn branch_channels(&self) -> usize {
        if self.toggles.use_aggregation {
            self.channels / 2
        } else {
            self.channels
        }
    }

    pub fn quanv_config(&self) -> QuanvConfig {
        QuanvConfig::new(
            self.channels,
            self.branch_channels(),
            self.kernel,
            self.padding,
            self.temperature,
        )
        .with_depth(self.depth)
    }

    pub fn n_params(&self) -> usize {
        self.quanv_config().n_params() + 2 * self.branch_channels()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossResidualBlock {
    config: CrossResidualConfig,
    pub quanv: QuanvLayer,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl CrossResidualBlock {
    /// Random circuits, layer norm initialized to the identity affine map.
    pub fn random<R: Rng + ?Sized>(config: CrossResidualConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let quanv = QuanvLayer::random(config.quanv_config(), rng)?;
        Self::with_layer(config, quanv)
    }

    pub fn with_layer(config: CrossResidualConfig, quanv: QuanvLayer) -> Result<Self> {
        config.validate()?;
        if quanv.config() != &config.quanv_config() {
            return Err(Error::config("quanv layer does not match the block geometry"));
        }
        let width = config.branch_channels();
        Ok(Self {
            config,
            quanv,
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
        })
    }

    pub fn config(&self) -> &CrossResidualConfig {
        &self.config
    }

    pub(crate) fn params(&self) -> Vec<f64> {
        let mut p = self.quanv.params();
        p.extend_from_slice(&self.gamma);
        p.extend_from_slice(&self.beta);
        p
    }

    pub(crate) fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let nq = self.quanv.config().n_params();
        let w = self.config.branch_channels();
        if params.len() != nq + 2 * w {
            return Err(Error::arg("block parameter count mismatch"));
        }
        self.quanv.set_params(&params[..nq])?;
        self.gamma.copy_from_slice(&params[nq..nq + w]);
        self.beta.copy_from_slice(&params[nq + w..]);
        Ok(())
    }

    /// Records the block on `tape`. Returns the output and the parameter
    /// leaves in [`Self::params`] order (quanv, gamma, beta).
    pub fn record(&self, tape: &mut Tape, x: Var) -> Result<(Var, [Var; 3])> {
        let cfg = &self.config;
        let c = cfg.channels;
        let shape = tape.value(x)?.shape();
        if shape.0 != c {
            return Err(Error::arg(format!(
                "block expects {c} channels, got {}",
                shape.0
            )));
        }
        let toggles = cfg.toggles;
        let qp = tape.param(crate::Tensor::column(self.quanv.params()));
        let gamma = tape.param(crate::Tensor::column(self.gamma.clone()));
        let beta = tape.param(crate::Tensor::column(self.beta.clone()));

        let s = if toggles.use_shuffle {
            tape.channel_shuffle(x, cfg.shuffle_groups_1)?
        } else {
            x
        };
        let q = tape.quanv(&self.quanv, s, qp)?;
        let q = tape.layer_norm(q, gamma, beta)?;
        let q = tape.mish(q)?;
        let a = if toggles.use_aggregation {
            let reused = tape.slice_channels(s, 0, c / 2)?;
            tape.concat(q, reused)?
        } else {
            q
        };
        let a = if toggles.use_shuffle {
            tape.channel_shuffle(a, cfg.shuffle_groups_2)?
        } else {
            a
        };
        let out = if toggles.use_skip { tape.add(a, x)? } else { a };
        Ok((out, [qp, gamma, beta]))
    }

    pub fn forward(&self, x: &crate::Tensor) -> Result<crate::Tensor> {
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let (out, _) = self.record(&mut tape, input)?;
        Ok(tape.value(out)?.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layers;
    use crate::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input(c: usize, l: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(c, l, (0..c * l).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn ablated_block_is_plain_quanv_ln_mish() {
        let mut cfg = CrossResidualConfig::new(8, 3, 1, 0.9);
        cfg.toggles = BlockToggles {
            use_skip: false,
            use_aggregation: false,
            use_shuffle: false,
        };
        let block = CrossResidualBlock::with_layer(
            cfg.clone(),
            QuanvLayer::identity(cfg.quanv_config()).unwrap(),
        )
        .unwrap();
        let x = input(8, 10, 1);
        let (q, _) = block.quanv.forward(&x).unwrap();
        let (n, _) = layers::layer_norm(&q, &block.gamma, &block.beta).unwrap();
        assert_eq!(block.forward(&x).unwrap(), n.map(layers::mish));
    }

    #[test]
    fn zero_branch_leaves_input_unchanged() {
        // gamma = beta = 0 zeroes the quanv branch; with aggregation off and
        // no shuffle the non-skip path is exactly zero
        let mut cfg = CrossResidualConfig::new(8, 5, 2, 1.2);
        cfg.toggles.use_aggregation = false;
        cfg.toggles.use_shuffle = false;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut block = CrossResidualBlock::random(cfg, &mut rng).unwrap();
        block.gamma.fill(0.0);
        block.beta.fill(0.0);
        let x = input(8, 9, 3);
        assert_eq!(block.forward(&x).unwrap(), x);
    }

    #[test]
    fn skip_path_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = CrossResidualConfig::new(8, 7, 3, 1.5);
        let block = CrossResidualBlock::random(cfg.clone(), &mut rng).unwrap();
        let mut no_skip = block.clone();
        no_skip.config.toggles.use_skip = false;
        let x = input(8, 12, 4);
        let with = block.forward(&x).unwrap();
        let branch = no_skip.forward(&x).unwrap();
        for ((o, b), xi) in with.data().iter().zip(branch.data()).zip(x.data()) {
            assert!((o - xi - b).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(matches!(
            CrossResidualConfig::new(6, 7, 3, 1.0).validate(),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            CrossResidualConfig::new(8, 7, 2, 1.0).validate(),
            Err(Error::Config(_))
        ));
        let mut cfg = CrossResidualConfig::new(6, 7, 3, 1.0);
        cfg.toggles.use_shuffle = false;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn wrong_channel_count_is_argument_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let block = CrossResidualBlock::random(CrossResidualConfig::new(8, 3, 1, 1.0), &mut rng)
            .unwrap();
        assert!(matches!(block.forward(&input(4, 5, 0)), Err(Error::Argument(_))));
    }
}
