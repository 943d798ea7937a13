//! Reverse-mode differentiation over whole-tensor operations.
//!
//! Operations are recorded in execution order, so the node list is already a
//! topological order and [`Tape::backward`] is a single reverse sweep. Each
//! node keeps whatever its VJP needs (layer-norm statistics, quanvolution
//! amplitudes, softmax probabilities).

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::model::layers;
use crate::quanv::{QuanvContext, QuanvLayer};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

/// Handle to a tensor recorded on a particular [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

enum Op {
    Leaf {
        trainable: bool,
    },
    Quanv {
        input: Var,
        params: Var,
        layer: QuanvLayer,
        ctx: QuanvContext,
    },
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        ctx: layers::LayerNormContext,
    },
    Mish {
        input: Var,
    },
    Shuffle {
        input: Var,
        groups: usize,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Slice {
        input: Var,
        start: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Sum {
        input: Var,
    },
    AvgPool {
        input: Var,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// An append-only record of tensor operations.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every trainable leaf of a tape.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a trainable leaf. Leaves the loss does not depend on get
    /// an all-zero tensor.
    pub fn wrt(&self, var: Var) -> Result<&Tensor> {
        if var.tape != self.tape {
            return Err(Error::State("variable belongs to another tape".into()));
        }
        self.grads
            .get(var.index)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::State(format!("node {} is not a trainable leaf", var.index)))
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn node(&self, var: Var) -> Result<&Node> {
        if var.tape != self.id {
            return Err(Error::State("variable belongs to another tape".into()));
        }
        self.nodes
            .get(var.index)
            .ok_or_else(|| Error::State(format!("node {} is not on the tape", var.index)))
    }

    pub fn value(&self, var: Var) -> Result<&Tensor> {
        Ok(&self.node(var)?.value)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { trainable: true })
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { trainable: false })
    }

    /// Applies `layer` with its θ/λ taken from the `params` leaf (flattened in
    /// [`QuanvLayer::params`] order); φ comes from `layer` itself.
    pub fn quanv(&mut self, layer: &QuanvLayer, input: Var, params: Var) -> Result<Var> {
        let mut layer = layer.clone();
        layer.set_params(self.value(params)?.data())?;
        let (out, ctx) = layer.forward(self.value(input)?)?;
        Ok(self.push(
            out,
            Op::Quanv {
                input,
                params,
                layer,
                ctx,
            },
        ))
    }

    pub fn layer_norm(&mut self, input: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (out, ctx) = layers::layer_norm(
            self.value(input)?,
            self.value(gamma)?.data(),
            self.value(beta)?.data(),
        )?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                input,
                gamma,
                beta,
                ctx,
            },
        ))
    }

    pub fn mish(&mut self, input: Var) -> Result<Var> {
        let out = self.value(input)?.map(layers::mish);
        Ok(self.push(out, Op::Mish { input }))
    }

    pub fn channel_shuffle(&mut self, input: Var, groups: usize) -> Result<Var> {
        let out = layers::channel_shuffle(self.value(input)?, groups)?;
        Ok(self.push(out, Op::Shuffle { input, groups }))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = layers::concat_channels(self.value(a)?, self.value(b)?)?;
        Ok(self.push(out, Op::Concat { a, b }))
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        let out = layers::slice_channels(self.value(input)?, start, end)?;
        Ok(self.push(out, Op::Slice { input, start }))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<(&Tensor, &Tensor)> {
        let (ta, tb) = (self.value(a)?, self.value(b)?);
        if ta.shape() != tb.shape() {
            return Err(Error::arg(format!(
                "shape mismatch {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        Ok((ta, tb))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.same_shape(a, b)?;
        let mut out = ta.clone();
        out.add_assign(tb);
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = self.same_shape(a, b)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(ta.rows(), ta.cols(), data)?;
        Ok(self.push(out, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let out = self.value(input)?.map(|v| v * factor);
        Ok(self.push(out, Op::Scale { input, factor }))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input)?.data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum { input }))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let out = layers::global_avg_pool(self.value(input)?)?;
        Ok(self.push(out, Op::AvgPool { input }))
    }

    /// `−log softmax(logits)[label]` for a column of logits.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits)?;
        if z.cols() != 1 || label >= z.rows() {
            return Err(Error::arg(format!(
                "label {label} invalid for logits of shape {:?}",
                z.shape()
            )));
        }
        let probs = crate::autodiff::softmax(z.data());
        let loss = crate::autodiff::cross_entropy(z.data(), label);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.node(loss)?;
        if root.value.shape() != (1, 1) {
            return Err(Error::arg(format!(
                "loss must be a scalar, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.index] = Some(Tensor::scalar(1.0));

        for index in (0..=loss.index).rev() {
            let node = &self.nodes[index];
            if matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            let Some(g) = grads[index].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf { .. } => unreachable!(),
                Op::Quanv {
                    input,
                    params,
                    layer,
                    ctx,
                } => {
                    let qg = layer.backward(&g, ctx)?;
                    let shape = self.nodes[params.index].value.shape();
                    accumulate(&mut grads[input.index], qg.input);
                    accumulate(
                        &mut grads[params.index],
                        Tensor::from_vec(shape.0, shape.1, qg.params)?,
                    );
                }
                Op::LayerNorm {
                    input,
                    gamma,
                    beta,
                    ctx,
                } => {
                    let gamma_t = &self.nodes[gamma.index].value;
                    let (dx, dg, db) = layers::layer_norm_backward(&g, gamma_t.data(), ctx);
                    accumulate(&mut grads[input.index], dx);
                    let (r, c) = gamma_t.shape();
                    accumulate(&mut grads[gamma.index], Tensor::from_vec(r, c, dg)?);
                    let (r, c) = self.nodes[beta.index].value.shape();
                    accumulate(&mut grads[beta.index], Tensor::from_vec(r, c, db)?);
                }
                Op::Mish { input } => {
                    let x = &self.nodes[input.index].value;
                    let data = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &u)| u * layers::mish_grad(v))
                        .collect();
                    accumulate(&mut grads[input.index], Tensor::from_vec(x.rows(), x.cols(), data)?);
                }
                Op::Shuffle { input, groups } => {
                    accumulate(&mut grads[input.index], layers::channel_unshuffle(&g, *groups)?);
                }
                Op::Concat { a, b } => {
                    let split = self.nodes[a.index].value.rows();
                    accumulate(&mut grads[a.index], layers::slice_channels(&g, 0, split)?);
                    accumulate(&mut grads[b.index], layers::slice_channels(&g, split, g.rows())?);
                }
                Op::Slice { input, start } => {
                    let x = &self.nodes[input.index].value;
                    let mut dx = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..g.rows() {
                        dx.row_mut(start + r).copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads[input.index], dx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[a.index], g.clone());
                    accumulate(&mut grads[b.index], g);
                }
                Op::Mul { a, b } => {
                    let (ta, tb) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
                    let da = g.data().iter().zip(tb.data()).map(|(u, y)| u * y).collect();
                    let db = g.data().iter().zip(ta.data()).map(|(u, x)| u * x).collect();
                    accumulate(&mut grads[a.index], Tensor::from_vec(g.rows(), g.cols(), da)?);
                    accumulate(&mut grads[b.index], Tensor::from_vec(g.rows(), g.cols(), db)?);
                }
                Op::Scale { input, factor } => {
                    accumulate(&mut grads[input.index], g.map(|u| u * factor));
                }
                Op::Sum { input } => {
                    let (r, c) = self.nodes[input.index].value.shape();
                    let u = g.get(0, 0);
                    accumulate(&mut grads[input.index], Tensor::from_vec(r, c, vec![u; r * c])?);
                }
                Op::AvgPool { input } => {
                    let len = self.nodes[input.index].value.cols();
                    accumulate(&mut grads[input.index], layers::global_avg_pool_backward(&g, len));
                }
                Op::CrossEntropy {
                    logits,
                    label,
                    probs,
                } => {
                    let u = g.get(0, 0);
                    let d = probs
                        .iter()
                        .enumerate()
                        .map(|(i, &p)| u * (p - if i == *label { 1.0 } else { 0.0 }))
                        .collect();
                    accumulate(&mut grads[logits.index], Tensor::column(d));
                }
            }
        }

        let out = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match node.op {
                Op::Leaf { trainable: true } => {
                    Some(g.unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols())))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads: out,
        })
    }
}
