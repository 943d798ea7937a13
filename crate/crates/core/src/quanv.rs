//! Quanv1D: a Conv1D-shaped layer whose kernels are simulated quantum circuits.
//!
//! Each sliding patch of `c_in × k` values is flattened channel-major, mapped
//! through `sqrt(softmax(patch / temp))`, zero-padded to `2^n` amplitudes and
//! fed to every filter of the bank. Filter `f` writes its `n` qubit
//! expectations to output channels `f·n .. f·n + n`; channels past `c_out` are
//! computed and dropped.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::{self, FilterCircuit};
use crate::tensor::Tensor;

/// Conv-style output length: `⌊(L_in + 2p − d(k−1) − 1)/s + 1⌋`.
pub fn output_length(
    l_in: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Result<usize> {
    if kernel == 0 || stride == 0 || dilation == 0 {
        return Err(Error::arg("kernel, stride and dilation must be positive"));
    }
    let overflow = || Error::arg("layer geometry overflows");
    let span = dilation
        .checked_mul(kernel - 1)
        .and_then(|x| x.checked_add(1))
        .ok_or_else(overflow)?;
    let padded = padding
        .checked_mul(2)
        .and_then(|x| x.checked_add(l_in))
        .ok_or_else(overflow)?;
    if span > padded {
        return Err(Error::arg(format!(
            "effective kernel {span} exceeds padded length {padded}"
        )));
    }
    Ok((padded - span) / stride + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuanvConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub temperature: f64,
    pub depth: usize,
}

impl QuanvConfig {
    /// Stride-1, undilated layer.
    pub fn new(c_in: usize, c_out: usize, kernel: usize, padding: usize, temperature: f64) -> Self {
        Self {
            c_in,
            c_out,
            kernel,
            stride: 1,
            padding,
            dilation: 1,
            temperature,
            depth: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 {
            return Err(Error::config("channel counts must be positive"));
        }
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 || self.depth == 0 {
            return Err(Error::config(
                "kernel, stride, dilation and depth must be positive",
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        let max_features = 1usize << qsim::MAX_QUBITS;
        if self.c_in.checked_mul(self.kernel).is_none_or(|m| m > max_features) {
            return Err(Error::config(format!(
                "patch of {} x {} features exceeds {} qubits",
                self.c_in,
                self.kernel,
                qsim::MAX_QUBITS
            )));
        }
        // keeps every size derived from the config far from overflow
        if self.c_out > max_features || self.depth > max_features {
            return Err(Error::config("output channels or depth out of range"));
        }
        if self.n_qubits() > qsim::MAX_QUBITS {
            return Err(Error::config(format!(
                "patch of {} features needs {} qubits (max {})",
                self.patch_len(),
                self.n_qubits(),
                qsim::MAX_QUBITS
            )));
        }
        Ok(())
    }

    /// Features per patch, `c_in × k`.
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kernel
    }

    /// `⌈log₂(c_in·k)⌉`, at least one.
    pub fn n_qubits(&self) -> usize {
        (self.patch_len().next_power_of_two().trailing_zeros() as usize).max(1)
    }

    /// `⌊(c_out + n − 1)/n⌋`.
    pub fn n_filters(&self) -> usize {
        let n = self.n_qubits();
        self.c_out.div_ceil(n)
    }

    pub fn output_length(&self, l_in: usize) -> Result<usize> {
        output_length(l_in, self.kernel, self.stride, self.padding, self.dilation)
    }

    /// Trainable values (θ and λ) across the whole bank.
    pub fn n_params(&self) -> usize {
        self.n_filters() * 2 * self.n_qubits() * self.depth
    }

    // Signed input position read by tap `j` of patch `t`.
    fn source(&self, t: usize, j: usize) -> isize {
        (t * self.stride + j * self.dilation) as isize - self.padding as isize
    }
}

/// Flattened patches, one row per output position, `c_in × k` columns.
pub fn extract_patches(x: &Tensor, cfg: &QuanvConfig) -> Result<Tensor> {
    if x.rows() != cfg.c_in {
        return Err(Error::arg(format!(
            "input has {} channels, layer expects {}",
            x.rows(),
            cfg.c_in
        )));
    }
    let l_in = x.cols();
    let l_out = cfg.output_length(l_in)?;
    let k = cfg.kernel;
    let mut patches = Tensor::zeros(l_out, cfg.patch_len());
    for t in 0..l_out {
        let row = patches.row_mut(t);
        for c in 0..cfg.c_in {
            let src = x.row(c);
            for j in 0..k {
                let pos = cfg.source(t, j);
                if pos >= 0 && (pos as usize) < l_in {
                    row[c * k + j] = src[pos as usize];
                }
            }
        }
    }
    Ok(patches)
}

/// `sqrt(softmax(patch / temp))`, zero-padded to `target_dim`.
pub fn normalize_patch(patch: &[f64], temp: f64, target_dim: usize) -> Result<Vec<f64>> {
    if !(temp > 0.0) {
        return Err(Error::arg(format!("temperature must be positive, got {temp}")));
    }
    if patch.is_empty() || patch.len() > target_dim {
        return Err(Error::arg(format!(
            "patch of length {} does not fit {target_dim} amplitudes",
            patch.len()
        )));
    }
    let max = patch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; target_dim];
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(patch) {
        *o = ((v - max) / temp).exp();
        total += *o;
    }
    for o in &mut out[..patch.len()] {
        *o = (*o / total).sqrt();
    }
    Ok(out)
}

/// Pulls `dL/da` back through `a = sqrt(softmax(z / temp))` to `dL/dz`.
///
/// With `p = a²`, `dL/dz_j = (a_j g_j − p_j Σᵢ aᵢ gᵢ) / (2·temp)`.
pub fn normalize_patch_backward(amplitudes: &[f64], upstream: &[f64], temp: f64) -> Vec<f64> {
    let dot: f64 = amplitudes.iter().zip(upstream).map(|(a, g)| a * g).sum();
    amplitudes
        .iter()
        .zip(upstream)
        .map(|(&a, &g)| (a * g - a * a * dot) / (2.0 * temp))
        .collect()
}

/// A Quanv1D layer: geometry plus its bank of filter circuits.
#[derive(Clone, Debug, PartialEq)]
pub struct QuanvLayer {
    config: QuanvConfig,
    filters: Vec<FilterCircuit>,
}

/// What the backward pass needs from a forward evaluation.
#[derive(Clone, Debug)]
pub struct QuanvContext {
    l_in: usize,
    /// Normalized, *unpadded* amplitudes of every patch (`L_out × c_in·k`).
    amplitudes: Tensor,
}

/// Gradients produced by [`QuanvLayer::backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct QuanvGradients {
    /// Flattened in [`QuanvLayer::params`] order.
    pub params: Vec<f64>,
    pub input: Tensor,
}

impl QuanvLayer {
    pub fn new(config: QuanvConfig, filters: Vec<FilterCircuit>) -> Result<Self> {
        config.validate()?;
        if filters.len() != config.n_filters() {
            return Err(Error::config(format!(
                "layer needs {} filters, got {}",
                config.n_filters(),
                filters.len()
            )));
        }
        let (n, depth) = (config.n_qubits(), config.depth);
        if filters.iter().any(|f| f.n_qubits() != n || f.depth() != depth) {
            return Err(Error::config(format!(
                "every filter must have {n} qubits and depth {depth}"
            )));
        }
        Ok(Self { config, filters })
    }

    pub fn random<R: Rng + ?Sized>(config: QuanvConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let filters = (0..config.n_filters())
            .map(|_| FilterCircuit::random(config.n_qubits(), config.depth, rng))
            .collect::<Result<_>>()?;
        Self::new(config, filters)
    }

    /// Every gate is the identity.
    pub fn identity(config: QuanvConfig) -> Result<Self> {
        config.validate()?;
        let filters = (0..config.n_filters())
            .map(|_| FilterCircuit::identity(config.n_qubits(), config.depth))
            .collect::<Result<_>>()?;
        Self::new(config, filters)
    }

    pub fn config(&self) -> &QuanvConfig {
        &self.config
    }

    pub fn filters(&self) -> &[FilterCircuit] {
        &self.filters
    }

    /// θ then λ for each filter, in filter order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.config.n_params());
        for f in &self.filters {
            out.extend_from_slice(&f.theta);
            out.extend_from_slice(&f.lambda);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.config.n_params() {
            return Err(Error::arg(format!(
                "layer has {} parameters, got {}",
                self.config.n_params(),
                params.len()
            )));
        }
        let per = self.config.n_qubits() * self.config.depth;
        for (f, chunk) in self.filters.iter_mut().zip(params.chunks(2 * per)) {
            f.theta.copy_from_slice(&chunk[..per]);
            f.lambda.copy_from_slice(&chunk[per..]);
        }
        Ok(())
    }

    /// Frozen φ values of every filter, in filter order.
    pub fn phi(&self) -> Vec<f64> {
        self.filters.iter().flat_map(|f| f.phi().iter().copied()).collect()
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, QuanvContext)> {
        let cfg = &self.config;
        let patches = extract_patches(x, cfg)?;
        let (l_out, m) = patches.shape();
        let n = cfg.n_qubits();
        let dim = 1usize << n;
        let readouts: Vec<qsim::Readout> = self.filters.iter().map(FilterCircuit::readout).collect();
        let mut amplitudes = Tensor::zeros(l_out, m);
        let mut out = Tensor::zeros(cfg.c_out, l_out);
        for t in 0..l_out {
            let a = normalize_patch(patches.row(t), cfg.temperature, dim)?;
            let marg = qsim::marginals(&a)?;
            for (f, r) in readouts.iter().enumerate() {
                for q in 0..n {
                    let ch = f * n + q;
                    if ch < cfg.c_out {
                        out.set(ch, t, r.expectation(q, &marg));
                    }
                }
            }
            amplitudes.row_mut(t).copy_from_slice(&a[..m]);
        }
        Ok((
            out,
            QuanvContext {
                l_in: x.cols(),
                amplitudes,
            },
        ))
    }

    pub fn backward(&self, upstream: &Tensor, ctx: &QuanvContext) -> Result<QuanvGradients> {
        let cfg = &self.config;
        let (l_out, m) = ctx.amplitudes.shape();
        if m != cfg.patch_len() {
            return Err(Error::State(
                "forward context was produced by a different layer".into(),
            ));
        }
        if upstream.shape() != (cfg.c_out, l_out) {
            return Err(Error::arg(format!(
                "upstream shape {:?} does not match output ({}, {l_out})",
                upstream.shape(),
                cfg.c_out
            )));
        }
        let n = cfg.n_qubits();
        let per = n * cfg.depth;
        let dim = 1usize << n;
        let k = cfg.kernel;
        let readouts: Vec<qsim::Readout> = self.filters.iter().map(FilterCircuit::readout).collect();
        let mut params = vec![0.0; cfg.n_params()];
        let mut input = Tensor::zeros(cfg.c_in, ctx.l_in);
        let mut padded = vec![0.0; dim];
        let mut d_amp = vec![0.0; dim];
        for t in 0..l_out {
            let a = ctx.amplitudes.row(t);
            padded[..m].copy_from_slice(a);
            let marg = qsim::marginals(&padded)?;
            let mut weights = vec![[0.0; 2]; n];
            for (f, r) in readouts.iter().enumerate() {
                let slot = &mut params[f * 2 * per..(f + 1) * 2 * per];
                for q in 0..n {
                    let ch = f * n + q;
                    if ch >= cfg.c_out {
                        break;
                    }
                    let u = upstream.get(ch, t);
                    if u == 0.0 {
                        continue;
                    }
                    let [nz, nx] = r.axis[q];
                    weights[q][0] += u * nz;
                    weights[q][1] += u * nx;
                    let [diff, coh] = marg[q];
                    for layer in 0..cfg.depth {
                        let idx = layer * n + q;
                        let [dz, dx] = r.d_theta[idx];
                        slot[idx] += u * (dz * diff + dx * coh);
                        let [dz, dx] = r.d_lambda[idx];
                        slot[per + idx] += u * (dz * diff + dx * coh);
                    }
                }
            }
            d_amp.fill(0.0);
            qsim::marginals_backward(&padded, &weights, &mut d_amp);
            let dz = normalize_patch_backward(a, &d_amp[..m], cfg.temperature);
            for c in 0..cfg.c_in {
                for j in 0..k {
                    let pos = cfg.source(t, j);
                    if pos >= 0 && (pos as usize) < ctx.l_in {
                        let cur = input.get(c, pos as usize);
                        input.set(c, pos as usize, cur + dz[c * k + j]);
                    }
                }
            }
        }
        Ok(QuanvGradients { params, input })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_length_examples() {
        assert_eq!(output_length(2000, 8, 8, 0, 1).unwrap(), 250);
        assert_eq!(output_length(250, 8, 8, 0, 1).unwrap(), 31);
        assert_eq!(output_length(2048, 8, 8, 0, 1).unwrap(), 256);
        assert_eq!(output_length(256, 8, 8, 0, 1).unwrap(), 32);
        assert_eq!(output_length(37, 1, 1, 0, 1).unwrap(), 37);
        assert_eq!(output_length(10, 3, 1, 1, 2).unwrap(), 8);
    }

    #[test]
    fn output_length_matches_enumeration() {
        // count start positions whose dilated taps all land inside the padded signal
        for l in 1..12 {
            for k in 1..5 {
                for s in 1..4 {
                    for p in 0..3 {
                        for d in 1..3 {
                            let span = d * (k - 1) + 1;
                            let brute = (0..l + 2 * p).filter(|&st| st + span <= l + 2 * p);
                            let brute = brute.filter(|st| st % s == 0).count();
                            match output_length(l, k, s, p, d) {
                                Ok(n) => assert_eq!(n, brute, "{l} {k} {s} {p} {d}"),
                                Err(_) => assert_eq!(brute, 0),
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn oversized_kernel_rejected() {
        assert!(matches!(output_length(4, 5, 1, 0, 1), Err(Error::Argument(_))));
        assert!(matches!(output_length(4, 3, 1, 0, 2), Err(Error::Argument(_))));
    }

    #[test]
    fn patch_examples() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let cfg = QuanvConfig::new(1, 1, 2, 0, 1.0).with_stride(2);
        let p = extract_patches(&x, &cfg).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 4.0]);

        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let cfg = QuanvConfig::new(1, 1, 2, 1, 1.0);
        let p = extract_patches(&x, &cfg).unwrap();
        assert_eq!(p.data(), &[0.0, 1.0, 1.0, 2.0, 2.0, 0.0]);

        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let cfg = QuanvConfig::new(2, 1, 1, 0, 1.0);
        let p = extract_patches(&x, &cfg).unwrap();
        assert_eq!(p.data(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn normalize_examples() {
        let a = normalize_patch(&[3.0; 4], 0.7, 8).unwrap();
        assert_eq!(&a[..4], &[0.5; 4]);
        assert_eq!(&a[4..], &[0.0; 4]);

        let a = normalize_patch(&[10.0, 0.0], 0.1, 2).unwrap();
        assert_abs_diff_eq!(a[0], 1.0, epsilon = 1e-12);
        assert!(a[1] < 1e-20);

        assert!(matches!(normalize_patch(&[1.0], 0.0, 2), Err(Error::Argument(_))));
        assert!(matches!(normalize_patch(&[1.0], -1.0, 2), Err(Error::Argument(_))));
    }

    #[test]
    fn derived_qubit_and_filter_counts() {
        let emb = QuanvConfig::new(19, 32, 8, 0, 1.0).with_stride(8);
        assert_eq!((emb.n_qubits(), emb.n_filters()), (8, 4));
        let proj = QuanvConfig::new(8, 2, 8, 0, 1.0).with_stride(8);
        assert_eq!((proj.n_qubits(), proj.n_filters()), (6, 1));
        let tiny = QuanvConfig::new(1, 3, 1, 0, 1.0);
        assert_eq!((tiny.n_qubits(), tiny.n_filters()), (1, 3));
    }

    #[test]
    fn projection_keeps_first_two_of_six_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::from_vec(8, 16, (0..128).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .unwrap();
        let narrow = QuanvConfig::new(8, 2, 8, 0, 1.0).with_stride(8);
        let wide = QuanvConfig { c_out: 6, ..narrow.clone() };
        let layer = QuanvLayer::random(narrow, &mut rng).unwrap();
        let wide_layer = QuanvLayer::new(wide, layer.filters().to_vec()).unwrap();
        let (y, _) = layer.forward(&x).unwrap();
        let (w, _) = wide_layer.forward(&x).unwrap();
        assert_eq!(y.shape(), (2, 2));
        assert_eq!(y.row(0), w.row(0));
        assert_eq!(y.row(1), w.row(1));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = QuanvConfig::new(2, 3, 2, 1, 1.3);
        let layer = QuanvLayer::random(cfg, &mut rng).unwrap();
        let x = Tensor::from_vec(2, 6, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let (y, ctx) = layer.forward(&x).unwrap();
        let g = layer.backward(&Tensor::zeros(y.rows(), y.cols()), &ctx).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert_eq!(g.input.shape(), (2, 6));
    }

    #[test]
    fn context_from_other_layer_is_state_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = QuanvLayer::random(QuanvConfig::new(2, 3, 2, 0, 1.0), &mut rng).unwrap();
        let b = QuanvLayer::random(QuanvConfig::new(3, 3, 2, 0, 1.0), &mut rng).unwrap();
        let x = Tensor::zeros(2, 5);
        let (y, ctx) = a.forward(&x).unwrap();
        assert!(matches!(b.backward(&y, &ctx), Err(Error::State(_))));
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut layer =
            QuanvLayer::random(QuanvConfig::new(3, 7, 3, 1, 1.0).with_depth(2), &mut rng).unwrap();
        let p: Vec<f64> = (0..layer.config().n_params()).map(|i| i as f64).collect();
        let phi = layer.phi();
        layer.set_params(&p).unwrap();
        assert_eq!(layer.params(), p);
        assert_eq!(layer.phi(), phi);
        assert!(layer.set_params(&p[1..]).is_err());
    }
}
