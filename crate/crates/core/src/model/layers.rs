//! Classical tensor operations used inside the network, each with its
//! vector-Jacobian product.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Epsilon added to the variance in [`layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Source channel of every output channel after a shuffle with `groups`.
///
/// Channels are viewed as `(groups, C/groups)`, transposed and flattened, so
/// output `j·g + i` reads input `i·(C/g) + j`.
pub fn shuffle_permutation(channels: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || !channels.is_multiple_of(groups) {
        return Err(Error::arg(format!(
            "{channels} channels cannot be split into {groups} groups"
        )));
    }
    let per = channels / groups;
    let mut perm = vec![0; channels];
    for i in 0..groups {
        for j in 0..per {
            perm[j * groups + i] = i * per + j;
        }
    }
    Ok(perm)
}

pub fn channel_shuffle(x: &Tensor, groups: usize) -> Result<Tensor> {
    let perm = shuffle_permutation(x.rows(), groups)?;
    Ok(permute_rows(x, &perm))
}

/// Inverse of [`channel_shuffle`]; it is also its VJP.
pub fn channel_unshuffle(x: &Tensor, groups: usize) -> Result<Tensor> {
    let perm = shuffle_permutation(x.rows(), groups)?;
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for (dst, &src) in perm.iter().enumerate() {
        out.row_mut(src).copy_from_slice(x.row(dst));
    }
    Ok(out)
}

fn permute_rows(x: &Tensor, perm: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for (dst, &src) in perm.iter().enumerate() {
        out.row_mut(dst).copy_from_slice(x.row(src));
    }
    out
}

/// Saved statistics of a [`layer_norm`] call.
#[derive(Clone, Debug)]
pub struct LayerNormContext {
    /// `(x − mean) / sqrt(var + eps)`, before the affine map.
    normalized: Tensor,
    /// `1 / sqrt(var + eps)` per position.
    inv_std: Vec<f64>,
}

/// Normalizes across channels at every position, then applies a per-channel
/// affine map.
pub fn layer_norm(x: &Tensor, gamma: &[f64], beta: &[f64]) -> Result<(Tensor, LayerNormContext)> {
    let (c, l) = x.shape();
    if c == 0 {
        return Err(Error::arg("layer norm over zero channels"));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::arg(format!(
            "affine parameters have lengths {}/{}, expected {c}",
            gamma.len(),
            beta.len()
        )));
    }
    let mut normalized = Tensor::zeros(c, l);
    let mut out = Tensor::zeros(c, l);
    let mut inv_std = vec![0.0; l];
    for t in 0..l {
        let mean = (0..c).map(|ch| x.get(ch, t)).sum::<f64>() / c as f64;
        let var = (0..c).map(|ch| (x.get(ch, t) - mean).powi(2)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[t] = inv;
        for ch in 0..c {
            let n = (x.get(ch, t) - mean) * inv;
            normalized.set(ch, t, n);
            out.set(ch, t, gamma[ch] * n + beta[ch]);
        }
    }
    Ok((out, LayerNormContext { normalized, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward(
    upstream: &Tensor,
    gamma: &[f64],
    ctx: &LayerNormContext,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (c, l) = upstream.shape();
    let mut dx = Tensor::zeros(c, l);
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let cf = c as f64;
    for t in 0..l {
        let mut sum_g = 0.0;
        let mut sum_gn = 0.0;
        for ch in 0..c {
            let u = upstream.get(ch, t);
            let n = ctx.normalized.get(ch, t);
            dgamma[ch] += u * n;
            dbeta[ch] += u;
            let g = u * gamma[ch];
            sum_g += g;
            sum_gn += g * n;
        }
        for ch in 0..c {
            let g = upstream.get(ch, t) * gamma[ch];
            let n = ctx.normalized.get(ch, t);
            dx.set(ch, t, ctx.inv_std[t] * (g - sum_g / cf - n * sum_gn / cf));
        }
    }
    (dx, dgamma, dbeta)
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x · tanh(softplus(x))`.
pub fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

pub fn mish_grad(x: f64) -> f64 {
    let t = softplus(x).tanh();
    t + x * (1.0 - t * t) * sigmoid(x)
}

/// Per-channel mean over positions, as a `C × 1` column.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    if x.cols() == 0 {
        return Err(Error::arg("cannot pool an empty sequence"));
    }
    let l = x.cols() as f64;
    Ok(Tensor::column(
        (0..x.rows()).map(|c| x.row(c).iter().sum::<f64>() / l).collect(),
    ))
}

pub fn global_avg_pool_backward(upstream: &Tensor, length: usize) -> Tensor {
    let mut out = Tensor::zeros(upstream.rows(), length);
    for c in 0..upstream.rows() {
        let v = upstream.get(c, 0) / length as f64;
        out.row_mut(c).fill(v);
    }
    out
}

/// Stacks `a` over `b` along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.cols() {
        return Err(Error::arg(format!(
            "cannot concatenate lengths {} and {}",
            a.cols(),
            b.cols()
        )));
    }
    let mut data = Vec::with_capacity(a.data().len() + b.data().len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(a.rows() + b.rows(), a.cols(), data)
}

/// Channels `start..end`.
pub fn slice_channels(x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    if start > end || end > x.rows() {
        return Err(Error::arg(format!(
            "channel range {start}..{end} outside 0..{}",
            x.rows()
        )));
    }
    Tensor::from_vec(
        end - start,
        x.cols(),
        x.data()[start * x.cols()..end * x.cols()].to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn labelled(c: usize) -> Tensor {
        Tensor::column((0..c).map(|i| i as f64).collect())
    }

    #[test]
    fn shuffle_examples() {
        let x = labelled(4);
        assert_eq!(channel_shuffle(&x, 2).unwrap().data(), &[0.0, 2.0, 1.0, 3.0]);
        assert_eq!(channel_shuffle(&x, 1).unwrap(), x);
        assert_eq!(channel_shuffle(&x, 4).unwrap(), x);
        assert!(matches!(channel_shuffle(&labelled(6), 4), Err(Error::Argument(_))));
    }

    #[test]
    fn unshuffle_inverts() {
        let x = Tensor::from_vec(8, 3, (0..24).map(f64::from).collect()).unwrap();
        for g in [1, 2, 4, 8] {
            let y = channel_shuffle(&x, g).unwrap();
            assert_eq!(channel_unshuffle(&y, g).unwrap(), x);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let x = Tensor::from_vec(3, 2, vec![4.0, 1.0, 4.0, 2.0, 4.0, 3.0]).unwrap();
        let (y, _) = layer_norm(&x, &[1.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(y.get(0, 0), 0.0);
        assert_eq!(y.get(1, 0), 0.0);
        assert_abs_diff_eq!(y.get(0, 1), -1.2247, epsilon = 1e-3);
        assert_abs_diff_eq!(y.get(1, 1), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y.get(2, 1), 1.2247, epsilon = 1e-3);

        let (y, _) = layer_norm(&x, &[0.0; 3], &[5.0; 3]).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
        assert!(layer_norm(&x, &[1.0; 2], &[0.0; 3]).is_err());
    }

    #[test]
    fn mish_examples() {
        assert_eq!(mish(0.0), 0.0);
        assert_abs_diff_eq!(mish(20.0), 20.0, epsilon = 1e-12);
        // -5 · tanh(ln(1 + e⁻⁵))
        assert_abs_diff_eq!(mish(-5.0), -0.033_576_237_730_16, epsilon = 1e-12);
        assert!(mish(1000.0).is_finite() && mish(-1000.0).is_finite());
    }

    #[test]
    fn mish_grad_matches_central_difference() {
        for x in [-6.0, -1.3, -0.2, 0.0, 0.4, 2.5, 9.0] {
            let h = 1e-6;
            let fd = (mish(x + h) - mish(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(mish_grad(x), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn pool_examples() {
        let x = Tensor::from_vec(2, 2, vec![1.0, 3.0, 7.0, 7.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.0, 7.0]);
        assert!(global_avg_pool(&Tensor::zeros(2, 0)).is_err());
    }

    #[test]
    fn concat_and_slice() {
        let a = Tensor::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), (3, 2));
        assert_eq!(slice_channels(&c, 1, 3).unwrap(), b);
        assert!(slice_channels(&c, 2, 4).is_err());
    }
}
