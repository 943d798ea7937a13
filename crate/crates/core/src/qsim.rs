//! Statevector simulation of a single quanvolutional filter.
//!
//! A filter is an `n`-qubit register prepared by amplitude embedding, evolved by
//! `depth` layers of per-qubit unitaries and read out as the Pauli-Z expectation
//! of every qubit. Qubit `i` is bit `i` of the basis-state index (little-endian).
//!
//! The gate is
//!
//! ```text
//! U(θ, φ, λ) = [ cos(θπ/2)            -e^{iλ} sin(θπ/2)       ]
//!              [ e^{iφ} sin(θπ/2)      e^{i(φ+λ)} cos(θπ/2)   ]
//! ```
//!
//! `θ` is measured in half-turns; the phases `φ` and `λ` are plain radians.
//! `θ` and `λ` are trainable, `φ` is drawn once and frozen.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance on `Σ|α|² = 1` for inputs that claim to be normalized.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Largest register the simulator accepts. 2^20 amplitudes is already far
/// beyond any layer geometry the model builds.
pub const MAX_QUBITS: usize = 20;

/// Complex amplitude vector of an `n`-qubit register.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

/// A 2×2 complex matrix in row-major order.
type Gate = [[Complex64; 2]; 2];

fn unitary(theta: f64, phi: f64, lambda: f64) -> Gate {
    let (s, c) = (theta * FRAC_PI_2).sin_cos();
    let e_phi = Complex64::from_polar(1.0, phi);
    let e_lam = Complex64::from_polar(1.0, lambda);
    [
        [Complex64::new(c, 0.0), -e_lam * s],
        [e_phi * s, e_phi * e_lam * c],
    ]
}

// ∂U/∂θ
fn unitary_dtheta(theta: f64, phi: f64, lambda: f64) -> Gate {
    let (s, c) = (theta * FRAC_PI_2).sin_cos();
    let (ds, dc) = (FRAC_PI_2 * c, -FRAC_PI_2 * s);
    let e_phi = Complex64::from_polar(1.0, phi);
    let e_lam = Complex64::from_polar(1.0, lambda);
    [
        [Complex64::new(dc, 0.0), -e_lam * ds],
        [e_phi * ds, e_phi * e_lam * dc],
    ]
}

// ∂U/∂λ
fn unitary_dlambda(theta: f64, phi: f64, lambda: f64) -> Gate {
    let (s, c) = (theta * FRAC_PI_2).sin_cos();
    let i = Complex64::new(0.0, 1.0);
    let e_phi = Complex64::from_polar(1.0, phi);
    let e_lam = Complex64::from_polar(1.0, lambda);
    let zero = Complex64::new(0.0, 0.0);
    [
        [zero, -i * e_lam * s],
        [zero, i * e_phi * e_lam * c],
    ]
}

fn adjoint(g: &Gate) -> Gate {
    [
        [g[0][0].conj(), g[1][0].conj()],
        [g[0][1].conj(), g[1][1].conj()],
    ]
}

fn apply_gate(amps: &mut [Complex64], qubit: usize, g: &Gate) {
    let stride = 1usize << qubit;
    let block = stride << 1;
    for base in (0..amps.len()).step_by(block) {
        for i0 in base..base + stride {
            let i1 = i0 + stride;
            let (a0, a1) = (amps[i0], amps[i1]);
            amps[i0] = g[0][0] * a0 + g[0][1] * a1;
            amps[i1] = g[1][0] * a0 + g[1][1] * a1;
        }
    }
}

/// `⟨bra| (G on qubit) |ket⟩` without materializing `G|ket⟩`.
fn sandwich(bra: &[Complex64], ket: &[Complex64], qubit: usize, g: &Gate) -> Complex64 {
    let stride = 1usize << qubit;
    let block = stride << 1;
    let mut acc = Complex64::new(0.0, 0.0);
    for base in (0..ket.len()).step_by(block) {
        for i0 in base..base + stride {
            let i1 = i0 + stride;
            let (k0, k1) = (ket[i0], ket[i1]);
            acc += bra[i0].conj() * (g[0][0] * k0 + g[0][1] * k1);
            acc += bra[i1].conj() * (g[1][0] * k0 + g[1][1] * k1);
        }
    }
    acc
}

fn check_qubits(n_qubits: usize) -> Result<()> {
    if n_qubits == 0 || n_qubits > MAX_QUBITS {
        return Err(Error::arg(format!(
            "qubit count {n_qubits} outside 1..={MAX_QUBITS}"
        )));
    }
    Ok(())
}

impl StateVector {
    /// The all-zero basis state `|0…0⟩`.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        check_qubits(n_qubits)?;
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(Self {
            n_qubits,
            amplitudes,
        })
    }

    /// Builds a state from raw amplitudes. The vector length must be a power
    /// of two and the state must be normalized.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::arg(format!(
                "amplitude count {len} is not a power of two >= 2"
            )));
        }
        let n_qubits = len.trailing_zeros() as usize;
        check_qubits(n_qubits)?;
        let state = Self {
            n_qubits,
            amplitudes,
        };
        let norm = state.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::arg(format!("state norm² is {norm}, expected 1")));
        }
        Ok(state)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    /// `Σ|αᵢ|²`.
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Applies `U(θ, φ, λ)` to one qubit in place.
    pub fn apply_single_qubit_unitary(
        &mut self,
        qubit: usize,
        theta: f64,
        phi: f64,
        lambda: f64,
    ) -> Result<()> {
        if qubit >= self.n_qubits {
            return Err(Error::arg(format!(
                "qubit {qubit} out of range for a {}-qubit register",
                self.n_qubits
            )));
        }
        apply_gate(&mut self.amplitudes, qubit, &unitary(theta, phi, lambda));
        Ok(())
    }

    /// `⟨ψ|Zᵢ|ψ⟩` for every qubit.
    pub fn z_expectations(&self) -> ExpectationVector {
        let mut values = vec![0.0; self.n_qubits];
        for (index, amp) in self.amplitudes.iter().enumerate() {
            let p = amp.norm_sqr();
            if p == 0.0 {
                continue;
            }
            for (qubit, v) in values.iter_mut().enumerate() {
                if index >> qubit & 1 == 0 {
                    *v += p;
                } else {
                    *v -= p;
                }
            }
        }
        // rounding can push |E| a hair past 1 on basis states
        for v in &mut values {
            *v = v.clamp(-1.0, 1.0);
        }
        ExpectationVector { values }
    }
}

/// Encodes a normalized real vector of length `m ≤ 2^n` as the amplitudes of
/// an `n`-qubit register, zero-padding the tail.
pub fn amplitude_embed(features: &[f64], n_qubits: usize) -> Result<StateVector> {
    check_qubits(n_qubits)?;
    let dim = 1usize << n_qubits;
    if features.len() > dim {
        return Err(Error::arg(format!(
            "{} features do not fit in {n_qubits} qubits",
            features.len()
        )));
    }
    let norm: f64 = features.iter().map(|f| f * f).sum();
    if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
        return Err(Error::arg(format!(
            "features are not normalized (sum of squares {norm})"
        )));
    }
    let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
    for (a, &f) in amplitudes.iter_mut().zip(features) {
        *a = Complex64::new(f, 0.0);
    }
    Ok(StateVector {
        n_qubits,
        amplitudes,
    })
}

/// Per-qubit Pauli-Z expectations, each in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectationVector {
    pub values: Vec<f64>,
}

/// One quanvolutional filter: `depth` layers of `U(θ, φ, λ)` on every qubit.
///
/// Parameter matrices are stored layer-major: entry `(layer, qubit)` lives at
/// `layer * n_qubits + qubit`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterCircuit {
    n_qubits: usize,
    depth: usize,
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    phi: Vec<f64>,
}

impl FilterCircuit {
    pub fn new(
        n_qubits: usize,
        depth: usize,
        theta: Vec<f64>,
        lambda: Vec<f64>,
        phi: Vec<f64>,
    ) -> Result<Self> {
        check_qubits(n_qubits)?;
        if depth == 0 {
            return Err(Error::arg("circuit depth must be positive"));
        }
        let len = n_qubits * depth;
        for (name, v) in [("theta", &theta), ("lambda", &lambda), ("phi", &phi)] {
            if v.len() != len {
                return Err(Error::arg(format!(
                    "{name} has {} entries, expected {depth}x{n_qubits}",
                    v.len()
                )));
            }
        }
        Ok(Self {
            n_qubits,
            depth,
            theta,
            lambda,
            phi,
        })
    }

    /// All-zero parameters: every gate is the identity.
    pub fn identity(n_qubits: usize, depth: usize) -> Result<Self> {
        let len = n_qubits * depth;
        Self::new(n_qubits, depth, vec![0.0; len], vec![0.0; len], vec![0.0; len])
    }

    /// θ, λ ~ U(-1, 1); φ ~ U(0, 2π), i.e. uniform over the whole phase circle.
    pub fn random<R: Rng + ?Sized>(n_qubits: usize, depth: usize, rng: &mut R) -> Result<Self> {
        let len = n_qubits * depth;
        let theta = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lambda = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let phi = (0..len)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        Self::new(n_qubits, depth, theta, lambda, phi)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// The frozen phase angles. There is deliberately no mutable accessor.
    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    fn gate(&self, idx: usize) -> Gate {
        unitary(self.theta[idx], self.phi[idx], self.lambda[idx])
    }

    fn evolve(&self, amps: &mut [Complex64]) {
        for idx in 0..self.depth * self.n_qubits {
            apply_gate(amps, idx % self.n_qubits, &self.gate(idx));
        }
    }
}

/// Embeds `features`, applies the circuit and measures every qubit.
pub fn run_filter(features: &[f64], circuit: &FilterCircuit) -> Result<ExpectationVector> {
    let mut state = amplitude_embed(features, circuit.n_qubits)?;
    circuit.evolve(&mut state.amplitudes);
    Ok(state.z_expectations())
}

/// Gradients of `Σᵢ upstreamᵢ·Eᵢ` for one filter evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterGradients {
    /// Same layout as [`FilterCircuit::theta`].
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    /// One entry per input feature (not per padded amplitude).
    pub features: Vec<f64>,
}

/// Exact adjoint-mode gradients of `Σᵢ upstreamᵢ·⟨Zᵢ⟩` with respect to θ, λ and
/// the embedded features.
///
/// The cost is two extra sweeps over the gate list: the final state and the
/// weighted observable applied to it are un-computed gate by gate, and each
/// gate's derivative is contracted between them on the way back.
pub fn filter_gradients(
    features: &[f64],
    circuit: &FilterCircuit,
    upstream: &[f64],
) -> Result<FilterGradients> {
    let n = circuit.n_qubits;
    if upstream.len() != n {
        return Err(Error::arg(format!(
            "upstream has {} entries, circuit has {n} qubits",
            upstream.len()
        )));
    }
    let mut psi = amplitude_embed(features, n)?.amplitudes;
    circuit.evolve(&mut psi);

    // λ = O|ψ⟩ with O = Σ uᵢ Zᵢ diagonal in the computational basis.
    let mut lam: Vec<Complex64> = psi
        .iter()
        .enumerate()
        .map(|(index, &a)| {
            let w: f64 = upstream
                .iter()
                .enumerate()
                .map(|(q, &u)| if index >> q & 1 == 0 { u } else { -u })
                .sum();
            a * w
        })
        .collect();

    let gates = circuit.depth * n;
    let mut theta = vec![0.0; gates];
    let mut lambda = vec![0.0; gates];
    for idx in (0..gates).rev() {
        let qubit = idx % n;
        let (t, p, l) = (circuit.theta[idx], circuit.phi[idx], circuit.lambda[idx]);
        let g_dag = adjoint(&unitary(t, p, l));
        apply_gate(&mut psi, qubit, &g_dag);
        theta[idx] = 2.0 * sandwich(&lam, &psi, qubit, &unitary_dtheta(t, p, l)).re;
        lambda[idx] = 2.0 * sandwich(&lam, &psi, qubit, &unitary_dlambda(t, p, l)).re;
        apply_gate(&mut lam, qubit, &g_dag);
    }

    let features = lam[..features.len()].iter().map(|a| 2.0 * a.re).collect();
    Ok(FilterGradients {
        theta,
        lambda,
        features,
    })
}

fn matmul(a: &Gate, b: &Gate) -> Gate {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn identity_gate() -> Gate {
    let (one, zero) = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
    [[one, zero], [zero, one]]
}

fn pauli_z() -> Gate {
    let (one, zero) = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
    [[one, zero], [zero, -one]]
}

/// Per-qubit readout of a filter in the Heisenberg picture.
///
/// Every gate acts on a single qubit, so qubit `q` only sees the product `V`
/// of its own gates and `⟨Z_q⟩ = Tr(ρ_q V†ZV)` with `ρ_q` the reduced density
/// matrix of the embedded state. For real amplitudes `ρ_q` is real symmetric
/// and the expectation is `nz·(p0 − p1) + nx·2ρ01`, where `(nx, ny, nz)` is
/// the Bloch vector of `V†ZV`. This agrees with [`run_filter`] to rounding and
/// costs `O(n·2^n)` per patch, shared by every filter.
#[derive(Clone, Debug, PartialEq)]
pub struct Readout {
    /// `[nz, nx]` per qubit.
    pub axis: Vec<[f64; 2]>,
    /// `∂[nz, nx]/∂θ`, laid out like [`FilterCircuit::theta`].
    pub d_theta: Vec<[f64; 2]>,
    pub d_lambda: Vec<[f64; 2]>,
}

impl Readout {
    /// `⟨Z_q⟩` given the [`marginals`] of the embedded state.
    pub fn expectation(&self, qubit: usize, marginals: &[[f64; 2]]) -> f64 {
        let [nz, nx] = self.axis[qubit];
        let [diff, coh] = marginals[qubit];
        (nz * diff + nx * coh).clamp(-1.0, 1.0)
    }
}

impl FilterCircuit {
    pub fn readout(&self) -> Readout {
        let (n, depth) = (self.n_qubits, self.depth);
        let mut axis = vec![[0.0; 2]; n];
        let mut d_theta = vec![[0.0; 2]; n * depth];
        let mut d_lambda = vec![[0.0; 2]; n * depth];
        for q in 0..n {
            let gates: Vec<Gate> = (0..depth).map(|l| self.gate(l * n + q)).collect();
            // before[l]: gates below layer l; after[l]: Z pulled back through gates above it
            let mut before = Vec::with_capacity(depth);
            let mut acc = identity_gate();
            for g in &gates {
                before.push(acc);
                acc = matmul(g, &acc);
            }
            let mut after = vec![pauli_z(); depth];
            let mut w = pauli_z();
            for l in (0..depth).rev() {
                after[l] = w;
                w = matmul(&adjoint(&gates[l]), &matmul(&w, &gates[l]));
            }
            axis[q] = [w[0][0].re, w[0][1].re];
            for l in 0..depth {
                let idx = l * n + q;
                let (t, p, lam) = (self.theta[idx], self.phi[idx], self.lambda[idx]);
                let left = matmul(&adjoint(&matmul(&gates[l], &before[l])), &after[l]);
                for (slot, dg) in [
                    (&mut d_theta[idx], unitary_dtheta(t, p, lam)),
                    (&mut d_lambda[idx], unitary_dlambda(t, p, lam)),
                ] {
                    let x = matmul(&left, &matmul(&dg, &before[l]));
                    *slot = [2.0 * x[0][0].re, x[0][1].re + x[1][0].re];
                }
            }
        }
        Readout {
            axis,
            d_theta,
            d_lambda,
        }
    }
}

fn pairs(dim: usize, qubit: usize) -> impl Iterator<Item = (usize, usize)> {
    let stride = 1usize << qubit;
    (0..dim)
        .step_by(stride << 1)
        .flat_map(move |base| (base..base + stride).map(move |i0| (i0, i0 + stride)))
}

/// `[p0 − p1, 2ρ01]` of every qubit for a real amplitude vector of length
/// `2^n`.
pub fn marginals(amplitudes: &[f64]) -> Result<Vec<[f64; 2]>> {
    let dim = amplitudes.len();
    if dim < 2 || !dim.is_power_of_two() {
        return Err(Error::arg(format!(
            "amplitude count {dim} is not a power of two >= 2"
        )));
    }
    let n = dim.trailing_zeros() as usize;
    Ok((0..n)
        .map(|q| {
            pairs(dim, q).fold([0.0; 2], |[d, c], (i0, i1)| {
                let (a0, a1) = (amplitudes[i0], amplitudes[i1]);
                [d + a0 * a0 - a1 * a1, c + 2.0 * a0 * a1]
            })
        })
        .collect())
}

/// Adds the gradient of `Σ_q w_q · marginals_q` with respect to the
/// amplitudes to `grad`.
pub fn marginals_backward(amplitudes: &[f64], weights: &[[f64; 2]], grad: &mut [f64]) {
    let dim = amplitudes.len();
    for (q, &[wd, wc]) in weights.iter().enumerate() {
        if wd == 0.0 && wc == 0.0 {
            continue;
        }
        for (i0, i1) in pairs(dim, q) {
            let (a0, a1) = (amplitudes[i0], amplitudes[i1]);
            grad[i0] += 2.0 * (wd * a0 + wc * a1);
            grad[i1] += 2.0 * (wc * a0 - wd * a1);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_state(n: usize, rng: &mut ChaCha8Rng) -> StateVector {
        let mut amps: Vec<Complex64> = (0..1 << n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= norm);
        StateVector::from_amplitudes(amps).unwrap()
    }

    #[test]
    fn zero_angles_are_identity() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply_single_qubit_unitary(0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(s, StateVector::zero(1).unwrap());
    }

    #[test]
    fn half_turn_theta_flips_zero_to_one() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply_single_qubit_unitary(0, 1.0, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(s.amplitudes()[0].norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.amplitudes()[1].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.amplitudes()[1].im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gate_rejects_bad_qubit() {
        let mut s = StateVector::zero(2).unwrap();
        assert!(matches!(
            s.apply_single_qubit_unitary(2, 0.1, 0.2, 0.3),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn gate_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=5 {
            let mut s = random_state(n, &mut rng);
            for q in 0..n {
                let (t, p, l) = (rng.gen(), rng.gen(), rng.gen());
                s.apply_single_qubit_unitary(q, t, p, l).unwrap();
                assert!((s.norm_sqr() - 1.0).abs() < NORM_TOLERANCE);
            }
        }
    }

    #[test]
    fn embed_examples() {
        let s = amplitude_embed(&[1.0], 1).unwrap();
        assert_eq!(s.amplitudes()[0], Complex64::new(1.0, 0.0));
        assert_eq!(s.amplitudes()[1], Complex64::new(0.0, 0.0));

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = amplitude_embed(&[h, h], 2).unwrap();
        let re: Vec<f64> = s.amplitudes().iter().map(|a| a.re).collect();
        assert_eq!(re, vec![h, h, 0.0, 0.0]);

        let u = 1.0 / 8f64.sqrt();
        let s = amplitude_embed(&[u; 8], 3).unwrap();
        assert!(s.amplitudes().iter().all(|a| (a.re - u).abs() < 1e-15));
    }

    #[test]
    fn embed_errors() {
        assert!(matches!(
            amplitude_embed(&[0.5; 4], 1),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            amplitude_embed(&[0.5, 0.5], 1),
            Err(Error::Argument(_))
        ));
        assert!(amplitude_embed(&[f64::NAN], 1).is_err());
    }

    #[test]
    fn expectation_examples() {
        let e = StateVector::zero(3).unwrap().z_expectations();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);

        let e = amplitude_embed(&[0.5; 4], 2).unwrap().z_expectations();
        assert_abs_diff_eq!(e.values[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.values[1], 0.0, epsilon = 1e-15);

        let mut s = StateVector::zero(1).unwrap();
        s.apply_single_qubit_unitary(0, 0.5, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(s.z_expectations().values[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn little_endian_qubit_order() {
        // basis index 1 = bit 0 set → qubit 0 reads -1, qubit 1 reads +1
        let s = amplitude_embed(&[0.0, 1.0, 0.0, 0.0], 2).unwrap();
        assert_eq!(s.z_expectations().values, vec![-1.0, 1.0]);
    }

    #[test]
    fn run_filter_examples() {
        let c = FilterCircuit::identity(3, 1).unwrap();
        let mut f = vec![0.0; 8];
        f[0] = 1.0;
        assert_eq!(run_filter(&f, &c).unwrap().values, vec![1.0; 3]);

        let c = FilterCircuit::new(1, 1, vec![1.0], vec![0.0], vec![0.0]).unwrap();
        assert_abs_diff_eq!(run_filter(&[1.0], &c).unwrap().values[0], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn circuit_shape_checked() {
        assert!(FilterCircuit::new(2, 1, vec![0.0; 2], vec![0.0; 2], vec![0.0; 3]).is_err());
        assert!(FilterCircuit::new(2, 0, vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = FilterCircuit::random(3, 2, &mut rng).unwrap();
        let f = [0.6, 0.0, 0.8];
        let g = filter_gradients(&f, &c, &[0.0; 3]).unwrap();
        assert!(g.theta.iter().chain(&g.lambda).chain(&g.features).all(|&v| v == 0.0));
    }

    #[test]
    fn single_qubit_theta_gradient_is_analytic() {
        for theta in [0.0, 0.1, 0.37, -0.8] {
            let c = FilterCircuit::new(1, 1, vec![theta], vec![0.3], vec![0.7]).unwrap();
            let g = filter_gradients(&[1.0], &c, &[1.0]).unwrap();
            let expected = -std::f64::consts::PI * (theta * std::f64::consts::PI).sin();
            assert_abs_diff_eq!(g.theta[0], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = FilterCircuit::random(4, 2, &mut rng).unwrap();
        let f: Vec<f64> = vec![0.25; 16];
        let a = run_filter(&f, &c).unwrap();
        let b = run_filter(&f, &c).unwrap();
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn readout_matches_statevector() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for case in 0..60 {
            let n = 1 + case % 6;
            let depth = 1 + case % 3;
            let c = FilterCircuit::random(n, depth, &mut rng).unwrap();
            let m = rng.gen_range(1..=1usize << n);
            let mut f: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            f.iter_mut().for_each(|v| *v /= norm);
            let mut padded = f.clone();
            padded.resize(1 << n, 0.0);

            let r = c.readout();
            let marg = marginals(&padded).unwrap();
            let reference = run_filter(&f, &c).unwrap();
            for q in 0..n {
                assert_abs_diff_eq!(r.expectation(q, &marg), reference.values[q], epsilon = 1e-12);
            }

            let up: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = filter_gradients(&f, &c, &up).unwrap();
            for idx in 0..n * depth {
                let q = idx % n;
                let dot = |d: [f64; 2]| up[q] * (d[0] * marg[q][0] + d[1] * marg[q][1]);
                assert_abs_diff_eq!(dot(r.d_theta[idx]), g.theta[idx], epsilon = 1e-12);
                assert_abs_diff_eq!(dot(r.d_lambda[idx]), g.lambda[idx], epsilon = 1e-12);
            }
            let weights: Vec<[f64; 2]> = (0..n).map(|q| [up[q] * r.axis[q][0], up[q] * r.axis[q][1]]).collect();
            let mut grad = vec![0.0; 1 << n];
            marginals_backward(&padded, &weights, &mut grad);
            for (a, b) in grad.iter().zip(&g.features) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn marginals_reject_bad_length() {
        assert!(marginals(&[1.0]).is_err());
        assert!(marginals(&[1.0, 0.0, 0.0]).is_err());
        assert_eq!(marginals(&[0.0, 1.0]).unwrap(), vec![[-1.0, 0.0]]);
    }
}
