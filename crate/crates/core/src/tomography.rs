//! Multi-qubit state tomography (Pauli-basis settings, linear inversion,
//! nearest-PSD projection) and Bell/GHZ preparation circuits around a CZ.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, Matrix4};
use num_complex::Complex64 as C64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::device::DeviceSpec;
use crate::dynamics::evolve::{apply_site_gate_density, stream_rng};
use crate::dynamics::{NoiseSpec, Readout};
use crate::error::{Error, Result};
use crate::operators::Basis;
use crate::rb::{apply_kraus, cz_lindblad_channel, to_dmatrix, Channel, GateNoise};
use crate::sizzle::{ideal_zz_diagonal, CzCalibration};

/// Largest register handled by tomography (3^n settings, 4^n Paulis).
pub const MAX_TOMOGRAPHY_QUBITS: usize = 4;

/// Shot count below which a reconstruction carries a conditioning warning.
pub const MIN_TOMOGRAPHY_SHOTS: u32 = 400;

type Gate2 = [[C64; 2]; 2];

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn hadamard() -> Gate2 {
    let h = c(FRAC_1_SQRT_2, 0.0);
    [[h, h], [h, -h]]
}

/// Rotation taking the Y eigenbasis onto Z (`H·S†`).
fn y_to_z() -> Gate2 {
    let h = FRAC_1_SQRT_2;
    [[c(h, 0.0), c(0.0, -h)], [c(h, 0.0), c(0.0, h)]]
}

fn qubit_count(dim: usize) -> Result<usize> {
    if dim < 2 || !dim.is_power_of_two() {
        return Err(Error::Dimension(format!("state dimension {dim} is not 2^n")));
    }
    let n = dim.trailing_zeros() as usize;
    if n > MAX_TOMOGRAPHY_QUBITS {
        return Err(Error::Resource {
            dim: n,
            cap: MAX_TOMOGRAPHY_QUBITS,
        });
    }
    Ok(n)
}

/// Reconstructed state.
#[derive(Debug, Clone, PartialEq)]
pub struct Tomography {
    pub qubits: usize,
    /// Unit-trace, positive-semidefinite estimate.
    pub rho: DMatrix<C64>,
    /// Linear-inversion estimate before projection.
    pub linear: DMatrix<C64>,
    /// Frobenius distance between the two estimates.
    pub projection_residual: f64,
    /// Pauli expectations indexed by base-4 digits (0=I, 1=X, 2=Y, 3=Z; first qubit most significant).
    pub paulis: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Simulated tomography of `state` measured in all 3^n Pauli settings.
/// `readout.shots = 0` evaluates the exact outcome probabilities. Setting
/// `s` draws its shots from stream `s` of `seed`.
pub fn state_tomography(state: &DMatrix<C64>, readout: &Readout, seed: u64) -> Result<Tomography> {
    let n = qubit_count(state.nrows())?;
    check_density(state)?;
    if !(0.0..0.5).contains(&readout.assignment_error) {
        return Err(Error::Domain("assignment error must lie in [0, 0.5)".into()));
    }
    let basis = Basis::new(2, n);
    let dim = basis.dim();
    let settings = 3usize.pow(n as u32);
    // Outcome distribution for every setting.
    let mut freqs: Vec<Vec<f64>> = Vec::with_capacity(settings);
    for s in 0..settings {
        let mut rho = state.clone();
        for q in 0..n {
            match digit(s, q, n, 3) {
                0 => apply_site_gate_density(&mut rho, basis, q, &hadamard()),
                1 => apply_site_gate_density(&mut rho, basis, q, &y_to_z()),
                _ => {}
            }
        }
        let mut p: Vec<f64> = (0..dim).map(|i| rho[(i, i)].re.max(0.0)).collect();
        for q in 0..n {
            flip_bits(&mut p, basis, q, readout.assignment_error);
        }
        if readout.shots > 0 {
            let dist = WeightedIndex::new(&p).map_err(|e| Error::Contract(format!("outcome distribution: {e}")))?;
            let mut rng = stream_rng(seed, s as u64);
            let mut counts = vec![0u32; dim];
            for _ in 0..readout.shots {
                counts[dist.sample(&mut rng)] += 1;
            }
            p = counts.iter().map(|&k| k as f64 / readout.shots as f64).collect();
        }
        freqs.push(p);
    }
    // Pauli expectations averaged over every compatible setting.
    let npauli = 4usize.pow(n as u32);
    let mut paulis = vec![0.0; npauli];
    for (pi, value) in paulis.iter_mut().enumerate() {
        let ops: Vec<usize> = (0..n).map(|q| digit(pi, q, n, 4)).collect();
        let (mut sum, mut count) = (0.0, 0usize);
        for (s, f) in freqs.iter().enumerate() {
            if ops.iter().enumerate().any(|(q, &o)| o != 0 && o - 1 != digit(s, q, n, 3)) {
                continue;
            }
            sum += f
                .iter()
                .enumerate()
                .map(|(i, &fi)| {
                    let parity = (0..n).filter(|&q| ops[q] != 0 && basis.occupation(i, q) == 1).count();
                    if parity % 2 == 0 { fi } else { -fi }
                })
                .sum::<f64>();
            count += 1;
        }
        *value = sum / count as f64;
    }
    let mut linear = DMatrix::<C64>::zeros(dim, dim);
    for (pi, &v) in paulis.iter().enumerate() {
        linear += pauli_string(pi, n) * c(v / dim as f64, 0.0);
    }
    let rho = project_psd(&linear);
    let projection_residual = (&rho - &linear).norm();
    let mut warnings = Vec::new();
    if readout.shots > 0 && readout.shots < MIN_TOMOGRAPHY_SHOTS {
        warnings.push(format!(
            "{} shots per setting leave ~{:.3} statistical error on each Pauli expectation",
            readout.shots,
            1.0 / (readout.shots as f64).sqrt()
        ));
    }
    if projection_residual > 0.05 {
        warnings.push(format!(
            "linear inversion is far from physical (projection moved it by {projection_residual:.3})"
        ));
    }
    Ok(Tomography {
        qubits: n,
        rho,
        linear,
        projection_residual,
        paulis,
        warnings,
    })
}

/// Digit `q` (most significant first) of `index` in base `b` with `n` digits.
fn digit(index: usize, q: usize, n: usize, b: usize) -> usize {
    (index / b.pow((n - 1 - q) as u32)) % b
}

fn flip_bits(p: &mut [f64], basis: Basis, q: usize, e: f64) {
    if e == 0.0 {
        return;
    }
    let stride = basis.stride(q);
    for i in 0..p.len() {
        if basis.occupation(i, q) == 0 {
            let (a, b) = (p[i], p[i + stride]);
            p[i] = (1.0 - e) * a + e * b;
            p[i + stride] = e * a + (1.0 - e) * b;
        }
    }
}

fn pauli(k: usize) -> [[C64; 2]; 2] {
    let (o, z) = (c(1.0, 0.0), c(0.0, 0.0));
    match k {
        0 => [[o, z], [z, o]],
        1 => [[z, o], [o, z]],
        2 => [[z, c(0.0, -1.0)], [c(0.0, 1.0), z]],
        _ => [[o, z], [z, -o]],
    }
}

/// Tensor product of single-qubit Paulis with base-4 index `index`.
pub fn pauli_string(index: usize, n: usize) -> DMatrix<C64> {
    let dim = 1usize << n;
    DMatrix::from_fn(dim, dim, |r, col| {
        (0..n).fold(c(1.0, 0.0), |acc, q| {
            let shift = n - 1 - q;
            acc * pauli(digit(index, q, n, 4))[(r >> shift) & 1][(col >> shift) & 1]
        })
    })
}

/// Nearest unit-trace PSD matrix by eigenvalue clipping and renormalization.
pub fn project_psd(m: &DMatrix<C64>) -> DMatrix<C64> {
    let h = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    let dim = m.nrows();
    if total <= 0.0 {
        return DMatrix::identity(dim, dim) * c(1.0 / dim as f64, 0.0);
    }
    let mut out = DMatrix::<C64>::zeros(dim, dim);
    for (k, &l) in clipped.iter().enumerate() {
        if l > 0.0 {
            let v = eig.eigenvectors.column(k);
            out += v * v.adjoint() * c(l / total, 0.0);
        }
    }
    out
}

fn check_density(rho: &DMatrix<C64>) -> Result<()> {
    if !rho.is_square() {
        return Err(Error::Dimension("density matrix must be square".into()));
    }
    let herm = (rho - rho.adjoint()).camax();
    let trace = rho.trace();
    if herm > 1e-8 || (trace - c(1.0, 0.0)).norm() > 1e-6 {
        return Err(Error::Contract(format!(
            "not a density matrix (hermiticity error {herm:.2e}, trace {trace:.6})"
        )));
    }
    let min = rho.clone().symmetric_eigenvalues().min();
    if min < -1e-8 {
        return Err(Error::Contract(format!("density matrix has negative eigenvalue {min:.3e}")));
    }
    Ok(())
}

/// `⟨ψ|ρ|ψ⟩` for a valid density matrix and a normalized pure state.
pub fn fidelity(rho: &DMatrix<C64>, psi: &[C64]) -> Result<f64> {
    check_density(rho)?;
    if psi.len() != rho.nrows() {
        return Err(Error::Dimension(format!(
            "state of length {} against {}×{} density matrix",
            psi.len(),
            rho.nrows(),
            rho.nrows()
        )));
    }
    let norm: f64 = psi.iter().map(|a| a.norm_sqr()).sum();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("target state has norm² {norm}")));
    }
    let v = nalgebra::DVector::from_column_slice(psi);
    Ok((v.adjoint() * rho * &v)[(0, 0)].re.clamp(0.0, 1.0))
}

/// `(|00…0⟩ + |11…1⟩)/√2` on `n` qubits.
pub fn ghz_state(n: usize) -> Vec<C64> {
    let mut v = vec![c(0.0, 0.0); 1 << n];
    v[0] = c(FRAC_1_SQRT_2, 0.0);
    v[(1 << n) - 1] = c(FRAC_1_SQRT_2, 0.0);
    v
}

/// CZ used inside preparation circuits.
#[derive(Debug, Clone, PartialEq)]
pub enum CzModel {
    /// Ideal ZZ evolution at the calibrated rate and gate time, with its
    /// single-qubit phases removed by virtual Z.
    Calibrated(CzCalibration),
    /// A fixed channel applied to every pair.
    Channel(Channel),
    /// Lindblad CZ of the given duration (µs) using each pair's coherence
    /// times; idle qubits decohere for the same time.
    Lindblad { device: DeviceSpec, gate_time: f64 },
}

fn virtual_z_corrected(diag: [C64; 4]) -> Matrix4<C64> {
    let (a0, a1, a2) = (diag[0].arg(), diag[1].arg(), diag[2].arg());
    let fix = [-a0, -a1, -a2, -a1 - a2 + a0];
    Matrix4::from_diagonal(&nalgebra::Vector4::from_fn(|k, _| diag[k] * C64::from_polar(1.0, fix[k])))
}

/// Applies a two-qubit channel to sites `(a, b)` of an n-qubit density matrix.
fn apply_pair_channel(rho: &DMatrix<C64>, n: usize, a: usize, b: usize, ch: &Channel) -> DMatrix<C64> {
    let basis = Basis::new(2, n);
    let dim = basis.dim();
    let (sa, sb) = (basis.stride(a), basis.stride(b));
    let rest: Vec<usize> = (0..dim)
        .filter(|&i| basis.occupation(i, a) == 0 && basis.occupation(i, b) == 0)
        .collect();
    let embed = |k: usize, r: usize| r + (k >> 1) * sa + (k & 1) * sb;
    let mut out = DMatrix::<C64>::zeros(dim, dim);
    for &r in &rest {
        for &r2 in &rest {
            let block = DMatrix::from_fn(4, 4, |i, j| rho[(embed(i, r), embed(j, r2))]);
            let mapped = ch.apply(&block);
            for i in 0..4 {
                for j in 0..4 {
                    out[(embed(i, r), embed(j, r2))] = mapped[(i, j)];
                }
            }
        }
    }
    out
}

struct Circuit<'a> {
    n: usize,
    labels: &'a [&'a str],
    rho: DMatrix<C64>,
    cz: &'a CzModel,
    ideal: Option<Channel>,
}

impl<'a> Circuit<'a> {
    fn new(labels: &'a [&'a str], cz: &'a CzModel) -> Result<Self> {
        let n = labels.len();
        let ideal = match cz {
            CzModel::Calibrated(cal) => Some(Channel::from_unitary(&to_dmatrix(&virtual_z_corrected(
                ideal_zz_diagonal(cal.rate_khz, cal.gate_time),
            )))),
            CzModel::Channel(ch) => {
                if ch.dim != 4 {
                    return Err(Error::Dimension("CZ channel must act on two qubits".into()));
                }
                Some(ch.clone())
            }
            CzModel::Lindblad { device, gate_time } => {
                for l in labels {
                    device.qubit(l)?;
                }
                if !(*gate_time > 0.0) {
                    return Err(Error::Domain("gate time must be positive".into()));
                }
                None
            }
        };
        let dim = 1 << n;
        let mut rho = DMatrix::zeros(dim, dim);
        rho[(0, 0)] = c(1.0, 0.0);
        Ok(Circuit {
            n,
            labels,
            rho,
            cz,
            ideal,
        })
    }

    fn h(&mut self, q: usize) {
        apply_site_gate_density(&mut self.rho, Basis::new(2, self.n), q, &hadamard());
    }

    fn cz(&mut self, a: usize, b: usize) -> Result<()> {
        let ch = match (&self.ideal, self.cz) {
            (Some(ch), _) => ch.clone(),
            (None, CzModel::Lindblad { device, gate_time }) => {
                let pair = [self.labels[a], self.labels[b]];
                let noise = NoiseSpec::from_device(device, &pair)?;
                for (q, l) in self.labels.iter().enumerate() {
                    if q != a && q != b {
                        let p = noise_for(device, l)?;
                        apply_kraus(&mut self.rho, Basis::new(2, self.n), q, &p.kraus(*gate_time));
                    }
                }
                cz_lindblad_channel(device, pair[0], pair[1], *gate_time, &noise)?
            }
            _ => unreachable!("non-Lindblad models carry their channel"),
        };
        self.rho = apply_pair_channel(&self.rho, self.n, a, b, &ch);
        Ok(())
    }

    fn cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.h(target);
        self.cz(control, target)?;
        self.h(target);
        Ok(())
    }
}

/// Idle decoherence matching the Lindblad rates of a qubit.
fn noise_for(device: &DeviceSpec, label: &str) -> Result<GateNoise> {
    let q = NoiseSpec::from_device(device, &[label])?.get(label);
    Ok(GateNoise::coherence(1.0 / q.gamma1, 1.0 / (0.5 * q.gamma1 + q.gamma_phi)))
}

/// Bell state `(|00⟩ + |11⟩)/√2` prepared as H on the first qubit, then a
/// CNOT built from the CZ between Hadamards on the second.
pub fn prepare_bell(labels: [&str; 2], cz: &CzModel) -> Result<DMatrix<C64>> {
    let l = labels;
    let mut circ = Circuit::new(&l, cz)?;
    circ.h(0);
    circ.cnot(0, 1)?;
    Ok(circ.rho)
}

/// Three-qubit GHZ state on a chain `a–b–c` via two CZ-based CNOTs.
pub fn prepare_ghz(labels: [&str; 3], cz: &CzModel) -> Result<DMatrix<C64>> {
    let l = labels;
    let mut circ = Circuit::new(&l, cz)?;
    circ.h(0);
    circ.cnot(0, 1)?;
    circ.cnot(1, 2)?;
    Ok(circ.rho)
}
