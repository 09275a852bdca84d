//! Randomized benchmarking: single-qubit Cliffords built from X/Y pulses,
//! individual and simultaneous RB with ZZ crosstalk, coherence-limited error,
//! and two-qubit interleaved RB of a CZ gate.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::OnceLock;

use nalgebra::{DMatrix, Matrix2, Matrix4};
use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceSpec, TransmonParams};
use crate::dynamics::evolve::{apply_site_gate_density, evolve_open, rotation, stream_rng, EvolveOptions};
use crate::dynamics::{Frame, NoiseSpec, Readout, SystemModel};
use crate::error::{Error, Result};
use crate::fit::{fit_rb_decay, FitResult};
use crate::operators::{number_operator, Basis, SubsetSelection};

/// Average number of physical pulses per Clifford assumed when converting
/// error per Clifford to error per gate.
pub const PULSES_PER_CLIFFORD: f64 = 1.825;

/// Default single-qubit physical gate time in µs.
pub const DEFAULT_GATE_TIME: f64 = 0.06;

/// Default single-qubit sequence lengths.
pub const DEFAULT_LENGTHS_1Q: [usize; 8] = [2, 25, 50, 100, 250, 500, 750, 1000];

/// Default two-qubit sequence lengths.
pub const DEFAULT_LENGTHS_2Q: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];

/// Physical pulses; Y-type pulses are X pulses conjugated by virtual Z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pulse {
    /// Idle for one gate time.
    I,
    X,
    Y,
    X90,
    Xm90,
    Y90,
    Ym90,
}

impl Pulse {
    pub fn unitary(self) -> Matrix2<C64> {
        self.unitary_with_error(0.0)
    }

    /// Unitary with `error` rad added to the rotation angle (idle excluded).
    pub fn unitary_with_error(self, error: f64) -> Matrix2<C64> {
        let (theta, phi): (f64, f64) = match self {
            Pulse::I => (0.0, 0.0),
            Pulse::X => (PI, 0.0),
            Pulse::Y => (PI, FRAC_PI_2),
            Pulse::X90 => (FRAC_PI_2, 0.0),
            Pulse::Xm90 => (-FRAC_PI_2, 0.0),
            Pulse::Y90 => (FRAC_PI_2, FRAC_PI_2),
            Pulse::Ym90 => (-FRAC_PI_2, FRAC_PI_2),
        };
        let theta = if self == Pulse::I { 0.0 } else { theta + error * theta.signum() };
        let r = rotation(theta, phi);
        Matrix2::new(r[0][0], r[0][1], r[1][0], r[1][1])
    }
}

/// One single-qubit Clifford and its pulse decomposition (applied in order).
#[derive(Debug, Clone, PartialEq)]
pub struct Clifford1 {
    pub pulses: Vec<Pulse>,
    pub unitary: Matrix2<C64>,
}

/// The 24 single-qubit Cliffords with composition and inverse tables.
#[derive(Debug)]
pub struct CliffordGroup1 {
    pub elements: Vec<Clifford1>,
    /// `compose[a][b]` is the index of "apply a, then b".
    pub compose: Vec<Vec<usize>>,
    pub inverse: Vec<usize>,
    index: HashMap<Vec<i64>, usize>,
}

fn phase_key(entries: impl Iterator<Item = C64> + Clone) -> Vec<i64> {
    let pivot = entries
        .clone()
        .find(|v| v.norm() > 1e-6)
        .map(|v| v.conj() / v.norm())
        .unwrap_or(C64::new(1.0, 0.0));
    entries
        .flat_map(|v| {
            let w = v * pivot;
            [(w.re * 1e6).round() as i64, (w.im * 1e6).round() as i64]
        })
        .collect()
}

fn key2(u: &Matrix2<C64>) -> Vec<i64> {
    phase_key(u.iter().copied())
}

fn key4(u: &Matrix4<C64>) -> Vec<i64> {
    phase_key(u.iter().copied())
}

impl CliffordGroup1 {
    fn build() -> Self {
        use Pulse::*;
        let table: [&[Pulse]; 24] = [
            // Paulis
            &[I],
            &[X],
            &[Y],
            &[Y, X],
            // 2π/3 rotations
            &[X90, Y90],
            &[X90, Ym90],
            &[Xm90, Y90],
            &[Xm90, Ym90],
            &[Y90, X90],
            &[Y90, Xm90],
            &[Ym90, X90],
            &[Ym90, Xm90],
            // π/2 rotations
            &[X90],
            &[Xm90],
            &[Y90],
            &[Ym90],
            &[Xm90, Y90, X90],
            &[Xm90, Ym90, X90],
            // Hadamard-like
            &[X, Y90],
            &[X, Ym90],
            &[Y, X90],
            &[Y, Xm90],
            &[X90, Y90, X90],
            &[Xm90, Y90, Xm90],
        ];
        let elements: Vec<Clifford1> = table
            .iter()
            .map(|p| Clifford1 {
                pulses: p.to_vec(),
                unitary: p.iter().fold(Matrix2::identity(), |u, g| g.unitary() * u),
            })
            .collect();
        let index: HashMap<Vec<i64>, usize> =
            elements.iter().enumerate().map(|(i, c)| (key2(&c.unitary), i)).collect();
        assert_eq!(index.len(), 24, "Clifford table must hold 24 distinct elements");
        let find = |u: &Matrix2<C64>| index[&key2(u)];
        let compose: Vec<Vec<usize>> = elements
            .iter()
            .map(|a| elements.iter().map(|b| find(&(b.unitary * a.unitary))).collect())
            .collect();
        let inverse = elements.iter().map(|a| find(&a.unitary.adjoint())).collect();
        CliffordGroup1 {
            elements,
            compose,
            inverse,
            index,
        }
    }

    pub fn get() -> &'static CliffordGroup1 {
        static GROUP: OnceLock<CliffordGroup1> = OnceLock::new();
        GROUP.get_or_init(CliffordGroup1::build)
    }

    pub fn index_of(&self, u: &Matrix2<C64>) -> Option<usize> {
        self.index.get(&key2(u)).copied()
    }

    /// Average number of physical pulses per Clifford.
    pub fn mean_pulses(&self) -> f64 {
        self.elements.iter().map(|c| c.pulses.len()).sum::<usize>() as f64 / self.elements.len() as f64
    }
}

/// Coherence-limited average gate error of one gate of duration `gate_time`
/// (µs): `(3 − e^{−t/T1} − 2e^{−t/T2}) / 6`.
pub fn clg(gate_time: f64, t1: f64, t2: f64) -> Result<f64> {
    if !(gate_time >= 0.0) || !(t1 > 0.0) || !(t2 > 0.0) {
        return Err(Error::Domain("gate time must be ≥ 0 and coherence times > 0".into()));
    }
    Ok((3.0 - (-gate_time / t1).exp() - 2.0 * (-gate_time / t2).exp()) / 6.0)
}

/// Error per physical gate from error per Clifford.
pub fn epc_to_epg(epc: f64) -> f64 {
    epc / PULSES_PER_CLIFFORD
}

/// Noise applied after every physical single-qubit pulse.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GateNoise {
    /// Depolarizing probability λ per pulse: `ρ → (1−λ)ρ + λ·I/2`.
    pub depolarizing: f64,
    /// Coherent rotation-angle error (rad) added to every non-idle pulse.
    pub over_rotation: f64,
    /// `(T1, T2)` in µs acting over one gate time.
    pub coherence: Option<(f64, f64)>,
}

impl GateNoise {
    pub fn none() -> Self {
        GateNoise::default()
    }

    pub fn depolarizing(lambda: f64) -> Self {
        GateNoise {
            depolarizing: lambda,
            ..Default::default()
        }
    }

    pub fn coherence(t1: f64, t2: f64) -> Self {
        GateNoise {
            coherence: Some((t1, t2)),
            ..Default::default()
        }
    }

    pub fn with_over_rotation(mut self, angle: f64) -> Self {
        self.over_rotation = angle;
        self
    }

    /// Per-pulse depolarizing strength whose Clifford-averaged decay gives
    /// the requested error per Clifford: `E[(1−λ)^k] = 1 − 2·EPC`.
    pub fn depolarizing_for_epc(epc: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&epc) {
            return Err(Error::Domain(format!("EPC must lie in [0, 0.5), got {epc}")));
        }
        let g = CliffordGroup1::get();
        let target = 1.0 - 2.0 * epc;
        let mean = |l: f64| {
            g.elements.iter().map(|c| (1.0 - l).powi(c.pulses.len() as i32)).sum::<f64>() / 24.0
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mean(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(GateNoise::depolarizing(0.5 * (lo + hi)))
    }

    /// Coherence-limited pulses of a transmon (T1 and echo T2).
    pub fn from_transmon(q: &TransmonParams) -> Self {
        GateNoise::coherence(q.t1, q.t2e)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.depolarizing) || !self.over_rotation.is_finite() {
            return Err(Error::Domain("depolarizing probability must lie in [0, 1]".into()));
        }
        if let Some((t1, t2)) = self.coherence {
            if !(t1 > 0.0 && t2 > 0.0 && t2 <= 2.0 * t1) {
                return Err(Error::Domain(format!("need 0 < T2 ≤ 2·T1, got T1={t1}, T2={t2}")));
            }
        }
        Ok(())
    }

    /// Kraus operators of the incoherent part for one pulse of duration
    /// `gate_time` (coherence loss, then depolarization).
    pub fn kraus(&self, gate_time: f64) -> Vec<[[C64; 2]; 2]> {
        let c = |x: f64| C64::new(x, 0.0);
        let z = c(0.0);
        let mut ops = vec![[[c(1.0), z], [z, c(1.0)]]];
        if let Some((t1, t2)) = self.coherence {
            let gamma = 1.0 - (-gate_time / t1).exp();
            // Remaining coherence loss beyond what amplitude damping gives.
            let f = (-gate_time / t2 + gate_time / (2.0 * t1)).exp().min(1.0);
            let (p, q) = (((1.0 + f) / 2.0).sqrt(), ((1.0 - f) / 2.0).sqrt());
            let ad = [
                [[c(1.0), z], [z, c((1.0 - gamma).sqrt())]],
                [[z, c(gamma.sqrt())], [z, z]],
            ];
            let pd = [[[c(p), z], [z, c(p)]], [[c(q), z], [z, c(-q)]]];
            ops = pd.iter().flat_map(|d| ad.iter().map(move |a| mul2(d, a))).collect();
        }
        let l = self.depolarizing;
        if l > 0.0 {
            let (a, b) = ((1.0 - 0.75 * l).sqrt(), (0.25 * l).sqrt());
            let dep = [
                [[c(a), z], [z, c(a)]],
                [[z, c(b)], [c(b), z]],
                [[z, C64::new(0.0, -b)], [C64::new(0.0, b), z]],
                [[c(b), z], [z, c(-b)]],
            ];
            ops = dep.iter().flat_map(|d| ops.iter().map(move |k| mul2(d, k))).collect();
        }
        ops
    }
}

fn mul2(a: &[[C64; 2]; 2], b: &[[C64; 2]; 2]) -> [[C64; 2]; 2] {
    let mut m = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    m
}

fn as_array(u: &Matrix2<C64>) -> [[C64; 2]; 2] {
    [[u[(0, 0)], u[(0, 1)]], [u[(1, 0)], u[(1, 1)]]]
}

pub(crate) fn apply_kraus(rho: &mut DMatrix<C64>, basis: Basis, site: usize, kraus: &[[[C64; 2]; 2]]) {
    if kraus.len() == 1 {
        apply_site_gate_density(rho, basis, site, &kraus[0]);
        return;
    }
    let mut acc = DMatrix::zeros(rho.nrows(), rho.ncols());
    for k in kraus {
        let mut r = rho.clone();
        apply_site_gate_density(&mut r, basis, site, k);
        acc += r;
    }
    *rho = acc;
}

/// Settings of an RB experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbConfig {
    pub lengths: Vec<usize>,
    /// Random sequences per length.
    pub sequences: usize,
    pub readout: Readout,
    pub seed: u64,
    /// Physical gate time in µs (single-qubit pulse or one layer).
    pub gate_time: f64,
}

impl Default for RbConfig {
    fn default() -> Self {
        RbConfig {
            lengths: DEFAULT_LENGTHS_1Q.to_vec(),
            sequences: 16,
            readout: Readout::exact(),
            seed: 0,
            gate_time: DEFAULT_GATE_TIME,
        }
    }
}

impl RbConfig {
    fn validate(&self) -> Result<()> {
        if self.lengths.len() < 3 || self.lengths.windows(2).any(|w| w[1] <= w[0]) || self.lengths[0] == 0 {
            return Err(Error::Domain("need at least three positive, ascending lengths".into()));
        }
        if self.sequences == 0 || !(self.gate_time >= 0.0) {
            return Err(Error::Domain("need at least one sequence and a non-negative gate time".into()));
        }
        Ok(())
    }
}

/// Fitted RB decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbResult {
    pub lengths: Vec<usize>,
    /// Mean survival per length.
    pub survival: Vec<f64>,
    /// Survival of every sequence, per length.
    pub per_sequence: Vec<Vec<f64>>,
    pub fit: FitResult,
    /// Depolarizing parameter p of `A·p^m + B`.
    pub p: f64,
    pub epc: f64,
    pub epc_sigma: f64,
}

impl RbResult {
    fn from_survival(lengths: &[usize], per_sequence: Vec<Vec<f64>>, dim: f64) -> Result<Self> {
        let survival: Vec<f64> =
            per_sequence.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect();
        let m: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
        let fit = fit_rb_decay(&m, &survival, 1.0 / dim)?;
        let p = fit.value("p").expect("p parameter");
        let sp = fit.sigma("p").expect("p parameter");
        let scale = (dim - 1.0) / dim;
        Ok(RbResult {
            lengths: lengths.to_vec(),
            survival,
            per_sequence,
            p,
            epc: scale * (1.0 - p),
            epc_sigma: scale * sp,
            fit,
        })
    }

    pub fn epg(&self) -> f64 {
        epc_to_epg(self.epc)
    }
}

/// `m` random single-qubit Clifford indices followed by the element that
/// inverts their product.
pub fn random_clifford_sequence<R: Rng>(m: usize, rng: &mut R) -> Vec<usize> {
    let group = CliffordGroup1::get();
    let mut net = 0usize;
    let mut seq: Vec<usize> = (0..m)
        .map(|_| {
            let c = rng.random_range(0..24);
            net = group.compose[net][c];
            c
        })
        .collect();
    seq.push(group.inverse[net]);
    seq
}

/// Physical pulse list of a Clifford sequence, in application order.
pub fn sequence_pulses(seq: &[usize]) -> Vec<Pulse> {
    let group = CliffordGroup1::get();
    seq.iter().flat_map(|&c| group.elements[c].pulses.iter().copied()).collect()
}

/// Sequences used by [`run_simultaneous_rb`] for `qubits` qubits, indexed
/// `[length][sequence][qubit]`, for export and external replay.
pub fn rb_sequences(config: &RbConfig, qubits: usize) -> Vec<Vec<Vec<Vec<usize>>>> {
    (0..config.lengths.len())
        .map(|li| {
            (0..config.sequences)
                .map(|si| {
                    let stream = (li * config.sequences + si) as u64;
                    let mut rng = stream_rng(config.seed, 2 * stream);
                    (0..qubits).map(|_| random_clifford_sequence(config.lengths[li], &mut rng)).collect()
                })
                .collect()
        })
        .collect()
}

/// Simultaneous single-qubit RB on up to four qubits sharing a density
/// matrix. `zz` lists `(i, j, ζ in kHz)` crosstalk acting during every
/// pulse layer. Each qubit draws its own random Clifford sequence and is
/// read out when it ends; later layers of its neighbours only add diagonal
/// ZZ phase, which leaves its populations unchanged.
pub fn run_simultaneous_rb(noise: &[GateNoise], zz: &[(usize, usize, f64)], config: &RbConfig) -> Result<Vec<RbResult>> {
    config.validate()?;
    let n = noise.len();
    if n == 0 || n > 4 {
        return Err(Error::Resource { dim: n, cap: 4 });
    }
    if zz.iter().any(|&(i, j, _)| i >= n || j >= n || i == j) {
        return Err(Error::Selection("ZZ term refers to an unknown qubit pair".into()));
    }
    for g in noise {
        g.validate()?;
    }
    let basis = Basis::new(2, n);
    let dim = basis.dim();
    let kraus: Vec<Vec<[[C64; 2]; 2]>> = noise.iter().map(|g| g.kraus(config.gate_time)).collect();
    let zz_phase: Vec<C64> = (0..dim)
        .map(|idx| {
            let e: f64 = zz
                .iter()
                .map(|&(i, j, z)| z * 1e-3 * (basis.occupation(idx, i) * basis.occupation(idx, j)) as f64)
                .sum();
            C64::from_polar(1.0, -2.0 * PI * e * config.gate_time)
        })
        .collect();
    let has_zz = zz.iter().any(|t| t.2 != 0.0);
    let jobs: Vec<(usize, usize)> = (0..config.lengths.len())
        .flat_map(|l| (0..config.sequences).map(move |s| (l, s)))
        .collect();
    let results: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(li, si)| -> Result<Vec<f64>> {
            let m = config.lengths[li];
            let stream = (li * config.sequences + si) as u64;
            let mut rng = stream_rng(config.seed, 2 * stream);
            let programs: Vec<Vec<Pulse>> = (0..n)
                .map(|_| sequence_pulses(&random_clifford_sequence(m, &mut rng)))
                .collect();
            let layers = programs.iter().map(Vec::len).max().unwrap_or(0);
            let mut rho = DMatrix::<C64>::zeros(dim, dim);
            rho[(0, 0)] = C64::new(1.0, 0.0);
            for layer in 0..layers {
                for (q, prog) in programs.iter().enumerate() {
                    // A qubit is read out as soon as its own program ends.
                    if let Some(p) = prog.get(layer) {
                        let u = p.unitary_with_error(noise[q].over_rotation);
                        apply_site_gate_density(&mut rho, basis, q, &as_array(&u));
                        apply_kraus(&mut rho, basis, q, &kraus[q]);
                    }
                }
                if has_zz {
                    for r in 0..dim {
                        for c in 0..dim {
                            rho[(r, c)] *= zz_phase[r] * zz_phase[c].conj();
                        }
                    }
                }
            }
            let mut rrng = stream_rng(config.seed, 2 * stream + 1);
            (0..n)
                .map(|q| {
                    let p0: f64 = (0..dim)
                        .filter(|&i| basis.occupation(i, q) == 0)
                        .map(|i| rho[(i, i)].re)
                        .sum();
                    // The readout samples the excited fraction; survival is its complement.
                    config.readout.sample((1.0 - p0).clamp(0.0, 1.0), &mut rrng).map(|e| 1.0 - e)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    (0..n)
        .map(|q| {
            let per: Vec<Vec<f64>> = (0..config.lengths.len())
                .map(|li| (0..config.sequences).map(|si| results[li * config.sequences + si][q]).collect())
                .collect();
            RbResult::from_survival(&config.lengths, per, 2.0)
        })
        .collect()
}

/// Single-qubit RB.
pub fn run_rb(noise: GateNoise, config: &RbConfig) -> Result<RbResult> {
    Ok(run_simultaneous_rb(&[noise], &[], config)?.remove(0))
}

/// Per-qubit noise and nearest-neighbour static ZZ (kHz, exact at `levels`)
/// for simultaneous RB on `labels`.
pub fn simultaneous_setup(
    device: &DeviceSpec,
    labels: &[&str],
    levels: usize,
) -> Result<(Vec<GateNoise>, Vec<(usize, usize, f64)>)> {
    let noise = labels
        .iter()
        .map(|l| device.qubit(l).map(GateNoise::from_transmon))
        .collect::<Result<_>>()?;
    let mut zz = Vec::new();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if device.couplings.nn(labels[i], labels[j]).is_some() {
                zz.push((i, j, crate::spectrum::zz_exact(device, labels[i], labels[j], levels)?));
            }
        }
    }
    Ok((noise, zz))
}

// ---------------------------------------------------------------------------
// Two-qubit Clifford group and CZ interleaved RB.

/// Quantum channel on `d×d` density matrices acting on column-major `vec(ρ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub dim: usize,
    pub matrix: DMatrix<C64>,
}

impl Channel {
    pub fn from_unitary(u: &DMatrix<C64>) -> Self {
        // vec(UρU†) = (conj(U) ⊗ U) vec(ρ)
        Channel {
            dim: u.nrows(),
            matrix: u.conjugate().kronecker(u),
        }
    }

    /// `ρ → (1−λ)ρ + λ·Tr(ρ)·I/d`.
    pub fn depolarizing(dim: usize, lambda: f64) -> Self {
        let n = dim * dim;
        let mut m = DMatrix::<C64>::identity(n, n) * C64::new(1.0 - lambda, 0.0);
        for a in 0..dim {
            for b in 0..dim {
                m[(a + a * dim, b + b * dim)] += C64::new(lambda / dim as f64, 0.0);
            }
        }
        Channel { dim, matrix: m }
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Channel) -> Channel {
        Channel {
            dim: self.dim,
            matrix: &next.matrix * &self.matrix,
        }
    }

    pub fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let v = nalgebra::DVector::from_column_slice(rho.as_slice());
        DMatrix::from_column_slice(self.dim, self.dim, (&self.matrix * v).as_slice())
    }

    /// Channel of a linear map given its action on density matrices, using
    /// `|i⟩⟨j| = ρ_x + iρ_y − (1+i)/2 (|i⟩⟨i| + |j⟩⟨j|)` with
    /// `ρ_x = |+⟩⟨+|`, `ρ_y = |+i⟩⟨+i|` on the {i, j} pair.
    pub fn from_map(dim: usize, f: impl Fn(&DMatrix<C64>) -> Result<DMatrix<C64>> + Sync) -> Result<Self> {
        let unit = |i: usize, j: usize, v: C64| {
            let mut m = DMatrix::<C64>::zeros(dim, dim);
            m[(i, j)] = v;
            m
        };
        let diag: Vec<DMatrix<C64>> = (0..dim)
            .into_par_iter()
            .map(|i| f(&unit(i, i, C64::new(1.0, 0.0))))
            .collect::<Result<_>>()?;
        let n = dim * dim;
        let cols: Vec<(usize, DMatrix<C64>)> = (0..n)
            .into_par_iter()
            .map(|col| -> Result<(usize, DMatrix<C64>)> {
                let (i, j) = (col % dim, col / dim);
                if i == j {
                    return Ok((col, diag[i].clone()));
                }
                let h = C64::new(0.5, 0.0);
                let mut rx = unit(i, i, h) + unit(j, j, h) + unit(i, j, h) + unit(j, i, h);
                let mut ry = rx.clone();
                ry[(i, j)] = C64::new(0.0, -0.5);
                ry[(j, i)] = C64::new(0.0, 0.5);
                rx = f(&rx)?;
                ry = f(&ry)?;
                let out = rx + ry * C64::new(0.0, 1.0) - (&diag[i] + &diag[j]) * C64::new(0.5, 0.5);
                Ok((col, out))
            })
            .collect::<Result<_>>()?;
        let mut matrix = DMatrix::<C64>::zeros(n, n);
        for (col, out) in cols {
            matrix.set_column(col, &nalgebra::DVector::from_column_slice(out.as_slice()));
        }
        Ok(Channel { dim, matrix })
    }

    /// Average gate infidelity with respect to the unitary `u`.
    pub fn average_infidelity(&self, u: &DMatrix<C64>) -> f64 {
        let d = self.dim as f64;
        let ideal = Channel::from_unitary(u);
        let f_pro = (ideal.matrix.adjoint() * &self.matrix).trace().re / (d * d);
        1.0 - (d * f_pro + 1.0) / (d + 1.0)
    }
}

pub fn cz_matrix() -> Matrix4<C64> {
    let mut m = Matrix4::identity();
    m[(3, 3)] = C64::new(-1.0, 0.0);
    m
}

pub(crate) fn to_dmatrix(u: &Matrix4<C64>) -> DMatrix<C64> {
    DMatrix::from_column_slice(4, 4, u.as_slice())
}

/// CZ realized as `H = ν·n_c·n_t` with `ν = 1/(2τ)` for `gate_time` µs under
/// the Lindblad noise of both qubits (two levels each).
pub fn cz_lindblad_channel(
    device: &DeviceSpec,
    control: &str,
    target: &str,
    gate_time: f64,
    noise: &NoiseSpec,
) -> Result<Channel> {
    if !(gate_time > 0.0) {
        return Err(Error::Domain(format!("gate time must be positive, got {gate_time}")));
    }
    let subset = SubsetSelection::new(device, &[control, target], 2)?;
    let nn = number_operator(control, &subset)?.mul(&number_operator(target, &subset)?);
    let model = SystemModel {
        h0: nn.scaled(C64::new(0.5 / gate_time, 0.0)),
        subset,
        omegas: vec![0.0, 0.0],
    };
    let opts = EvolveOptions {
        frame: Frame::Lab,
        ..Default::default()
    };
    Channel::from_map(4, |rho| {
        Ok(evolve_open(&model, &[], rho, noise, &[0.0, gate_time], &opts)?.pop().expect("two outputs"))
    })
}

/// Error model of the CZ inside two-qubit RB; local gates are ideal.
#[derive(Debug, Clone, PartialEq)]
pub enum CzNoise {
    Ideal,
    /// Depolarizing CZ with the given average gate infidelity.
    Depolarizing { infidelity: f64 },
    /// Any channel (its unitary part must be CZ).
    Channel(Channel),
}

impl CzNoise {
    /// Superoperator of the noisy CZ.
    pub fn channel(&self) -> Channel {
        let cz = Channel::from_unitary(&to_dmatrix(&cz_matrix()));
        match self {
            CzNoise::Ideal => cz,
            CzNoise::Depolarizing { infidelity } => cz.then(&Channel::depolarizing(4, infidelity * 4.0 / 3.0)),
            CzNoise::Channel(c) => c.clone(),
        }
    }
}

/// One element of the two-qubit Clifford group as `local · CZ · parent`
/// (or a bare local layer when `parent` is `None`).
#[derive(Debug, Clone)]
pub struct Clifford2 {
    pub unitary: Matrix4<C64>,
    /// Index `a·24 + b` of the local layer `C_a ⊗ C_b` (control first).
    pub local: usize,
    pub parent: Option<usize>,
    pub cz_count: usize,
}

/// The 11520-element two-qubit Clifford group (up to phase).
#[derive(Debug)]
pub struct CliffordGroup2 {
    pub elements: Vec<Clifford2>,
    index: HashMap<Vec<i64>, usize>,
}

fn local_layer(a: usize, b: usize) -> Matrix4<C64> {
    let g = CliffordGroup1::get();
    let (ua, ub) = (g.elements[a].unitary, g.elements[b].unitary);
    let mut m = Matrix4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    m[(2 * i + k, 2 * j + l)] = ua[(i, j)] * ub[(k, l)];
                }
            }
        }
    }
    m
}

impl CliffordGroup2 {
    fn build() -> Self {
        let locals: Vec<Matrix4<C64>> = (0..576).map(|k| local_layer(k / 24, k % 24)).collect();
        let mut elements: Vec<Clifford2> = Vec::with_capacity(11520);
        let mut index: HashMap<Vec<i64>, usize> = HashMap::with_capacity(11520);
        for (k, u) in locals.iter().enumerate() {
            if index.insert(key4(u), elements.len()).is_none() {
                elements.push(Clifford2 {
                    unitary: *u,
                    local: k,
                    parent: None,
                    cz_count: 0,
                });
            }
        }
        let cz = cz_matrix();
        let mut frontier: Vec<usize> = (0..elements.len()).collect();
        let mut depth = 0;
        while !frontier.is_empty() {
            depth += 1;
            let candidates: Vec<(Vec<i64>, Matrix4<C64>, usize, usize)> = frontier
                .par_iter()
                .flat_map_iter(|&p| {
                    let base = cz * elements[p].unitary;
                    locals.iter().enumerate().map(move |(k, l)| {
                        let u = l * base;
                        (key4(&u), u, k, p)
                    })
                })
                .collect();
            let mut next = Vec::new();
            for (key, u, k, p) in candidates {
                if let std::collections::hash_map::Entry::Vacant(e) = index.entry(key) {
                    e.insert(elements.len());
                    next.push(elements.len());
                    elements.push(Clifford2 {
                        unitary: u,
                        local: k,
                        parent: Some(p),
                        cz_count: depth,
                    });
                }
            }
            frontier = next;
        }
        CliffordGroup2 { elements, index }
    }

    pub fn get() -> &'static CliffordGroup2 {
        static GROUP: OnceLock<CliffordGroup2> = OnceLock::new();
        GROUP.get_or_init(CliffordGroup2::build)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn index_of(&self, u: &Matrix4<C64>) -> Option<usize> {
        self.index.get(&key4(u)).copied()
    }

    /// Mean number of CZ gates per element.
    pub fn mean_cz(&self) -> f64 {
        self.elements.iter().map(|c| c.cz_count).sum::<usize>() as f64 / self.len() as f64
    }

    fn apply(&self, g: usize, rho: &mut DMatrix<C64>, cz: &Channel, locals: &[Channel]) {
        let e = &self.elements[g];
        if let Some(p) = e.parent {
            self.apply(p, rho, cz, locals);
            *rho = cz.apply(rho);
        }
        *rho = locals[e.local].apply(rho);
    }
}

/// Reference and CZ-interleaved two-qubit RB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterleavedRbResult {
    pub reference: RbResult,
    pub interleaved: RbResult,
    /// `(3/4)(1 − p_int/p_ref)`.
    pub cz_error: f64,
    pub cz_error_sigma: f64,
}

fn run_rb_2q(cz: &Channel, interleave: bool, config: &RbConfig, stream_base: u64) -> Result<RbResult> {
    let group = CliffordGroup2::get();
    let locals: Vec<Channel> = (0..576)
        .map(|k| Channel::from_unitary(&to_dmatrix(&local_layer(k / 24, k % 24))))
        .collect();
    let czu = cz_matrix();
    let jobs: Vec<(usize, usize)> = (0..config.lengths.len())
        .flat_map(|l| (0..config.sequences).map(move |s| (l, s)))
        .collect();
    let surv: Vec<f64> = jobs
        .par_iter()
        .map(|&(li, si)| -> Result<f64> {
            let stream = stream_base + 2 * (li * config.sequences + si) as u64;
            let mut rng = stream_rng(config.seed, stream);
            let mut rho = DMatrix::<C64>::zeros(4, 4);
            rho[(0, 0)] = C64::new(1.0, 0.0);
            let mut net = Matrix4::<C64>::identity();
            for _ in 0..config.lengths[li] {
                let g = rng.random_range(0..group.len());
                group.apply(g, &mut rho, cz, &locals);
                net = group.elements[g].unitary * net;
                if interleave {
                    rho = cz.apply(&rho);
                    net = czu * net;
                }
            }
            let rec = group
                .index_of(&net.adjoint())
                .ok_or_else(|| Error::Contract("sequence left the Clifford group".into()))?;
            group.apply(rec, &mut rho, cz, &locals);
            let mut rrng = stream_rng(config.seed, stream + 1);
            let p00 = rho[(0, 0)].re.clamp(0.0, 1.0);
            config.readout.sample(1.0 - p00, &mut rrng).map(|e| 1.0 - e)
        })
        .collect::<Result<_>>()?;
    let per: Vec<Vec<f64>> = surv.chunks(config.sequences).map(<[f64]>::to_vec).collect();
    RbResult::from_survival(&config.lengths, per, 4.0)
}

impl InterleavedRbResult {
    /// Average CZ gate fidelity.
    pub fn fidelity(&self) -> f64 {
        1.0 - self.cz_error
    }
}

/// Interleaved RB of a CZ gate with ideal local Cliffords. The default
/// two-qubit length grid is [`DEFAULT_LENGTHS_2Q`].
pub fn run_interleaved_rb_cz(cz: &CzNoise, config: &RbConfig) -> Result<InterleavedRbResult> {
    config.validate()?;
    let ch = cz.channel();
    let offset = 2 * (config.lengths.len() * config.sequences) as u64;
    let (reference, interleaved) = rayon::join(
        || run_rb_2q(&ch, false, config, 0),
        || run_rb_2q(&ch, true, config, offset),
    );
    let (reference, interleaved) = (reference?, interleaved?);
    let ratio = interleaved.p / reference.p;
    let sr = reference.fit.sigma("p").unwrap_or(f64::INFINITY) / reference.p;
    let si = interleaved.fit.sigma("p").unwrap_or(f64::INFINITY) / interleaved.p;
    Ok(InterleavedRbResult {
        cz_error: 0.75 * (1.0 - ratio),
        cz_error_sigma: 0.75 * ratio * (sr * sr + si * si).sqrt(),
        reference,
        interleaved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_qubit_group() {
        let g = CliffordGroup1::get();
        assert_eq!(g.elements.len(), 24);
        assert!((g.mean_pulses() - 1.875).abs() < 1e-12);
        for a in 0..24 {
            assert_eq!(g.compose[a][g.inverse[a]], 0);
            for b in 0..24 {
                let u = g.elements[b].unitary * g.elements[a].unitary;
                assert_eq!(g.index_of(&u), Some(g.compose[a][b]));
            }
        }
    }

    #[test]
    fn sequences_invert_and_over_rotation_costs_fidelity() {
        let g = CliffordGroup1::get();
        for seed in 0..10 {
            let mut rng = stream_rng(seed, 0);
            for _ in 0..16 {
                let seq = random_clifford_sequence(50, &mut rng);
                let net = seq.iter().fold(0, |n, &c| g.compose[n][c]);
                assert_eq!(net, 0);
                let u = sequence_pulses(&seq).iter().fold(Matrix2::identity(), |u, p| p.unitary() * u);
                assert!((u * (u[(0, 0)].conj() / u[(0, 0)].norm()) - Matrix2::identity()).camax() < 1e-10);
            }
        }
        let cfg = RbConfig::default();
        let clean = run_rb(GateNoise::depolarizing(1e-4), &cfg).unwrap();
        let tilted = run_rb(GateNoise::depolarizing(1e-4).with_over_rotation(0.02), &cfg).unwrap();
        assert!(tilted.epc > clean.epc);
    }

    #[test]
    fn coherence_limit() {
        assert_eq!(clg(0.0, 126.0, 124.0).unwrap(), 0.0);
        let v = clg(0.06, 126.0, 124.0).unwrap();
        assert!((v - 2.406e-4).abs() < 1e-7, "{v}");
        assert!(clg(0.08, 126.0, 124.0).unwrap() > v);
        assert!((epc_to_epg(1.212e-4) - 6.641e-5).abs() < 5e-9);
    }

    #[test]
    fn depolarizing_solution_matches_epc() {
        let lambda = GateNoise::depolarizing_for_epc(1e-3).unwrap().depolarizing;
        // To first order EPC ≈ λ·⟨k⟩/2.
        assert!((lambda * 1.875 / 2.0 / 1e-3 - 1.0).abs() < 2e-3);
    }

    #[test]
    fn coherence_kraus_is_trace_preserving_with_clg_infidelity() {
        let k = GateNoise::coherence(50.0, 40.0).kraus(0.06);
        let mut s = [[C64::new(0.0, 0.0); 2]; 2];
        for m in &k {
            for i in 0..2 {
                for j in 0..2 {
                    s[i][j] += m[0][i].conj() * m[0][j] + m[1][i].conj() * m[1][j];
                }
            }
        }
        assert!((s[0][0].re - 1.0).abs() < 1e-14 && (s[1][1].re - 1.0).abs() < 1e-14 && s[0][1].norm() < 1e-14);
        // Average fidelity from Kraus: (Σ|Tr K|² + d)/(d² + d).
        let f = (k.iter().map(|m| (m[0][0] + m[1][1]).norm_sqr()).sum::<f64>() + 2.0) / 6.0;
        assert!(((1.0 - f) - clg(0.06, 50.0, 40.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rb_recovers_injected_and_coherence_errors() {
        let r = run_rb(GateNoise::depolarizing_for_epc(1e-3).unwrap(), &RbConfig::default()).unwrap();
        assert!((r.epc / 1e-3 - 1.0).abs() < 0.05, "{}", r.epc);

        let noise = GateNoise::coherence(60.0, 70.0);
        let r = run_rb(noise, &RbConfig::default()).unwrap();
        let expected = 1.875 * clg(0.06, 60.0, 70.0).unwrap();
        assert!((r.epc / expected - 1.0).abs() < 0.05, "{} vs {expected}", r.epc);

        let cfg = RbConfig {
            readout: Readout {
                shots: 10_000,
                assignment_error: 0.0,
            },
            ..Default::default()
        };
        assert!(run_rb(GateNoise::none(), &cfg).unwrap().epc <= 1e-4);
    }

    #[test]
    fn zz_crosstalk_raises_simultaneous_error() {
        let noise = [GateNoise::coherence(60.0, 70.0); 2];
        let cfg = RbConfig {
            sequences: 8,
            ..Default::default()
        };
        let alone = run_rb(noise[0], &cfg).unwrap();
        let mut last = 0.0;
        for zeta in [0.0, 50.0, 200.0, 500.0] {
            let r = run_simultaneous_rb(&noise, &[(0, 1, zeta)], &cfg).unwrap();
            if zeta == 0.0 {
                assert!((r[0].epc - alone.epc).abs() < 1e-9);
            }
            assert!(r[0].epc >= last, "ζ={zeta}: {} < {last}", r[0].epc);
            last = r[0].epc;
        }
        assert!(last > 1.5 * alone.epc);
    }

    #[test]
    fn two_qubit_group() {
        let g = CliffordGroup2::get();
        assert_eq!(g.len(), 11520);
        assert!(g.elements.iter().all(|e| e.cz_count <= 3));
        let u = g.elements[1234].unitary * g.elements[777].unitary * cz_matrix();
        assert!(g.index_of(&u).is_some());
    }

    #[test]
    fn interleaved_rb_recovers_cz_error() {
        let cfg = RbConfig {
            lengths: DEFAULT_LENGTHS_2Q.to_vec(),
            sequences: 16,
            ..Default::default()
        };
        let r = run_interleaved_rb_cz(&CzNoise::Depolarizing { infidelity: 0.05 }, &cfg).unwrap();
        assert!((r.fidelity() - 0.95).abs() < 0.02, "{}", r.cz_error);
        let r = run_interleaved_rb_cz(&CzNoise::Ideal, &cfg).unwrap();
        assert!(r.cz_error.abs() < 1e-6);
    }

    #[test]
    fn lindblad_cz_channel() {
        use crate::device::TransmonParams;
        let q = |l: &str| TransmonParams::from_omega_alpha(l, 4800.0, -196.0, 60.0, 50.0, 70.0).unwrap();
        let d = DeviceSpec::chain("p", vec![q("A"), q("B")], &[0.5]).unwrap();
        let ideal = Channel::from_unitary(&to_dmatrix(&cz_matrix()));
        let ch = cz_lindblad_channel(&d, "A", "B", 1.0, &NoiseSpec::none()).unwrap();
        assert!((&ch.matrix - &ideal.matrix).camax() < 1e-7);
        let noise = NoiseSpec::from_device(&d, &["A", "B"]).unwrap();
        let u = to_dmatrix(&cz_matrix());
        let cfg = RbConfig {
            lengths: DEFAULT_LENGTHS_2Q.to_vec(),
            sequences: 16,
            ..Default::default()
        };
        let mut last = (0.0, 0.0);
        for tau in [0.5, 1.5, 3.0] {
            let ch = cz_lindblad_channel(&d, "A", "B", tau, &noise).unwrap();
            let direct = ch.average_infidelity(&u);
            let r = run_interleaved_rb_cz(&CzNoise::Channel(ch), &cfg).unwrap();
            assert!(direct > last.0 && r.cz_error > last.1, "{tau}: {direct} {}", r.cz_error);
            last = (direct, r.cz_error);
        }
    }
}
