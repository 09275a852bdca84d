//! Closed and open (Lindblad) evolution, ideal pulses and readout.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::integrator::{integrate, IntegratorOptions};
use super::model::{DriveTone, DrivenHamiltonian, Frame, SystemModel};
use crate::device::DeviceSpec;
use crate::error::{Error, Result};
use crate::operators::{lowering_on, Basis, LatticeOperator};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Decoherence of one qubit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QubitNoise {
    /// Relaxation rate 1/T1 in 1/µs.
    pub gamma1: f64,
    /// Pure-dephasing rate 1/Tφ in 1/µs.
    pub gamma_phi: f64,
    /// Standard deviation of the quasi-static frequency offset, in kHz.
    pub sigma_f_khz: f64,
}

/// Per-qubit noise, keyed by label. Qubits without an entry are noiseless.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub qubits: BTreeMap<String, QubitNoise>,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec::default()
    }

    /// Rates from the device's coherence times, with
    /// `1/Tφ = 1/T2R − 1/(2·T1)` (clamped at zero) and no jitter.
    pub fn from_device(device: &DeviceSpec, labels: &[&str]) -> Result<Self> {
        let mut qubits = BTreeMap::new();
        for l in labels {
            let q = device.qubit(l)?;
            qubits.insert(
                l.to_string(),
                QubitNoise {
                    gamma1: 1.0 / q.t1,
                    gamma_phi: (1.0 / q.t2r - 0.5 / q.t1).max(0.0),
                    sigma_f_khz: 0.0,
                },
            );
        }
        Ok(NoiseSpec { qubits })
    }

    /// Sets the same quasi-static jitter on every listed qubit.
    pub fn with_jitter(mut self, labels: &[&str], sigma_f_khz: f64) -> Self {
        for l in labels {
            self.qubits.entry(l.to_string()).or_default().sigma_f_khz = sigma_f_khz;
        }
        self
    }

    pub fn get(&self, label: &str) -> QubitNoise {
        self.qubits.get(label).copied().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        for (l, q) in &self.qubits {
            if !(q.gamma1 >= 0.0 && q.gamma_phi >= 0.0 && q.sigma_f_khz >= 0.0) {
                return Err(Error::Contract(format!("negative noise rate on `{l}`")));
            }
        }
        Ok(())
    }

    pub fn is_dissipative(&self, labels: &[String]) -> bool {
        labels.iter().any(|l| {
            let q = self.get(l);
            q.gamma1 > 0.0 || q.gamma_phi > 0.0
        })
    }

    /// Draws one quasi-static offset (MHz) per listed qubit.
    pub fn sample_offsets<R: Rng>(&self, labels: &[String], rng: &mut R) -> Vec<f64> {
        labels
            .iter()
            .map(|l| {
                let s = self.get(l).sigma_f_khz * 1e-3;
                if s > 0.0 {
                    Normal::new(0.0, s).expect("finite sigma").sample(rng)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Settings shared by closed and open evolution.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolveOptions {
    pub frame: Frame,
    pub integrator: IntegratorOptions,
    /// Static per-site frequency offsets (MHz), e.g. sampled jitter.
    pub offsets: Vec<f64>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            frame: Frame::Rotating,
            integrator: IntegratorOptions::default(),
            offsets: Vec::new(),
        }
    }
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::Domain("empty time grid".into()));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("time grid must be ascending".into()));
    }
    Ok(())
}

fn check_offsets(model: &SystemModel, opts: &EvolveOptions) -> Result<()> {
    if !opts.offsets.is_empty() && opts.offsets.len() != model.subset.n_sites() {
        return Err(Error::Dimension(format!(
            "{} frequency offsets for {} sites",
            opts.offsets.len(),
            model.subset.n_sites()
        )));
    }
    Ok(())
}

/// Schrödinger evolution of `psi0` starting at `t_grid[0]`; returns the
/// state at every grid time.
pub fn evolve(
    model: &SystemModel,
    drives: &[DriveTone],
    psi0: &[C64],
    t_grid: &[f64],
    opts: &EvolveOptions,
) -> Result<Vec<Vec<C64>>> {
    check_grid(t_grid)?;
    check_offsets(model, opts)?;
    if psi0.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "state of length {} for dimension {}",
            psi0.len(),
            model.dim()
        )));
    }
    let h = DrivenHamiltonian::build(model, drives, opts.frame, &opts.offsets)?;
    let scale = C64::new(0.0, -TWO_PI);
    integrate(
        |t, y, dy| h.apply(t, scale, y, dy),
        t_grid[0],
        psi0,
        t_grid,
        h.breakpoints(),
        opts.integrator,
    )
}

struct Dissipator {
    op: LatticeOperator,
    /// Diagonal of `L†L`; every dissipator used here has a diagonal `L†L`.
    ldl: Vec<f64>,
}

fn dissipators(model: &SystemModel, noise: &NoiseSpec) -> Vec<Dissipator> {
    let basis = model.basis();
    let mut out = Vec::new();
    for (s, label) in model.subset.labels().iter().enumerate() {
        let q = noise.get(label);
        if q.gamma1 > 0.0 {
            let a = lowering_on(basis, s).scaled(C64::new(q.gamma1.sqrt(), 0.0));
            let ldl = (0..basis.dim())
                .map(|i| q.gamma1 * basis.occupation(i, s) as f64)
                .collect();
            out.push(Dissipator { op: a, ldl });
        }
        if q.gamma_phi > 0.0 {
            // Coherences between n and m decay at γφ·(n−m)², so 0↔1 decays at γφ.
            let g = (2.0 * q.gamma_phi).sqrt();
            let n: Vec<f64> = (0..basis.dim())
                .map(|i| basis.occupation(i, s) as f64)
                .collect();
            let op = LatticeOperator::from_diagonal(&n.iter().map(|v| g * v).collect::<Vec<_>>());
            let ldl = n.iter().map(|v| 2.0 * q.gamma_phi * v * v).collect();
            out.push(Dissipator { op, ldl });
        }
    }
    out
}

/// Right-hand side of the Lindblad equation on a column-major flattened ρ.
struct Liouvillian {
    h: DrivenHamiltonian,
    diss: Vec<Dissipator>,
    dim: usize,
}

impl Liouvillian {
    fn rhs(&self, t: f64, rho: &[C64], out: &mut [C64], work: &mut [C64], work2: &mut [C64]) {
        let n = self.dim;
        let scale = C64::new(0.0, -TWO_PI);
        // work = −i2π·H·ρ, column by column.
        for c in 0..n {
            self.h.apply(
                t,
                scale,
                &rho[c * n..(c + 1) * n],
                &mut work[c * n..(c + 1) * n],
            );
        }
        // −i2π[H, ρ] = work + work† because ρ and H are Hermitian.
        for c in 0..n {
            for r in 0..n {
                out[c * n + r] = work[c * n + r] + work[r * n + c].conj();
            }
        }
        for d in &self.diss {
            for c in 0..n {
                d.op.matvec(&rho[c * n..(c + 1) * n], &mut work[c * n..(c + 1) * n]);
            }
            // work2 = (Lρ)†
            for c in 0..n {
                for r in 0..n {
                    work2[c * n + r] = work[r * n + c].conj();
                }
            }
            for c in 0..n {
                d.op.matvec_add(
                    C64::new(1.0, 0.0),
                    &work2[c * n..(c + 1) * n],
                    &mut out[c * n..(c + 1) * n],
                );
            }
            for c in 0..n {
                for r in 0..n {
                    out[c * n + r] -= rho[c * n + r] * (0.5 * (d.ldl[r] + d.ldl[c]));
                }
            }
        }
    }
}

fn check_density(rho: &DMatrix<C64>, dim: usize) -> Result<()> {
    if rho.nrows() != dim || rho.ncols() != dim {
        return Err(Error::Dimension(format!(
            "density matrix is {}x{}, expected {dim}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > 1e-9 || tr.im.abs() > 1e-9 {
        return Err(Error::Contract(format!(
            "density matrix trace {tr} is not 1"
        )));
    }
    if (rho - rho.adjoint()).camax() > 1e-9 {
        return Err(Error::Contract("density matrix is not Hermitian".into()));
    }
    Ok(())
}

/// Lindblad evolution with amplitude damping `√γ₁·a` and dephasing
/// `√(2γφ)·n` on every qubit listed in `noise`.
pub fn evolve_open(
    model: &SystemModel,
    drives: &[DriveTone],
    rho0: &DMatrix<C64>,
    noise: &NoiseSpec,
    t_grid: &[f64],
    opts: &EvolveOptions,
) -> Result<Vec<DMatrix<C64>>> {
    check_grid(t_grid)?;
    check_offsets(model, opts)?;
    noise.validate()?;
    let n = model.dim();
    check_density(rho0, n)?;
    let liou = Liouvillian {
        h: DrivenHamiltonian::build(model, drives, opts.frame, &opts.offsets)?,
        diss: dissipators(model, noise),
        dim: n,
    };
    let mut work = vec![C64::new(0.0, 0.0); n * n];
    let mut work2 = vec![C64::new(0.0, 0.0); n * n];
    let y0: Vec<C64> = rho0.iter().copied().collect();
    let ys = integrate(
        |t, y, dy| liou.rhs(t, y, dy, &mut work, &mut work2),
        t_grid[0],
        &y0,
        t_grid,
        liou.h.breakpoints(),
        opts.integrator,
    )?;
    Ok(ys.into_iter().map(|y| DMatrix::from_vec(n, n, y)).collect())
}

/// Basis state with the given occupations.
pub fn basis_state(basis: Basis, occupations: &[usize]) -> Vec<C64> {
    let mut psi = vec![C64::new(0.0, 0.0); basis.dim()];
    psi[basis.index(occupations)] = C64::new(1.0, 0.0);
    psi
}

pub fn pure_density(psi: &[C64]) -> DMatrix<C64> {
    let v = nalgebra::DVector::from_column_slice(psi);
    &v * v.adjoint()
}

/// Qubit rotation `exp(−i θ/2 (cos φ X + sin φ Y))` on levels 0 and 1 of a site.
pub fn rotation(theta: f64, phi: f64) -> [[C64; 2]; 2] {
    let (s, c) = (0.5 * theta).sin_cos();
    let mi_s = C64::new(0.0, -s);
    [
        [C64::new(c, 0.0), mi_s * C64::from_polar(1.0, -phi)],
        [mi_s * C64::from_polar(1.0, phi), C64::new(c, 0.0)],
    ]
}

/// Applies a 2×2 gate on levels {0, 1} of `site` to a state vector; higher
/// levels are left untouched.
pub fn apply_site_gate(psi: &mut [C64], basis: Basis, site: usize, u: &[[C64; 2]; 2]) {
    let stride = basis.stride(site);
    for idx in 0..basis.dim() {
        if basis.occupation(idx, site) == 0 {
            let j = idx + stride;
            let (a, b) = (psi[idx], psi[j]);
            psi[idx] = u[0][0] * a + u[0][1] * b;
            psi[j] = u[1][0] * a + u[1][1] * b;
        }
    }
}

/// `ρ → U ρ U†` for a 2×2 gate on one site.
pub fn apply_site_gate_density(
    rho: &mut DMatrix<C64>,
    basis: Basis,
    site: usize,
    u: &[[C64; 2]; 2],
) {
    let n = basis.dim();
    for c in 0..n {
        let mut col: Vec<C64> = rho.column(c).iter().copied().collect();
        apply_site_gate(&mut col, basis, site, u);
        rho.set_column(c, &nalgebra::DVector::from_vec(col));
    }
    let ud = [
        [u[0][0].conj(), u[1][0].conj()],
        [u[0][1].conj(), u[1][1].conj()],
    ];
    // Right multiplication by U† acts on rows as U* on the transposed index.
    let uc = [[ud[0][0], ud[1][0]], [ud[0][1], ud[1][1]]];
    for r in 0..n {
        let mut row: Vec<C64> = rho.row(r).iter().copied().collect();
        apply_site_gate(&mut row, basis, site, &uc);
        for (c, v) in row.into_iter().enumerate() {
            rho[(r, c)] = v;
        }
    }
}

/// Probability that `site` is found outside its ground state.
pub fn excited_probability(diag: impl Fn(usize) -> f64, basis: Basis, site: usize) -> f64 {
    (0..basis.dim())
        .filter(|&i| basis.occupation(i, site) > 0)
        .map(diag)
        .sum()
}

pub fn excited_probability_state(psi: &[C64], basis: Basis, site: usize) -> f64 {
    excited_probability(|i| psi[i].norm_sqr(), basis, site)
}

pub fn excited_probability_density(rho: &DMatrix<C64>, basis: Basis, site: usize) -> f64 {
    excited_probability(|i| rho[(i, i)].re, basis, site)
}

/// `⟨0|ρ_site|1⟩` of one site for a pure state.
pub fn site_coherence_state(psi: &[C64], basis: Basis, site: usize) -> C64 {
    let stride = basis.stride(site);
    (0..basis.dim())
        .filter(|&i| basis.occupation(i, site) == 0)
        .map(|i| psi[i] * psi[i + stride].conj())
        .sum()
}

/// `⟨0|ρ_site|1⟩` of one site, summed over the other sites' configurations.
pub fn site_coherence(rho: &DMatrix<C64>, basis: Basis, site: usize) -> C64 {
    let stride = basis.stride(site);
    (0..basis.dim())
        .filter(|&i| basis.occupation(i, site) == 0)
        .map(|i| rho[(i, i + stride)])
        .sum()
}

/// `(⟨X⟩, ⟨Y⟩)` of one site's qubit subspace.
pub fn site_xy(rho: &DMatrix<C64>, basis: Basis, site: usize) -> (f64, f64) {
    let c = site_coherence(rho, basis, site);
    (2.0 * c.re, -2.0 * c.im)
}

/// Finite-shot readout with symmetric assignment error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Readout {
    /// Number of shots; 0 records exact probabilities.
    pub shots: u32,
    pub assignment_error: f64,
}

impl Readout {
    pub fn exact() -> Self {
        Readout::default()
    }

    /// Recorded excited-state fraction for true probability `p`.
    pub fn sample<R: Rng>(&self, p: f64, rng: &mut R) -> Result<f64> {
        if !(-1e-9..=1.0 + 1e-9).contains(&p) {
            return Err(Error::Contract(format!("population {p} outside [0, 1]")));
        }
        let p = p.clamp(0.0, 1.0);
        let e = self.assignment_error;
        let q = p * (1.0 - e) + (1.0 - p) * e;
        if self.shots == 0 {
            return Ok(q);
        }
        let k = Binomial::new(self.shots as u64, q)
            .map_err(|e| Error::Domain(e.to_string()))?
            .sample(rng);
        Ok(k as f64 / self.shots as f64)
    }
}

/// Independent random stream `stream` derived from the master `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{CouplingGraph, Pair, TransmonParams};
    use crate::dynamics::model::Envelope;
    use approx::assert_relative_eq;

    fn single(omega: f64) -> DeviceSpec {
        DeviceSpec {
            name: "single".into(),
            rows: 1,
            cols: 1,
            qubits: vec![
                TransmonParams::from_omega_alpha("A", omega, -200.0, 71.0, 51.0, 80.0).unwrap(),
            ],
            resonators: vec![],
            couplings: CouplingGraph::default(),
        }
    }

    fn pair(j: f64) -> DeviceSpec {
        let q = |l: &str, w: f64| {
            TransmonParams::from_omega_alpha(l, w, -200.0, 71.0, 51.0, 80.0).unwrap()
        };
        let mut nn = BTreeMap::new();
        nn.insert(Pair::new("A", "B"), j);
        DeviceSpec {
            name: "pair".into(),
            rows: 1,
            cols: 2,
            qubits: vec![q("A", 4800.0), q("B", 4812.0)],
            resonators: vec![],
            couplings: CouplingGraph {
                nn,
                ..Default::default()
            },
        }
    }

    fn resonant(amp: f64, dur: f64) -> DriveTone {
        DriveTone {
            target: "A".into(),
            amplitude: amp,
            detuning: 0.0,
            phase: 0.0,
            envelope: Envelope::Rectangular,
            start: 0.0,
            duration: dur,
        }
    }

    #[test]
    fn rabi_oscillation() {
        let dev = single(4800.0);
        let m = SystemModel::new(&dev, &["A"], 2, false).unwrap();
        let ts: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
        let states = evolve(
            &m,
            &[resonant(1.0, 1.0)],
            &basis_state(m.basis(), &[0]),
            &ts,
            &EvolveOptions::default(),
        )
        .unwrap();
        for (t, psi) in ts.iter().zip(&states) {
            let p0 = psi[0].norm_sqr();
            assert!(
                (p0 - (std::f64::consts::PI * t).cos().powi(2)).abs() < 1e-6,
                "t={t}"
            );
        }
        assert!(states[10][1].norm_sqr() > 1.0 - 1e-6);
    }

    #[test]
    fn lab_and_rotating_frames_agree() {
        let dev = single(50.0);
        let m = SystemModel::new(&dev, &["A"], 2, false).unwrap();
        let ts: Vec<f64> = (0..=10).map(|i| i as f64 * 0.03).collect();
        let drive = DriveTone {
            detuning: 0.5,
            ..resonant(2.0, 0.3)
        };
        let psi0 = basis_state(m.basis(), &[0]);
        let rot = evolve(&m, std::slice::from_ref(&drive), &psi0, &ts, &EvolveOptions::default()).unwrap();
        let lab_opts = EvolveOptions {
            frame: Frame::Lab,
            ..Default::default()
        };
        let lab = evolve(&m, &[drive], &psi0, &ts, &lab_opts).unwrap();
        for (a, b) in rot.iter().zip(&lab) {
            assert!((a[1].norm_sqr() - b[1].norm_sqr()).abs() < 1e-6);
        }
    }

    #[test]
    fn stationary_eigenstate_and_norm() {
        let dev = pair(0.6);
        let m = SystemModel::new(&dev, &["A", "B"], 3, false).unwrap();
        let psi0 = basis_state(m.basis(), &[0, 0]);
        let ts: Vec<f64> = (0..=10).map(|i| i as f64 * 0.5).collect();
        let out = evolve(&m, &[], &psi0, &ts, &EvolveOptions::default()).unwrap();
        for psi in &out {
            assert!((psi[0].norm_sqr() - 1.0).abs() < 1e-12);
        }
        let psi1 = basis_state(m.basis(), &[1, 0]);
        let out = evolve(&m, &[], &psi1, &ts, &EvolveOptions::default()).unwrap();
        for (t, psi) in ts.iter().zip(&out) {
            let norm: f64 = psi.iter().map(|v| v.norm_sqr()).sum();
            assert!(
                (norm - 1.0).abs() <= 1e-8 * t.max(1.0),
                "drift {}",
                norm - 1.0
            );
        }
    }

    #[test]
    fn amplitude_damping_and_dephasing() {
        let dev = single(4800.0);
        let m = SystemModel::new(&dev, &["A"], 3, false).unwrap();
        let mut noise = NoiseSpec::none();
        noise.qubits.insert(
            "A".into(),
            QubitNoise {
                gamma1: 1.0 / 20.0,
                ..Default::default()
            },
        );
        let ts = [0.0, 5.0, 10.0, 40.0];
        let rho0 = pure_density(&basis_state(m.basis(), &[1]));
        let out = evolve_open(&m, &[], &rho0, &noise, &ts, &EvolveOptions::default()).unwrap();
        for (t, r) in ts.iter().zip(&out) {
            assert_relative_eq!(r[(1, 1)].re, (-t / 20.0f64).exp(), max_relative = 1e-7);
            assert!((r.trace().re - 1.0).abs() < 1e-8);
        }
        let mut noise = NoiseSpec::none();
        noise.qubits.insert(
            "A".into(),
            QubitNoise {
                gamma_phi: 1.0 / 30.0,
                ..Default::default()
            },
        );
        let mut plus = basis_state(m.basis(), &[0]);
        apply_site_gate(
            &mut plus,
            m.basis(),
            0,
            &rotation(std::f64::consts::FRAC_PI_2, 0.0),
        );
        let out = evolve_open(
            &m,
            &[],
            &pure_density(&plus),
            &noise,
            &ts,
            &EvolveOptions::default(),
        )
        .unwrap();
        for (t, r) in ts.iter().zip(&out) {
            assert_relative_eq!(
                r[(0, 1)].norm(),
                0.5 * (-t / 30.0f64).exp(),
                max_relative = 1e-7
            );
        }
    }

    #[test]
    fn negative_rates_rejected() {
        let dev = single(4800.0);
        let m = SystemModel::new(&dev, &["A"], 2, false).unwrap();
        let mut noise = NoiseSpec::none();
        noise.qubits.insert(
            "A".into(),
            QubitNoise {
                gamma1: -1.0,
                ..Default::default()
            },
        );
        let rho0 = pure_density(&basis_state(m.basis(), &[1]));
        assert!(matches!(
            evolve_open(
                &m,
                &[],
                &rho0,
                &noise,
                &[0.0, 1.0],
                &EvolveOptions::default()
            ),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn density_gate_matches_state_gate() {
        let basis = Basis::new(3, 2);
        let mut psi = vec![C64::new(0.0, 0.0); 9];
        psi[0] = C64::new(0.6, 0.0);
        psi[4] = C64::new(0.0, 0.8);
        let mut rho = pure_density(&psi);
        let u = rotation(0.7, 0.3);
        apply_site_gate(&mut psi, basis, 1, &u);
        apply_site_gate_density(&mut rho, basis, 1, &u);
        assert!((rho - pure_density(&psi)).camax() < 1e-14);
    }

    #[test]
    fn readout_sampling() {
        let mut rng = stream_rng(7, 0);
        assert_eq!(Readout::exact().sample(0.3, &mut rng).unwrap(), 0.3);
        let r = Readout {
            shots: 0,
            assignment_error: 0.1,
        };
        assert!((r.sample(1.0, &mut rng).unwrap() - 0.9).abs() < 1e-15);
        let r = Readout {
            shots: 1000,
            assignment_error: 0.0,
        };
        let v = r.sample(0.5, &mut rng).unwrap();
        assert!((v - 0.5).abs() < 0.1);
        assert!(Readout::exact().sample(1.1, &mut rng).is_err());
        let a: Vec<f64> = (0..5)
            .map(|_| r.sample(0.5, &mut stream_rng(3, 9)).unwrap())
            .collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
    }
}
