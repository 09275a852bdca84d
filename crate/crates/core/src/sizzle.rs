//! Stark-induced ZZ from two off-resonant tones at a shared frequency, its
//! measurement by pulse-width Hamiltonian tomography, and CZ calibration.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Matrix4;
use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::device::DeviceSpec;
use crate::dynamics::evolve::{
    apply_site_gate, basis_state, evolve, evolve_open, excited_probability_density,
    excited_probability_state, pure_density, rotation, site_coherence, site_coherence_state,
    stream_rng, EvolveOptions,
};
use crate::dynamics::protocols::RunConfig;
use crate::dynamics::{
    Axis, DriveTone, Envelope, ExperimentRecord, NoiseSpec, Readout, SystemModel,
};
use crate::error::{Error, Result};
use crate::spectrum::DEFAULT_POLE_GUARD;

/// Smallest |ν̃| (kHz) a CZ gate is calibrated from.
pub const DEFAULT_RATE_FLOOR_KHZ: f64 = 5.0;

/// Drive-induced ZZ rate (kHz) of two transmons driven at one frequency:
/// `ζ_static + 2Jα₀α₁Ω₀Ω₁cos(φ₀−φ₁) / (Δ₀Δ₁(Δ₀+α₀)(Δ₁+α₁))`, with
/// `Δ_k = ω_k − ω_d` and all frequencies in MHz.
#[allow(clippy::too_many_arguments)]
pub fn sizzle_zz_predicted(
    j: f64,
    alpha0: f64,
    alpha1: f64,
    omega0: f64,
    omega1: f64,
    delta0: f64,
    delta1: f64,
    phi0: f64,
    phi1: f64,
    zeta_static_khz: f64,
) -> Result<f64> {
    for (name, d) in [
        ("Δ₀", delta0),
        ("Δ₁", delta1),
        ("Δ₀+α₀", delta0 + alpha0),
        ("Δ₁+α₁", delta1 + alpha1),
    ] {
        if d.abs() < DEFAULT_POLE_GUARD {
            return Err(Error::NearResonance(format!(
                "{name} = {d} MHz is within {DEFAULT_POLE_GUARD} MHz of a pole"
            )));
        }
    }
    let drive = 2.0 * j * alpha0 * alpha1 * omega0 * omega1 * (phi0 - phi1).cos()
        / (delta0 * delta1 * (delta0 + alpha0) * (delta1 + alpha1));
    Ok(zeta_static_khz + 1e3 * drive)
}

/// Two tones at one frequency on a (control, target) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizzleConfig {
    pub control: String,
    pub target: String,
    /// Shared drive frequency in MHz.
    pub drive_freq: f64,
    /// Rabi amplitude on the target in MHz.
    pub amplitude: f64,
    /// Control amplitude divided by target amplitude.
    pub ratio: f64,
    /// `φ_control − φ_target` in radians.
    pub phase_diff: f64,
    /// Blackman rise in ns; 0 gives a rectangular envelope.
    pub rise_ns: f64,
}

impl SizzleConfig {
    pub fn new(control: &str, target: &str, drive_freq: f64, amplitude: f64) -> Self {
        SizzleConfig {
            control: control.into(),
            target: target.into(),
            drive_freq,
            amplitude,
            ratio: 1.0,
            phase_diff: 0.0,
            rise_ns: 0.0,
        }
    }

    /// `(ω_control − ω_d, ω_target − ω_d)`.
    pub fn detunings(&self, device: &DeviceSpec) -> Result<(f64, f64)> {
        Ok((
            device.qubit(&self.control)?.omega - self.drive_freq,
            device.qubit(&self.target)?.omega - self.drive_freq,
        ))
    }

    pub fn validate(&self, device: &DeviceSpec) -> Result<()> {
        self.validate_with_guard(device, DEFAULT_POLE_GUARD)
    }

    /// Checks amplitudes and keeps the drive at least `guard` MHz from every
    /// one- and two-photon transition of both qubits.
    pub fn validate_with_guard(&self, device: &DeviceSpec, guard: f64) -> Result<()> {
        if self.control == self.target {
            return Err(Error::Selection("control and target must differ".into()));
        }
        if !(self.ratio > 0.0) || !self.ratio.is_finite() {
            return Err(Error::Domain(format!(
                "amplitude ratio must be positive, got {}",
                self.ratio
            )));
        }
        if !(self.amplitude >= 0.0) || !(self.rise_ns >= 0.0) {
            return Err(Error::Domain(
                "amplitude and rise must be non-negative".into(),
            ));
        }
        let (dc, dt) = self.detunings(device)?;
        let (ac, at) = (
            device.qubit(&self.control)?.alpha,
            device.qubit(&self.target)?.alpha,
        );
        for (name, d) in [
            ("control", dc),
            ("target", dt),
            ("control two-photon", dc + ac),
            ("target two-photon", dt + at),
        ] {
            if d.abs() < guard {
                return Err(Error::NearResonance(format!(
                    "drive at {} MHz is {d:.3} MHz from the {name} transition",
                    self.drive_freq
                )));
            }
        }
        Ok(())
    }

    fn envelope(&self) -> Envelope {
        if self.rise_ns > 0.0 {
            Envelope::Blackman {
                rise_ns: self.rise_ns,
            }
        } else {
            Envelope::Rectangular
        }
    }

    /// Both tones on `[start, start + duration]`.
    pub fn drives(&self, device: &DeviceSpec, start: f64, duration: f64) -> Result<Vec<DriveTone>> {
        let (dc, dt) = self.detunings(device)?;
        Ok(vec![
            DriveTone {
                target: self.control.clone(),
                amplitude: self.ratio * self.amplitude,
                detuning: dc,
                phase: self.phase_diff,
                envelope: self.envelope(),
                start,
                duration,
            },
            DriveTone {
                target: self.target.clone(),
                amplitude: self.amplitude,
                detuning: dt,
                phase: 0.0,
                envelope: self.envelope(),
                start,
                duration,
            },
        ])
    }

    /// Perturbative rate for this configuration from the device coupling and
    /// a given static ZZ.
    pub fn predicted_rate(&self, device: &DeviceSpec, zeta_static_khz: f64) -> Result<f64> {
        let (dc, dt) = self.detunings(device)?;
        let (qc, qt) = (device.qubit(&self.control)?, device.qubit(&self.target)?);
        let j = device
            .couplings
            .nn(&self.control, &self.target)
            .unwrap_or(0.0);
        sizzle_zz_predicted(
            j,
            qc.alpha,
            qt.alpha,
            self.ratio * self.amplitude,
            self.amplitude,
            dc,
            dt,
            self.phase_diff,
            0.0,
            zeta_static_khz,
        )
    }
}

/// Measured target-qubit Bloch components for one control state.
fn sampled_xy<R: Rng>(c: C64, readout: &Readout, rng: &mut R) -> Result<(f64, f64)> {
    // ⟨X⟩ = 2 Re ρ01, ⟨Y⟩ = −2 Im ρ01; each is read as a two-outcome projective
    // measurement along the axis.
    let (x, y) = (2.0 * c.re, -2.0 * c.im);
    let px = readout.sample((0.5 * (1.0 + x)).clamp(0.0, 1.0), rng)?;
    let py = readout.sample((0.5 * (1.0 + y)).clamp(0.0, 1.0), rng)?;
    Ok((2.0 * px - 1.0, 2.0 * py - 1.0))
}

fn wrap(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Unwraps a sampled phase, refusing jumps larger than 0.9π between samples.
pub fn unwrap_phase(wrapped: &[f64]) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = Vec::with_capacity(wrapped.len());
    for (k, &w) in wrapped.iter().enumerate() {
        match out.last() {
            None => out.push(wrap(w)),
            Some(&prev) => {
                let jump = wrap(w - prev);
                if jump.abs() > 0.9 * PI {
                    return Err(Error::Aliasing(format!(
                        "phase jumps by {jump:.3} rad between samples {} and {k}; refine the grid",
                        k - 1
                    )));
                }
                out.push(prev + jump);
            }
        }
    }
    Ok(out)
}

/// Target coherence and control excitation after the tones, one per width.
struct Trace {
    coherence: Vec<C64>,
    control_excitation: Vec<f64>,
}

#[derive(Clone)]
enum State {
    Pure(Vec<C64>),
    Mixed(nalgebra::DMatrix<C64>),
}

fn run_control_state(
    device: &DeviceSpec,
    model: &SystemModel,
    config: &SizzleConfig,
    control_state: usize,
    times: &[f64],
    noise: &NoiseSpec,
    opts: &EvolveOptions,
) -> Result<Trace> {
    let basis = model.basis();
    let mut psi = basis_state(basis, &[control_state, 0]);
    apply_site_gate(&mut psi, basis, 1, &rotation(FRAC_PI_2, 0.0));
    let init = if noise.is_dissipative(model.subset.labels()) {
        State::Mixed(pure_density(&psi))
    } else {
        State::Pure(psi)
    };
    let run = |st: &State, t_grid: &[f64], drives: &[DriveTone]| -> Result<Vec<State>> {
        Ok(match st {
            State::Pure(p) => evolve(model, drives, p, t_grid, opts)?
                .into_iter()
                .map(State::Pure)
                .collect(),
            State::Mixed(r) => evolve_open(model, drives, r, noise, t_grid, opts)?
                .into_iter()
                .map(State::Mixed)
                .collect(),
        })
    };
    let measure = |st: &State| -> (C64, f64) {
        match st {
            State::Pure(p) => (
                site_coherence_state(p, basis, 1),
                excited_probability_state(p, basis, 0),
            ),
            State::Mixed(r) => (
                site_coherence(r, basis, 1),
                excited_probability_density(r, basis, 0),
            ),
        }
    };
    let end = *times.last().expect("non-empty widths");
    let rise = config.rise_ns * 1e-3;
    let pts: Vec<(C64, f64)> = if rise > 0.0 {
        // A tone of width w coincides with a longer tone up to w − rise, so one
        // trajectory under a long tone serves every width; only the final fall
        // is integrated per width.
        let long = config.drives(device, 0.0, end + rise)?;
        let shared: Vec<f64> = times
            .iter()
            .filter(|&&w| w >= 2.0 * rise)
            .map(|w| w - rise)
            .collect();
        let grid: Vec<f64> = std::iter::once(0.0).chain(shared.iter().copied()).collect();
        let prefix = run(&init, &grid, &long)?;
        times
            .par_iter()
            .map(|&w| -> Result<(C64, f64)> {
                if w == 0.0 {
                    return Ok(measure(&init));
                }
                let drives = config.drives(device, 0.0, w)?;
                let st = match shared.iter().position(|&p| p == w - rise) {
                    Some(k) if w >= 2.0 * rise => run(&prefix[k + 1], &[w - rise, w], &drives)?
                        .pop()
                        .expect("two outputs"),
                    _ => run(&init, &[0.0, w], &drives)?.pop().expect("two outputs"),
                };
                Ok(measure(&st))
            })
            .collect::<Result<_>>()?
    } else {
        let grid: Vec<f64> = std::iter::once(0.0)
            .chain(times.iter().copied().filter(|&t| t > 0.0))
            .collect();
        let skip = usize::from(times[0] > 0.0);
        let drives = if end > 0.0 {
            config.drives(device, 0.0, end)?
        } else {
            Vec::new()
        };
        run(&init, &grid, &drives)?[skip..]
            .iter()
            .map(measure)
            .collect()
    };
    Ok(Trace {
        coherence: pts.iter().map(|p| p.0).collect(),
        control_excitation: pts.iter().map(|p| p.1).collect(),
    })
}

/// Result of pulse-width Hamiltonian tomography.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZzTomography {
    /// ZZ rate ν̃ in kHz.
    pub rate_khz: f64,
    /// Standard error of the rate from the linear fit.
    pub rate_sigma_khz: f64,
    pub record: ExperimentRecord,
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - icpt - slope * a).powi(2))
        .sum();
    let sigma = if x.len() > 2 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    (slope, icpt, sigma)
}

/// Differential target phase versus tone width for both control states.
/// The target starts on the equator; its phase `arg ρ01` is read from ⟨X⟩,
/// ⟨Y⟩ and the control-|1⟩ minus control-|0⟩ difference grows as `2π·ν̃·t`.
pub fn hamiltonian_tomography_pulsewidth(
    device: &DeviceSpec,
    config: &SizzleConfig,
    widths: &[f64],
    noise: &NoiseSpec,
    run: &RunConfig,
) -> Result<ZzTomography> {
    config.validate(device)?;
    if widths.len() < 3 || widths[0] < 0.0 || widths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain(
            "need at least three non-negative, strictly ascending widths".into(),
        ));
    }
    let model = SystemModel::new(device, &[&config.control, &config.target], run.levels, true)?;
    let offsets = noise.sample_offsets(model.subset.labels(), &mut stream_rng(run.seed, 0));
    let opts = EvolveOptions {
        integrator: run.integrator,
        offsets: offsets.clone(),
        ..Default::default()
    };
    let traces: Vec<Trace> = [0usize, 1]
        .par_iter()
        .map(|&c| run_control_state(device, &model, config, c, widths, noise, &opts))
        .collect::<Result<_>>()?;
    let mut rng = stream_rng(run.seed, 1);
    let mut xy = [Vec::new(), Vec::new()];
    for (c, tr) in traces.iter().enumerate() {
        for &coh in &tr.coherence {
            xy[c].push(sampled_xy(coh, &run.readout, &mut rng)?);
        }
    }
    let raw: Vec<f64> = (0..widths.len())
        .map(|k| {
            let th = |c: usize| (-xy[c][k].1).atan2(xy[c][k].0);
            th(1) - th(0)
        })
        .collect();
    let phase = unwrap_phase(&raw)?;
    let (slope, _, sigma) = linear_fit(widths, &phase);
    let col = |c: usize, i: usize| {
        xy[c]
            .iter()
            .map(|v| if i == 0 { v.0 } else { v.1 })
            .collect::<Vec<f64>>()
    };
    let record = ExperimentRecord {
        protocol: "zz_tomography".into(),
        axes: vec![Axis::new("width", "us", widths.to_vec())],
        data: BTreeMap::from([
            ("x_control0".to_string(), col(0, 0)),
            ("y_control0".to_string(), col(0, 1)),
            ("x_control1".to_string(), col(1, 0)),
            ("y_control1".to_string(), col(1, 1)),
            ("differential_phase".to_string(), phase),
            (
                "p_control_leak".to_string(),
                traces[0].control_excitation.clone(),
            ),
        ]),
        shots: run.readout.shots,
        seed: run.seed,
        device: device.name.clone(),
        metadata: BTreeMap::from([
            (
                "config".to_string(),
                serde_json::to_value(config).expect("serializable"),
            ),
            ("levels".to_string(), json!(run.levels)),
            ("frequency_offsets_mhz".to_string(), json!(offsets)),
        ]),
    };
    record.validate()?;
    Ok(ZzTomography {
        rate_khz: 1e3 * slope / (2.0 * PI),
        rate_sigma_khz: 1e3 * sigma / (2.0 * PI),
        record,
    })
}

/// Least-squares fit of `A·cos(x) + B`; returns `(A, B, R²)`.
pub fn fit_cosine(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::Fit(
            "cosine fit needs at least three matching points".into(),
        ));
    }
    let c: Vec<f64> = x.iter().map(|v| v.cos()).collect();
    let (a, b, _) = linear_fit(&c, y);
    if !a.is_finite() {
        return Err(Error::Fit("phase grid does not vary cos(Δφ)".into()));
    }
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let tss: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let rss: f64 = c
        .iter()
        .zip(y)
        .map(|(ci, yi)| (yi - a * ci - b).powi(2))
        .sum();
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    Ok((a, b, r2))
}

/// ν̃ versus relative drive phase with its cosine fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSweep {
    pub phases: Vec<f64>,
    pub rates_khz: Vec<f64>,
    pub amplitude_khz: f64,
    pub offset_khz: f64,
    pub r_squared: f64,
}

pub fn sweep_relative_phase(
    device: &DeviceSpec,
    config: &SizzleConfig,
    phases: &[f64],
    widths: &[f64],
    noise: &NoiseSpec,
    run: &RunConfig,
) -> Result<PhaseSweep> {
    let rates: Vec<f64> = phases
        .par_iter()
        .enumerate()
        .map(|(i, &p)| {
            let cfg = SizzleConfig {
                phase_diff: p,
                ..config.clone()
            };
            let r = RunConfig {
                seed: run.seed.wrapping_add(i as u64),
                ..run.clone()
            };
            hamiltonian_tomography_pulsewidth(device, &cfg, widths, noise, &r).map(|t| t.rate_khz)
        })
        .collect::<Result<_>>()?;
    let (a, b, r2) = fit_cosine(phases, &rates)?;
    Ok(PhaseSweep {
        phases: phases.to_vec(),
        rates_khz: rates,
        amplitude_khz: a,
        offset_khz: b,
        r_squared: r2,
    })
}

/// Settings of a drive-frequency × amplitude landscape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandscapeOptions {
    /// Tone width in µs.
    pub width: f64,
    /// Cells closer than this (MHz) to a one- or two-photon transition are
    /// flagged instead of simulated.
    pub pole_guard: f64,
}

impl Default for LandscapeOptions {
    fn default() -> Self {
        LandscapeOptions {
            width: 1.0,
            pole_guard: 5.0,
        }
    }
}

/// Differential target phase after a fixed-width tone pair over a grid of
/// drive frequencies and target amplitudes (control amplitude `ratio`×).
/// Also records the control qubit's excitation (drive response) with the
/// control prepared in |0⟩.
pub fn sweep_drive_landscape(
    device: &DeviceSpec,
    base: &SizzleConfig,
    freqs: &[f64],
    amplitudes: &[f64],
    opts: LandscapeOptions,
    noise: &NoiseSpec,
    run: &RunConfig,
) -> Result<ExperimentRecord> {
    if freqs.is_empty() || amplitudes.is_empty() || !(opts.width > 0.0) {
        return Err(Error::Domain(
            "empty landscape grid or non-positive width".into(),
        ));
    }
    if freqs.iter().chain(amplitudes).any(|v| !v.is_finite()) {
        return Err(Error::Domain("landscape grid values must be finite".into()));
    }
    let model = SystemModel::new(device, &[&base.control, &base.target], run.levels, true)?;
    let cells: Vec<(usize, usize)> = (0..freqs.len())
        .flat_map(|i| (0..amplitudes.len()).map(move |j| (i, j)))
        .collect();
    let rows: Vec<(f64, f64, f64)> = cells
        .par_iter()
        .map(|&(i, j)| -> Result<(f64, f64, f64)> {
            let cfg = SizzleConfig {
                drive_freq: freqs[i],
                amplitude: amplitudes[j],
                ..base.clone()
            };
            match cfg.validate_with_guard(device, opts.pole_guard) {
                Err(Error::NearResonance(_)) => return Ok((0.0, 0.0, 1.0)),
                Err(e) => return Err(e),
                Ok(()) => {}
            }
            let point = i * amplitudes.len() + j;
            let offsets = noise.sample_offsets(
                model.subset.labels(),
                &mut stream_rng(run.seed, 2 * point as u64),
            );
            let eo = EvolveOptions {
                integrator: run.integrator,
                offsets,
                ..Default::default()
            };
            let t0 = run_control_state(device, &model, &cfg, 0, &[opts.width], noise, &eo)?;
            let t1 = run_control_state(device, &model, &cfg, 1, &[opts.width], noise, &eo)?;
            let mut rng = stream_rng(run.seed, 2 * point as u64 + 1);
            let (x0, y0) = sampled_xy(t0.coherence[0], &run.readout, &mut rng)?;
            let (x1, y1) = sampled_xy(t1.coherence[0], &run.readout, &mut rng)?;
            let phase = wrap((-y1).atan2(x1) - (-y0).atan2(x0));
            let leak = run.readout.sample(t0.control_excitation[0], &mut rng)?;
            Ok((phase, leak, 0.0))
        })
        .collect::<Result<_>>()?;
    let record = ExperimentRecord {
        protocol: "drive_landscape".into(),
        axes: vec![
            Axis::new("drive_freq", "MHz", freqs.to_vec()),
            Axis::new("amplitude", "MHz", amplitudes.to_vec()),
        ],
        data: BTreeMap::from([
            (
                "differential_phase".to_string(),
                rows.iter().map(|r| r.0).collect(),
            ),
            ("p_control".to_string(), rows.iter().map(|r| r.1).collect()),
            ("flagged".to_string(), rows.iter().map(|r| r.2).collect()),
        ]),
        shots: run.readout.shots,
        seed: run.seed,
        device: device.name.clone(),
        metadata: BTreeMap::from([
            ("control".to_string(), json!(base.control)),
            ("target".to_string(), json!(base.target)),
            ("ratio".to_string(), json!(base.ratio)),
            ("phase_diff".to_string(), json!(base.phase_diff)),
            ("width_us".to_string(), json!(opts.width)),
            ("pole_guard_mhz".to_string(), json!(opts.pole_guard)),
            ("levels".to_string(), json!(run.levels)),
        ]),
    };
    record.validate()?;
    Ok(record)
}

/// A calibrated ZZ-phase gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CzCalibration {
    /// Drive configuration; absent when calibrated from a given rate.
    pub config: Option<SizzleConfig>,
    pub rate_khz: f64,
    /// Gate duration τ_g in µs.
    pub gate_time: f64,
    pub target_phase: f64,
    /// Conditional phase after n = 1, 2, … gates (signed, unwrapped).
    pub repeated_phases: Vec<f64>,
    /// max over n of |φ_n/n − signed target| / target.
    pub residual: f64,
}

/// Conditional phase of a standard CZ.
pub const CZ_TARGET_PHASE: f64 = PI;

/// Alternative calibration target: a quarter of the CZ phase accumulated per gate.
pub const QUARTER_TARGET_PHASE: f64 = PI / 4.0;

/// `τ_g = target / (2π·|ν̃|)` in µs, refusing rates below the floor.
pub fn gate_time_for_rate(rate_khz: f64, target_phase: f64) -> Result<f64> {
    if !(target_phase > 0.0) {
        return Err(Error::Domain(format!(
            "target phase must be positive, got {target_phase}"
        )));
    }
    if !(rate_khz.abs() >= DEFAULT_RATE_FLOOR_KHZ) {
        return Err(Error::Uncalibratable(format!(
            "|ν̃| = {rate_khz} kHz is below the {DEFAULT_RATE_FLOOR_KHZ} kHz floor"
        )));
    }
    Ok(target_phase / (2.0 * PI * rate_khz.abs() * 1e-3))
}

fn residual(phases: &[f64], signed_target: f64) -> f64 {
    phases
        .iter()
        .enumerate()
        .map(|(k, p)| (p / (k + 1) as f64 - signed_target).abs() / signed_target.abs())
        .fold(0.0, f64::max)
}

/// Diagonal of `exp(−i2π·ν·t·n_c n_t)` on |00⟩, |01⟩, |10⟩, |11⟩.
pub fn ideal_zz_diagonal(rate_khz: f64, t: f64) -> [C64; 4] {
    let one = C64::new(1.0, 0.0);
    [
        one,
        one,
        one,
        C64::from_polar(1.0, -2.0 * PI * rate_khz * 1e-3 * t),
    ]
}

/// Conditional phase `−(θ00 − θ01 − θ10 + θ11)` of a diagonal, which equals
/// the tomography phase `2π·ν·t` for the ideal gate.
pub fn conditional_phase(diag: &[C64; 4]) -> f64 {
    -wrap(diag[0].arg() - diag[1].arg() - diag[2].arg() + diag[3].arg())
}

/// Calibration for a known rate using the ideal ZZ evolution, verified by
/// `gates` repetitions sampled finely enough to unwrap.
pub fn calibrate_cz_from_rate(
    rate_khz: f64,
    target_phase: f64,
    gates: usize,
) -> Result<CzCalibration> {
    let tg = gate_time_for_rate(rate_khz, target_phase)?;
    let sub = 8;
    let raw: Vec<f64> = (0..=gates * sub)
        .map(|k| conditional_phase(&ideal_zz_diagonal(rate_khz, k as f64 * tg / sub as f64)))
        .collect();
    let un = unwrap_phase(&raw)?;
    let phases: Vec<f64> = (1..=gates).map(|n| un[n * sub]).collect();
    let signed = target_phase * rate_khz.signum();
    Ok(CzCalibration {
        config: None,
        rate_khz,
        gate_time: tg,
        target_phase,
        residual: residual(&phases, signed),
        repeated_phases: phases,
    })
}

/// Measures ν̃ by pulse-width tomography over `widths`, sets τ_g and verifies
/// it by repeated-gate tomography on one continuous trajectory of `gates`
/// gate lengths.
pub fn calibrate_cz(
    device: &DeviceSpec,
    config: &SizzleConfig,
    target_phase: f64,
    widths: &[f64],
    gates: usize,
    noise: &NoiseSpec,
    run: &RunConfig,
) -> Result<CzCalibration> {
    if gates == 0 {
        return Err(Error::Domain("need at least one verification gate".into()));
    }
    let tomo = hamiltonian_tomography_pulsewidth(device, config, widths, noise, run)?;
    let tg = gate_time_for_rate(tomo.rate_khz, target_phase)?;
    let sub = 8;
    let grid: Vec<f64> = (0..=gates * sub)
        .map(|k| k as f64 * tg / sub as f64)
        .collect();
    let verify = hamiltonian_tomography_pulsewidth(device, config, &grid, noise, run)?;
    let un = verify.record.column("differential_phase")?;
    let phases: Vec<f64> = (1..=gates).map(|n| un[n * sub] - un[0]).collect();
    let signed = target_phase * tomo.rate_khz.signum();
    Ok(CzCalibration {
        config: Some(config.clone()),
        rate_khz: tomo.rate_khz,
        gate_time: tg,
        target_phase,
        residual: residual(&phases, signed),
        repeated_phases: phases,
    })
}

/// Computational block (|00⟩, |01⟩, |10⟩, |11⟩ with the control first) of
/// the propagator of the tone pair over `duration`.
pub fn gate_unitary(
    device: &DeviceSpec,
    config: &SizzleConfig,
    duration: f64,
    run: &RunConfig,
) -> Result<Matrix4<C64>> {
    config.validate(device)?;
    let model = SystemModel::new(device, &[&config.control, &config.target], run.levels, true)?;
    let basis = model.basis();
    let drives = config.drives(device, 0.0, duration)?;
    let opts = EvolveOptions {
        integrator: run.integrator,
        ..Default::default()
    };
    let states = [[0, 0], [0, 1], [1, 0], [1, 1]];
    let mut u = Matrix4::zeros();
    for (c, occ) in states.iter().enumerate() {
        let out = evolve(
            &model,
            &drives,
            &basis_state(basis, occ),
            &[0.0, duration],
            &opts,
        )?;
        for (r, o) in states.iter().enumerate() {
            u[(r, c)] = out[1][basis.index(o)];
        }
    }
    Ok(u)
}

fn x_on_both() -> Matrix4<C64> {
    let mut m = Matrix4::zeros();
    for k in 0..4 {
        m[(3 - k, k)] = C64::new(1.0, 0.0);
    }
    m
}

/// `X⊗X · U · X⊗X · U`: a gate split in two halves with interleaved π pulses
/// on both qubits.
pub fn echoed(u_half: &Matrix4<C64>) -> Matrix4<C64> {
    let xx = x_on_both();
    xx * u_half * xx * u_half
}

/// Single-qubit and conditional phases of a (near-)diagonal two-qubit gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalPhases {
    pub control: f64,
    pub target: f64,
    pub conditional: f64,
}

pub fn local_phases(u: &Matrix4<C64>) -> LocalPhases {
    let t: Vec<f64> = (0..4).map(|k| u[(k, k)].arg()).collect();
    LocalPhases {
        control: -wrap(t[0] + t[1] - t[2] - t[3]) / 2.0,
        target: -wrap(t[0] - t[1] + t[2] - t[3]) / 2.0,
        conditional: -wrap(t[0] - t[1] - t[2] + t[3]),
    }
}

/// Amplitude of a resonant pulse of `duration` µs (Blackman rise `rise_ns`)
/// that maximizes the excited population of `qubit`.
pub fn pi_pulse_amplitude(
    device: &DeviceSpec,
    qubit: &str,
    duration: f64,
    rise_ns: f64,
    levels: usize,
) -> Result<f64> {
    let model = SystemModel::new(device, &[qubit], levels, false)?;
    let basis = model.basis();
    let rise = (rise_ns * 1e-3).min(0.5 * duration);
    let area = duration - 2.0 * rise * (1.0 - 0.42);
    let guess = 0.5 / area;
    let p1 = |amp: f64| -> Result<f64> {
        let drive = DriveTone {
            target: qubit.into(),
            amplitude: amp,
            detuning: 0.0,
            phase: 0.0,
            envelope: Envelope::Blackman { rise_ns },
            start: 0.0,
            duration,
        };
        let out = evolve(
            &model,
            &[drive],
            &basis_state(basis, &[0]),
            &[0.0, duration],
            &EvolveOptions::default(),
        )?;
        Ok(out[1][basis.index(&[1])].norm_sqr())
    };
    // Golden-section search for the first population maximum.
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.6 * guess, 1.4 * guess);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (p1(c)?, p1(d)?);
    for _ in 0..60 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = p1(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = p1(d)?;
        }
        if b - a < 1e-10 * guess {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

/// Default control-to-target amplitude ratio: the ratio of the two qubits'
/// simulated π-pulse amplitudes.
pub fn rabi_amplitude_ratio(
    device: &DeviceSpec,
    control: &str,
    target: &str,
    duration: f64,
    rise_ns: f64,
    levels: usize,
) -> Result<f64> {
    Ok(
        pi_pulse_amplitude(device, control, duration, rise_ns, levels)?
            / pi_pulse_amplitude(device, target, duration, rise_ns, levels)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::TransmonParams;
    use crate::spectrum::zz_exact;

    fn pair() -> DeviceSpec {
        let c = TransmonParams::from_omega_alpha("C", 4807.5, -196.2, 61.0, 44.0, 102.0).unwrap();
        let t = TransmonParams::from_omega_alpha("T", 4795.6, -197.2, 89.0, 56.0, 86.0).unwrap();
        DeviceSpec::chain("pair", vec![c, t], &[0.631]).unwrap()
    }

    fn widths() -> Vec<f64> {
        (0..=20).map(|i| i as f64 * 0.1).collect()
    }

    #[test]
    fn prediction_limits() {
        let p = |o0: f64, phi: f64| {
            sizzle_zz_predicted(0.6, -196.0, -198.0, o0, 8.0, 150.0, 140.0, phi, 0.0, 8.0).unwrap()
        };
        assert_eq!(p(0.0, 0.0), 8.0);
        assert!((p(8.0, FRAC_PI_2) - 8.0).abs() < 1e-12);
        assert!(((p(8.0, 0.0) - 8.0) + (p(8.0, PI) - 8.0)).abs() < 1e-9);
        let swapped =
            sizzle_zz_predicted(0.6, -198.0, -196.0, 8.0, 8.0, 140.0, 150.0, 0.0, 0.0, 8.0)
                .unwrap();
        assert!((swapped - p(8.0, 0.0)).abs() < 1e-12);
        assert!(matches!(
            sizzle_zz_predicted(0.6, -196.0, -198.0, 8.0, 8.0, 196.5, 140.0, 0.0, 0.0, 8.0),
            Err(Error::NearResonance(_))
        ));
    }

    #[test]
    fn undriven_tomography_gives_static_zz() {
        let d = pair();
        let zs = zz_exact(&d, "C", "T", 3).unwrap();
        let cfg = SizzleConfig::new("C", "T", 4657.5, 0.0);
        let r = hamiltonian_tomography_pulsewidth(
            &d,
            &cfg,
            &widths(),
            &NoiseSpec::none(),
            &RunConfig::default(),
        )
        .unwrap();
        assert!((r.rate_khz - zs).abs() < 0.01, "{} vs {zs}", r.rate_khz);
    }

    #[test]
    fn weak_drive_matches_perturbative_rate() {
        let d = pair();
        let zs = zz_exact(&d, "C", "T", 3).unwrap();
        for (fd, amp) in [(4657.5, 10.0), (4500.0, 10.0), (4957.5, 8.0)] {
            let cfg = SizzleConfig::new("C", "T", fd, amp);
            let sim = hamiltonian_tomography_pulsewidth(
                &d,
                &cfg,
                &widths(),
                &NoiseSpec::none(),
                &RunConfig::default(),
            )
            .unwrap()
            .rate_khz;
            let pred = cfg.predicted_rate(&d, zs).unwrap();
            assert!((sim / pred - 1.0).abs() < 0.15, "{fd}: {sim} vs {pred}");
        }
    }

    #[test]
    fn coarse_grid_aliases() {
        assert!(matches!(unwrap_phase(&[0.0, 3.0]), Err(Error::Aliasing(_))));
        let un = unwrap_phase(&[3.0, -3.0, -2.0]).unwrap();
        assert!((un[2] - (2.0 * PI - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn cosine_fit_is_exact_on_cosines() {
        let x: Vec<f64> = (0..8).map(|k| k as f64 * PI / 4.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v.cos() + 1.5).collect();
        let (a, b, r2) = fit_cosine(&x, &y).unwrap();
        assert!((a - 3.0).abs() < 1e-12 && (b - 1.5).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn landscape_flags_poles_and_scales_quadratically() {
        let d = pair();
        let base = SizzleConfig::new("C", "T", 0.0, 0.0);
        let freqs = [4657.5, 4807.5 - 196.2 + 1.0, 4806.0];
        let amps = [0.0, 4.0, 8.0];
        let r = sweep_drive_landscape(
            &d,
            &base,
            &freqs,
            &amps,
            LandscapeOptions::default(),
            &NoiseSpec::none(),
            &RunConfig::default(),
        )
        .unwrap();
        let flags = r.column("flagged").unwrap();
        assert_eq!(flags, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let ph = r.column("differential_phase").unwrap();
        let zs = zz_exact(&d, "C", "T", 3).unwrap();
        assert!((ph[0] - 2.0 * PI * zs * 1e-3).abs() < 1e-4);
        let ratio = (ph[2] - ph[0]) / (ph[1] - ph[0]);
        assert!((ratio - 4.0).abs() < 0.4, "{ratio}");
    }

    #[test]
    fn rate_calibration() {
        let c = calibrate_cz_from_rate(100.0, PI, 5).unwrap();
        assert!((c.gate_time - 5.0).abs() < 1e-12);
        assert!(c.residual < 1e-9);
        assert!((c.repeated_phases[2] - 3.0 * PI).abs() < 1e-9);
        let quarter = gate_time_for_rate(38.27, QUARTER_TARGET_PHASE).unwrap();
        assert!((quarter - 3.266).abs() < 0.002, "{quarter}");
        assert!((gate_time_for_rate(200.0, PI).unwrap() - 2.5).abs() < 1e-12);
        assert!(matches!(
            gate_time_for_rate(4.0, PI),
            Err(Error::Uncalibratable(_))
        ));
        assert!(
            (calibrate_cz_from_rate(-100.0, PI, 3)
                .unwrap()
                .repeated_phases[0]
                + PI)
                .abs()
                < 1e-9
        );
    }

    #[test]
    fn simulated_calibration_is_linear_in_gate_count() {
        let d = pair();
        let cfg = SizzleConfig {
            rise_ns: 20.0,
            ..SizzleConfig::new("C", "T", 4657.5, 10.0)
        };
        let c = calibrate_cz(
            &d,
            &cfg,
            PI,
            &widths(),
            3,
            &NoiseSpec::none(),
            &RunConfig::default(),
        )
        .unwrap();
        assert!(c.residual < 0.01, "{c:?}");
    }

    #[test]
    fn echo_cancels_local_phases() {
        let mut u = Matrix4::<C64>::zeros();
        let (hc, ht, nu) = (0.37, -1.1, 0.8);
        for k in 0..4 {
            let (a, b) = ((k >> 1) as f64, (k & 1) as f64);
            u[(k, k)] = C64::from_polar(1.0, -(hc * a + ht * b + nu * a * b));
        }
        let p = local_phases(&echoed(&u));
        assert!(p.control.abs() < 1e-12 && p.target.abs() < 1e-12);
        assert!((p.conditional - 2.0 * nu).abs() < 1e-12);

        let d = pair();
        // Half of a calibrated π-phase gate with 20 ns ramps.
        let cfg = SizzleConfig {
            rise_ns: 20.0,
            ..SizzleConfig::new("C", "T", 4657.5, 10.0)
        };
        let g = gate_unitary(
            &d,
            &cfg,
            0.5 * gate_time_for_rate(89.4, PI).unwrap(),
            &RunConfig::default(),
        )
        .unwrap();
        assert!(local_phases(&echoed(&g)).control.abs() < 1e-3);
    }

    #[test]
    fn equal_qubits_need_equal_amplitudes() {
        let d = pair();
        let r = rabi_amplitude_ratio(&d, "C", "T", 0.06, 10.0, 3).unwrap();
        assert!((r - 1.0).abs() < 0.02, "{r}");
        let a = pi_pulse_amplitude(&d, "C", 1.0, 0.0, 2).unwrap();
        assert!((a - 0.5).abs() < 1e-6);
    }
}
