//! Driven subset Hamiltonians in the laboratory or rotating frame.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::device::DeviceSpec;
use crate::error::{Error, Result};
use crate::operators::{
    assemble_hamiltonian, lowering_on, Basis, LatticeOperator, SubsetSelection,
};

/// Pulse envelope shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Envelope {
    Rectangular,
    /// Flat top with Blackman-shaped rise and fall of `rise_ns` each.
    Blackman {
        rise_ns: f64,
    },
}

impl Envelope {
    /// Envelope value at time `t` (µs) for a pulse on `[start, start+duration]`.
    pub fn value(&self, t: f64, start: f64, duration: f64) -> f64 {
        if t < start || t > start + duration {
            return 0.0;
        }
        match *self {
            Envelope::Rectangular => 1.0,
            Envelope::Blackman { rise_ns } => {
                let rise = (rise_ns * 1e-3).min(0.5 * duration);
                if rise <= 0.0 {
                    return 1.0;
                }
                let edge = (t - start).min(start + duration - t);
                if edge >= rise {
                    1.0
                } else {
                    let x = edge / rise;
                    0.42 - 0.5 * (PI * x).cos() + 0.08 * (2.0 * PI * x).cos()
                }
            }
        }
    }

    /// Times inside the pulse where the envelope is not smooth.
    fn kinks(&self, start: f64, duration: f64) -> Vec<f64> {
        let mut k = vec![start, start + duration];
        if let Envelope::Blackman { rise_ns } = *self {
            let rise = (rise_ns * 1e-3).min(0.5 * duration);
            k.push(start + rise);
            k.push(start + duration - rise);
        }
        k
    }
}

/// One off-resonant microwave tone on a single qubit.
///
/// The drive term is `(Ω/2)·s(t)·(a† e^{−i(2π ω_d t + φ)} + h.c.)` with
/// `ω_d = ω_target − detuning`, so `detuning` is the qubit-minus-drive
/// frequency difference and `Ω` is the resonant Rabi frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveTone {
    pub target: String,
    /// Rabi amplitude Ω in MHz.
    pub amplitude: f64,
    /// `ω_target − ω_drive` in MHz.
    pub detuning: f64,
    /// Phase φ in radians.
    pub phase: f64,
    pub envelope: Envelope,
    /// Start time in µs.
    pub start: f64,
    /// Duration in µs.
    pub duration: f64,
}

impl DriveTone {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Domain(format!(
                "drive duration must be positive, got {}",
                self.duration
            )));
        }
        if !(self.amplitude >= 0.0) {
            return Err(Error::Domain(format!(
                "drive amplitude must be non-negative, got {}",
                self.amplitude
            )));
        }
        Ok(())
    }
}

/// Reference frame of the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Lab,
    /// Each qubit's frame rotates at its own bare frequency.
    #[default]
    Rotating,
}

/// A subset Hamiltonian together with the bare frequencies that define the
/// rotating frame and the drive detunings.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub subset: SubsetSelection,
    pub h0: LatticeOperator,
    pub omegas: Vec<f64>,
}

impl SystemModel {
    pub fn new(
        device: &DeviceSpec,
        labels: &[&str],
        levels: usize,
        long_range: bool,
    ) -> Result<Self> {
        let subset = SubsetSelection::new(device, labels, levels)?;
        let h0 = assemble_hamiltonian(device, &subset, long_range)?;
        let omegas = labels
            .iter()
            .map(|l| device.qubit(l).map(|q| q.omega))
            .collect::<Result<_>>()?;
        Ok(SystemModel { subset, h0, omegas })
    }

    pub fn basis(&self) -> Basis {
        self.subset.basis()
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    pub fn site(&self, label: &str) -> Result<usize> {
        self.subset.site_of(label)
    }
}

#[derive(Debug, Clone)]
struct Term {
    op: LatticeOperator,
    freq: f64,
    coeff: C64,
    window: Option<(f64, f64, Envelope)>,
}

/// `H(t) = Σ_k c_k · s_k(t) · e^{i2π f_k t} · O_k`.
#[derive(Debug, Clone)]
pub struct DrivenHamiltonian {
    dim: usize,
    terms: Vec<Term>,
    breakpoints: Vec<f64>,
}

impl DrivenHamiltonian {
    /// Builds the Hamiltonian of `model` with `drives` in `frame`;
    /// `offsets` adds a static frequency shift (MHz) to each site.
    pub fn build(
        model: &SystemModel,
        drives: &[DriveTone],
        frame: Frame,
        offsets: &[f64],
    ) -> Result<Self> {
        let basis = model.basis();
        let dim = basis.dim();
        let frame_energy = |idx: usize| -> f64 {
            match frame {
                Frame::Lab => 0.0,
                Frame::Rotating => (0..basis.sites)
                    .map(|s| model.omegas[s] * basis.occupation(idx, s) as f64)
                    .sum(),
            }
        };
        // Group the static entries by their rotating-frame frequency.
        let mut groups: BTreeMap<i64, (f64, Vec<(usize, usize, C64)>)> = BTreeMap::new();
        for (r, c, v) in model.h0.entries() {
            let (f, val) = if r == c {
                let off: f64 = offsets
                    .iter()
                    .enumerate()
                    .map(|(s, d)| d * basis.occupation(r, s) as f64)
                    .sum();
                (0.0, v - C64::new(frame_energy(r), 0.0) + C64::new(off, 0.0))
            } else {
                (frame_energy(r) - frame_energy(c), v)
            };
            let key = (f * 1e9).round() as i64;
            groups
                .entry(key)
                .or_insert((f, Vec::new()))
                .1
                .push((r, c, val));
        }
        let mut terms: Vec<Term> = groups
            .into_values()
            .map(|(freq, t)| Term {
                op: LatticeOperator::from_triplets(dim, t),
                freq,
                coeff: C64::new(1.0, 0.0),
                window: None,
            })
            .collect();
        let mut breakpoints = Vec::new();
        for d in drives {
            d.validate()?;
            let s = model.site(&d.target)?;
            let omega_d = model.omegas[s] - d.detuning;
            let a = lowering_on(basis, s);
            let ad = a.adjoint();
            // a† e^{−i(2π ω_d t + φ)} picks up e^{+i2π ω_s t} in the rotating frame.
            let f_up = match frame {
                Frame::Lab => -omega_d,
                Frame::Rotating => model.omegas[s] - omega_d,
            };
            let c_up = C64::from_polar(0.5 * d.amplitude, -d.phase);
            let window = Some((d.start, d.duration, d.envelope));
            terms.push(Term {
                op: ad,
                freq: f_up,
                coeff: c_up,
                window,
            });
            terms.push(Term {
                op: a,
                freq: -f_up,
                coeff: c_up.conj(),
                window,
            });
            breakpoints.extend(d.envelope.kinks(d.start, d.duration));
        }
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();
        Ok(DrivenHamiltonian {
            dim,
            terms,
            breakpoints,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// True when no term depends on time.
    pub fn is_static(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.freq == 0.0 && t.window.is_none())
    }

    fn factor(&self, term: &Term, t: f64) -> C64 {
        let env = match term.window {
            None => 1.0,
            Some((start, dur, e)) => e.value(t, start, dur),
        };
        if env == 0.0 {
            return C64::new(0.0, 0.0);
        }
        let phase = if term.freq == 0.0 {
            C64::new(1.0, 0.0)
        } else {
            C64::from_polar(1.0, 2.0 * PI * term.freq * t)
        };
        term.coeff * env * phase
    }

    /// `out = scale · H(t) · x`.
    pub fn apply(&self, t: f64, scale: C64, x: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        self.apply_add(t, scale, x, out);
    }

    /// `out += scale · H(t) · x`.
    pub fn apply_add(&self, t: f64, scale: C64, x: &[C64], out: &mut [C64]) {
        for term in &self.terms {
            let f = self.factor(term, t);
            if f != C64::new(0.0, 0.0) {
                term.op.matvec_add(f * scale, x, out);
            }
        }
    }

    /// Dense `H(t)`.
    pub fn dense_at(&self, t: f64) -> nalgebra::DMatrix<C64> {
        let mut m = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for term in &self.terms {
            let f = self.factor(term, t);
            for (r, c, v) in term.op.entries() {
                m[(r, c)] += f * v;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blackman_edges() {
        let e = Envelope::Blackman { rise_ns: 40.0 };
        assert!(e.value(0.0, 0.0, 1.0).abs() < 1e-15);
        assert!((e.value(0.02, 0.0, 1.0) - 0.34).abs() < 1e-12);
        assert_eq!(e.value(0.5, 0.0, 1.0), 1.0);
        assert!(e.value(1.0, 0.0, 1.0).abs() < 1e-15);
        assert_eq!(e.value(1.1, 0.0, 1.0), 0.0);
        assert_eq!(Envelope::Rectangular.value(0.3, 0.0, 1.0), 1.0);
    }
}
