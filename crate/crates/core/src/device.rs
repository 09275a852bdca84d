//! Device parameters and closed-form circuit relations.
//!
//! Units: frequencies and energies in MHz with h = 1, times in µs. The
//! anharmonicity is stored with its physical (negative) sign.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use crate::error::{Error, Result};

/// One transmon's Hamiltonian and coherence parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmonParams {
    pub label: String,
    /// Qubit frequency ω/2π in MHz.
    pub omega: f64,
    /// Anharmonicity α/2π in MHz, negative.
    pub alpha: f64,
    /// Josephson energy in MHz.
    pub ej: f64,
    /// Charging energy in MHz.
    pub ec: f64,
    pub t1: f64,
    pub t2r: f64,
    pub t2e: f64,
}

/// Slack allowed on the `T2 ≤ 2·T1` bound, in µs.
pub const T2_BOUND_SLACK: f64 = 1e-6;

impl TransmonParams {
    /// Builds parameters from frequency and anharmonicity alone, seeding
    /// `E_C ≈ −α` and `E_J` from the transmon frequency relation.
    pub fn from_omega_alpha(
        label: impl Into<String>,
        omega: f64,
        alpha: f64,
        t1: f64,
        t2r: f64,
        t2e: f64,
    ) -> Result<Self> {
        let ec = -alpha;
        let ej = ej_from_omega(omega, ec)?;
        let p = TransmonParams {
            label: label.into(),
            omega,
            alpha,
            ej,
            ec,
            t1,
            t2r,
            t2e,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Error::Schema {
            path: format!("{}.{}", self.label, name),
            line: None,
            message: msg,
        };
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return Err(field(
                "omega",
                format!("must be positive, got {}", self.omega),
            ));
        }
        if !(self.alpha.is_finite() && self.alpha < 0.0) {
            return Err(field(
                "alpha",
                format!("must be negative, got {}", self.alpha),
            ));
        }
        if !(self.ej.is_finite() && self.ej > 0.0) {
            return Err(field("ej", format!("must be positive, got {}", self.ej)));
        }
        if !(self.ec.is_finite() && self.ec > 0.0) {
            return Err(field("ec", format!("must be positive, got {}", self.ec)));
        }
        for (name, v) in [("t1", self.t1), ("t2r", self.t2r), ("t2e", self.t2e)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(field(name, format!("must be positive, got {v}")));
            }
        }
        for (name, v) in [("t2r", self.t2r), ("t2e", self.t2e)] {
            if v > 2.0 * self.t1 + T2_BOUND_SLACK {
                return Err(field(
                    name,
                    format!("{v} us exceeds the 2*T1 limit {} us", 2.0 * self.t1),
                ));
            }
        }
        Ok(())
    }
}

/// Readout resonator metadata. Stored only; never simulated.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonatorParams {
    /// Frequency in MHz.
    pub freq: f64,
    /// Internal quality factor (absolute, not in units of 10^4).
    pub qi: f64,
    /// External coupling rate in MHz.
    pub kappa_ext: f64,
    /// Dispersive shift in kHz.
    pub chi: f64,
}

impl ResonatorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.freq > 0.0) || !(self.qi > 0.0) {
            return Err(Error::Domain(format!(
                "resonator needs positive freq and qi, got {} / {}",
                self.freq, self.qi
            )));
        }
        Ok(())
    }
}

/// Unordered pair of qubit labels, stored in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pair(String, String);

impl Pair {
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Self {
        let (a, b) = (a.into(), b.into());
        if a <= b {
            Pair(a, b)
        } else {
            Pair(b, a)
        }
    }

    pub fn first(&self) -> &str {
        &self.0
    }

    pub fn second(&self) -> &str {
        &self.1
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0 == label || self.1 == label
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

/// Exchange couplings of the lattice.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CouplingGraph {
    /// Nearest-neighbour exchange J in MHz.
    pub nn: BTreeMap<Pair, f64>,
    /// Long-range residual couplings J̃ in MHz.
    pub lr: BTreeMap<Pair, f64>,
    /// Optional coupling-capacitor charging energies E_Cc in MHz.
    pub ecc: BTreeMap<Pair, f64>,
}

impl CouplingGraph {
    pub fn nn(&self, a: &str, b: &str) -> Option<f64> {
        self.nn.get(&Pair::new(a, b)).copied()
    }

    pub fn lr(&self, a: &str, b: &str) -> Option<f64> {
        self.lr.get(&Pair::new(a, b)).copied()
    }
}

/// A rectangular lattice of transmons with its coupling graph.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Qubits in row-major grid order.
    pub qubits: Vec<TransmonParams>,
    pub resonators: Vec<ResonatorParams>,
    pub couplings: CouplingGraph,
}

impl DeviceSpec {
    /// A 1×n chain with `couplings[k]` (MHz) between qubits `k` and `k+1`;
    /// zero couplings are omitted.
    pub fn chain(name: &str, qubits: Vec<TransmonParams>, couplings: &[f64]) -> Result<Self> {
        if couplings.len() + 1 != qubits.len() {
            return Err(Error::Dimension(format!(
                "{} couplings for a chain of {} qubits",
                couplings.len(),
                qubits.len()
            )));
        }
        let nn = couplings
            .iter()
            .enumerate()
            .filter(|(_, j)| **j != 0.0)
            .map(|(k, &j)| {
                (
                    Pair::new(qubits[k].label.clone(), qubits[k + 1].label.clone()),
                    j,
                )
            })
            .collect();
        let device = DeviceSpec {
            name: name.into(),
            rows: 1,
            cols: qubits.len(),
            qubits,
            resonators: Vec::new(),
            couplings: CouplingGraph {
                nn,
                ..Default::default()
            },
        };
        device.validate()?;
        Ok(device)
    }

    /// Checks every structural and per-qubit invariant.
    pub fn validate(&self) -> Result<()> {
        if self.qubits.len() != self.rows * self.cols {
            return Err(Error::Schema {
                path: "qubits".into(),
                line: None,
                message: format!(
                    "expected {} qubits for a {}x{} grid, found {}",
                    self.rows * self.cols,
                    self.rows,
                    self.cols,
                    self.qubits.len()
                ),
            });
        }
        let mut seen = HashSet::new();
        for (i, q) in self.qubits.iter().enumerate() {
            if !seen.insert(q.label.as_str()) {
                return Err(Error::Schema {
                    path: format!("qubits[{i}].label"),
                    line: None,
                    message: format!("duplicate label `{}`", q.label),
                });
            }
            q.validate().map_err(|e| match e {
                Error::Schema { path, message, .. } => Error::Schema {
                    path: format!("qubits[{i}].{}", path.rsplit('.').next().unwrap_or(&path)),
                    line: None,
                    message,
                },
                other => other,
            })?;
        }
        for r in &self.resonators {
            r.validate()?;
        }
        let edges: HashSet<Pair> = self.grid_edges().into_iter().collect();
        for (pair, j) in &self.couplings.nn {
            self.index_of(pair.first())?;
            self.index_of(pair.second())?;
            if !edges.contains(pair) {
                return Err(Error::Schema {
                    path: format!("couplings.nn[{pair}]"),
                    line: None,
                    message: "pair is not a nearest-neighbour edge of the grid".into(),
                });
            }
            if !j.is_finite() {
                return Err(Error::Schema {
                    path: format!("couplings.nn[{pair}]"),
                    line: None,
                    message: "coupling must be finite".into(),
                });
            }
        }
        for (pair, j) in self.couplings.lr.iter().chain(self.couplings.ecc.iter()) {
            self.index_of(pair.first())?;
            self.index_of(pair.second())?;
            if !j.is_finite() {
                return Err(Error::Schema {
                    path: format!("couplings[{pair}]"),
                    line: None,
                    message: "value must be finite".into(),
                });
            }
        }
        Ok(())
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.qubits
            .iter()
            .position(|q| q.label == label)
            .ok_or_else(|| Error::UnknownQubit(label.to_string()))
    }

    pub fn qubit(&self, label: &str) -> Result<&TransmonParams> {
        Ok(&self.qubits[self.index_of(label)?])
    }

    pub fn position(&self, label: &str) -> Result<(usize, usize)> {
        let i = self.index_of(label)?;
        Ok((i / self.cols, i % self.cols))
    }

    /// All nearest-neighbour edges of the grid, as label pairs.
    pub fn grid_edges(&self) -> Vec<Pair> {
        let mut out = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                let i = r * self.cols + c;
                if c + 1 < self.cols {
                    out.push(Pair::new(&self.qubits[i].label, &self.qubits[i + 1].label));
                }
                if r + 1 < self.rows {
                    out.push(Pair::new(
                        &self.qubits[i].label,
                        &self.qubits[i + self.cols].label,
                    ));
                }
            }
        }
        out
    }

    pub fn is_grid_neighbor(&self, a: &str, b: &str) -> Result<bool> {
        let (ra, ca) = self.position(a)?;
        let (rb, cb) = self.position(b)?;
        Ok(ra.abs_diff(rb) + ca.abs_diff(cb) == 1)
    }

    /// Signed detuning ω_i − ω_j in MHz.
    pub fn detuning(&self, i: &str, j: &str) -> Result<f64> {
        if i == j {
            return Err(Error::Selection(format!("detuning of `{i}` with itself")));
        }
        Ok(self.qubit(i)?.omega - self.qubit(j)?.omega)
    }

    /// True when |Δ_ij| < min(|α_i|, |α_j|).
    pub fn straddling(&self, i: &str, j: &str) -> Result<bool> {
        let delta = self.detuning(i, j)?;
        let (qi, qj) = (self.qubit(i)?, self.qubit(j)?);
        Ok(delta.abs() < qi.alpha.abs().min(qj.alpha.abs()))
    }
}

/// Transmon frequency from circuit energies, `√(8 E_J E_C)`.
pub fn omega_from_ej_ec(ej: f64, ec: f64) -> Result<f64> {
    if !(ej > 0.0 && ec > 0.0) {
        return Err(Error::Domain(format!(
            "E_J and E_C must be positive (got {ej}, {ec})"
        )));
    }
    Ok((8.0 * ej * ec).sqrt())
}

/// Inverse of [`omega_from_ej_ec`] in `E_J`.
pub fn ej_from_omega(omega: f64, ec: f64) -> Result<f64> {
    if !(omega > 0.0 && ec > 0.0) {
        return Err(Error::Domain(format!(
            "omega and E_C must be positive (got {omega}, {ec})"
        )));
    }
    Ok(omega * omega / (8.0 * ec))
}

/// Which form of the circuit coupling expression to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CouplingFormula {
    /// `E_Cj` appears in both quartic-root ratios.
    #[default]
    AsPrinted,
    /// The first ratio uses `E_Ci`, making the expression symmetric in i ↔ j.
    Symmetric,
}

/// Exchange coupling from charging and Josephson energies (all MHz).
pub fn j_from_circuit(
    eci: f64,
    ecj: f64,
    ecc: f64,
    eji: f64,
    ejj: f64,
    formula: CouplingFormula,
) -> Result<f64> {
    if ecc == 0.0 {
        return Err(Error::SingularCoupling(
            "coupling charging energy is zero".into(),
        ));
    }
    if !(eci > 0.0 && ecj > 0.0 && ecc > 0.0 && eji > 0.0 && ejj > 0.0) {
        return Err(Error::Domain("circuit energies must be positive".into()));
    }
    let first = match formula {
        CouplingFormula::AsPrinted => eji / (2.0 * ecj),
        CouplingFormula::Symmetric => eji / (2.0 * eci),
    };
    let second = ejj / (2.0 * ecj);
    Ok(2.0 * eci * ecj / ecc * (first * second).powf(0.25))
}
