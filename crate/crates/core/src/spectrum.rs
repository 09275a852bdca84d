//! Dressed spectra, dressed-state labeling and static ZZ.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceSpec, Pair, TransmonParams};
use crate::error::{Error, Result};
use crate::operators::{assemble_hamiltonian, Basis, LatticeOperator, SubsetSelection};

/// Default minimum overlap for a bare state to claim a dressed state.
pub const DEFAULT_LABEL_THRESHOLD: f64 = 0.7;
/// Default exclusion window (MHz) around the poles of the perturbative ZZ.
pub const DEFAULT_POLE_GUARD: f64 = 1.0;
/// Default truncation for ZZ calculations.
pub const DEFAULT_ZZ_LEVELS: usize = 4;

/// Eigen-decomposition of a Hermitian operator, ascending in energy.
#[derive(Debug, Clone)]
pub struct DressedSpectrum {
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors as columns, ordered like `eigenvalues`.
    pub eigenvectors: DMatrix<C64>,
    pub basis: Option<Basis>,
}

/// Bare occupation label → dressed eigen-index, with the claiming overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub index: BTreeMap<Vec<usize>, usize>,
    pub overlap: BTreeMap<Vec<usize>, f64>,
}

impl LabelMap {
    pub fn energy(&self, spectrum: &DressedSpectrum, label: &[usize]) -> Option<f64> {
        self.index.get(label).map(|&i| spectrum.eigenvalues[i])
    }
}

fn hermitian_check(h: &LatticeOperator) -> Result<()> {
    let err = h.hermiticity_error();
    if err > 1e-12 * h.max_abs().max(1.0) {
        return Err(Error::Contract(format!(
            "operator is not Hermitian (max |H - H^dag| = {err:e})"
        )));
    }
    Ok(())
}

fn sorted_eigen(m: DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (vals, vecs)
}

/// Dense diagonalization of the full operator.
pub fn diagonalize(h: &LatticeOperator) -> Result<DressedSpectrum> {
    hermitian_check(h)?;
    let (eigenvalues, eigenvectors) = sorted_eigen(h.to_dense());
    Ok(DressedSpectrum {
        eigenvalues,
        eigenvectors,
        basis: h.basis(),
    })
}

/// Diagonalizes block by block in total excitation number. Requires a basis
/// and an operator that conserves excitations; each block is shifted by a
/// multiple of its mean site energy before diagonalizing, which keeps small
/// energy differences well conditioned.
pub fn diagonalize_by_excitation(h: &LatticeOperator) -> Result<DressedSpectrum> {
    hermitian_check(h)?;
    let basis = h
        .basis()
        .ok_or_else(|| Error::Contract("block diagonalization needs a product basis".into()))?;
    for (r, c, _) in h.entries() {
        if basis.excitations(r) != basis.excitations(c) {
            return Err(Error::Contract(
                "operator does not conserve the total excitation number".into(),
            ));
        }
    }
    let dim = h.dim();
    let max_n = basis.sites * (basis.levels - 1);
    let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); max_n + 1];
    for i in 0..dim {
        blocks[basis.excitations(i)].push(i);
    }
    let mut pairs: Vec<(f64, Vec<(usize, C64)>)> = Vec::with_capacity(dim);
    for (n, members) in blocks.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let m = members.len();
        let mut block = DMatrix::<C64>::zeros(m, m);
        for (a, &ra) in members.iter().enumerate() {
            for (b, &cb) in members.iter().enumerate() {
                block[(a, b)] = h.get(ra, cb);
            }
        }
        let shift = if n == 0 {
            0.0
        } else {
            (0..m).map(|a| block[(a, a)].re).sum::<f64>() / m as f64
        };
        for a in 0..m {
            block[(a, a)] -= C64::new(shift, 0.0);
        }
        let (vals, vecs) = sorted_eigen(block);
        for (k, v) in vals.into_iter().enumerate() {
            let col = members
                .iter()
                .enumerate()
                .map(|(a, &r)| (r, vecs[(a, k)]))
                .collect();
            pairs.push((v + shift, col));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut eigenvectors = DMatrix::<C64>::zeros(dim, dim);
    let mut eigenvalues = Vec::with_capacity(dim);
    for (c, (v, col)) in pairs.into_iter().enumerate() {
        eigenvalues.push(v);
        for (r, z) in col {
            eigenvectors[(r, c)] = z;
        }
    }
    Ok(DressedSpectrum {
        eigenvalues,
        eigenvectors,
        basis: Some(basis),
    })
}

/// Labels every bare basis state with the dressed state of maximal overlap.
pub fn assign_dressed_labels(spectrum: &DressedSpectrum, threshold: f64) -> Result<LabelMap> {
    let basis = spectrum
        .basis
        .ok_or_else(|| Error::Contract("labeling needs a product basis".into()))?;
    let labels: Vec<Vec<usize>> = (0..basis.dim()).map(|i| basis.occupations(i)).collect();
    assign_labels_for(spectrum, &labels, threshold)
}

/// Labels only the requested bare states.
pub fn assign_labels_for(
    spectrum: &DressedSpectrum,
    labels: &[Vec<usize>],
    threshold: f64,
) -> Result<LabelMap> {
    if !(threshold > 0.5 && threshold <= 1.0) {
        return Err(Error::Domain(format!(
            "labeling threshold {threshold} outside (0.5, 1]"
        )));
    }
    let basis = spectrum
        .basis
        .ok_or_else(|| Error::Contract("labeling needs a product basis".into()))?;
    let mut index = BTreeMap::new();
    let mut overlap = BTreeMap::new();
    let mut claimed: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for label in labels {
        let row = basis.index(label);
        let (best, ov) = (0..spectrum.eigenvalues.len())
            .map(|c| (c, spectrum.eigenvectors[(row, c)].norm_sqr()))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if ov < threshold {
            return Err(Error::Labeling(format!(
                "bare state {label:?} has maximal overlap {ov:.4} below threshold {threshold}"
            )));
        }
        if let Some(other) = claimed.get(&best) {
            return Err(Error::Labeling(format!(
                "bare states {other:?} and {label:?} both claim dressed state {best}"
            )));
        }
        claimed.insert(best, label.clone());
        index.insert(label.clone(), best);
        overlap.insert(label.clone(), ov);
    }
    Ok(LabelMap { index, overlap })
}

fn pair_device(pi: &TransmonParams, pj: &TransmonParams, j: f64) -> DeviceSpec {
    let mut a = pi.clone();
    let mut b = pj.clone();
    a.label = "i".into();
    b.label = "j".into();
    let mut nn = BTreeMap::new();
    nn.insert(Pair::new("i", "j"), j);
    DeviceSpec {
        name: "pair".into(),
        rows: 1,
        cols: 2,
        qubits: vec![a, b],
        resonators: vec![],
        couplings: crate::device::CouplingGraph {
            nn,
            ..Default::default()
        },
    }
}

/// Static ZZ (kHz) of two transmons coupled by `j`, from labeled dressed
/// energies: `E11 − E10 − E01 + E00`.
pub fn zz_exact_params(pi: &TransmonParams, pj: &TransmonParams, j: f64, d: usize) -> Result<f64> {
    zz_exact_params_with(pi, pj, j, d, DEFAULT_LABEL_THRESHOLD)
}

pub fn zz_exact_params_with(
    pi: &TransmonParams,
    pj: &TransmonParams,
    j: f64,
    d: usize,
    threshold: f64,
) -> Result<f64> {
    if d < 3 {
        return Err(Error::Dimension(format!(
            "ZZ needs at least 3 levels, got {d}"
        )));
    }
    if j == 0.0 {
        return Ok(0.0);
    }
    let dev = pair_device(pi, pj, j);
    let subset = SubsetSelection::new(&dev, &["i", "j"], d)?;
    let h = assemble_hamiltonian(&dev, &subset, false)?;
    let spec = diagonalize_by_excitation(&h)?;
    let labels = [vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
    let map = assign_labels_for(&spec, &labels, threshold)?;
    let e = |l: &[usize]| map.energy(&spec, l).expect("label assigned");
    // Group the terms so that the large single-excitation energies cancel first.
    let zeta = (e(&[1, 1]) - e(&[1, 0])) - (e(&[0, 1]) - e(&[0, 0]));
    Ok(zeta * 1e3)
}

fn pair_coupling(device: &DeviceSpec, a: &str, b: &str) -> Result<f64> {
    let nn = device.couplings.nn(a, b);
    let lr = device.couplings.lr(a, b);
    match (nn, lr) {
        (None, None) => Err(Error::Selection(format!("pair {a}-{b} has no coupling"))),
        (x, y) => Ok(x.unwrap_or(0.0) + y.unwrap_or(0.0)),
    }
}

/// Exact static ZZ (kHz) of a coupled device pair.
pub fn zz_exact(device: &DeviceSpec, a: &str, b: &str, d: usize) -> Result<f64> {
    let j = pair_coupling(device, a, b)?;
    zz_exact_params(device.qubit(a)?, device.qubit(b)?, j, d)
}

/// Second-order static ZZ (kHz): `−2J²(α_i+α_j) / ((Δ+α_i)(α_j−Δ))`.
pub fn zz_perturbative(j: f64, delta: f64, alpha_i: f64, alpha_j: f64) -> Result<f64> {
    zz_perturbative_guarded(j, delta, alpha_i, alpha_j, DEFAULT_POLE_GUARD)
}

fn check_poles(delta: f64, alpha_i: f64, alpha_j: f64, guard: f64) -> Result<(f64, f64)> {
    if delta == 0.0 {
        return Err(Error::Domain(
            "perturbative ZZ needs a nonzero detuning".into(),
        ));
    }
    let (p, q) = (delta + alpha_i, alpha_j - delta);
    if p.abs() < guard || q.abs() < guard {
        return Err(Error::NearPole(format!(
            "denominators (delta+alpha_i) = {p:.3} MHz, (alpha_j-delta) = {q:.3} MHz within {guard} MHz of a pole"
        )));
    }
    Ok((p, q))
}

pub fn zz_perturbative_guarded(
    j: f64,
    delta: f64,
    alpha_i: f64,
    alpha_j: f64,
    guard: f64,
) -> Result<f64> {
    let (p, q) = check_poles(delta, alpha_i, alpha_j, guard)?;
    Ok(-2.0 * j * j * (alpha_i + alpha_j) / (p * q) * 1e3)
}

/// Positive-root inverse of [`zz_perturbative`] in J (MHz).
pub fn j_from_zz(zeta_khz: f64, delta: f64, alpha_i: f64, alpha_j: f64) -> Result<f64> {
    let (p, q) = check_poles(delta, alpha_i, alpha_j, DEFAULT_POLE_GUARD)?;
    let radicand = zeta_khz * 1e-3 * p * q / (-2.0 * (alpha_i + alpha_j));
    if radicand < 0.0 || !radicand.is_finite() {
        return Err(Error::InconsistentSign(format!(
            "ZZ of {zeta_khz} kHz has the wrong sign for these detunings"
        )));
    }
    Ok(radicand.sqrt())
}

/// Exact and perturbative ZZ of one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZZReport {
    pub pair: (String, String),
    pub zeta_exact: f64,
    pub zeta_perturbative: f64,
    pub j_input: f64,
    pub delta: f64,
    pub levels: usize,
}

pub fn zz_report(device: &DeviceSpec, a: &str, b: &str, d: usize) -> Result<ZZReport> {
    let j = pair_coupling(device, a, b)?;
    let (qa, qb) = (device.qubit(a)?, device.qubit(b)?);
    let delta = device.detuning(a, b)?;
    Ok(ZZReport {
        pair: (a.to_string(), b.to_string()),
        zeta_exact: zz_exact_params(qa, qb, j, d)?,
        zeta_perturbative: zz_perturbative(j, delta, qa.alpha, qb.alpha)?,
        j_input: j,
        delta,
        levels: d,
    })
}

/// ZZ reports for every nearest-neighbour coupling; failures are returned
/// alongside the pair rather than aborting the sweep.
pub fn zz_all_pairs(device: &DeviceSpec, d: usize) -> Vec<(Pair, Result<ZZReport>)> {
    let pairs: Vec<Pair> = device.couplings.nn.keys().cloned().collect();
    pairs
        .into_par_iter()
        .map(|p| {
            let r = zz_report(device, p.first(), p.second(), d);
            (p, r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tp(w: f64, a: f64) -> TransmonParams {
        TransmonParams::from_omega_alpha("q", w, a, 80.0, 60.0, 90.0).unwrap()
    }

    #[test]
    fn diagonal_input() {
        let h = LatticeOperator::from_diagonal(&[3.0, -1.0, 2.0]);
        let s = diagonalize(&h).unwrap();
        assert_eq!(s.eigenvalues, vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn two_by_two_closed_form() {
        let (j, delta) = (0.7, 3.0);
        let h = LatticeOperator::from_dense(&DMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(0.0, 0.0),
                C64::new(j, 0.0),
                C64::new(j, 0.0),
                C64::new(delta, 0.0),
            ],
        ));
        let s = diagonalize(&h).unwrap();
        let r = (delta * delta + 4.0 * j * j).sqrt();
        assert_relative_eq!(s.eigenvalues[0], (delta - r) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(s.eigenvalues[1], (delta + r) / 2.0, epsilon = 1e-12);
        let u = &s.eigenvectors;
        let err = (u.adjoint() * u - DMatrix::identity(2, 2)).norm();
        assert!(err < 1e-10);
    }

    #[test]
    fn non_hermitian_rejected() {
        let h = LatticeOperator::from_triplets(2, vec![(0, 1, C64::new(1.0, 0.0))]);
        assert!(matches!(diagonalize(&h), Err(Error::Contract(_))));
    }

    #[test]
    fn eigen_residuals_small() {
        let dev = pair_device(&tp(4795.6, -197.2), &tp(4807.5, -196.2), 0.631);
        let s = SubsetSelection::new(&dev, &["i", "j"], 4).unwrap();
        let h = assemble_hamiltonian(&dev, &s, false).unwrap();
        let hd = h.to_dense();
        let hn = hd.norm();
        for spec in [
            diagonalize(&h).unwrap(),
            diagonalize_by_excitation(&h).unwrap(),
        ] {
            for (k, &l) in spec.eigenvalues.iter().enumerate() {
                let v = spec.eigenvectors.column(k);
                let r = (&hd * v - v * C64::new(l, 0.0)).norm();
                assert!(r <= 1e-8 * hn, "residual {r}");
            }
        }
    }

    #[test]
    fn block_and_full_agree() {
        let dev = pair_device(&tp(4800.0, -200.0), &tp(4830.0, -190.0), 2.0);
        let s = SubsetSelection::new(&dev, &["i", "j"], 3).unwrap();
        let h = assemble_hamiltonian(&dev, &s, false).unwrap();
        let a = diagonalize(&h).unwrap();
        let b = diagonalize_by_excitation(&h).unwrap();
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
        }
    }

    #[test]
    fn labeling_cases() {
        let dev = pair_device(&tp(4800.0, -200.0), &tp(4900.0, -200.0), 0.0);
        let s = SubsetSelection::new(&dev, &["i", "j"], 3).unwrap();
        let spec =
            diagonalize_by_excitation(&assemble_hamiltonian(&dev, &s, false).unwrap()).unwrap();
        let map = assign_dressed_labels(&spec, 0.7).unwrap();
        assert!(map.overlap.values().all(|&o| o == 1.0));

        let dev = pair_device(&tp(4800.0, -200.0), &tp(4900.0, -200.0), 5.0);
        let spec =
            diagonalize_by_excitation(&assemble_hamiltonian(&dev, &s, false).unwrap()).unwrap();
        let map = assign_dressed_labels(&spec, 0.7).unwrap();
        for l in [vec![0, 1], vec![1, 0], vec![1, 1], vec![2, 0], vec![0, 2]] {
            assert!(map.overlap[&l] >= 0.99, "{l:?}: {}", map.overlap[&l]);
        }

        let dev = pair_device(&tp(4800.0, -200.0), &tp(4800.0, -200.0), 0.5);
        let spec =
            diagonalize_by_excitation(&assemble_hamiltonian(&dev, &s, false).unwrap()).unwrap();
        assert!(matches!(
            assign_dressed_labels(&spec, 0.9),
            Err(Error::Labeling(_))
        ));
        assert!(assign_dressed_labels(&spec, 0.4).is_err());
    }

    #[test]
    fn zz_exact_basic_properties() {
        let (a, b) = (tp(4795.6, -197.2), tp(4807.5, -196.2));
        assert_eq!(zz_exact_params(&a, &b, 0.0, 4).unwrap(), 0.0);
        let ab = zz_exact_params(&a, &b, 0.631, 4).unwrap();
        let ba = zz_exact_params(&b, &a, 0.631, 4).unwrap();
        assert_relative_eq!(ab, ba, max_relative = 1e-6);
        assert!((ab.abs() - 8.1).abs() < 0.81);
    }

    #[test]
    fn perturbative_examples() {
        let z = zz_perturbative(0.631, 12.0, -197.2, -196.2).unwrap();
        assert!((z - 8.13).abs() < 0.01, "{z}");
        assert_eq!(zz_perturbative(0.0, 12.0, -197.2, -196.2).unwrap(), 0.0);
        let z = zz_perturbative(0.401, 17.2, -196.2, -194.0).unwrap();
        assert!((z - 3.3).abs() < 0.05, "{z}");
        assert!(matches!(
            zz_perturbative(0.5, 196.8, -197.0, -196.0),
            Err(Error::NearPole(_))
        ));
        assert!(zz_perturbative(0.5, 0.0, -197.0, -196.0).is_err());
    }

    #[test]
    fn inverse_examples() {
        assert!((j_from_zz(8.1, 12.0, -197.2, -196.2).unwrap() - 0.630).abs() < 0.002);
        assert!((j_from_zz(3.6, 18.2, -196.9, -196.1).unwrap() - 0.418).abs() < 0.005);
        assert!(matches!(
            j_from_zz(-8.1, 12.0, -197.2, -196.2),
            Err(Error::InconsistentSign(_))
        ));
    }
}
