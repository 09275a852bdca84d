//! Truncated-oscillator operators on subsets of the lattice.
//!
//! Basis ordering: a state of sites `s_0 … s_{n-1}` with occupations
//! `(k_0, …, k_{n-1})` has index `Σ k_i · d^(n-1-i)`, so the occupation of
//! the last listed site changes fastest.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::device::{DeviceSpec, TransmonParams};
use crate::error::{Error, Result};

/// Default cap on the Hilbert-space dimension of a subset.
pub const DEFAULT_DIM_CAP: usize = 4096;

/// An ordered list of qubits simulated together with `levels` states each.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSelection {
    labels: Vec<String>,
    levels: usize,
}

impl SubsetSelection {
    pub fn new(device: &DeviceSpec, labels: &[&str], levels: usize) -> Result<Self> {
        Self::with_cap(device, labels, levels, DEFAULT_DIM_CAP)
    }

    pub fn with_cap(
        device: &DeviceSpec,
        labels: &[&str],
        levels: usize,
        cap: usize,
    ) -> Result<Self> {
        if levels < 2 {
            return Err(Error::Dimension(format!(
                "need at least 2 levels, got {levels}"
            )));
        }
        if labels.is_empty() {
            return Err(Error::Selection("empty qubit subset".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            device.index_of(l)?;
            if labels[..i].contains(l) {
                return Err(Error::Selection(format!("qubit `{l}` listed twice")));
            }
        }
        let dim = checked_dim(levels, labels.len(), cap)?;
        debug_assert!(dim <= cap);
        Ok(SubsetSelection {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            levels,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn n_sites(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.levels.pow(self.labels.len() as u32)
    }

    pub fn site_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Selection(format!("qubit `{label}` is not in the subset")))
    }

    pub fn basis(&self) -> Basis {
        Basis::new(self.levels, self.n_sites())
    }
}

fn checked_dim(levels: usize, sites: usize, cap: usize) -> Result<usize> {
    let mut dim: usize = 1;
    for _ in 0..sites {
        dim = dim.saturating_mul(levels);
        if dim > cap {
            return Err(Error::Resource {
                dim: levels.saturating_pow(sites as u32),
                cap,
            });
        }
    }
    Ok(dim)
}

/// Occupation-number bookkeeping for a product basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Basis {
    pub levels: usize,
    pub sites: usize,
}

impl Basis {
    pub fn new(levels: usize, sites: usize) -> Self {
        Basis { levels, sites }
    }

    pub fn dim(&self) -> usize {
        self.levels.pow(self.sites as u32)
    }

    /// Occupation of `site` in basis state `index`.
    pub fn occupation(&self, index: usize, site: usize) -> usize {
        let stride = self.levels.pow((self.sites - 1 - site) as u32);
        (index / stride) % self.levels
    }

    pub fn occupations(&self, index: usize) -> Vec<usize> {
        (0..self.sites).map(|s| self.occupation(index, s)).collect()
    }

    pub fn index(&self, occupations: &[usize]) -> usize {
        occupations.iter().fold(0, |acc, &k| acc * self.levels + k)
    }

    pub fn stride(&self, site: usize) -> usize {
        self.levels.pow((self.sites - 1 - site) as u32)
    }

    pub fn excitations(&self, index: usize) -> usize {
        (0..self.sites).map(|s| self.occupation(index, s)).sum()
    }
}

/// Sparse complex square matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeOperator {
    dim: usize,
    basis: Option<Basis>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl LatticeOperator {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(dim: usize, mut entries: Vec<(usize, usize, C64)>) -> Self {
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<C64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            assert!(
                r < dim && c < dim,
                "entry ({r}, {c}) outside dimension {dim}"
            );
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
                last = Some((r, c));
            }
        }
        let mut keep_rows = Vec::with_capacity(rows.len());
        let mut keep_cols = Vec::with_capacity(cols.len());
        let mut keep_vals = Vec::with_capacity(vals.len());
        for ((r, c), v) in rows.into_iter().zip(cols).zip(vals) {
            if v != C64::new(0.0, 0.0) {
                keep_rows.push(r);
                keep_cols.push(c);
                keep_vals.push(v);
            }
        }
        for &r in &keep_rows {
            row_ptr[r + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        LatticeOperator {
            dim,
            basis: None,
            row_ptr,
            cols: keep_cols,
            vals: keep_vals,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_triplets(dim, Vec::new())
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self::from_triplets(
            diag.len(),
            diag.iter()
                .enumerate()
                .map(|(i, &v)| (i, i, C64::new(v, 0.0)))
                .collect(),
        )
    }

    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        let mut t = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                t.push((r, c, m[(r, c)]));
            }
        }
        Self::from_triplets(m.nrows(), t)
    }

    pub fn with_basis(mut self, basis: Basis) -> Self {
        assert_eq!(
            basis.dim(),
            self.dim,
            "basis does not match operator dimension"
        );
        self.basis = Some(basis);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis(&self) -> Option<Basis> {
        self.basis
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Iterates over stored `(row, col, value)` entries in row order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[range.clone()].binary_search(&c) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// `out = self · x`.
    pub fn matvec(&self, x: &[C64], out: &mut [C64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.dim) {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *o = acc;
        }
    }

    /// `out += scale · self · x`.
    pub fn matvec_add(&self, scale: C64, x: &[C64], out: &mut [C64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.dim) {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *o += scale * acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.entries() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn adjoint(&self) -> Self {
        let t = self.entries().map(|(r, c, v)| (c, r, v.conj())).collect();
        let mut out = Self::from_triplets(self.dim, t);
        out.basis = self.basis;
        out
    }

    /// Largest entry of `|A − A†|`.
    pub fn hermiticity_error(&self) -> f64 {
        self.entries()
            .map(|(r, c, v)| (v - self.get(c, r).conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_error() == 0.0
    }

    pub fn scaled(&self, s: C64) -> Self {
        let mut out = self.clone();
        for v in &mut out.vals {
            *v *= s;
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let t = self.entries().chain(other.entries()).collect();
        let mut out = Self::from_triplets(self.dim, t);
        out.basis = self.basis.or(other.basis);
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut t = Vec::new();
        for (r, k, a) in self.entries() {
            for j in other.row_ptr[k]..other.row_ptr[k + 1] {
                t.push((r, other.cols[j], a * other.vals[j]));
            }
        }
        let mut out = Self::from_triplets(self.dim, t);
        out.basis = self.basis.or(other.basis);
        out
    }

    pub fn commutator(&self, other: &Self) -> Self {
        self.mul(other)
            .add(&other.mul(self).scaled(C64::new(-1.0, 0.0)))
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Energy of occupation `k` of a Duffing oscillator, `(ω + (α/2)(k−1))·k`.
pub fn ladder_energy(omega: f64, alpha: f64, k: usize) -> f64 {
    let k = k as f64;
    (omega + 0.5 * alpha * (k - 1.0)) * k
}

/// The single-site Hamiltonian on `d` levels.
pub fn site_hamiltonian(params: &TransmonParams, d: usize) -> Result<LatticeOperator> {
    if d < 2 {
        return Err(Error::Dimension(format!("need at least 2 levels, got {d}")));
    }
    let diag: Vec<f64> = (0..d)
        .map(|k| ladder_energy(params.omega, params.alpha, k))
        .collect();
    Ok(LatticeOperator::from_diagonal(&diag).with_basis(Basis::new(d, 1)))
}

fn exchange_triplets(basis: Basis, si: usize, sj: usize, scale: f64) -> Vec<(usize, usize, C64)> {
    let (d, stride_i, stride_j) = (basis.levels, basis.stride(si), basis.stride(sj));
    let mut t = Vec::new();
    for idx in 0..basis.dim() {
        let ki = basis.occupation(idx, si);
        let kj = basis.occupation(idx, sj);
        // a_i† a_j : |ki, kj⟩ → √(ki+1)√kj |ki+1, kj−1⟩
        if ki + 1 < d && kj > 0 {
            let to = idx + stride_i - stride_j;
            let amp = scale * ((ki + 1) as f64).sqrt() * (kj as f64).sqrt();
            t.push((to, idx, C64::new(amp, 0.0)));
            t.push((idx, to, C64::new(amp, 0.0)));
        }
    }
    t
}

/// The hopping operator `a_i† a_j + a_i a_j†` on the subset's product space.
pub fn exchange_operator(i: &str, j: &str, subset: &SubsetSelection) -> Result<LatticeOperator> {
    let (si, sj) = (subset.site_of(i)?, subset.site_of(j)?);
    if si == sj {
        return Err(Error::Selection(format!("exchange of `{i}` with itself")));
    }
    let basis = subset.basis();
    Ok(
        LatticeOperator::from_triplets(basis.dim(), exchange_triplets(basis, si, sj, 1.0))
            .with_basis(basis),
    )
}

/// Number operator of one site.
pub fn number_operator(label: &str, subset: &SubsetSelection) -> Result<LatticeOperator> {
    let s = subset.site_of(label)?;
    let basis = subset.basis();
    let diag: Vec<f64> = (0..basis.dim())
        .map(|i| basis.occupation(i, s) as f64)
        .collect();
    Ok(LatticeOperator::from_diagonal(&diag).with_basis(basis))
}

/// Total excitation number `Σ n_i`.
pub fn total_number_operator(subset: &SubsetSelection) -> LatticeOperator {
    let basis = subset.basis();
    let diag: Vec<f64> = (0..basis.dim())
        .map(|i| basis.excitations(i) as f64)
        .collect();
    LatticeOperator::from_diagonal(&diag).with_basis(basis)
}

/// Lowering operator `a` of the site at position `site` of `basis`.
pub fn lowering_on(basis: Basis, site: usize) -> LatticeOperator {
    let stride = basis.stride(site);
    let mut t = Vec::new();
    for idx in 0..basis.dim() {
        let k = basis.occupation(idx, site);
        if k > 0 {
            t.push((idx - stride, idx, C64::new((k as f64).sqrt(), 0.0)));
        }
    }
    LatticeOperator::from_triplets(basis.dim(), t).with_basis(basis)
}

pub fn lowering_operator(label: &str, subset: &SubsetSelection) -> Result<LatticeOperator> {
    Ok(lowering_on(subset.basis(), subset.site_of(label)?))
}

/// Assembles the subset Hamiltonian: on-site Duffing terms, nearest-neighbour
/// exchange, and optionally the long-range residual couplings.
pub fn assemble_hamiltonian(
    device: &DeviceSpec,
    subset: &SubsetSelection,
    include_long_range: bool,
) -> Result<LatticeOperator> {
    let basis = subset.basis();
    let dim = basis.dim();
    let params: Vec<&TransmonParams> = subset
        .labels()
        .iter()
        .map(|l| device.qubit(l))
        .collect::<Result<_>>()?;
    let mut t: Vec<(usize, usize, C64)> = (0..dim)
        .map(|idx| {
            let e: f64 = params
                .iter()
                .enumerate()
                .map(|(s, p)| ladder_energy(p.omega, p.alpha, basis.occupation(idx, s)))
                .sum();
            (idx, idx, C64::new(e, 0.0))
        })
        .collect();
    let n = subset.n_sites();
    for si in 0..n {
        for sj in si + 1..n {
            let (a, b) = (&subset.labels()[si], &subset.labels()[sj]);
            let mut j = device.couplings.nn(a, b).unwrap_or(0.0);
            if include_long_range {
                j += device.couplings.lr(a, b).unwrap_or(0.0);
            }
            if j != 0.0 {
                t.extend(exchange_triplets(basis, si, sj, j));
            }
        }
    }
    Ok(LatticeOperator::from_triplets(dim, t).with_basis(basis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{CouplingGraph, Pair};
    use std::collections::BTreeMap;

    fn device(j: f64, lr: Option<f64>) -> DeviceSpec {
        let q = |l: &str, w: f64| {
            TransmonParams::from_omega_alpha(l, w, -200.0, 80.0, 60.0, 90.0).unwrap()
        };
        let mut nn = BTreeMap::new();
        nn.insert(Pair::new("A", "B"), j);
        nn.insert(Pair::new("B", "C"), j);
        let mut lrm = BTreeMap::new();
        if let Some(v) = lr {
            lrm.insert(Pair::new("A", "C"), v);
        }
        DeviceSpec {
            name: "line".into(),
            rows: 1,
            cols: 3,
            qubits: vec![q("A", 4800.0), q("B", 4850.0), q("C", 4900.0)],
            resonators: vec![],
            couplings: CouplingGraph {
                nn,
                lr: lrm,
                ecc: BTreeMap::new(),
            },
        }
    }

    #[test]
    fn site_hamiltonian_entries() {
        let p = TransmonParams::from_omega_alpha("Q2", 4795.6, -197.2, 89.0, 56.0, 86.0).unwrap();
        let h = site_hamiltonian(&p, 3).unwrap();
        let d = h.diagonal();
        assert_eq!(d[0].re, 0.0);
        assert!((d[1].re - 4795.6).abs() < 1e-9);
        assert!((d[2].re - 9394.0).abs() < 1e-9);
        assert!(site_hamiltonian(&p, 1).is_err());
        let mut harmonic = p.clone();
        harmonic.alpha = 0.0;
        let h = site_hamiltonian(&harmonic, 5).unwrap();
        for (k, v) in h.diagonal().iter().enumerate() {
            assert!((v.re - k as f64 * 4795.6).abs() < 1e-9);
        }
    }

    #[test]
    fn exchange_elements() {
        let dev = device(0.5, None);
        let s = SubsetSelection::new(&dev, &["A", "B"], 2).unwrap();
        let x = exchange_operator("A", "B", &s).unwrap();
        let b = s.basis();
        assert_eq!(x.get(b.index(&[1, 0]), b.index(&[0, 1])).re, 1.0);
        assert_eq!(x.nnz(), 2);

        let s3 = SubsetSelection::new(&dev, &["A", "B"], 3).unwrap();
        let x3 = exchange_operator("A", "B", &s3).unwrap();
        let b3 = s3.basis();
        assert!((x3.get(b3.index(&[2, 0]), b3.index(&[1, 1])).re - 2f64.sqrt()).abs() < 1e-15);
        assert!(x3.is_hermitian());
        assert!(exchange_operator("A", "C", &s3).is_err());
        assert!(exchange_operator("A", "A", &s3).is_err());
    }

    #[test]
    fn exchange_conserves_excitations() {
        let dev = device(0.5, None);
        let s = SubsetSelection::new(&dev, &["A", "B", "C"], 3).unwrap();
        let x = exchange_operator("C", "A", &s).unwrap();
        let n = total_number_operator(&s);
        assert_eq!(x.commutator(&n).max_abs(), 0.0);
    }

    #[test]
    fn basis_ordering_last_site_fastest() {
        let b = Basis::new(3, 2);
        assert_eq!(b.index(&[0, 1]), 1);
        assert_eq!(b.index(&[1, 0]), 3);
        assert_eq!(b.occupations(5), vec![1, 2]);
    }

    #[test]
    fn long_range_flag() {
        let dev = device(0.5, Some(0.05));
        let s = SubsetSelection::new(&dev, &["A", "B", "C"], 2).unwrap();
        let with = assemble_hamiltonian(&dev, &s, true).unwrap();
        let without = assemble_hamiltonian(&dev, &s, false).unwrap();
        let b = s.basis();
        let (ia, ic) = (b.index(&[1, 0, 0]), b.index(&[0, 0, 1]));
        assert_eq!(with.get(ia, ic).re, 0.05);
        assert_eq!(without.get(ia, ic).re, 0.0);
        let mut plain = dev.clone();
        plain.couplings.lr.clear();
        assert_eq!(assemble_hamiltonian(&plain, &s, true).unwrap(), without);
    }

    #[test]
    fn dimension_cap() {
        let dev = device(0.5, None);
        let err = SubsetSelection::with_cap(&dev, &["A", "B", "C"], 4, 50).unwrap_err();
        assert!(matches!(err, Error::Resource { dim: 64, cap: 50 }));
        assert!(SubsetSelection::new(&dev, &["A", "A"], 2).is_err());
        assert!(matches!(
            SubsetSelection::new(&dev, &["Z"], 2),
            Err(Error::UnknownQubit(_))
        ));
    }

    #[test]
    fn lowering_matches_exchange() {
        let dev = device(0.5, None);
        let s = SubsetSelection::new(&dev, &["A", "B"], 4).unwrap();
        let a = lowering_operator("A", &s).unwrap();
        let b = lowering_operator("B", &s).unwrap();
        let hop = a.adjoint().mul(&b).add(&a.mul(&b.adjoint()));
        let x = exchange_operator("A", "B", &s).unwrap();
        assert!((hop.to_dense() - x.to_dense()).norm() < 1e-14);
    }
}
