//! Bosonic occupation-number bases and the operators built on them.
//!
//! Two enumerations are supported: the product space with a per-site
//! occupation cutoff, used for the reservoir dynamics, and fixed total-number
//! sectors, used for spectral diagnostics. Both list occupation vectors in
//! lexicographic order with site 0 as the most significant digit.
//!
//! Sites are indexed from 0 throughout.

use std::collections::HashMap;
use std::fmt::Write as _;

use faer::{c64, Mat, MatRef};

use crate::error::{Error, Result};

/// Default ceiling on the number of basis states.
pub const DEFAULT_MAX_STATES: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisMode {
    /// All occupation vectors with every site occupation `<= cutoff`.
    ProductCutoff { cutoff: usize },
    /// All occupation vectors whose occupations sum to `total`.
    NumberSector { total: usize },
}

/// Ordered enumeration of occupation vectors with a reverse index.
#[derive(Clone, Debug)]
pub struct FockBasis {
    sites: usize,
    mode: BasisMode,
    occupations: Vec<u8>,
    index: HashMap<Box<[u8]>, usize>,
}

impl FockBasis {
    /// Product basis `{0..=cutoff}^sites`, lexicographic.
    pub fn product(sites: usize, cutoff: usize) -> Result<Self> {
        Self::product_with_limit(sites, cutoff, DEFAULT_MAX_STATES)
    }

    pub fn product_with_limit(sites: usize, cutoff: usize, limit: usize) -> Result<Self> {
        check_sites(sites)?;
        if cutoff > u8::MAX as usize {
            return Err(crate::error::invalid("cutoff", "must fit in a byte"));
        }
        let radix = cutoff as u128 + 1;
        let dimension = (0..sites).try_fold(1u128, |acc, _| acc.checked_mul(radix));
        let dimension = dimension.unwrap_or(u128::MAX);
        if dimension > limit as u128 {
            return Err(Error::DimensionOverflow { dimension, limit });
        }
        let dim = dimension as usize;
        let mut occupations = vec![0u8; dim * sites];
        for (i, chunk) in occupations.chunks_exact_mut(sites).enumerate() {
            let mut rest = i;
            for slot in chunk.iter_mut().rev() {
                *slot = (rest % (cutoff + 1)) as u8;
                rest /= cutoff + 1;
            }
        }
        Ok(Self::from_parts(sites, BasisMode::ProductCutoff { cutoff }, occupations))
    }

    /// Fixed-number sector: every occupation vector summing to `total`, lexicographic.
    pub fn number_sector(sites: usize, total: usize) -> Result<Self> {
        Self::number_sector_with_limit(sites, total, DEFAULT_MAX_STATES)
    }

    pub fn number_sector_with_limit(sites: usize, total: usize, limit: usize) -> Result<Self> {
        check_sites(sites)?;
        if total > u8::MAX as usize {
            return Err(crate::error::invalid("total", "must fit in a byte"));
        }
        let dimension = binomial(total + sites - 1, sites - 1);
        if dimension > limit as u128 {
            return Err(Error::DimensionOverflow { dimension, limit });
        }
        let mut occupations = Vec::with_capacity(dimension as usize * sites);
        let mut current = vec![0u8; sites];
        fill_sector(&mut current, 0, total, &mut occupations);
        Ok(Self::from_parts(sites, BasisMode::NumberSector { total }, occupations))
    }

    fn from_parts(sites: usize, mode: BasisMode, occupations: Vec<u8>) -> Self {
        let index = occupations
            .chunks_exact(sites)
            .enumerate()
            .map(|(i, occ)| (Box::from(occ), i))
            .collect();
        Self {
            sites,
            mode,
            occupations,
            index,
        }
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn mode(&self) -> BasisMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.occupations.len() / self.sites
    }

    /// Largest occupation any single site can hold in this basis.
    pub fn max_occupation(&self) -> usize {
        match self.mode {
            BasisMode::ProductCutoff { cutoff } => cutoff,
            BasisMode::NumberSector { total } => total,
        }
    }

    pub fn state(&self, i: usize) -> &[u8] {
        &self.occupations[i * self.sites..(i + 1) * self.sites]
    }

    pub fn states(&self) -> impl ExactSizeIterator<Item = &[u8]> + '_ {
        self.occupations.chunks_exact(self.sites)
    }

    pub fn index_of(&self, occupation: &[u8]) -> Option<usize> {
        self.index.get(occupation).copied()
    }

    pub fn total_number(&self, i: usize) -> usize {
        self.state(i).iter().map(|&n| n as usize).sum()
    }

    /// Basis indices grouped by total boson number, each group ascending.
    pub fn number_partition(&self) -> Vec<Vec<usize>> {
        let max_total = self.sites * self.max_occupation();
        let mut groups = vec![Vec::new(); max_total + 1];
        for i in 0..self.dim() {
            groups[self.total_number(i)].push(i);
        }
        groups
    }

    /// Newline-separated occupation tuples, one per basis state.
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        for occ in self.states() {
            out.push('(');
            for (k, n) in occ.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{n}");
            }
            out.push_str(")\n");
        }
        out
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.sites {
            return Err(Error::SiteOutOfRange {
                site,
                sites: self.sites,
            });
        }
        Ok(())
    }
}

fn check_sites(sites: usize) -> Result<()> {
    if sites == 0 {
        return Err(crate::error::invalid("sites", "must be at least 1"));
    }
    Ok(())
}

fn fill_sector(current: &mut [u8], pos: usize, remaining: usize, out: &mut Vec<u8>) {
    if pos + 1 == current.len() {
        current[pos] = remaining as u8;
        out.extend_from_slice(current);
        return;
    }
    for n in 0..=remaining {
        current[pos] = n as u8;
        fill_sector(current, pos + 1, remaining - n, out);
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Dense real operator in a Fock basis.
///
/// Every operator of the model (ladder, number, Bose-Hubbard Hamiltonian,
/// readout observables) has real matrix elements in the occupation basis, so
/// entries are stored as `f64`; [`OperatorMatrix::to_complex`] lifts them when
/// a complex matrix is required.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    mat: Mat<f64>,
}

impl OperatorMatrix {
    pub fn from_mat(mat: Mat<f64>) -> Self {
        assert_eq!(mat.nrows(), mat.ncols(), "operator must be square");
        Self { mat }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mat: Mat::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mat: Mat::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn as_mat(&self) -> MatRef<'_, f64> {
        self.mat.as_ref()
    }

    pub fn into_mat(self) -> Mat<f64> {
        self.mat
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.mat[(row, col)]
    }

    pub fn to_complex(&self) -> Mat<c64> {
        Mat::from_fn(self.dim(), self.dim(), |i, j| c64::new(self.mat[(i, j)], 0.0))
    }

    pub fn adjoint(&self) -> Self {
        Self {
            mat: self.mat.transpose().to_owned(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for j in 0..self.dim() {
            for i in 0..self.dim() {
                m = m.max(self.mat[(i, j)].abs());
            }
        }
        m
    }

    /// `max |A - A^T|` over all entries.
    pub fn hermiticity_deviation(&self) -> f64 {
        let n = self.dim();
        let mut dev = 0.0f64;
        for j in 0..n {
            for i in 0..j {
                dev = dev.max((self.mat[(i, j)] - self.mat[(j, i)]).abs());
            }
        }
        dev
    }

    /// Hermitian within `rel_tol * max|A|` (absolute `rel_tol` for the zero operator).
    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        self.hermiticity_deviation() <= rel_tol * self.max_abs().max(1.0)
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        Self {
            mat: &self.mat * &rhs.mat,
        }
    }

    pub fn commutator(&self, rhs: &Self) -> Self {
        Self {
            mat: &self.mat * &rhs.mat - &rhs.mat * &self.mat,
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        Self {
            mat: &self.mat + &rhs.mat,
        }
    }

    pub fn max_abs_diff(&self, rhs: &Self) -> f64 {
        (&self.mat - &rhs.mat).norm_max()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.mat[(i, i)]).sum()
    }
}

/// `b_site` on a product-cutoff basis.
pub fn annihilation_matrix(basis: &FockBasis, site: usize) -> Result<OperatorMatrix> {
    basis.check_site(site)?;
    if !matches!(basis.mode(), BasisMode::ProductCutoff { .. }) {
        return Err(Error::BasisMode {
            expected: "product-cutoff",
        });
    }
    let dim = basis.dim();
    let mut mat = Mat::<f64>::zeros(dim, dim);
    let mut scratch = vec![0u8; basis.sites()];
    for (col, occ) in basis.states().enumerate() {
        let n = occ[site];
        if n == 0 {
            continue;
        }
        scratch.copy_from_slice(occ);
        scratch[site] -= 1;
        let row = basis
            .index_of(&scratch)
            .expect("lowered occupation stays inside the product basis");
        mat[(row, col)] = (n as f64).sqrt();
    }
    Ok(OperatorMatrix { mat })
}

/// `b†_site`, the transpose of [`annihilation_matrix`].
pub fn creation_matrix(basis: &FockBasis, site: usize) -> Result<OperatorMatrix> {
    Ok(annihilation_matrix(basis, site)?.adjoint())
}

/// Occupation `n_site` as a diagonal matrix; valid in either basis mode.
pub fn number_matrix(basis: &FockBasis, site: usize) -> Result<OperatorMatrix> {
    basis.check_site(site)?;
    let dim = basis.dim();
    let mut mat = Mat::<f64>::zeros(dim, dim);
    for (i, occ) in basis.states().enumerate() {
        mat[(i, i)] = occ[site] as f64;
    }
    Ok(OperatorMatrix { mat })
}

/// Orthonormal subspace of a number sector, stored sparsely: each vector has
/// one or two nonzero components.
#[derive(Clone, Debug)]
pub struct SymmetrySubspace {
    parent_dim: usize,
    vectors: Vec<Vec<(usize, f64)>>,
}

impl SymmetrySubspace {
    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub fn parent_dim(&self) -> usize {
        self.parent_dim
    }

    /// Sparse components `(parent index, amplitude)` of basis vector `k`.
    pub fn vector(&self, k: usize) -> &[(usize, f64)] {
        &self.vectors[k]
    }

    /// Columns are the subspace basis vectors expressed in the parent basis.
    pub fn to_dense(&self) -> Mat<f64> {
        let mut p = Mat::zeros(self.parent_dim, self.dim());
        for (k, v) in self.vectors.iter().enumerate() {
            for &(i, a) in v {
                p[(i, k)] = a;
            }
        }
        p
    }

    /// `P^T A P` for an operator on the parent basis.
    pub fn project(&self, op: MatRef<'_, f64>) -> Mat<f64> {
        let d = self.dim();
        Mat::from_fn(d, d, |k, l| {
            let mut acc = 0.0;
            for &(i, a) in &self.vectors[k] {
                for &(j, b) in &self.vectors[l] {
                    acc += a * op[(i, j)] * b;
                }
            }
            acc
        })
    }

    /// Lift subspace coordinates back to the parent basis.
    pub fn unfold(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.parent_dim];
        for (v, &c) in self.vectors.iter().zip(coords) {
            for &(i, a) in v {
                out[i] += a * c;
            }
        }
        out
    }
}

/// The two eigenspaces of the site-reversal map `j -> N-1-j`.
#[derive(Clone, Debug)]
pub struct ReflectionSectors {
    pub even: SymmetrySubspace,
    pub odd: SymmetrySubspace,
}

/// Split a number sector into reflection-even and reflection-odd subspaces.
///
/// Non-palindromic states pair with their mirror image into
/// `(|n> ± |rev n>)/√2`; palindromes are reflection-even on their own.
pub fn reflection_parity_split(basis: &FockBasis) -> Result<ReflectionSectors> {
    if !matches!(basis.mode(), BasisMode::NumberSector { .. }) {
        return Err(Error::BasisMode {
            expected: "fixed-number sector",
        });
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut even = Vec::new();
    let mut odd = Vec::new();
    let mut reversed = vec![0u8; basis.sites()];
    for (i, occ) in basis.states().enumerate() {
        reversed.copy_from_slice(occ);
        reversed.reverse();
        let j = basis
            .index_of(&reversed)
            .expect("reflection preserves the total number");
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => even.push(vec![(i, 1.0)]),
            std::cmp::Ordering::Less => {
                even.push(vec![(i, h), (j, h)]);
                odd.push(vec![(i, h), (j, -h)]);
            }
            std::cmp::Ordering::Greater => {}
        }
    }
    let parent_dim = basis.dim();
    Ok(ReflectionSectors {
        even: SymmetrySubspace {
            parent_dim,
            vectors: even,
        },
        odd: SymmetrySubspace {
            parent_dim,
            vectors: odd,
        },
    })
}
