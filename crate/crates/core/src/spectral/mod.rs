//! Exact diagonalization and chaos indicators: the mean gap ratio ⟨r⟩ and the
//! finite-size information dimension D̃₁, with their random-matrix references.

pub mod rmt;

use faer::{Mat, MatRef, Side};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::{reflection_parity_split, FockBasis, OperatorMatrix, SymmetrySubspace};
use crate::lattice::{build_hamiltonian, CouplingSet, Topology};

/// ⟨r⟩ for the Gaussian orthogonal ensemble.
pub const GOE_MEAN_GAP_RATIO: f64 = 0.5359;
/// ⟨r⟩ for Poissonian (uncorrelated) levels.
pub const POISSON_MEAN_GAP_RATIO: f64 = 0.3863;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Ascending energies with orthonormal eigenvectors stored as columns.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    energies: Vec<f64>,
    eigenvectors: Mat<f64>,
}

impl SpectralDecomposition {
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn eigenvectors(&self) -> MatRef<'_, f64> {
        self.eigenvectors.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn eigenvector(&self, n: usize) -> Vec<f64> {
        self.eigenvectors.col(n).iter().copied().collect()
    }

    /// `max |H - Ψ E Ψ^T|`.
    pub fn reconstruction_residual(&self, h: MatRef<'_, f64>) -> f64 {
        let psi = &self.eigenvectors;
        let scaled = Mat::from_fn(psi.nrows(), psi.ncols(), |i, j| psi[(i, j)] * self.energies[j]);
        (h - &scaled * psi.transpose()).norm_max()
    }

    /// `max |Ψ^T Ψ - I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.dim();
        (self.eigenvectors.transpose() * &self.eigenvectors - Mat::<f64>::identity(n, n)).norm_max()
    }
}

pub fn eigendecompose(h: &OperatorMatrix) -> Result<SpectralDecomposition> {
    if !h.is_hermitian(1e-12) {
        return Err(Error::NotHermitian {
            deviation: h.hermiticity_deviation(),
        });
    }
    eigendecompose_symmetric(h.as_mat())
}

/// Real symmetric eigensolve; the input is trusted to be symmetric.
pub(crate) fn eigendecompose_symmetric(h: MatRef<'_, f64>) -> Result<SpectralDecomposition> {
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let energies = evd.S().column_vector().iter().copied().collect();
    Ok(SpectralDecomposition {
        energies,
        eigenvectors: evd.U().to_owned(),
    })
}

/// Result of a gap-ratio average.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRatio {
    pub mean: f64,
    /// Number of ratios averaged.
    pub ratios: usize,
    /// Ratios set to zero because a spacing fell below `1e-12 * bandwidth`.
    pub degenerate: usize,
}

/// Mean of `r_n = min(s_n / s_{n-1}, s_{n-1} / s_n)` over the central
/// `inner_fraction` of the sorted levels.
///
/// The window drops `floor(n (1 - f) / 2)` levels from each end.
pub fn mean_gap_ratio(energies: &[f64], inner_fraction: f64) -> Result<GapRatio> {
    if !(inner_fraction > 0.0 && inner_fraction <= 1.0) {
        return Err(invalid("inner_fraction", format!("{inner_fraction} not in (0, 1]")));
    }
    let mut levels = energies.to_vec();
    levels.sort_by(f64::total_cmp);
    let n = levels.len();
    let trim = ((n as f64) * (1.0 - inner_fraction) / 2.0).floor() as usize;
    let window = &levels[trim..n - trim];
    if window.len() < 3 {
        return Err(Error::TooFewLevels { levels: window.len() });
    }
    let bandwidth = levels[n - 1] - levels[0];
    let tol = 1e-12 * bandwidth;
    let mut sum = 0.0;
    let mut degenerate = 0;
    let spacings: Vec<f64> = window.windows(2).map(|w| w[1] - w[0]).collect();
    for pair in spacings.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a <= tol || b <= tol {
            degenerate += 1;
            continue;
        }
        sum += a.min(b) / a.max(b);
    }
    let ratios = spacings.len() - 1;
    Ok(GapRatio {
        mean: sum / ratios as f64,
        ratios,
        degenerate,
    })
}

/// Anything with a squared modulus.
pub trait Amplitude {
    fn modulus_sqr(&self) -> f64;
}

impl Amplitude for f64 {
    fn modulus_sqr(&self) -> f64 {
        self * self
    }
}

impl Amplitude for faer::c64 {
    fn modulus_sqr(&self) -> f64 {
        self.norm_sqr()
    }
}

/// `D̃₁ = -(ln 𝒩)^{-1} Σ |ψ_α|² ln |ψ_α|²`.
pub fn information_dimension<A: Amplitude>(amplitudes: &[A], dimension: usize) -> Result<f64> {
    if dimension < 2 {
        return Err(invalid("dimension", "information dimension needs 𝒩 >= 2"));
    }
    let norm_sqr: f64 = amplitudes.iter().map(Amplitude::modulus_sqr).sum();
    if (norm_sqr - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized { norm_sqr });
    }
    let entropy: f64 = amplitudes
        .iter()
        .map(Amplitude::modulus_sqr)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok(entropy / (dimension as f64).ln())
}

/// Indices of the `count` eigenstates whose rescaled energy
/// `(E - E_min) / (E_max - E_min)` lies closest to `target`.
pub fn band_center_window(energies: &[f64], target: f64, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > energies.len() {
        return Err(invalid(
            "count",
            format!("{count} eigenvectors requested from a spectrum of {}", energies.len()),
        ));
    }
    let (lo, hi) = energies
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let width = (hi - lo).max(f64::MIN_POSITIVE);
    let mut order: Vec<usize> = (0..energies.len()).collect();
    order.sort_by(|&a, &b| {
        let da = ((energies[a] - lo) / width - target).abs();
        let db = ((energies[b] - lo) / width - target).abs();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    order.truncate(count);
    order.sort_unstable();
    Ok(order)
}

/// Average D̃₁ of the `count` eigenvectors nearest rescaled energy `target`,
/// with amplitudes taken in the basis the decomposition was computed in and
/// 𝒩 equal to its dimension.
pub fn mean_information_dimension(decomp: &SpectralDecomposition, target: f64, count: usize) -> Result<f64> {
    let picks = band_center_window(decomp.energies(), target, count)?;
    let dim = decomp.dim();
    let mut sum = 0.0;
    for &n in &picks {
        sum += information_dimension(&decomp.eigenvector(n), dim)?;
    }
    Ok(sum / picks.len() as f64)
}

/// Like [`mean_information_dimension`], but for a decomposition computed in a
/// symmetry subspace: eigenvectors are first unfolded to the parent Fock
/// basis, and 𝒩 is the parent dimension.
pub fn mean_information_dimension_unfolded(
    decomp: &SpectralDecomposition,
    subspace: &SymmetrySubspace,
    target: f64,
    count: usize,
) -> Result<f64> {
    if subspace.dim() != decomp.dim() {
        return Err(Error::Shape(format!(
            "decomposition of dimension {} in a subspace of dimension {}",
            decomp.dim(),
            subspace.dim()
        )));
    }
    let picks = band_center_window(decomp.energies(), target, count)?;
    let mut sum = 0.0;
    for &n in &picks {
        let amps = subspace.unfold(&decomp.eigenvector(n));
        sum += information_dimension(&amps, subspace.parent_dim())?;
    }
    Ok(sum / picks.len() as f64)
}

/// Harmonic number `H_x = ψ₀(x + 1) + γ`, valid for non-integer `x`.
pub fn harmonic_number(x: f64) -> f64 {
    statrs::function::gamma::digamma(x + 1.0) + EULER_GAMMA
}

/// GOE expectation `(H_{𝒩/2} - 2 + ln 4) / ln 𝒩` of the information dimension.
pub fn goe_reference_d1(dimension: usize) -> f64 {
    let n = dimension as f64;
    (harmonic_number(n / 2.0) - 2.0 + 4f64.ln()) / n.ln()
}

/// Which reflection eigenspace to diagonalize in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

/// Basis in which eigenvector amplitudes enter D̃₁.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AmplitudeBasis {
    /// Occupation-number states of the full number sector (𝒩 = sector dimension).
    #[default]
    Fock,
    /// Reflection-adapted states `(|n> ± |rev n>)/√2` (𝒩 = parity-block dimension).
    SymmetryAdapted,
}

/// Window settings for the two indicators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndicatorWindow {
    pub inner_fraction: f64,
    pub target_energy: f64,
    pub vector_count: usize,
    #[serde(default)]
    pub amplitude_basis: AmplitudeBasis,
}

impl Default for IndicatorWindow {
    fn default() -> Self {
        Self {
            inner_fraction: 0.7,
            target_energy: 0.5,
            vector_count: 100,
            amplitude_basis: AmplitudeBasis::Fock,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosIndicators {
    pub mean_gap_ratio: f64,
    pub mean_information_dimension: f64,
    pub sector_dim: usize,
    pub parity_dim: usize,
    /// Eigenvectors actually averaged (the requested count clamped to 𝒩).
    pub vectors_used: usize,
    pub degenerate_pairs: usize,
    pub window: IndicatorWindow,
}

/// Hamiltonian of a fixed-number sector restricted to one reflection parity.
pub fn parity_sector_hamiltonian(
    sector: &FockBasis,
    topology: &Topology,
    couplings: &CouplingSet,
    parity: Parity,
) -> Result<(Mat<f64>, SymmetrySubspace)> {
    let h = build_hamiltonian(sector, topology, couplings)?;
    let split = reflection_parity_split(sector)?;
    let sub = match parity {
        Parity::Even => split.even,
        Parity::Odd => split.odd,
    };
    let block = sub.project(h.as_mat());
    Ok((block, sub))
}

/// ⟨r⟩ and ⟨D̃₁⟩ within one parity block of a number sector. Levels are
/// projected onto the parity block first, then trimmed.
pub fn sector_indicators(
    sector: &FockBasis,
    topology: &Topology,
    couplings: &CouplingSet,
    parity: Parity,
    window: IndicatorWindow,
) -> Result<ChaosIndicators> {
    let (block, sub) = parity_sector_hamiltonian(sector, topology, couplings, parity)?;
    let decomp = eigendecompose_symmetric(block.as_ref())?;
    let gap = mean_gap_ratio(decomp.energies(), window.inner_fraction)?;
    let count = window.vector_count.min(decomp.dim());
    let d1 = match window.amplitude_basis {
        AmplitudeBasis::Fock => mean_information_dimension_unfolded(&decomp, &sub, window.target_energy, count)?,
        AmplitudeBasis::SymmetryAdapted => mean_information_dimension(&decomp, window.target_energy, count)?,
    };
    Ok(ChaosIndicators {
        mean_gap_ratio: gap.mean,
        mean_information_dimension: d1,
        sector_dim: sub.parent_dim(),
        parity_dim: sub.dim(),
        vectors_used: count,
        degenerate_pairs: gap.degenerate,
        window,
    })
}
