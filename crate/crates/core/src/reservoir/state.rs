use faer::{c64, Mat, MatRef, Side};

use crate::error::{invalid, Error, Result};
use crate::fock::{BasisMode, FockBasis, OperatorMatrix};
use crate::spectral::eigendecompose;

use super::observables::ObservableSet;

pub const TRACE_TOLERANCE: f64 = 1e-10;
pub const HERMITICITY_TOLERANCE: f64 = 1e-10;
/// Eigenvalues in `[-POSITIVITY_TOLERANCE, 0)` are clipped, anything lower aborts.
pub const POSITIVITY_TOLERANCE: f64 = 1e-9;
pub const IMAGINARY_TOLERANCE: f64 = 1e-8;

/// Single-site input state `√s |0> + √(1-s) |1>`, padded with zeros up to `cutoff`.
pub fn encode_input(s: f64, cutoff: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InputRange { value: s, range: "[0, 1]" });
    }
    if cutoff == 0 {
        return Err(invalid("cutoff", "input encoding needs at least the levels |0> and |1>"));
    }
    let mut psi = vec![0.0; cutoff + 1];
    psi[0] = s.sqrt();
    psi[1] = (1.0 - s).sqrt();
    Ok(psi)
}

/// Density matrix of the `N`-site reservoir in the product-cutoff basis.
#[derive(Clone, Debug)]
pub struct ReservoirState {
    sites: usize,
    cutoff: usize,
    rho: Mat<c64>,
}

impl ReservoirState {
    /// All sites empty.
    pub fn vacuum(sites: usize, cutoff: usize) -> Result<Self> {
        let dim = product_dim(sites, cutoff)?;
        let mut rho = Mat::zeros(dim, dim);
        rho[(0, 0)] = c64::new(1.0, 0.0);
        Ok(Self { sites, cutoff, rho })
    }

    /// Wraps a matrix after checking shape and the density-matrix contract.
    pub fn from_matrix(sites: usize, cutoff: usize, rho: Mat<c64>) -> Result<Self> {
        let dim = product_dim(sites, cutoff)?;
        if rho.nrows() != dim || rho.ncols() != dim {
            return Err(Error::Shape(format!(
                "density matrix is {}x{}, basis has {dim} states",
                rho.nrows(),
                rho.ncols()
            )));
        }
        let state = Self { sites, cutoff, rho };
        state.validate()?;
        Ok(state)
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn rho(&self) -> MatRef<'_, c64> {
        self.rho.as_ref()
    }

    pub fn trace(&self) -> c64 {
        trace(self.rho.as_ref())
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        min_eigenvalue(self.rho.as_ref())
    }

    /// Trace, Hermiticity, and positivity within the module tolerances.
    pub fn validate(&self) -> Result<()> {
        check_density(self.rho.as_ref(), true)
    }

    pub fn into_matrix(self) -> Mat<c64> {
        self.rho
    }
}

fn product_dim(sites: usize, cutoff: usize) -> Result<usize> {
    if sites == 0 {
        return Err(invalid("sites", "at least one site is required"));
    }
    (cutoff + 1)
        .checked_pow(sites as u32)
        .filter(|&d| d <= crate::fock::DEFAULT_MAX_STATES)
        .ok_or(Error::DimensionOverflow {
            dimension: (cutoff as u128 + 1).saturating_pow(sites as u32),
            limit: crate::fock::DEFAULT_MAX_STATES,
        })
}

pub(crate) fn trace(m: MatRef<'_, c64>) -> c64 {
    (0..m.nrows()).map(|i| m[(i, i)]).sum()
}

pub(crate) fn hermiticity_deviation(m: MatRef<'_, c64>) -> f64 {
    let mut dev = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..=j {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

pub(crate) fn min_eigenvalue(m: MatRef<'_, c64>) -> Result<f64> {
    let values = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    Ok(values.into_iter().fold(f64::INFINITY, f64::min))
}

pub(crate) fn check_density(m: MatRef<'_, c64>, positivity: bool) -> Result<()> {
    let tr = trace(m);
    if (tr.re - 1.0).abs() > TRACE_TOLERANCE || tr.im.abs() > TRACE_TOLERANCE {
        return Err(Error::InvalidState {
            property: "unit trace",
            detail: format!("trace = {tr}"),
        });
    }
    let dev = hermiticity_deviation(m);
    if dev > HERMITICITY_TOLERANCE {
        return Err(Error::InvalidState {
            property: "hermiticity",
            detail: format!("max |rho - rho^dagger| = {dev:.3e}"),
        });
    }
    if positivity {
        let min = min_eigenvalue(m)?;
        if min < -POSITIVITY_TOLERANCE {
            return Err(Error::InvalidState {
                property: "positivity",
                detail: format!("minimum eigenvalue {min:.3e}"),
            });
        }
    }
    Ok(())
}

/// Clips eigenvalues in `[-POSITIVITY_TOLERANCE, 0)` to zero, without
/// renormalizing. Returns the most negative eigenvalue seen.
pub(crate) fn clip_negative(m: &mut Mat<c64>) -> Result<f64> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let min = s.iter().map(|x| x.re).fold(f64::INFINITY, f64::min);
    if min < -POSITIVITY_TOLERANCE {
        return Err(Error::InvalidState {
            property: "positivity",
            detail: format!("minimum eigenvalue {min:.3e}"),
        });
    }
    if min < 0.0 {
        let u = evd.U();
        let scaled = Mat::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] * s[j].re.max(0.0));
        *m = &scaled * u.adjoint();
    }
    Ok(min)
}

/// `Tr_1 rho` on sites `2..N`, in the lexicographic reduced basis.
pub fn partial_trace_site1(state: &ReservoirState) -> Mat<c64> {
    let d = state.cutoff + 1;
    let dr = state.dim() / d;
    let rho = &state.rho;
    Mat::from_fn(dr, dr, |r, c| (0..d).map(|a| rho[(a * dr + r, a * dr + c)]).sum())
}

/// `|psi><psi| ⊗ sigma` with site 1 most significant.
pub fn replace_site1(psi: &[f64], sigma: MatRef<'_, c64>) -> Mat<c64> {
    let dr = sigma.nrows();
    let d = psi.len();
    Mat::from_fn(d * dr, d * dr, |i, j| sigma[(i % dr, j % dr)] * (psi[i / dr] * psi[j / dr]))
}

/// First `cols` columns of `Ψ diag(exp(-i E t)) Ψ^T`.
pub(crate) fn unitary_from_spectrum(vectors: MatRef<'_, f64>, energies: &[f64], t: f64, cols: usize) -> Mat<c64> {
    let n = vectors.nrows();
    let k = vectors.ncols();
    let left = Mat::from_fn(n, k, |i, j| c64::cis(-energies[j] * t) * vectors[(i, j)]);
    let right = Mat::from_fn(k, cols, |i, j| c64::new(vectors[(j, i)], 0.0));
    &left * &right
}

/// Dense one-interval propagator `exp(-i H Δt / V)` for the reference path.
#[derive(Clone, Debug)]
pub struct PropagatorCache {
    sites: usize,
    cutoff: usize,
    dt: f64,
    virtual_nodes: usize,
    step: Mat<c64>,
}

impl PropagatorCache {
    pub fn new(basis: &FockBasis, hamiltonian: &OperatorMatrix, dt: f64, virtual_nodes: usize) -> Result<Self> {
        let BasisMode::ProductCutoff { cutoff } = basis.mode() else {
            return Err(Error::BasisMode { expected: "product-cutoff" });
        };
        if hamiltonian.dim() != basis.dim() {
            return Err(Error::Shape(format!(
                "Hamiltonian of dimension {} on a basis of {} states",
                hamiltonian.dim(),
                basis.dim()
            )));
        }
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(invalid("dt", format!("{dt} must be finite and non-negative")));
        }
        if virtual_nodes == 0 {
            return Err(invalid("virtual_nodes", "at least one virtual node is required"));
        }
        let decomp = eigendecompose(hamiltonian)?;
        let step = unitary_from_spectrum(decomp.eigenvectors(), decomp.energies(), dt / virtual_nodes as f64, basis.dim());
        Ok(Self {
            sites: basis.sites(),
            cutoff,
            dt,
            virtual_nodes,
            step,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn virtual_nodes(&self) -> usize {
        self.virtual_nodes
    }

    /// `exp(-i H Δt / V)`.
    pub fn step_unitary(&self) -> MatRef<'_, c64> {
        self.step.as_ref()
    }

    /// `max |U^† U - I|`.
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.step.nrows();
        (self.step.adjoint() * &self.step - Mat::<c64>::identity(n, n)).norm_max()
    }
}

/// One erase-and-write step on the full density matrix. Returns the new state
/// and the `V` states at times `v Δt / V`, `v = 1..=V`; the last one equals the
/// new state.
pub fn inject_and_evolve(
    prev: &ReservoirState,
    s: f64,
    cache: &PropagatorCache,
) -> Result<(ReservoirState, Vec<ReservoirState>)> {
    if prev.sites != cache.sites || prev.cutoff != cache.cutoff {
        return Err(Error::Shape(format!(
            "state on (N={}, n_c={}) but propagator built for (N={}, n_c={})",
            prev.sites, prev.cutoff, cache.sites, cache.cutoff
        )));
    }
    let psi = encode_input(s, prev.cutoff)?;
    let sigma = partial_trace_site1(prev);
    let mut rho = replace_site1(&psi, sigma.as_ref());
    let u = &cache.step;
    let mut states = Vec::with_capacity(cache.virtual_nodes);
    for _ in 0..cache.virtual_nodes {
        rho = u * &rho * u.adjoint();
        states.push(ReservoirState {
            sites: prev.sites,
            cutoff: prev.cutoff,
            rho: rho.clone(),
        });
    }
    let last = states.last().expect("at least one virtual node").clone();
    last.validate()?;
    Ok((last, states))
}

/// Expectation values `Tr[O_i rho_v]`, virtual-node-major.
pub fn measure_features(states: &[ReservoirState], observables: &ObservableSet) -> Result<Vec<f64>> {
    let Some(first) = states.first() else {
        return Ok(Vec::new());
    };
    let basis = FockBasis::product(first.sites, first.cutoff)?;
    let entries = observables
        .items()
        .iter()
        .map(|o| o.entries(&basis))
        .collect::<Result<Vec<_>>>()?;
    let mut row = Vec::with_capacity(states.len() * entries.len());
    for state in states {
        if state.sites != first.sites || state.cutoff != first.cutoff {
            return Err(Error::Shape("states on different lattices".into()));
        }
        for ops in &entries {
            let value: c64 = ops.iter().map(|&(r, c, v)| state.rho[(c, r)] * v).sum();
            if value.im.abs() > IMAGINARY_TOLERANCE {
                return Err(Error::ComplexExpectation { imag: value.im });
            }
            row.push(value.re);
        }
    }
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_hamiltonian, CouplingSet, Topology};
    use approx::assert_relative_eq;

    fn c(re: f64) -> c64 {
        c64::new(re, 0.0)
    }

    #[test]
    fn encoding_endpoints() {
        assert_eq!(encode_input(0.0, 3).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(encode_input(1.0, 1).unwrap(), vec![1.0, 0.0]);
        let half = encode_input(0.5, 2).unwrap();
        assert_relative_eq!(half[0], std::f64::consts::FRAC_1_SQRT_2);
        assert_relative_eq!(half[1], std::f64::consts::FRAC_1_SQRT_2);
        assert!(matches!(encode_input(1.5, 2), Err(Error::InputRange { .. })));
        assert!(encode_input(-0.1, 2).is_err());
    }

    #[test]
    fn partial_trace_of_product() {
        let sigma = Mat::from_fn(3, 3, |i, j| if i == j { c([0.5, 0.3, 0.2][i]) } else { c64::new(0.01, 0.02 * (i as f64 - j as f64)) });
        let psi = encode_input(0.3, 2).unwrap();
        let rho = replace_site1(&psi, sigma.as_ref());
        let state = ReservoirState {
            sites: 2,
            cutoff: 2,
            rho,
        };
        assert!((partial_trace_site1(&state) - &sigma).norm_max() < 1e-15);
    }

    #[test]
    fn partial_trace_of_mixed_and_bell() {
        let mixed = ReservoirState {
            sites: 2,
            cutoff: 1,
            rho: Mat::from_fn(4, 4, |i, j| if i == j { c(0.25) } else { c(0.0) }),
        };
        let red = partial_trace_site1(&mixed);
        assert!((red - Mat::from_fn(2, 2, |i, j| if i == j { c(0.5) } else { c(0.0) })).norm_max() < 1e-15);

        // (|01> + |10>)/√2 in order 00, 01, 10, 11
        let v = [0.0, 1.0, 1.0, 0.0].map(|x: f64| x * std::f64::consts::FRAC_1_SQRT_2);
        let bell = ReservoirState::from_matrix(2, 1, Mat::from_fn(4, 4, |i, j| c(v[i] * v[j]))).unwrap();
        let red = partial_trace_site1(&bell);
        assert_relative_eq!(red[(0, 0)].re, 0.5, epsilon = 1e-15);
        assert_relative_eq!(red[(1, 1)].re, 0.5, epsilon = 1e-15);
        assert_eq!(red[(0, 1)], c(0.0));
    }

    #[test]
    fn features_of_simple_states() {
        let obs = ObservableSet::standard(2);
        let mixed = ReservoirState {
            sites: 2,
            cutoff: 1,
            rho: Mat::from_fn(4, 4, |i, j| if i == j { c(0.25) } else { c(0.0) }),
        };
        let row = measure_features(&[mixed], &obs).unwrap();
        // hop_0_0 = 2 <n_0> = 1, dens_0_0 = <n_0^2> = 1/2
        assert_relative_eq!(row[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(row[3], 0.5, epsilon = 1e-15);

        let vac = ReservoirState::vacuum(2, 1).unwrap();
        assert!(measure_features(&[vac], &obs).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_complex_expectation() {
        let obs = ObservableSet::from_items(
            2,
            vec![super::super::observables::Observable {
                family: super::super::observables::Family::Hop,
                i: 0,
                j: 1,
            }],
        )
        .unwrap();
        let mut rho = Mat::<c64>::zeros(4, 4);
        rho[(0, 0)] = c(1.0);
        rho[(1, 2)] = c64::new(0.0, 0.1);
        let broken = ReservoirState { sites: 2, cutoff: 1, rho };
        assert!(matches!(measure_features(&[broken], &obs), Err(Error::ComplexExpectation { .. })));
    }

    #[test]
    fn validation_catches_violations() {
        let mut rho = Mat::<c64>::zeros(2, 2);
        rho[(0, 0)] = c(0.9);
        assert!(ReservoirState::from_matrix(1, 1, rho.clone()).is_err());
        rho[(1, 1)] = c(0.1);
        rho[(0, 1)] = c(0.5);
        rho[(1, 0)] = c(0.5);
        // eigenvalues 0.5 ± sqrt(0.16 + 0.25): negative
        let err = ReservoirState::from_matrix(1, 1, rho).unwrap_err();
        assert!(matches!(err, Error::InvalidState { property: "positivity", .. }));
    }

    #[test]
    fn clipping_small_negative_eigenvalues() {
        let mut m = Mat::from_fn(2, 2, |i, j| if i == j { c([1.0 + 5e-10, -5e-10][i]) } else { c(0.0) });
        let min = clip_negative(&mut m).unwrap();
        assert_relative_eq!(min, -5e-10, epsilon = 1e-13);
        assert!(min_eigenvalue(m.as_ref()).unwrap() >= 0.0);
        let mut bad = Mat::from_fn(2, 2, |i, j| if i == j { c([1.1, -0.1][i]) } else { c(0.0) });
        assert!(clip_negative(&mut bad).is_err());
    }

    #[test]
    fn zero_dt_is_identity() {
        let basis = FockBasis::product(2, 2).unwrap();
        let topo = Topology::open_chain(2).unwrap();
        let h = build_hamiltonian(&basis, &topo, &CouplingSet::homogeneous(&topo, 0.3, 1.0)).unwrap();
        let cache = PropagatorCache::new(&basis, &h, 0.0, 4).unwrap();
        let prev = ReservoirState::vacuum(2, 2).unwrap();
        let (next, states) = inject_and_evolve(&prev, 0.25, &cache).unwrap();
        assert_eq!(states.len(), 4);
        let psi = encode_input(0.25, 2).unwrap();
        let expected = replace_site1(&psi, partial_trace_site1(&prev).as_ref());
        assert!((next.rho() - expected).norm_max() < 1e-15);
    }

    #[test]
    fn mismatched_cache_is_rejected() {
        let basis = FockBasis::product(2, 1).unwrap();
        let topo = Topology::open_chain(2).unwrap();
        let h = build_hamiltonian(&basis, &topo, &CouplingSet::homogeneous(&topo, 1.0, 1.0)).unwrap();
        let cache = PropagatorCache::new(&basis, &h, 1.0, 2).unwrap();
        let prev = ReservoirState::vacuum(2, 2).unwrap();
        assert!(matches!(inject_and_evolve(&prev, 0.5, &cache), Err(Error::Shape(_))));
    }
}
