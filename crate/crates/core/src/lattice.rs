//! Coupling graphs, tunneling disorder, and the Bose-Hubbard Hamiltonian
//!
//! `H = -Σ_edges J_e (b†_j b_k + h.c.) + (U/2) Σ_j n_j (n_j - 1)`.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fock::{BasisMode, FockBasis, OperatorMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    OpenChain,
    PeriodicChain,
    AllToAll,
}

impl TopologyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TopologyKind::OpenChain => "open-chain",
            TopologyKind::PeriodicChain => "periodic-chain",
            TopologyKind::AllToAll => "all-to-all",
        }
    }
}

impl std::fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    kind: TopologyKind,
    sites: usize,
    edges: Vec<(usize, usize)>,
}

impl Topology {
    /// Periodic chains need at least three sites so that the wrap-around
    /// bond is distinct from the bulk ones.
    pub fn new(kind: TopologyKind, sites: usize) -> Result<Self> {
        if sites == 0 {
            return Err(invalid("sites", "must be at least 1"));
        }
        let edges = match kind {
            TopologyKind::OpenChain => (0..sites - 1).map(|j| (j, j + 1)).collect(),
            TopologyKind::PeriodicChain => {
                if sites < 3 {
                    return Err(invalid("sites", "periodic chain needs at least 3 sites"));
                }
                (0..sites).map(|j| (j, (j + 1) % sites)).collect()
            }
            TopologyKind::AllToAll => {
                let mut e = Vec::with_capacity(sites * (sites - 1) / 2);
                for j in 0..sites {
                    for k in j + 1..sites {
                        e.push((j, k));
                    }
                }
                e
            }
        };
        Ok(Self { kind, sites, edges })
    }

    pub fn open_chain(sites: usize) -> Result<Self> {
        Self::new(TopologyKind::OpenChain, sites)
    }

    pub fn periodic_chain(sites: usize) -> Result<Self> {
        Self::new(TopologyKind::PeriodicChain, sites)
    }

    pub fn all_to_all(sites: usize) -> Result<Self> {
        Self::new(TopologyKind::AllToAll, sites)
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

/// Per-edge tunneling amplitudes plus the on-site interaction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSet {
    hopping: Vec<f64>,
    interaction: f64,
    disorder: f64,
}

impl CouplingSet {
    pub fn homogeneous(topology: &Topology, hopping: f64, interaction: f64) -> Self {
        Self {
            hopping: vec![hopping; topology.edges().len()],
            interaction,
            disorder: 0.0,
        }
    }

    /// Explicit per-edge amplitudes, in the order of [`Topology::edges`].
    pub fn from_edges(topology: &Topology, hopping: Vec<f64>, interaction: f64) -> Result<Self> {
        if hopping.len() != topology.edges().len() {
            return Err(Error::Shape(format!(
                "{} couplings for {} edges",
                hopping.len(),
                topology.edges().len()
            )));
        }
        Ok(Self {
            hopping,
            interaction,
            disorder: 0.0,
        })
    }

    pub fn hopping(&self) -> &[f64] {
        &self.hopping
    }

    pub fn interaction(&self) -> f64 {
        self.interaction
    }

    pub fn disorder(&self) -> f64 {
        self.disorder
    }
}

/// Independent uniform draws in `[J(1-δ), J(1+δ)]`, one per edge.
pub fn sample_disordered_couplings(
    hopping: f64,
    disorder: f64,
    interaction: f64,
    topology: &Topology,
    seed: u64,
) -> Result<CouplingSet> {
    if !(hopping > 0.0) {
        return Err(invalid("hopping", "disordered couplings need J > 0"));
    }
    if !(0.0..1.0).contains(&disorder) {
        return Err(invalid("disorder", format!("{disorder} not in [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (hopping * (1.0 - disorder), hopping * (1.0 + disorder));
    let hops = topology
        .edges()
        .iter()
        .map(|_| {
            if disorder == 0.0 {
                hopping
            } else {
                rng.random_range(lo..=hi)
            }
        })
        .collect();
    Ok(CouplingSet {
        hopping: hops,
        interaction,
        disorder,
    })
}

/// Nonzero matrix elements `(row, col, value)` of the tunneling term.
///
/// Transitions that would push a site above the product cutoff are dropped.
pub fn hopping_entries(basis: &FockBasis, topology: &Topology, couplings: &CouplingSet) -> Result<Vec<(usize, usize, f64)>> {
    check_compat(basis, topology, couplings)?;
    let max_occ = basis.max_occupation() as u8;
    let mut entries = Vec::new();
    let mut scratch = vec![0u8; basis.sites()];
    for (col, occ) in basis.states().enumerate() {
        for (&(j, k), &amp) in topology.edges().iter().zip(couplings.hopping()) {
            if amp == 0.0 {
                continue;
            }
            // b†_j b_k and b†_k b_j
            for (to, from) in [(j, k), (k, j)] {
                if occ[from] == 0 || occ[to] >= max_occ {
                    continue;
                }
                scratch.copy_from_slice(occ);
                scratch[from] -= 1;
                scratch[to] += 1;
                let row = basis
                    .index_of(&scratch)
                    .expect("hop stays inside the basis");
                let value = -amp * ((occ[from] as f64) * (occ[to] as f64 + 1.0)).sqrt();
                entries.push((row, col, value));
            }
        }
    }
    Ok(entries)
}

/// Diagonal `(U/2) n (n - 1)` summed over sites, one value per basis state.
pub fn interaction_diagonal(basis: &FockBasis, interaction: f64) -> Vec<f64> {
    basis
        .states()
        .map(|occ| {
            occ.iter()
                .map(|&n| {
                    let n = n as f64;
                    0.5 * interaction * n * (n - 1.0)
                })
                .sum()
        })
        .collect()
}

pub fn hopping_term(basis: &FockBasis, topology: &Topology, couplings: &CouplingSet) -> Result<OperatorMatrix> {
    let dim = basis.dim();
    let mut mat = Mat::<f64>::zeros(dim, dim);
    for (r, c, v) in hopping_entries(basis, topology, couplings)? {
        mat[(r, c)] += v;
    }
    Ok(OperatorMatrix::from_mat(mat))
}

pub fn interaction_term(basis: &FockBasis, interaction: f64) -> OperatorMatrix {
    let diag = interaction_diagonal(basis, interaction);
    let mut mat = Mat::<f64>::zeros(basis.dim(), basis.dim());
    for (i, v) in diag.into_iter().enumerate() {
        mat[(i, i)] = v;
    }
    OperatorMatrix::from_mat(mat)
}

/// Dense Bose-Hubbard Hamiltonian on `basis`. Requires `U > 0`.
pub fn build_hamiltonian(basis: &FockBasis, topology: &Topology, couplings: &CouplingSet) -> Result<OperatorMatrix> {
    if !(couplings.interaction() > 0.0) {
        return Err(invalid("interaction", "on-site interaction U must be positive"));
    }
    let mut h = hopping_term(basis, topology, couplings)?.into_mat();
    for (i, v) in interaction_diagonal(basis, couplings.interaction()).into_iter().enumerate() {
        h[(i, i)] += v;
    }
    Ok(OperatorMatrix::from_mat(h))
}

fn check_compat(basis: &FockBasis, topology: &Topology, couplings: &CouplingSet) -> Result<()> {
    if basis.sites() != topology.sites() {
        return Err(Error::SiteMismatch {
            basis: basis.sites(),
            topology: topology.sites(),
        });
    }
    if couplings.hopping().len() != topology.edges().len() {
        return Err(Error::Shape(format!(
            "{} couplings for {} edges",
            couplings.hopping().len(),
            topology.edges().len()
        )));
    }
    if let BasisMode::ProductCutoff { cutoff } = basis.mode() {
        debug_assert!(cutoff <= u8::MAX as usize);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::number_matrix;
    use approx::assert_relative_eq;

    #[test]
    fn edge_counts() {
        assert_eq!(Topology::open_chain(5).unwrap().edges().len(), 4);
        let p = Topology::periodic_chain(5).unwrap();
        assert_eq!(p.edges().len(), 5);
        assert!(p.edges().contains(&(4, 0)));
        assert_eq!(Topology::all_to_all(5).unwrap().edges().len(), 10);
        assert!(Topology::periodic_chain(2).is_err());
        assert!(Topology::open_chain(1).unwrap().edges().is_empty());
    }

    #[test]
    fn zero_disorder_is_homogeneous() {
        let t = Topology::open_chain(6).unwrap();
        let c = sample_disordered_couplings(0.7, 0.0, 1.0, &t, 3).unwrap();
        assert!(c.hopping().iter().all(|&j| j == 0.7));
    }

    #[test]
    fn disorder_draws_in_interval_and_reproducible() {
        let t = Topology::all_to_all(6).unwrap();
        let a = sample_disordered_couplings(1.0, 0.3, 1.0, &t, 42).unwrap();
        let b = sample_disordered_couplings(1.0, 0.3, 1.0, &t, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.hopping().iter().all(|&j| (0.7..=1.3).contains(&j)));
        let c = sample_disordered_couplings(1.0, 0.3, 1.0, &t, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn disorder_parameter_checks() {
        let t = Topology::open_chain(3).unwrap();
        assert!(sample_disordered_couplings(1.0, 1.0, 1.0, &t, 0).is_err());
        assert!(sample_disordered_couplings(1.0, -0.1, 1.0, &t, 0).is_err());
        assert!(sample_disordered_couplings(0.0, 0.1, 1.0, &t, 0).is_err());
    }

    #[test]
    fn single_site_is_interaction_only() {
        let b = FockBasis::product(1, 2).unwrap();
        let t = Topology::open_chain(1).unwrap();
        let h = build_hamiltonian(&b, &t, &CouplingSet::homogeneous(&t, 1.0, 2.0)).unwrap();
        let diag: Vec<f64> = (0..3).map(|i| h.get(i, i)).collect();
        assert_eq!(diag, vec![0.0, 0.0, 2.0]);
        assert_eq!(h.hermiticity_deviation(), 0.0);
    }

    #[test]
    fn single_boson_two_sites_spectrum() {
        // {(0,1), (1,0)} block is [[0,-J],[-J,0]] -> eigenvalues ±J
        let b = FockBasis::number_sector(2, 1).unwrap();
        let t = Topology::open_chain(2).unwrap();
        let h = build_hamiltonian(&b, &t, &CouplingSet::homogeneous(&t, 1.0, 3.7)).unwrap();
        assert_eq!(h.get(0, 1), -1.0);
        assert_eq!(h.get(1, 0), -1.0);
        let evals = h.as_mat().self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        assert_relative_eq!(evals[0], -1.0, epsilon = 1e-14);
        assert_relative_eq!(evals[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn rejects_mismatch_and_nonpositive_u() {
        let b = FockBasis::product(3, 1).unwrap();
        let t = Topology::open_chain(4).unwrap();
        let c = CouplingSet::homogeneous(&t, 1.0, 1.0);
        assert!(matches!(build_hamiltonian(&b, &t, &c), Err(Error::SiteMismatch { .. })));
        let t3 = Topology::open_chain(3).unwrap();
        assert!(build_hamiltonian(&b, &t3, &CouplingSet::homogeneous(&t3, 1.0, 0.0)).is_err());
        assert!(build_hamiltonian(&b, &t3, &CouplingSet::homogeneous(&t3, 1.0, -1.0)).is_err());
    }

    #[test]
    fn sector_hamiltonian_conserves_number() {
        let b = FockBasis::number_sector(4, 4).unwrap();
        for kind in [TopologyKind::OpenChain, TopologyKind::PeriodicChain, TopologyKind::AllToAll] {
            let t = Topology::new(kind, 4).unwrap();
            let h = build_hamiltonian(&b, &t, &CouplingSet::homogeneous(&t, 0.8, 1.0)).unwrap();
            let mut total = OperatorMatrix::zeros(b.dim());
            for s in 0..4 {
                total = total.add(&number_matrix(&b, s).unwrap());
            }
            assert!(h.commutator(&total).max_abs() < 1e-12);
            assert!(h.is_hermitian(1e-12));
        }
    }

    #[test]
    fn product_hamiltonian_conserves_number() {
        let b = FockBasis::product(3, 3).unwrap();
        let t = Topology::periodic_chain(3).unwrap();
        let h = build_hamiltonian(&b, &t, &CouplingSet::homogeneous(&t, 0.4, 1.0)).unwrap();
        for (r, c) in (0..b.dim()).flat_map(|r| (0..b.dim()).map(move |c| (r, c))) {
            if h.get(r, c) != 0.0 {
                assert_eq!(b.total_number(r), b.total_number(c));
            }
        }
    }

    fn reversal_permutation(basis: &FockBasis) -> OperatorMatrix {
        let mut p = Mat::<f64>::zeros(basis.dim(), basis.dim());
        for (i, occ) in basis.states().enumerate() {
            let mut rev = occ.to_vec();
            rev.reverse();
            p[(basis.index_of(&rev).unwrap(), i)] = 1.0;
        }
        OperatorMatrix::from_mat(p)
    }

    #[test]
    fn reflection_covariance() {
        let b = FockBasis::product(4, 2).unwrap();
        let p = reversal_permutation(&b);
        for kind in [TopologyKind::OpenChain, TopologyKind::PeriodicChain] {
            let t = Topology::new(kind, 4).unwrap();
            let h = build_hamiltonian(&b, &t, &CouplingSet::homogeneous(&t, 0.9, 1.0)).unwrap();
            assert!(h.commutator(&p).max_abs() < 1e-12, "{kind}");
        }
    }

    #[test]
    fn linear_in_hopping_and_interaction() {
        let b = FockBasis::product(3, 2).unwrap();
        let t = Topology::open_chain(3).unwrap();
        let c = CouplingSet::homogeneous(&t, 0.3, 1.7);
        let h = build_hamiltonian(&b, &t, &c).unwrap();
        let parts = hopping_term(&b, &t, &c).unwrap().add(&interaction_term(&b, 1.7));
        assert_eq!(h.max_abs_diff(&parts), 0.0);
    }

    #[test]
    fn zero_hopping_is_diagonal() {
        let b = FockBasis::product(3, 3).unwrap();
        let t = Topology::all_to_all(3).unwrap();
        let h = build_hamiltonian(&b, &t, &CouplingSet::homogeneous(&t, 0.0, 1.0)).unwrap();
        for r in 0..b.dim() {
            for c in 0..b.dim() {
                if r != c {
                    assert_eq!(h.get(r, c), 0.0);
                }
            }
        }
    }
}
