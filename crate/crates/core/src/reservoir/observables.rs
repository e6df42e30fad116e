use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{FockBasis, OperatorMatrix};

/// Observable family of the readout layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `a†_i a_j + a†_j a_i`; equals `2 n_i` on the diagonal.
    Hop,
    /// `n_i n_j`; equals `n_i²` on the diagonal.
    Dens,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Hop => "hop",
            Family::Dens => "dens",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observable {
    pub family: Family,
    pub i: usize,
    pub j: usize,
}

impl Observable {
    pub fn label(&self) -> String {
        format!("{}_{}_{}", self.family.as_str(), self.i, self.j)
    }

    /// Nonzero elements `(row, col, value)` in `basis`.
    ///
    /// Works in either basis mode since both families conserve the total
    /// number; transitions above the cutoff are dropped.
    pub fn entries(&self, basis: &FockBasis) -> Result<Vec<(usize, usize, f64)>> {
        for site in [self.i, self.j] {
            if site >= basis.sites() {
                return Err(Error::SiteOutOfRange {
                    site,
                    sites: basis.sites(),
                });
            }
        }
        let max_occ = basis.max_occupation() as u8;
        let mut out = Vec::new();
        let mut scratch = vec![0u8; basis.sites()];
        for (col, occ) in basis.states().enumerate() {
            match self.family {
                Family::Dens => {
                    let v = occ[self.i] as f64 * occ[self.j] as f64;
                    if v != 0.0 {
                        out.push((col, col, v));
                    }
                }
                Family::Hop if self.i == self.j => {
                    let v = 2.0 * occ[self.i] as f64;
                    if v != 0.0 {
                        out.push((col, col, v));
                    }
                }
                Family::Hop => {
                    for (to, from) in [(self.i, self.j), (self.j, self.i)] {
                        if occ[from] == 0 || occ[to] >= max_occ {
                            continue;
                        }
                        scratch.copy_from_slice(occ);
                        scratch[from] -= 1;
                        scratch[to] += 1;
                        let row = basis.index_of(&scratch).expect("hop stays inside the basis");
                        out.push((row, col, (occ[from] as f64 * (occ[to] as f64 + 1.0)).sqrt()));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn matrix(&self, basis: &FockBasis) -> Result<OperatorMatrix> {
        let mut mat = Mat::<f64>::zeros(basis.dim(), basis.dim());
        for (r, c, v) in self.entries(basis)? {
            mat[(r, c)] += v;
        }
        Ok(OperatorMatrix::from_mat(mat))
    }
}

/// Ordered readout observables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableSet {
    sites: usize,
    items: Vec<Observable>,
}

impl ObservableSet {
    /// Both families over all pairs `i <= j`: hop pairs first, then dens pairs,
    /// each in lexicographic pair order. `M = N (N + 1)`.
    pub fn standard(sites: usize) -> Self {
        let mut items = Vec::with_capacity(sites * (sites + 1));
        for family in [Family::Hop, Family::Dens] {
            for i in 0..sites {
                for j in i..sites {
                    items.push(Observable { family, i, j });
                }
            }
        }
        Self { sites, items }
    }

    pub fn from_items(sites: usize, items: Vec<Observable>) -> Result<Self> {
        if let Some(bad) = items.iter().find(|o| o.i >= sites || o.j >= sites) {
            return Err(Error::SiteOutOfRange {
                site: bad.i.max(bad.j),
                sites,
            });
        }
        Ok(Self { sites, items })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Observable] {
        &self.items
    }

    pub fn labels(&self) -> Vec<String> {
        self.items.iter().map(Observable::label).collect()
    }

    pub fn matrices(&self, basis: &FockBasis) -> Result<Vec<OperatorMatrix>> {
        if basis.sites() != self.sites {
            return Err(Error::Shape(format!(
                "observables for {} sites, basis has {}",
                self.sites,
                basis.sites()
            )));
        }
        self.items.iter().map(|o| o.matrix(basis)).collect()
    }

    /// Relabels sites through `map[old] = new`.
    pub(crate) fn relabeled(&self, map: &[usize]) -> Self {
        let items = self
            .items
            .iter()
            .map(|o| {
                let (a, b) = (map[o.i], map[o.j]);
                Observable {
                    family: o.family,
                    i: a.min(b),
                    j: a.max(b),
                }
            })
            .collect();
        Self {
            sites: self.sites,
            items,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{annihilation_matrix, creation_matrix, number_matrix};

    #[test]
    fn standard_count() {
        assert_eq!(ObservableSet::standard(5).len(), 30);
        assert_eq!(ObservableSet::standard(1).len(), 2);
        let set = ObservableSet::standard(2);
        assert_eq!(set.labels(), ["hop_0_0", "hop_0_1", "hop_1_1", "dens_0_0", "dens_0_1", "dens_1_1"]);
    }

    #[test]
    fn matrices_match_ladder_products() {
        let basis = FockBasis::product(3, 2).unwrap();
        let b: Vec<_> = (0..3).map(|s| annihilation_matrix(&basis, s).unwrap()).collect();
        let bd: Vec<_> = (0..3).map(|s| creation_matrix(&basis, s).unwrap()).collect();
        let n: Vec<_> = (0..3).map(|s| number_matrix(&basis, s).unwrap()).collect();
        let set = ObservableSet::standard(3);
        for (o, m) in set.items().iter().zip(set.matrices(&basis).unwrap()) {
            let expected = match o.family {
                Family::Hop => bd[o.i].matmul(&b[o.j]).add(&bd[o.j].matmul(&b[o.i])),
                Family::Dens => n[o.i].matmul(&n[o.j]),
            };
            assert!(m.max_abs_diff(&expected) < 1e-14, "{}", o.label());
            assert!(m.is_hermitian(1e-14));
        }
    }

    #[test]
    fn sector_basis_entries() {
        let basis = FockBasis::number_sector(2, 1).unwrap();
        let hop = Observable {
            family: Family::Hop,
            i: 0,
            j: 1,
        };
        let m = hop.matrix(&basis).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(1, 0), 1.0);
    }

    #[test]
    fn out_of_range_site() {
        let basis = FockBasis::product(2, 1).unwrap();
        let o = Observable {
            family: Family::Dens,
            i: 0,
            j: 2,
        };
        assert!(matches!(o.entries(&basis), Err(Error::SiteOutOfRange { .. })));
    }
}
