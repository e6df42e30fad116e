//! Reduced-state reservoir propagation.
//!
//! Only the state `σ` of sites `2..N` survives the reset of site 1, so a step is
//! the Kraus map `σ' = Σ_c W_c σ W_c^†` with `W_c = <c|_1 U |ψ>_1`, and the
//! virtual-node features are linear functionals of `|ψ><ψ| ⊗ σ`. Both use the
//! number-sector blocks of `U`: the reduced basis is kept sorted by boson
//! number so that every block is a contiguous slice.

use faer::linalg::matmul::matmul;
use faer::reborrow::ReborrowMut;
use faer::{c64, Accum, Mat, MatMut, MatRef, Par};

use crate::error::{invalid, Error, Result};
use crate::fock::FockBasis;
use crate::lattice::{hopping_entries, CouplingSet, Topology};
use crate::spectral::eigendecompose_symmetric;

use super::features::{feature_labels, FeatureMatrix};
use super::observables::ObservableSet;
use super::state::{check_density, clip_negative, HERMITICITY_TOLERANCE, TRACE_TOLERANCE, encode_input, partial_trace_site1, unitary_from_spectrum, ReservoirState};

const BATCH: usize = 64;

/// Physical and readout parameters of one reservoir.
#[derive(Clone, Debug)]
pub struct ReservoirSpec {
    pub topology: Topology,
    pub couplings: CouplingSet,
    pub cutoff: usize,
    pub dt: f64,
    pub virtual_nodes: usize,
    /// 0-based site that receives the input.
    pub injection_site: usize,
    pub observables: ObservableSet,
    /// Full eigenvalue check of `σ` every this many steps (trace and
    /// Hermiticity are checked every step).
    pub positivity_interval: usize,
}

impl ReservoirSpec {
    pub fn new(topology: Topology, couplings: CouplingSet, cutoff: usize, dt: f64, virtual_nodes: usize) -> Self {
        let observables = ObservableSet::standard(topology.sites());
        Self {
            topology,
            couplings,
            cutoff,
            dt,
            virtual_nodes,
            injection_site: 0,
            observables,
            positivity_interval: 100,
        }
    }
}

/// Reduced state of the non-injected sites.
#[derive(Clone, Debug)]
pub struct EngineState {
    sigma: Mat<c64>,
    steps: usize,
}

impl EngineState {
    pub fn steps(&self) -> usize {
        self.steps
    }
}

#[derive(Debug)]
struct Layout {
    sites: usize,
    cutoff: usize,
    reduced_dim: usize,
    red_dims: Vec<usize>,
    red_offsets: Vec<usize>,
    /// sorted position -> lexicographic reduced index
    red_order: Vec<usize>,
    /// lexicographic reduced index -> sorted position
    red_pos: Vec<usize>,
    red_number: Vec<usize>,
}

impl Layout {
    fn new(sites: usize, cutoff: usize) -> Self {
        let d = cutoff + 1;
        let reduced_dim = d.pow(sites as u32 - 1);
        let red_number: Vec<usize> = (0..reduced_dim)
            .map(|mut r| {
                let mut n = 0;
                while r > 0 {
                    n += r % d;
                    r /= d;
                }
                n
            })
            .collect();
        let max = (sites - 1) * cutoff;
        let mut red_order: Vec<usize> = (0..reduced_dim).collect();
        red_order.sort_by_key(|&r| red_number[r]);
        let mut red_pos = vec![0; reduced_dim];
        for (p, &r) in red_order.iter().enumerate() {
            red_pos[r] = p;
        }
        let mut red_dims = vec![0; max + 1];
        for &n in &red_number {
            red_dims[n] += 1;
        }
        let mut red_offsets = vec![0; max + 1];
        for m in 1..=max {
            red_offsets[m] = red_offsets[m - 1] + red_dims[m - 1];
        }
        Self {
            sites,
            cutoff,
            reduced_dim,
            red_dims,
            red_offsets,
            red_order,
            red_pos,
            red_number,
        }
    }

    fn max_total(&self) -> usize {
        self.sites * self.cutoff
    }

    fn rd(&self, m: isize) -> usize {
        if m < 0 {
            0
        } else {
            self.red_dims.get(m as usize).copied().unwrap_or(0)
        }
    }

    fn ro(&self, m: usize) -> usize {
        self.red_offsets[m]
    }

    /// Offset of the site-1 occupation `a` block inside full sector `n`.
    fn block_offset(&self, n: usize, a: usize) -> usize {
        (0..a).map(|b| self.rd(n as isize - b as isize)).sum()
    }

    fn full_dim(&self, n: usize) -> usize {
        self.block_offset(n, self.cutoff + 1)
    }

    /// Full lexicographic index -> (sector, local index).
    fn locate(&self, full: usize) -> (usize, usize) {
        let a = full / self.reduced_dim;
        let r = full % self.reduced_dim;
        let m = self.red_number[r];
        let n = a + m;
        (n, self.block_offset(n, a) + self.red_pos[r] - self.red_offsets[m])
    }
}

/// One `(c, m)` Kraus band: rows of reduced sector `m`, columns of reduced
/// sectors `m + c` (site 1 was empty) and `m + c - 1` (site 1 held one boson).
#[derive(Debug)]
struct KrausBlock {
    c: usize,
    m: usize,
    a0: Mat<c64>,
    a1: Mat<c64>,
}

/// Per-sector packing of `|ψ><ψ| ⊗ σ` restricted to site 1 in `{0, 1}`.
#[derive(Debug)]
struct PackedSector {
    offset: usize,
    /// sorted σ index and site-1 occupation for every local column
    columns: Vec<(usize, usize)>,
}

/// Precomputed propagation data for one `(H, Δt, V)`.
#[derive(Debug)]
pub struct ReservoirEngine {
    layout: Layout,
    virtual_nodes: usize,
    dt: f64,
    observables: ObservableSet,
    labels: Vec<String>,
    /// original site -> internal site (injection site moved to 0)
    relabel: Vec<usize>,
    kraus: Vec<KrausBlock>,
    packing: Vec<PackedSector>,
    packed_len: usize,
    /// `(V M) × packed_len`
    readout: Mat<f64>,
    positivity_interval: usize,
}

impl ReservoirEngine {
    pub fn new(spec: &ReservoirSpec) -> Result<Self> {
        let sites = spec.topology.sites();
        if spec.cutoff == 0 {
            return Err(invalid("cutoff", "input encoding needs a cutoff of at least 1"));
        }
        if !(spec.dt >= 0.0 && spec.dt.is_finite()) {
            return Err(invalid("dt", format!("{} must be finite and non-negative", spec.dt)));
        }
        if spec.virtual_nodes == 0 {
            return Err(invalid("virtual_nodes", "at least one virtual node is required"));
        }
        if spec.injection_site >= sites {
            return Err(Error::SiteOutOfRange {
                site: spec.injection_site,
                sites,
            });
        }
        if spec.observables.sites() != sites {
            return Err(Error::SiteMismatch {
                basis: spec.observables.sites(),
                topology: sites,
            });
        }
        if !(spec.couplings.interaction() >= 0.0) {
            return Err(invalid("interaction", "U must be non-negative"));
        }
        let basis = FockBasis::product(sites, spec.cutoff)?;
        let layout = Layout::new(sites, spec.cutoff);

        let mut relabel: Vec<usize> = (0..sites).collect();
        relabel.swap(0, spec.injection_site);
        let permute = |full: usize| -> usize {
            let occ = basis.state(full);
            let mut moved = vec![0u8; sites];
            for (s, &o) in occ.iter().enumerate() {
                moved[relabel[s]] = o;
            }
            basis.index_of(&moved).expect("relabeling stays inside the basis")
        };
        let perm: Vec<usize> = (0..basis.dim()).map(permute).collect();

        // sector blocks of H
        let sectors = layout.max_total() + 1;
        let mut blocks: Vec<Mat<f64>> = (0..sectors).map(|n| Mat::zeros(layout.full_dim(n), layout.full_dim(n))).collect();
        let u = spec.couplings.interaction();
        for (i, occ) in basis.states().enumerate() {
            let e: f64 = occ.iter().map(|&k| 0.5 * u * k as f64 * (k as f64 - 1.0)).sum();
            let (n, l) = layout.locate(perm[i]);
            blocks[n][(l, l)] += e;
        }
        for (row, col, v) in hopping_entries(&basis, &spec.topology, &spec.couplings)? {
            let (n, r) = layout.locate(perm[row]);
            let (n2, c) = layout.locate(perm[col]);
            debug_assert_eq!(n, n2);
            blocks[n][(r, c)] += v;
        }

        // observables, relabeled into the internal frame, as per-sector sparse lists
        let internal_obs = spec.observables.relabeled(&relabel);
        let mut obs_entries: Vec<Vec<Vec<(usize, usize, f64)>>> = Vec::with_capacity(internal_obs.len());
        for o in internal_obs.items() {
            let mut per_sector = vec![Vec::new(); sectors];
            for (row, col, v) in o.entries(&basis)? {
                let (n, r) = layout.locate(row);
                let (_, c) = layout.locate(col);
                per_sector[n].push((r, c, v));
            }
            obs_entries.push(per_sector);
        }

        let mut packing = Vec::with_capacity(sectors);
        let mut packed_len = 0;
        for n in 0..sectors {
            let mut columns = Vec::new();
            for (a, m) in [(0usize, n as isize), (1, n as isize - 1)] {
                for j in 0..layout.rd(m) {
                    columns.push((layout.ro(m as usize) + j, a));
                }
            }
            let h = columns.len();
            packing.push(PackedSector {
                offset: packed_len,
                columns,
            });
            packed_len += h * h;
        }

        let m_obs = internal_obs.len();
        let v_nodes = spec.virtual_nodes;
        let mut readout = Mat::<f64>::zeros(v_nodes * m_obs, packed_len);
        let mut kraus = Vec::new();
        for n in 0..sectors {
            let h = packing[n].columns.len();
            if h == 0 {
                continue;
            }
            let decomp = eigendecompose_symmetric(blocks[n].as_ref())?;
            let psi = decomp.eigenvectors();
            let energies = decomp.energies();
            let dim = layout.full_dim(n);
            for v in 1..=v_nodes {
                let t = spec.dt * v as f64 / v_nodes as f64;
                let a = injected_columns(psi, energies, t, h);
                let mut oa = Mat::<c64>::zeros(dim, h);
                let mut x = Mat::<c64>::zeros(h, h);
                for (i, entries) in obs_entries.iter().enumerate() {
                    let list = &entries[n];
                    if list.is_empty() {
                        continue;
                    }
                    oa.fill(c64::new(0.0, 0.0));
                    for col in 0..h {
                        for &(r, c, val) in list {
                            oa[(r, col)] += a[(c, col)] * val;
                        }
                    }
                    matmul(x.as_mut(), Accum::Replace, a.adjoint(), oa.as_ref(), c64::new(1.0, 0.0), Par::Seq);
                    let row = (v - 1) * m_obs + i;
                    let mut p = packing[n].offset;
                    for k in 0..h {
                        for j in 0..k {
                            readout[(row, p)] = 2.0 * x[(j, k)].re;
                            readout[(row, p + 1)] = 2.0 * x[(j, k)].im;
                            p += 2;
                        }
                        readout[(row, p)] = x[(k, k)].re;
                        p += 1;
                    }
                }
                if v == v_nodes {
                    for c in 0..=spec.cutoff.min(n) {
                        let m = n - c;
                        let rows = layout.rd(m as isize);
                        if rows == 0 {
                            continue;
                        }
                        let r0 = layout.block_offset(n, c);
                        let split = layout.rd(n as isize);
                        kraus.push(KrausBlock {
                            c,
                            m,
                            a0: a.as_ref().submatrix(r0, 0, rows, split).to_owned(),
                            a1: a.as_ref().submatrix(r0, split, rows, h - split).to_owned(),
                        });
                    }
                }
            }
        }
        kraus.sort_by_key(|b| (b.c, b.m));

        Ok(Self {
            labels: feature_labels(&spec.observables, v_nodes),
            layout,
            virtual_nodes: v_nodes,
            dt: spec.dt,
            observables: spec.observables.clone(),
            relabel,
            kraus,
            packing,
            packed_len,
            readout,
            positivity_interval: spec.positivity_interval.max(1),
        })
    }

    pub fn sites(&self) -> usize {
        self.layout.sites
    }

    pub fn cutoff(&self) -> usize {
        self.layout.cutoff
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn virtual_nodes(&self) -> usize {
        self.virtual_nodes
    }

    pub fn observables(&self) -> &ObservableSet {
        &self.observables
    }

    /// `V M`, the number of non-bias feature columns.
    pub fn feature_count(&self) -> usize {
        self.virtual_nodes * self.observables.len()
    }

    /// Reduced state of the all-empty reservoir.
    pub fn vacuum(&self) -> EngineState {
        let d = self.layout.reduced_dim;
        let mut sigma = Mat::zeros(d, d);
        sigma[(0, 0)] = c64::new(1.0, 0.0);
        EngineState { sigma, steps: 0 }
    }

    /// Reduced state obtained by discarding the injection site of a full state.
    pub fn reduce(&self, state: &ReservoirState) -> Result<EngineState> {
        if state.sites() != self.layout.sites || state.cutoff() != self.layout.cutoff {
            return Err(Error::Shape(format!(
                "state on (N={}, n_c={}) for an engine on (N={}, n_c={})",
                state.sites(),
                state.cutoff(),
                self.layout.sites,
                self.layout.cutoff
            )));
        }
        let moved;
        let state = if self.relabel.iter().enumerate().all(|(a, &b)| a == b) {
            state
        } else {
            let basis = FockBasis::product(self.layout.sites, self.layout.cutoff)?;
            let perm: Vec<usize> = (0..basis.dim())
                .map(|i| {
                    let mut occ = vec![0u8; self.layout.sites];
                    for (s, &o) in basis.state(i).iter().enumerate() {
                        occ[self.relabel[s]] = o;
                    }
                    basis.index_of(&occ).expect("relabeling stays inside the basis")
                })
                .collect();
            let rho = state.rho();
            let mut out = Mat::<c64>::zeros(rho.nrows(), rho.ncols());
            for j in 0..rho.ncols() {
                for i in 0..rho.nrows() {
                    out[(perm[i], perm[j])] = rho[(i, j)];
                }
            }
            moved = ReservoirState::from_matrix(self.layout.sites, self.layout.cutoff, out)?;
            &moved
        };
        self.from_lexicographic(partial_trace_site1(state).as_ref())
    }

    /// Wraps a reduced density matrix given in lexicographic order of the
    /// non-injected sites (internal frame).
    pub fn from_lexicographic(&self, sigma: MatRef<'_, c64>) -> Result<EngineState> {
        let d = self.layout.reduced_dim;
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::Shape(format!("reduced state must be {d}x{d}")));
        }
        let order = &self.layout.red_order;
        let sorted = Mat::from_fn(d, d, |i, j| sigma[(order[i], order[j])]);
        check_density(sorted.as_ref(), true)?;
        Ok(EngineState { sigma: sorted, steps: 0 })
    }

    /// Reduced state in lexicographic order of the non-injected sites.
    pub fn to_lexicographic(&self, state: &EngineState) -> Mat<c64> {
        let d = self.layout.reduced_dim;
        let pos = &self.layout.red_pos;
        Mat::from_fn(d, d, |i, j| state.sigma[(pos[i], pos[j])])
    }

    fn pack(&self, sigma: MatRef<'_, c64>, psi: [f64; 2], mut z: MatMut<'_, f64>) {
        for sector in &self.packing {
            let cols = &sector.columns;
            let mut p = sector.offset;
            for (k, &(sk, ak)) in cols.iter().enumerate() {
                for &(sj, aj) in &cols[..k] {
                    let r = sigma[(sj, sk)] * (psi[aj] * psi[ak]);
                    z[(p, 0)] = r.re;
                    z[(p + 1, 0)] = r.im;
                    p += 2;
                }
                z[(p, 0)] = sigma[(sk, sk)].re * psi[ak] * psi[ak];
                p += 1;
            }
        }
    }

    fn advance(&self, sigma: &Mat<c64>, psi: [f64; 2], t: &mut Mat<c64>, next: &mut Mat<c64>) {
        let lay = &self.layout;
        let d = lay.reduced_dim;
        let zero = c64::new(0.0, 0.0);
        next.fill(zero);
        let mut start = 0;
        while start < self.kraus.len() {
            let c = self.kraus[start].c;
            let end = start + self.kraus[start..].iter().take_while(|b| b.c == c).count();
            t.fill(zero);
            for b in &self.kraus[start..end] {
                let rows = b.a0.nrows();
                let r0 = lay.ro(b.m);
                let mut dst = t.as_mut().submatrix_mut(r0, 0, rows, d);
                if b.a0.ncols() > 0 {
                    let src = sigma.as_ref().submatrix(lay.ro(b.m + c), 0, b.a0.ncols(), d);
                    matmul(dst.rb_mut(), Accum::Add, b.a0.as_ref(), src, c64::new(psi[0], 0.0), Par::Seq);
                }
                if b.a1.ncols() > 0 {
                    let src = sigma.as_ref().submatrix(lay.ro(b.m + c - 1), 0, b.a1.ncols(), d);
                    matmul(dst, Accum::Add, b.a1.as_ref(), src, c64::new(psi[1], 0.0), Par::Seq);
                }
            }
            // upper block triangle only: row sectors up to and including m
            for b in &self.kraus[start..end] {
                let rows = b.a0.nrows();
                let r0 = lay.ro(b.m);
                let top = r0 + rows;
                let mut dst = next.as_mut().submatrix_mut(0, r0, top, rows);
                if b.a0.ncols() > 0 {
                    let lhs = t.as_ref().submatrix(0, lay.ro(b.m + c), top, b.a0.ncols());
                    matmul(dst.rb_mut(), Accum::Add, lhs, b.a0.adjoint(), c64::new(psi[0], 0.0), Par::Seq);
                }
                if b.a1.ncols() > 0 {
                    let lhs = t.as_ref().submatrix(0, lay.ro(b.m + c - 1), top, b.a1.ncols());
                    matmul(dst, Accum::Add, lhs, b.a1.adjoint(), c64::new(psi[1], 0.0), Par::Seq);
                }
            }
            start = end;
        }
    }

    /// Fills the lower block triangle of `next` from the upper one.
    fn mirror(&self, next: &mut Mat<c64>) {
        let lay = &self.layout;
        let d = lay.reduced_dim;
        for (m, &w) in lay.red_dims.iter().enumerate() {
            let c0 = lay.ro(m);
            let lo = c0 + w;
            if w == 0 || lo == d {
                continue;
            }
            let upper = next.as_ref().submatrix(c0, lo, w, d - lo).adjoint().to_owned();
            next.as_mut().submatrix_mut(lo, c0, d - lo, w).copy_from(&upper);
        }
    }

    /// Completes `next` from its upper block triangle, validates it, clips
    /// tiny negative eigenvalues on check steps, and symmetrizes the diagonal
    /// blocks. Off-diagonal blocks are Hermitian by construction.
    fn settle(&self, next: &mut Mat<c64>, step: usize) -> Result<()> {
        self.mirror(next);
        let lay = &self.layout;
        let mut dev = 0.0f64;
        for (m, &w) in lay.red_dims.iter().enumerate() {
            let block = next.as_ref().submatrix(lay.ro(m), lay.ro(m), w, w);
            dev = dev.max((block - block.adjoint()).norm_max());
        }
        if dev > HERMITICITY_TOLERANCE {
            return Err(Error::InvalidState {
                property: "hermiticity",
                detail: format!("max |sigma - sigma^dagger| = {dev:.3e}"),
            });
        }
        let tr: c64 = (0..next.nrows()).map(|i| next[(i, i)]).sum();
        if (tr.re - 1.0).abs() > TRACE_TOLERANCE || tr.im.abs() > TRACE_TOLERANCE {
            return Err(Error::InvalidState {
                property: "unit trace",
                detail: format!("trace = {tr}"),
            });
        }
        for (m, &w) in lay.red_dims.iter().enumerate() {
            let o = lay.ro(m);
            let sym = {
                let block = next.as_ref().submatrix(o, o, w, w);
                (block + block.adjoint()) * faer::Scale(c64::new(0.5, 0.0))
            };
            next.as_mut().submatrix_mut(o, o, w, w).copy_from(&sym);
        }
        if (step + 1).is_multiple_of(self.positivity_interval) {
            clip_negative(next)?;
        }
        Ok(())
    }

    fn encode(&self, s: f64) -> Result<[f64; 2]> {
        let psi = encode_input(s, self.layout.cutoff)?;
        Ok([psi[0], psi[1]])
    }

    /// One input step: returns the `V M` feature row measured during the step
    /// and replaces `state` with the post-step reduced state.
    pub fn step(&self, state: &mut EngineState, s: f64) -> Result<Vec<f64>> {
        let psi = self.encode(s)?;
        let mut z = Mat::<f64>::zeros(self.packed_len, 1);
        self.pack(state.sigma.as_ref(), psi, z.as_mut());
        let mut row = Mat::<f64>::zeros(self.feature_count(), 1);
        matmul(row.as_mut(), Accum::Replace, self.readout.as_ref(), z.as_ref(), 1.0, Par::Seq);
        let d = self.layout.reduced_dim;
        let mut t = Mat::zeros(d, d);
        let mut next = Mat::zeros(d, d);
        self.advance(&state.sigma, psi, &mut t, &mut next);
        self.settle(&mut next, state.steps)?;
        state.sigma = next;
        state.steps += 1;
        Ok(row.col(0).iter().copied().collect())
    }

    /// Drives the reservoir from the vacuum.
    pub fn run(&self, inputs: &[f64], washout: usize) -> Result<FeatureMatrix> {
        Ok(self.run_from(self.vacuum(), inputs, washout)?.0)
    }

    /// Drives the reservoir from `state`; returns the features and final state.
    pub fn run_from(&self, mut state: EngineState, inputs: &[f64], washout: usize) -> Result<(FeatureMatrix, EngineState)> {
        let width = self.feature_count();
        let rows = inputs.len();
        let mut data = Mat::<f64>::zeros(rows, width + 1);
        let d = self.layout.reduced_dim;
        let mut t = Mat::zeros(d, d);
        let mut next = Mat::zeros(d, d);
        let mut z = Mat::<f64>::zeros(self.packed_len, BATCH);
        let mut out = Mat::<f64>::zeros(width, BATCH);
        let mut start = 0;
        while start < rows {
            let len = BATCH.min(rows - start);
            for b in 0..len {
                let psi = self.encode(inputs[start + b])?;
                self.pack(state.sigma.as_ref(), psi, z.as_mut().subcols_mut(b, 1));
                self.advance(&state.sigma, psi, &mut t, &mut next);
                self.settle(&mut next, state.steps)?;
                std::mem::swap(&mut state.sigma, &mut next);
                state.steps += 1;
            }
            let mut dst = out.as_mut().subcols_mut(0, len);
            matmul(dst.rb_mut(), Accum::Replace, self.readout.as_ref(), z.as_ref().subcols(0, len), 1.0, Par::Seq);
            for b in 0..len {
                for j in 0..width {
                    data[(start + b, j)] = out[(j, b)];
                }
                data[(start + b, width)] = 1.0;
            }
            start += len;
        }
        let features = FeatureMatrix::from_parts(data, self.labels.clone(), washout, self.virtual_nodes, self.observables.len())?;
        Ok((features, state))
    }
}

/// `U_n(t)[:, 0..h]` for a real eigenbasis `Ψ`.
fn injected_columns(psi: MatRef<'_, f64>, energies: &[f64], t: f64, h: usize) -> Mat<c64> {
    unitary_from_spectrum(psi, energies, t, h)
}

/// Runs `inputs` from the vacuum; the first `washout` rows are flagged.
pub fn run_sequence(inputs: &[f64], spec: &ReservoirSpec, washout: usize) -> Result<FeatureMatrix> {
    ReservoirEngine::new(spec)?.run(inputs, washout)
}
