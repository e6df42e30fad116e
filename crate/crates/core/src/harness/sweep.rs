//! Command drivers: run, sweep, cutoff check, spectral and SVD scans.

use std::collections::{BTreeMap, HashMap};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, NoiseSection};
use super::output::{Metadata, OutputFiles};
use super::{optimize_dt, DelaySummary, Experiment, Point, ResultRecord};
use crate::error::{invalid, Error, Result};
use crate::fock::FockBasis;
use crate::lattice::{CouplingSet, Topology, TopologyKind};
use crate::learning::singular_value_spectrum;
use crate::spectral::{goe_reference_d1, sector_indicators, Parity, GOE_MEAN_GAP_RATIO, POISSON_MEAN_GAP_RATIO};

/// All records of one lattice point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointResult {
    pub point_id: String,
    pub records: Vec<ResultRecord>,
    pub summaries: Vec<DelaySummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput {
    /// In point order.
    pub points: Vec<PointResult>,
    /// Points recovered from an earlier partial run.
    pub resumed: usize,
}

impl SweepOutput {
    pub fn records(&self) -> impl Iterator<Item = &ResultRecord> {
        self.points.iter().flat_map(|p| p.records.iter())
    }

    pub fn summaries(&self) -> impl Iterator<Item = &DelaySummary> {
        self.points.iter().flat_map(|p| p.summaries.iter())
    }
}

fn seeds(exp: &Experiment) -> BTreeMap<String, u64> {
    BTreeMap::from([("master".to_string(), exp.config().seed), ("inputs".to_string(), exp.input_seed())])
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Evaluates every point of the configured grids. With `files`, each finished
/// point is appended to the record and summary tables as it completes; with
/// `resume`, points already complete in those tables are kept and skipped. The
/// tables are rewritten in point order at the end.
pub fn sweep(exp: &Experiment, workers: usize, files: Option<&OutputFiles>, resume: bool) -> Result<SweepOutput> {
    let points = exp.points();
    let cutoff = exp.config().lattice.cutoff;
    let per_point = exp.config().dynamics.dt.len() * exp.measurements().len();
    let mut done: HashMap<String, PointResult> = HashMap::new();
    if let Some(f) = files {
        f.create_dir()?;
        if resume {
            let records: Vec<ResultRecord> = f.read_table(&f.table(""))?;
            let summaries: Vec<DelaySummary> = f.read_table(&f.table("_summary"))?;
            for p in &points {
                let id = p.id();
                let recs: Vec<ResultRecord> = records.iter().filter(|r| r.point_id == id && r.config_hash == exp.hash()).cloned().collect();
                let sums: Vec<DelaySummary> = summaries.iter().filter(|s| s.point_id == id && s.config_hash == exp.hash()).cloned().collect();
                if recs.len() == per_point * exp.indices().len() && sums.len() == per_point {
                    done.insert(id.clone(), PointResult {
                        point_id: id,
                        records: recs,
                        summaries: sums,
                    });
                }
            }
        }
        let kept: Vec<&PointResult> = points.iter().filter_map(|p| done.get(&p.id())).collect();
        f.write_table(&f.table(""), &kept.iter().flat_map(|p| p.records.iter()).collect::<Vec<_>>())?;
        f.write_table(&f.table("_summary"), &kept.iter().flat_map(|p| p.summaries.iter()).collect::<Vec<_>>())?;
    }
    let resumed = done.len();
    let pending: Vec<Point> = points.iter().filter(|p| !done.contains_key(&p.id())).copied().collect();
    let pool = thread_pool(workers)?;
    let (tx, rx) = mpsc::channel::<Result<PointResult>>();
    let mut first_error = None;
    std::thread::scope(|scope| -> Result<()> {
        scope.spawn(move || {
            pool.install(|| {
                pending.par_iter().for_each_with(tx, |tx, p| {
                    let _ = tx.send(exp.point(p, cutoff));
                })
            })
        });
        // single writer
        for result in rx {
            match result {
                Ok(pr) => {
                    if let Some(f) = files {
                        f.append_table(&f.table(""), &pr.records)?;
                        f.append_table(&f.table("_summary"), &pr.summaries)?;
                    }
                    done.insert(pr.point_id.clone(), pr);
                }
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        Ok(())
    })?;
    let ordered: Vec<PointResult> = points.iter().filter_map(|p| done.remove(&p.id())).collect();
    if let Some(f) = files {
        f.write_table(&f.table(""), &ordered.iter().flat_map(|p| p.records.iter()).collect::<Vec<_>>())?;
        f.write_table(&f.table("_summary"), &ordered.iter().flat_map(|p| p.summaries.iter()).collect::<Vec<_>>())?;
        let mut meta = Metadata::new("sweep", exp.config(), exp.hash(), seeds(exp));
        meta.files = vec![name_of(&f.table("")), name_of(&f.table("_summary"))];
        meta.extra = serde_json::json!({ "points": points.len(), "resumed": resumed });
        meta.write(&f.metadata(""))?;
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    Ok(SweepOutput { points: ordered, resumed })
}

fn name_of(path: &std::path::Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// The first grid point of the config. With `files` and `output.features`, also
/// writes the ideal feature matrix and the targets at the selected Δt.
pub fn run(exp: &Experiment, workers: usize, files: Option<&OutputFiles>) -> Result<SweepOutput> {
    let mut config = exp.config().clone();
    let l = &mut config.lattice;
    l.topology.truncate(1);
    l.hopping = super::HoppingGrid::List(vec![super::HoppingValue::Value(exp.points()[0].hopping)]);
    l.hopping_axis = super::HoppingAxis::JOverU;
    l.disorder.truncate(1);
    let single = Experiment::new(config)?;
    let out = sweep(&single, workers, files, false)?;
    if let (Some(f), true) = (files, single.config().output.features) {
        let point = single.points()[0];
        let first = single.measurements()[0];
        let dt = out.points[0]
            .records
            .iter()
            .find(|r| r.selected && r.shots == first)
            .map_or(single.config().dynamics.dt[0], |r| r.dt);
        let features = single.features(&point, dt, 0, single.config().lattice.cutoff)?;
        features.write_csv(std::fs::File::create(f.csv("_features"))?)?;
        let mut meta = Metadata::new("run", single.config(), single.hash(), seeds(&single));
        meta.files = vec![name_of(&f.csv("_features"))];
        meta.extra = serde_json::to_value(features.metadata(single.hash()))?;
        let inputs = single.inputs(&point)?;
        for (index, t) in single.indices().into_iter().zip(single.targets(&inputs)) {
            if let Ok(t) = t {
                let path = f.csv(&format!("_targets_{index}"));
                t.write_csv(std::fs::File::create(&path)?)?;
                meta.files.push(name_of(&path));
            }
        }
        meta.write(&f.metadata("_features"))?;
    }
    Ok(out)
}

/// STM-style curves at several cutoffs for the first point, at one Δt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffComparison {
    pub point_id: String,
    pub dt: f64,
    pub cutoffs: Vec<usize>,
    pub indices: Vec<usize>,
    /// `capacities[c][i]`: test capacity at `cutoffs[c]`, `indices[i]`.
    pub capacities: Vec<Vec<f64>>,
    pub max_abs_difference: f64,
}

#[derive(Serialize)]
struct CutoffRow {
    point_id: String,
    dt: f64,
    cutoff: usize,
    index: usize,
    #[serde(with = "super::output::nullable")]
    test_capacity: f64,
}

/// Ideal-readout comparison across `lattice.cutoff_check`. When Δt optimization
/// is on, Δt is optimized at the first cutoff and reused for the others.
pub fn cutoff_check(exp: &Experiment, files: Option<&OutputFiles>) -> Result<CutoffComparison> {
    let cutoffs = exp.config().lattice.cutoff_check.clone();
    if cutoffs.len() < 2 {
        return Err(invalid("lattice.cutoff_check", "needs at least two cutoffs"));
    }
    let mut config = exp.config().clone();
    config.noise = NoiseSection::default();
    let ideal = Experiment::new(config)?;
    let point = ideal.points()[0];
    for &c in &cutoffs {
        FockBasis::product(ideal.config().lattice.sites, c)?;
    }
    let dts = &ideal.config().dynamics.dt;
    let dt = if ideal.config().dynamics.optimize_dt && dts.len() > 1 {
        let candidates: Vec<(f64, Vec<(usize, f64)>)> = dts
            .iter()
            .map(|&dt| Ok((dt, ideal.curves(&point, dt, cutoffs[0])?.curve(None).unwrap_or_default())))
            .collect::<Result<_>>()?;
        let k = optimize_dt(&candidates, ideal.config().task.threshold, ideal.config().task.objective).unwrap_or(0);
        dts[k]
    } else {
        dts[0]
    };
    let capacities: Vec<Vec<f64>> = cutoffs
        .iter()
        .map(|&c| Ok(ideal.curves(&point, dt, c)?.curve(None).unwrap_or_default().into_iter().map(|(_, v)| v).collect()))
        .collect::<Result<_>>()?;
    let indices = ideal.indices();
    let mut max_abs_difference: f64 = 0.0;
    for i in 0..indices.len() {
        for a in &capacities {
            for b in &capacities {
                max_abs_difference = max_abs_difference.max((a[i] - b[i]).abs());
            }
        }
    }
    let cmp = CutoffComparison {
        point_id: point.id(),
        dt,
        cutoffs: cutoffs.clone(),
        indices: indices.clone(),
        capacities,
        max_abs_difference,
    };
    if let Some(f) = files {
        f.create_dir()?;
        let rows: Vec<CutoffRow> = cutoffs
            .iter()
            .zip(&cmp.capacities)
            .flat_map(|(&cutoff, caps)| {
                indices.iter().zip(caps).map(move |(&index, &c)| CutoffRow {
                    point_id: point.id(),
                    dt,
                    cutoff,
                    index,
                    test_capacity: c,
                })
            })
            .collect();
        f.write_table(&f.table("_cutoff"), &rows)?;
        let mut meta = Metadata::new("cutoff-check", ideal.config(), ideal.hash(), seeds(&ideal));
        meta.files = vec![name_of(&f.table("_cutoff"))];
        meta.extra = serde_json::to_value(&cmp)?;
        meta.write(&f.metadata("_cutoff"))?;
    }
    Ok(cmp)
}

/// Chaos indicators of the unit-filling sector at one hopping value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralRecord {
    pub config_hash: String,
    pub topology: TopologyKind,
    pub sites: usize,
    pub bosons: usize,
    pub j_over_u: f64,
    pub j_over_un: f64,
    pub parity: Parity,
    pub mean_gap_ratio: f64,
    pub mean_information_dimension: f64,
    pub goe_gap_ratio: f64,
    pub poisson_gap_ratio: f64,
    pub goe_information_dimension: f64,
    pub sector_dim: usize,
    pub parity_dim: usize,
    pub vectors_used: usize,
    pub degenerate_pairs: usize,
}

/// Indicators over topology × hopping for homogeneous couplings (disorder in
/// the config is ignored here; it breaks the reflection symmetry).
pub fn spectral(config: &ExperimentConfig, workers: usize, files: Option<&OutputFiles>) -> Result<Vec<SpectralRecord>> {
    config.validate()?;
    let hash = config.hash();
    let l = &config.lattice;
    let sector = FockBasis::number_sector(l.sites, l.sites)?;
    let jobs: Vec<(TopologyKind, f64)> = l.topology.iter().flat_map(|&t| l.hopping_values().into_iter().map(move |h| (t, h))).collect();
    let s = &config.spectral;
    let records: Vec<SpectralRecord> = thread_pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|&(t, h)| {
                let topo = Topology::new(t, l.sites)?;
                let couplings = CouplingSet::homogeneous(&topo, h * l.interaction, l.interaction);
                let ind = sector_indicators(&sector, &topo, &couplings, s.parity, s.window)?;
                Ok(SpectralRecord {
                    config_hash: hash.clone(),
                    topology: t,
                    sites: l.sites,
                    bosons: l.sites,
                    j_over_u: h,
                    j_over_un: h / l.sites as f64,
                    parity: s.parity,
                    mean_gap_ratio: ind.mean_gap_ratio,
                    mean_information_dimension: ind.mean_information_dimension,
                    goe_gap_ratio: GOE_MEAN_GAP_RATIO,
                    poisson_gap_ratio: POISSON_MEAN_GAP_RATIO,
                    goe_information_dimension: goe_reference_d1(ind.parity_dim),
                    sector_dim: ind.sector_dim,
                    parity_dim: ind.parity_dim,
                    vectors_used: ind.vectors_used,
                    degenerate_pairs: ind.degenerate_pairs,
                })
            })
            .collect::<Result<_>>()
    })?;
    if let Some(f) = files {
        f.create_dir()?;
        f.write_table(&f.table("_spectral"), &records)?;
        let mut meta = Metadata::new("spectral", config, &hash, BTreeMap::from([("master".to_string(), config.seed)]));
        meta.files = vec![name_of(&f.table("_spectral"))];
        meta.write(&f.metadata("_spectral"))?;
    }
    Ok(records)
}

/// Singular values of the training design matrix for one topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvdRecord {
    pub config_hash: String,
    pub topology: TopologyKind,
    pub sites: usize,
    pub cutoff: usize,
    pub j_over_u: f64,
    pub dt: f64,
    pub rows: usize,
    pub columns: usize,
    pub relative_threshold: f64,
    pub redundant: usize,
    #[serde(skip)]
    pub values: Vec<f64>,
}

#[derive(Serialize)]
struct SingularValueRow {
    topology: TopologyKind,
    rank: usize,
    value: f64,
    relative: f64,
}

/// Redundancy analysis per topology at the first hopping value and Δt, with
/// homogeneous couplings and the ideal readout.
pub fn svd(exp: &Experiment, workers: usize, files: Option<&OutputFiles>) -> Result<Vec<SvdRecord>> {
    let c = exp.config();
    let hopping = exp.points()[0].hopping;
    let dt = c.dynamics.dt[0];
    let split = c.protocol.split(hopping);
    let records: Vec<SvdRecord> = thread_pool(workers)?.install(|| {
        c.lattice
            .topology
            .par_iter()
            .map(|&t| {
                let point = Point::new(t, hopping, 0.0);
                let features = exp.features(&point, dt, 0, c.lattice.cutoff)?;
                let x = features.row_range(split.train_range().start, split.train_range().end);
                let s = singular_value_spectrum(x)?;
                Ok(SvdRecord {
                    config_hash: exp.hash().to_string(),
                    topology: t,
                    sites: c.lattice.sites,
                    cutoff: c.lattice.cutoff,
                    j_over_u: hopping,
                    dt,
                    rows: x.nrows(),
                    columns: x.ncols(),
                    relative_threshold: s.relative_threshold,
                    redundant: s.redundant,
                    values: s.values,
                })
            })
            .collect::<Result<_>>()
    })?;
    if let Some(f) = files {
        f.create_dir()?;
        f.write_table(&f.table("_svd"), &records)?;
        let rows: Vec<SingularValueRow> = records
            .iter()
            .flat_map(|r| {
                let top = r.values.first().copied().unwrap_or(1.0);
                r.values.iter().enumerate().map(move |(k, &v)| SingularValueRow {
                    topology: r.topology,
                    rank: k,
                    value: v,
                    relative: v / top,
                })
            })
            .collect();
        f.write_table(&f.table("_singular_values"), &rows)?;
        let mut meta = Metadata::new("svd", c, exp.hash(), seeds(exp));
        meta.files = vec![name_of(&f.table("_svd")), name_of(&f.table("_singular_values"))];
        meta.write(&f.metadata("_svd"))?;
    }
    Ok(records)
}
