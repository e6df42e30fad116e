//! Experiment orchestration: parameter points, realization averaging, Δt
//! optimization, sweeps and result tables.

mod config;
mod output;
mod sweep;

pub use config::{
    default_washout, derive_seed, log_grid, DtObjective, DynamicsSection, ExperimentConfig, HoppingAxis, HoppingGrid, HoppingValue,
    LatticeSection, NoiseSection, OutputFormat, OutputSection, ProtocolSection, ReadoutSection, Regime, SpectralSection, TaskFamily,
    TaskSection,
};
pub use output::{Metadata, OutputFiles};
pub use sweep::{cutoff_check, run, spectral, svd, sweep, CutoffComparison, PointResult, SpectralRecord, SvdRecord, SweepOutput};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{sample_disordered_couplings, CouplingSet, Topology, TopologyKind};
use crate::learning::{evaluate_tasks, singular_value_spectrum, Evaluation};
use crate::reservoir::{apply_measurement_noise, FeatureMatrix, ReservoirEngine, ReservoirSpec};
use crate::tasks::{generate_inputs, InputDistribution, TaskSpec, Targets};

/// One lattice parameter point; Δt and the readout are chosen separately.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub topology: TopologyKind,
    /// J/U
    pub hopping: f64,
    pub disorder: f64,
}

impl Point {
    pub fn new(topology: TopologyKind, hopping: f64, disorder: f64) -> Self {
        Self {
            topology,
            hopping,
            disorder,
        }
    }

    pub fn id(&self) -> String {
        format!("{}|J/U={}|delta={}", self.topology, self.hopping, self.disorder)
    }
}

/// Capacity of one task index at one (point, Δt, measurement), averaged over
/// realizations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub point_id: String,
    pub config_hash: String,
    pub topology: TopologyKind,
    pub sites: usize,
    pub cutoff: usize,
    pub j_over_u: f64,
    pub j_over_un: f64,
    pub dt: f64,
    pub disorder: f64,
    /// Empty for the ideal readout.
    pub shots: Option<u64>,
    pub task: String,
    pub degree: Option<u32>,
    pub index: usize,
    pub realizations: usize,
    pub failed: usize,
    #[serde(with = "output::nullable")]
    pub train_capacity: f64,
    #[serde(with = "output::nullable")]
    pub test_capacity: f64,
    /// Present iff more than one realization succeeded.
    pub test_capacity_stderr: Option<f64>,
    pub degenerate: usize,
    #[serde(with = "output::nullable")]
    pub weight_norm: f64,
    /// Mean count of training singular values below 1e-10 of the largest.
    pub redundancy: f64,
    /// Whether this Δt is the one selected for the (point, measurement).
    pub selected: bool,
    pub error: Option<String>,
}

/// Largest index before the first capacity below threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelaySummary {
    pub point_id: String,
    pub config_hash: String,
    pub topology: TopologyKind,
    pub sites: usize,
    pub cutoff: usize,
    pub j_over_u: f64,
    pub j_over_un: f64,
    pub dt: f64,
    pub disorder: f64,
    pub shots: Option<u64>,
    pub task: String,
    pub degree: Option<u32>,
    pub threshold: f64,
    /// −1 when the first grid index already fails.
    pub max_index: i64,
    pub first_failed: bool,
    pub capacity_sum: f64,
    pub selected: bool,
}

/// Scans `(index, capacity)` in grid order and stops at the first capacity
/// below `threshold` (NaN counts as below). Returns the last passing index, or
/// `(-1, true)` when the first one fails.
pub fn max_index_above(curve: &[(usize, f64)], threshold: f64) -> (i64, bool) {
    let mut best = None;
    for &(index, c) in curve {
        if c >= threshold {
            best = Some(index as i64);
        } else {
            break;
        }
    }
    match best {
        Some(i) => (i, false),
        None => (-1, true),
    }
}

/// Picks the Δt whose curve maximizes the objective; ties go to the smallest Δt.
/// `candidates` holds `(Δt, curve)` pairs with curves as `(index, test C)`.
pub fn optimize_dt(candidates: &[(f64, Vec<(usize, f64)>)], threshold: f64, objective: DtObjective) -> Option<usize> {
    let score = |curve: &[(usize, f64)]| -> (f64, f64) {
        let finite = |c: f64| if c.is_finite() { c } else { 0.0 };
        match objective {
            DtObjective::MaxIndex => {
                let sum = curve.iter().map(|&(_, c)| finite(c)).sum();
                (max_index_above(curve, threshold).0 as f64, sum)
            }
            DtObjective::CapacityAt(i) => (curve.iter().find(|(j, _)| *j == i).map_or(0.0, |&(_, c)| finite(c)), 0.0),
        }
    };
    let mut best: Option<(usize, (f64, f64))> = None;
    for (k, (dt, curve)) in candidates.iter().enumerate() {
        let s = score(curve);
        best = match best {
            None => Some((k, s)),
            Some((b, bs)) => {
                let better = s.partial_cmp(&bs) == Some(std::cmp::Ordering::Greater);
                let tie_smaller = s == bs && *dt < candidates[b].0;
                if better || tie_smaller {
                    Some((k, s))
                } else {
                    Some((b, bs))
                }
            }
        };
    }
    best.map(|(k, _)| k)
}

/// Per-measurement capacity curves at one (point, Δt, cutoff).
#[derive(Clone, Debug, PartialEq)]
pub struct Curves {
    pub dt: f64,
    pub cutoff: usize,
    /// Parallel to the experiment's measurement list.
    pub measurements: Vec<(Option<u64>, Vec<ResultRecord>)>,
}

impl Curves {
    pub fn curve(&self, shots: Option<u64>) -> Option<Vec<(usize, f64)>> {
        self.measurements
            .iter()
            .find(|(m, _)| *m == shots)
            .map(|(_, recs)| recs.iter().map(|r| (r.index, r.test_capacity)).collect())
    }
}

/// A validated configuration with its derived seeds.
#[derive(Clone, Debug)]
pub struct Experiment {
    config: ExperimentConfig,
    hash: String,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        Ok(Self { config, hash })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Topology × J/U × δ in config order.
    pub fn points(&self) -> Vec<Point> {
        let l = &self.config.lattice;
        let hops = l.hopping_values();
        let mut out = Vec::new();
        for &t in &l.topology {
            for &h in &hops {
                for &d in &l.disorder {
                    out.push(Point::new(t, h, d));
                }
            }
        }
        out
    }

    pub fn indices(&self) -> Vec<usize> {
        self.config.task.indices()
    }

    pub fn measurements(&self) -> Vec<Option<u64>> {
        self.config.noise.measurements()
    }

    /// Realizations averaged for a measurement at a point: the configured count
    /// (default 10) when anything random is drawn, else 1.
    pub fn realizations(&self, point: &Point, shots: Option<u64>) -> usize {
        if point.disorder > 0.0 || shots.is_some() {
            self.config.lattice.realizations.unwrap_or(10)
        } else {
            1
        }
    }

    fn distribution(&self) -> InputDistribution {
        self.config.task.task(self.indices()[0]).input_distribution()
    }

    pub fn input_seed(&self) -> u64 {
        let dist = self.distribution() as u64;
        derive_seed(self.config.seed, "inputs", &[dist])
    }

    pub fn disorder_seed(&self, point: &Point, realization: usize) -> u64 {
        derive_seed(
            self.config.seed,
            "disorder",
            &[point.topology as u64, point.disorder.to_bits(), realization as u64],
        )
    }

    pub fn noise_seed(&self, point: &Point, dt: f64, cutoff: usize, shots: u64, realization: usize) -> u64 {
        derive_seed(
            self.config.seed,
            "noise",
            &[
                point.topology as u64,
                point.hopping.to_bits(),
                point.disorder.to_bits(),
                dt.to_bits(),
                cutoff as u64,
                shots,
                realization as u64,
            ],
        )
    }

    /// Input sequence for a point; identical across cutoffs, Δt and noise.
    pub fn inputs(&self, point: &Point) -> Result<Vec<f64>> {
        let split = self.config.protocol.split(point.hopping);
        let spec = TaskSpec {
            kind: self.config.task.task(self.indices()[0]),
            distribution: self.distribution(),
            seed: self.input_seed(),
        };
        generate_inputs(&spec, split.total())
    }

    pub fn couplings(&self, point: &Point, realization: usize) -> Result<(Topology, CouplingSet)> {
        let l = &self.config.lattice;
        let topology = Topology::new(point.topology, l.sites)?;
        let j = point.hopping * l.interaction;
        let couplings = if point.disorder > 0.0 {
            sample_disordered_couplings(j, point.disorder, l.interaction, &topology, self.disorder_seed(point, realization))?
        } else {
            CouplingSet::homogeneous(&topology, j, l.interaction)
        };
        Ok((topology, couplings))
    }

    pub fn reservoir_spec(&self, point: &Point, dt: f64, realization: usize, cutoff: usize) -> Result<ReservoirSpec> {
        let (topology, couplings) = self.couplings(point, realization)?;
        let d = &self.config.dynamics;
        let mut spec = ReservoirSpec::new(topology, couplings, cutoff, dt, d.virtual_nodes);
        spec.injection_site = self.config.lattice.injection_site;
        spec.positivity_interval = d.positivity_interval;
        Ok(spec)
    }

    /// Ideal features of one disorder realization.
    pub fn features(&self, point: &Point, dt: f64, realization: usize, cutoff: usize) -> Result<FeatureMatrix> {
        let split = self.config.protocol.split(point.hopping);
        let engine = ReservoirEngine::new(&self.reservoir_spec(point, dt, realization, cutoff)?)?;
        engine.run(&self.inputs(point)?, split.washout)
    }

    /// Targets for every task index; a failing index (NARMA divergence) keeps
    /// its error.
    pub fn targets(&self, inputs: &[f64]) -> Vec<std::result::Result<Targets, String>> {
        self.indices()
            .iter()
            .map(|&i| self.config.task.task(i).targets(inputs).map_err(|e| e.to_string()))
            .collect()
    }

    /// Capacity curves at one Δt for every configured measurement.
    pub fn curves(&self, point: &Point, dt: f64, cutoff: usize) -> Result<Curves> {
        let measurements = self.measurements();
        let indices = self.indices();
        let split = self.config.protocol.split(point.hopping);
        let beta = self.config.readout.beta;
        let inputs = self.inputs(point)?;
        let targets = self.targets(&inputs);
        let valid: Vec<Targets> = targets.iter().filter_map(|t| t.as_ref().ok().cloned()).collect();
        let max_r = measurements.iter().map(|&m| self.realizations(point, m)).max().unwrap_or(1);
        let disorder_runs = if point.disorder > 0.0 { max_r } else { 1 };

        // samples[m][i] = evaluations over realizations
        type Sample = std::result::Result<Evaluation, String>;
        let runs: Vec<Result<(Vec<Vec<Vec<Sample>>>, usize)>> = (0..disorder_runs)
            .into_par_iter()
            .map(|d| {
                let ideal = self.features(point, dt, d, cutoff)?;
                let x_train = ideal.row_range(split.train_range().start, split.train_range().end);
                let redundant = singular_value_spectrum(x_train)?.redundant;
                let mut per_m = Vec::with_capacity(measurements.len());
                for &m in &measurements {
                    let draws: Vec<usize> = match m {
                        None => vec![d],
                        Some(_) if point.disorder > 0.0 => vec![d],
                        Some(_) => (0..self.realizations(point, m)).collect(),
                    };
                    let mut per_i: Vec<Vec<Sample>> = vec![Vec::new(); indices.len()];
                    for r in draws {
                        let noisy;
                        let features = match m {
                            None => &ideal,
                            Some(shots) => {
                                noisy = apply_measurement_noise(&ideal, shots, self.noise_seed(point, dt, cutoff, shots, r))?;
                                &noisy
                            }
                        };
                        let evals = evaluate_tasks(features, &valid, split, beta)?;
                        let mut evals = evals.into_iter();
                        for (slot, t) in per_i.iter_mut().zip(&targets) {
                            slot.push(match t {
                                Ok(_) => evals.next().expect("one evaluation per valid target").map_err(|e| e.to_string()),
                                Err(e) => Err(e.clone()),
                            });
                        }
                    }
                    per_m.push(per_i);
                }
                Ok((per_m, redundant))
            })
            .collect();
        let mut merged: Vec<Vec<Vec<Sample>>> = vec![vec![Vec::new(); indices.len()]; measurements.len()];
        let mut redundancy = 0.0;
        for run in runs {
            let (per_m, redundant) = run?;
            redundancy += redundant as f64 / disorder_runs as f64;
            for (dst, src) in merged.iter_mut().zip(per_m) {
                for (d, s) in dst.iter_mut().zip(src) {
                    d.extend(s);
                }
            }
        }
        let out = measurements
            .iter()
            .zip(merged)
            .map(|(&m, per_i)| {
                let records = indices
                    .iter()
                    .zip(per_i)
                    .map(|(&index, samples)| self.record(point, dt, cutoff, m, index, &samples, redundancy))
                    .collect();
                (m, records)
            })
            .collect();
        Ok(Curves {
            dt,
            cutoff,
            measurements: out,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        point: &Point,
        dt: f64,
        cutoff: usize,
        shots: Option<u64>,
        index: usize,
        samples: &[std::result::Result<Evaluation, String>],
        redundancy: f64,
    ) -> ResultRecord {
        let ok: Vec<&Evaluation> = samples.iter().filter_map(|s| s.as_ref().ok()).collect();
        let error = samples.iter().find_map(|s| s.as_ref().err().cloned());
        let n = ok.len() as f64;
        let mean = |f: &dyn Fn(&Evaluation) -> f64| if ok.is_empty() { f64::NAN } else { ok.iter().map(|e| f(e)).sum::<f64>() / n };
        let test = mean(&|e| e.test.value);
        let stderr = (ok.len() > 1).then(|| {
            let var = ok.iter().map(|e| (e.test.value - test).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        });
        let task = self.config.task.task(index);
        let l = &self.config.lattice;
        ResultRecord {
            point_id: point.id(),
            config_hash: self.hash.clone(),
            topology: point.topology,
            sites: l.sites,
            cutoff,
            j_over_u: point.hopping,
            j_over_un: point.hopping / l.sites as f64,
            dt,
            disorder: point.disorder,
            shots,
            task: task.name().to_string(),
            degree: (self.config.task.kind == TaskFamily::Stm).then_some(self.config.task.degree),
            index,
            realizations: samples.len(),
            failed: samples.len() - ok.len(),
            train_capacity: mean(&|e| e.train.value),
            test_capacity: test,
            test_capacity_stderr: stderr,
            degenerate: ok.iter().filter(|e| e.test.degenerate || e.train.degenerate).count(),
            weight_norm: mean(&|e| e.model.weight_norm()),
            redundancy,
            selected: false,
            error,
        }
    }

    /// Capacity of a single task index (the first configured Δt and measurement
    /// unless given).
    pub fn run_point(&self, point: &Point, dt: f64, shots: Option<u64>, index: usize) -> Result<ResultRecord> {
        let mut one = self.clone();
        one.config.task.indices = Some(vec![index]);
        one.config.noise = NoiseSection {
            ideal: shots.is_none(),
            shots: shots.into_iter().collect(),
        };
        one.config.validate()?;
        let curves = one.curves(point, dt, self.config.lattice.cutoff)?;
        let mut recs = curves.measurements.into_iter().next().map(|(_, r)| r).unwrap_or_default();
        let mut rec = recs.pop().ok_or_else(|| Error::Config("no record produced".into()))?;
        rec.config_hash = self.hash.clone();
        rec.selected = true;
        Ok(rec)
    }

    /// Evaluates every Δt of the grid, marks the selected Δt per measurement
    /// (all of them when optimization is off) and builds delay summaries.
    pub fn point(&self, point: &Point, cutoff: usize) -> Result<PointResult> {
        let dts = self.config.dynamics.dt.clone();
        let curves: Vec<Curves> = dts.iter().map(|&dt| self.curves(point, dt, cutoff)).collect::<Result<_>>()?;
        Ok(self.assemble(point, curves))
    }

    pub(crate) fn assemble(&self, point: &Point, mut curves: Vec<Curves>) -> PointResult {
        let threshold = self.config.task.threshold;
        let measurements = self.measurements();
        for (mi, &m) in measurements.iter().enumerate() {
            let selected: Vec<usize> = if self.config.dynamics.optimize_dt {
                let candidates: Vec<(f64, Vec<(usize, f64)>)> = curves.iter().map(|c| (c.dt, c.curve(m).unwrap_or_default())).collect();
                optimize_dt(&candidates, threshold, self.config.task.objective).into_iter().collect()
            } else {
                (0..curves.len()).collect()
            };
            for k in selected {
                for r in curves[k].measurements[mi].1.iter_mut() {
                    r.selected = true;
                }
            }
        }
        let mut records = Vec::new();
        let mut summaries = Vec::new();
        for c in &curves {
            for (m, recs) in &c.measurements {
                let curve: Vec<(usize, f64)> = recs.iter().map(|r| (r.index, r.test_capacity)).collect();
                let (max_index, first_failed) = max_index_above(&curve, threshold);
                let r0 = &recs[0];
                summaries.push(DelaySummary {
                    point_id: point.id(),
                    config_hash: self.hash.clone(),
                    topology: point.topology,
                    sites: r0.sites,
                    cutoff: c.cutoff,
                    j_over_u: r0.j_over_u,
                    j_over_un: r0.j_over_un,
                    dt: c.dt,
                    disorder: point.disorder,
                    shots: *m,
                    task: r0.task.clone(),
                    degree: r0.degree,
                    threshold,
                    max_index,
                    first_failed,
                    capacity_sum: curve.iter().map(|&(_, c)| if c.is_finite() { c } else { 0.0 }).sum(),
                    selected: r0.selected,
                });
                records.extend(recs.iter().cloned());
            }
        }
        PointResult {
            point_id: point.id(),
            records,
            summaries,
        }
    }
}
