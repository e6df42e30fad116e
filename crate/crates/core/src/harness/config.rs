//! Experiment configuration documents.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::lattice::TopologyKind;
use crate::learning::SplitProtocol;
use crate::spectral::{IndicatorWindow, Parity};
use crate::tasks::TaskKind;

/// Named dynamical regimes and their J/U.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Mott,
    Chaotic,
    Superfluid,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Mott, Regime::Chaotic, Regime::Superfluid];

    pub fn hopping(self) -> f64 {
        match self {
            Regime::Mott => 1e-3,
            Regime::Chaotic => 0.1,
            Regime::Superfluid => 1e3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Mott => "mott",
            Regime::Chaotic => "chaotic",
            Regime::Superfluid => "superfluid",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HoppingValue {
    Preset(Regime),
    Value(f64),
}

impl HoppingValue {
    pub fn value(self) -> f64 {
        match self {
            HoppingValue::Preset(r) => r.hopping(),
            HoppingValue::Value(v) => v,
        }
    }
}

/// Either an explicit list or `points` log-spaced values between the bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HoppingGrid {
    List(Vec<HoppingValue>),
    Log {
        log_from: f64,
        log_to: f64,
        points: usize,
    },
}

impl HoppingGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            HoppingGrid::List(v) => v.iter().map(|h| h.value()).collect(),
            HoppingGrid::Log { log_from, log_to, points } => log_grid(*log_from, *log_to, *points),
        }
    }
}

pub fn log_grid(from: f64, to: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![from],
        _ => {
            let (a, b) = (from.ln(), to.ln());
            (0..points).map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp()).collect()
        }
    }
}

/// Which ratio the hopping grid is expressed in. `J/UN` uses N = sites
/// (unit filling).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HoppingAxis {
    #[default]
    JOverU,
    JOverUn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeSection {
    pub sites: usize,
    pub cutoff: usize,
    pub topology: Vec<TopologyKind>,
    pub hopping: HoppingGrid,
    pub hopping_axis: HoppingAxis,
    pub interaction: f64,
    pub disorder: Vec<f64>,
    /// Defaults to 10 when a point has disorder or finite shots, else 1.
    pub realizations: Option<usize>,
    pub injection_site: usize,
    pub cutoff_check: Vec<usize>,
}

impl Default for LatticeSection {
    fn default() -> Self {
        Self {
            sites: 5,
            cutoff: 3,
            topology: vec![TopologyKind::OpenChain],
            hopping: HoppingGrid::List(vec![HoppingValue::Preset(Regime::Chaotic)]),
            hopping_axis: HoppingAxis::JOverU,
            interaction: 1.0,
            disorder: vec![0.0],
            realizations: None,
            injection_site: 0,
            cutoff_check: vec![3, 4],
        }
    }
}

impl LatticeSection {
    /// Grid values converted to J/U.
    pub fn hopping_values(&self) -> Vec<f64> {
        let scale = match self.hopping_axis {
            HoppingAxis::JOverU => 1.0,
            HoppingAxis::JOverUn => self.sites as f64,
        };
        self.hopping.values().into_iter().map(|v| v * scale).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsSection {
    pub dt: Vec<f64>,
    pub optimize_dt: bool,
    pub virtual_nodes: usize,
    pub positivity_interval: usize,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        Self {
            dt: (1..=10).map(f64::from).collect(),
            optimize_dt: true,
            virtual_nodes: 10,
            positivity_interval: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    /// Defaults to 100 for J/U >= 0.1 and 500 below.
    pub washout: Option<usize>,
    pub train: usize,
    pub test: usize,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            washout: None,
            train: 1000,
            test: 1000,
        }
    }
}

pub fn default_washout(hopping: f64) -> usize {
    if hopping >= 0.1 {
        100
    } else {
        500
    }
}

impl ProtocolSection {
    pub fn split(&self, hopping: f64) -> SplitProtocol {
        SplitProtocol {
            washout: self.washout.unwrap_or_else(|| default_washout(hopping)),
            train: self.train,
            test: self.test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    Stm,
    ParityCheck,
    Narma,
}

/// What Δt optimization maximizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DtObjective {
    /// Largest index above threshold, ties broken by the summed test capacity.
    #[default]
    MaxIndex,
    /// Test capacity at one index.
    CapacityAt(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskFamily,
    pub degree: u32,
    /// Delays (STM, parity) or orders (NARMA); defaults 0..=15 and 2..=14.
    pub indices: Option<Vec<usize>>,
    pub threshold: f64,
    pub objective: DtObjective,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            kind: TaskFamily::Stm,
            degree: 1,
            indices: None,
            threshold: 0.8,
            objective: DtObjective::MaxIndex,
        }
    }
}

impl TaskSection {
    pub fn indices(&self) -> Vec<usize> {
        match &self.indices {
            Some(v) => v.clone(),
            None => match self.kind {
                TaskFamily::Narma => (2..=14).collect(),
                _ => (0..=15).collect(),
            },
        }
    }

    pub fn task(&self, index: usize) -> TaskKind {
        match self.kind {
            TaskFamily::Stm => TaskKind::Stm {
                delay: index,
                degree: self.degree,
            },
            TaskFamily::ParityCheck => TaskKind::ParityCheck { delay: index },
            TaskFamily::Narma => TaskKind::Narma { order: index },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutSection {
    pub beta: f64,
}

impl Default for ReadoutSection {
    fn default() -> Self {
        Self { beta: 1e-2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// Include the noiseless readout.
    pub ideal: bool,
    /// Finite measurement counts `N_m`.
    pub shots: Vec<u64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self { ideal: true, shots: vec![] }
    }
}

impl NoiseSection {
    /// `None` is the ideal readout.
    pub fn measurements(&self) -> Vec<Option<u64>> {
        let mut out = Vec::new();
        if self.ideal {
            out.push(None);
        }
        out.extend(self.shots.iter().map(|&s| Some(s)));
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub name: String,
    pub format: OutputFormat,
    /// `run` also writes the feature matrix and targets.
    pub features: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            name: "experiment".into(),
            format: OutputFormat::Csv,
            features: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralSection {
    pub parity: Parity,
    pub window: IndicatorWindow,
}

impl Default for SpectralSection {
    fn default() -> Self {
        Self {
            parity: Parity::Odd,
            window: IndicatorWindow::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub lattice: LatticeSection,
    pub dynamics: DynamicsSection,
    pub protocol: ProtocolSection,
    pub task: TaskSection,
    pub readout: ReadoutSection,
    pub noise: NoiseSection,
    pub output: OutputSection,
    pub spectral: SpectralSection,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.lattice;
        if l.sites == 0 {
            return Err(invalid("lattice.sites", "must be positive"));
        }
        if l.topology.is_empty() {
            return Err(invalid("lattice.topology", "empty list"));
        }
        let hops = l.hopping_values();
        if hops.is_empty() {
            return Err(invalid("lattice.hopping", "empty grid"));
        }
        if let Some(h) = hops.iter().find(|h| !(h.is_finite() && **h >= 0.0)) {
            return Err(invalid("lattice.hopping", format!("{h} is not a finite non-negative J/U")));
        }
        if !(l.interaction > 0.0 && l.interaction.is_finite()) {
            return Err(invalid("lattice.interaction", "U must be positive"));
        }
        if l.disorder.is_empty() {
            return Err(invalid("lattice.disorder", "empty list"));
        }
        if let Some(d) = l.disorder.iter().find(|d| !(0.0..1.0).contains(*d)) {
            return Err(invalid("lattice.disorder", format!("{d} not in [0, 1)")));
        }
        if l.realizations == Some(0) {
            return Err(invalid("lattice.realizations", "must be positive"));
        }
        if l.injection_site >= l.sites {
            return Err(Error::SiteOutOfRange {
                site: l.injection_site,
                sites: l.sites,
            });
        }
        let d = &self.dynamics;
        if d.dt.is_empty() {
            return Err(invalid("dynamics.dt", "empty grid"));
        }
        if let Some(t) = d.dt.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(invalid("dynamics.dt", format!("{t} must be finite and non-negative")));
        }
        if d.virtual_nodes == 0 || d.positivity_interval == 0 {
            return Err(invalid("dynamics", "virtual_nodes and positivity_interval must be positive"));
        }
        if self.protocol.train == 0 || self.protocol.test == 0 {
            return Err(invalid("protocol", "train and test lengths must be positive"));
        }
        let t = &self.task;
        if !(t.threshold > 0.0 && t.threshold < 1.0) {
            return Err(invalid("task.threshold", format!("{} not in (0, 1)", t.threshold)));
        }
        let indices = t.indices();
        if indices.is_empty() {
            return Err(invalid("task.indices", "empty grid"));
        }
        for &i in &indices {
            t.task(i).validate()?;
        }
        if !(self.readout.beta >= 0.0 && self.readout.beta.is_finite()) {
            return Err(invalid("readout.beta", "must be finite and non-negative"));
        }
        if self.noise.measurements().is_empty() {
            return Err(invalid("noise", "neither ideal nor finite shots requested"));
        }
        if self.noise.shots.contains(&0) {
            return Err(invalid("noise.shots", "must be positive"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form without the `output` section,
    /// first 16 characters.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output");
        }
        let canonical = value.to_string();
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Independent seed for a named stream, derived from the master seed and the
/// stream's coordinates.
pub fn derive_seed(master: u64, stream: &str, coordinates: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(stream.as_bytes());
    h.update([0u8]);
    for c in coordinates {
        h.update(c.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
