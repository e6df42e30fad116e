//! Input sequences and targets for the memory and nonlinear benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// NARMA recurrences are declared divergent once `|y|` exceeds this.
pub const NARMA_DIVERGENCE: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputDistribution {
    #[serde(rename = "uniform01")]
    Uniform01,
    #[serde(rename = "binary01")]
    Binary01,
    #[serde(rename = "uniform-0-0.2")]
    Uniform0To02,
}

impl InputDistribution {
    pub fn as_str(self) -> &'static str {
        match self {
            InputDistribution::Uniform01 => "uniform01",
            InputDistribution::Binary01 => "binary01",
            InputDistribution::Uniform0To02 => "uniform-0-0.2",
        }
    }

    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            InputDistribution::Uniform01 => rng.random::<f64>(),
            InputDistribution::Binary01 => f64::from(u8::from(rng.random_bool(0.5))),
            InputDistribution::Uniform0To02 => 0.2 * rng.random::<f64>(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskKind {
    /// `y_k = s_{k-τ}^d`
    Stm { delay: usize, degree: u32 },
    /// `y_k = (s_k + ... + s_{k-τ}) mod 2`
    ParityCheck { delay: usize },
    /// NARMA of the given order (`>= 2`)
    Narma { order: usize },
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Stm { .. } => "stm",
            TaskKind::ParityCheck { .. } => "parity-check",
            TaskKind::Narma { .. } => "narma",
        }
    }

    pub fn input_distribution(&self) -> InputDistribution {
        match self {
            TaskKind::Stm { .. } => InputDistribution::Uniform01,
            TaskKind::ParityCheck { .. } => InputDistribution::Binary01,
            TaskKind::Narma { .. } => InputDistribution::Uniform0To02,
        }
    }

    /// Same task family with a different delay (STM, parity) or order (NARMA).
    pub fn with_index(&self, index: usize) -> TaskKind {
        match *self {
            TaskKind::Stm { degree, .. } => TaskKind::Stm { delay: index, degree },
            TaskKind::ParityCheck { .. } => TaskKind::ParityCheck { delay: index },
            TaskKind::Narma { .. } => TaskKind::Narma { order: index },
        }
    }

    /// Delay (STM, parity) or order (NARMA).
    pub fn index(&self) -> usize {
        match *self {
            TaskKind::Stm { delay, .. } | TaskKind::ParityCheck { delay } => delay,
            TaskKind::Narma { order } => order,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TaskKind::Stm { degree: 0, .. } => Err(invalid("degree", "STM degree must be at least 1")),
            TaskKind::Narma { order } if order < 2 => Err(invalid("order", format!("NARMA order {order} < 2"))),
            _ => Ok(()),
        }
    }

    pub fn targets(&self, inputs: &[f64]) -> Result<Targets> {
        match *self {
            TaskKind::Stm { delay, degree } => stm_targets(inputs, delay, degree),
            TaskKind::ParityCheck { delay } => parity_check_targets(inputs, delay),
            TaskKind::Narma { order } => narma_targets(inputs, order),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskKind::Stm { delay, degree } => write!(f, "stm(tau={delay},d={degree})"),
            TaskKind::ParityCheck { delay } => write!(f, "parity-check(tau={delay})"),
            TaskKind::Narma { order } => write!(f, "narma(n={order})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub distribution: InputDistribution,
    pub seed: u64,
}

impl TaskSpec {
    /// Pairs the task with its canonical input distribution.
    pub fn new(kind: TaskKind, seed: u64) -> Self {
        Self {
            kind,
            distribution: kind.input_distribution(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        if self.distribution != self.kind.input_distribution() {
            return Err(invalid(
                "distribution",
                format!("{} uses {} inputs, not {}", self.kind.name(), self.kind.input_distribution().as_str(), self.distribution.as_str()),
            ));
        }
        Ok(())
    }
}

/// I.i.d. draws from the spec's distribution, reproducible from its seed.
pub fn generate_inputs(spec: &TaskSpec, length: usize) -> Result<Vec<f64>> {
    if length == 0 {
        return Err(invalid("length", "input sequence must be non-empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..length).map(|_| spec.distribution.sample(&mut rng)).collect())
}

/// Target sequence; entries before `first_valid` are undefined and excluded.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub values: Vec<f64>,
    pub first_valid: usize,
}

impl Targets {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_valid(&self, k: usize) -> bool {
        k >= self.first_valid && k < self.values.len()
    }

    /// CSV `step,target,valid` with the same step indices as the feature CSV.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "target", "valid"])?;
        for (k, v) in self.values.iter().enumerate() {
            w.write_record([k.to_string(), format!("{v:e}"), u8::from(self.is_valid(k)).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_delay(inputs: &[f64], delay: usize) -> Result<()> {
    if delay >= inputs.len() {
        return Err(invalid("delay", format!("delay {delay} needs more than {} inputs", inputs.len())));
    }
    Ok(())
}

/// `y_k = s_{k-τ}^d`; the first `τ` entries are invalid (set to NaN).
pub fn stm_targets(inputs: &[f64], delay: usize, degree: u32) -> Result<Targets> {
    check_delay(inputs, delay)?;
    if degree == 0 {
        return Err(invalid("degree", "STM degree must be at least 1"));
    }
    let values = (0..inputs.len())
        .map(|k| if k < delay { f64::NAN } else { inputs[k - delay].powi(degree as i32) })
        .collect();
    Ok(Targets {
        values,
        first_valid: delay,
    })
}

/// `y_k = (s_k + s_{k-1} + ... + s_{k-τ}) mod 2` for binary inputs.
pub fn parity_check_targets(inputs: &[f64], delay: usize) -> Result<Targets> {
    check_delay(inputs, delay)?;
    if let Some(&bad) = inputs.iter().find(|&&s| s != 0.0 && s != 1.0) {
        return Err(Error::InputRange {
            value: bad,
            range: "{0, 1}",
        });
    }
    let bits: Vec<u32> = inputs.iter().map(|&s| s as u32).collect();
    let mut window: u32 = bits[..delay].iter().sum();
    let mut values = vec![f64::NAN; inputs.len()];
    for k in delay..bits.len() {
        window += bits[k];
        values[k] = f64::from(window % 2);
        window -= bits[k - delay];
    }
    Ok(Targets {
        values,
        first_valid: delay,
    })
}

/// NARMA of order `n` with `y` and `s` zero before the first step. Order 2
/// uses the dedicated second-order recurrence.
pub fn narma_targets(inputs: &[f64], order: usize) -> Result<Targets> {
    if order < 2 {
        return Err(invalid("order", format!("NARMA order {order} < 2")));
    }
    if let Some(&bad) = inputs.iter().find(|&&s| !(0.0..=0.2).contains(&s)) {
        return Err(Error::InputRange {
            value: bad,
            range: "[0, 0.2]",
        });
    }
    let s = |k: isize| if k < 0 { 0.0 } else { inputs[k as usize] };
    let mut y: Vec<f64> = Vec::with_capacity(inputs.len());
    let yv = |y: &Vec<f64>, k: isize| if k < 0 { 0.0 } else { y[k as usize] };
    for k in 0..inputs.len() as isize {
        let prev = yv(&y, k - 1);
        let next = if order == 2 {
            0.4 * prev + 0.4 * prev * yv(&y, k - 2) + 0.6 * s(k - 1).powi(3) + 0.1
        } else {
            let window: f64 = (1..=order as isize).map(|j| yv(&y, k - j)).sum();
            0.3 * prev + 0.05 * prev * window + 1.5 * s(k - order as isize) * s(k - 1) + 0.1
        };
        if !next.is_finite() || next.abs() > NARMA_DIVERGENCE {
            return Err(Error::Divergence {
                step: k as usize,
                value: next.abs(),
            });
        }
        y.push(next);
    }
    Ok(Targets {
        values: y,
        first_valid: 0,
    })
}
