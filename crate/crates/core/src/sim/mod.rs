//! Seeded workload generation, constructed learning tasks, process-efficiency
//! arithmetic and report emission.

pub mod process;
pub mod report;
pub mod rulegen;
pub mod run;
pub mod tasks;
pub mod training;
pub mod workload;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use run::{simulate, SimulateOptions, SimulationRun};
pub use process::{simulate_process, Formula, MetricRow, ProcessReport, Rounding};
pub use workload::{generate_workload, Workload};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("scenario file: {0}")]
    Parse(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("training: {0}")]
    Training(String),
    #[error("engine: {0}")]
    Engine(#[from] crate::engine::EngineError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmountBand {
    pub name: String,
    pub low: f64,
    pub high: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weighted {
    pub name: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMix {
    pub online: f64,
    pub branch: f64,
    pub api: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocParams {
    /// Chance a compliant event carries a document.
    pub probability: f64,
    pub min_words: usize,
    pub max_words: usize,
}

/// Relative weights of the planted violation patterns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternMix {
    /// Three consecutive high-amount events on one account.
    pub burst: f64,
    pub offshore: f64,
    pub keyword_doc: f64,
    pub feature_shift: f64,
    /// Feature-space displacement of violating events, in noise units.
    pub shift_magnitude: f64,
    /// Amount range of burst steps.
    pub burst_low: f64,
    pub burst_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub manual_hours: f64,
    pub automated_hours: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessMetric {
    pub name: String,
    pub before: f64,
    pub after: f64,
    pub formula: Formula,
    pub rounding: Rounding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub count: usize,
    /// Events per second of event time.
    pub event_rate: f64,
    pub start_ms: i64,
    pub violation_rate: f64,
    pub accounts: usize,
    /// Share of events from the watch-listed accounts `acct-9001..=acct-9008`.
    pub watchlist_rate: f64,
    pub raw_dim: usize,
    pub latent_dim: usize,
    pub amount_bands: Vec<AmountBand>,
    pub regions: Vec<Weighted>,
    pub channels: ChannelMix,
    pub docs: DocParams,
    pub patterns: PatternMix,
    pub stages: Vec<Stage>,
    pub process_metrics: Vec<ProcessMetric>,
    /// Target share of events the rule set decides on its own.
    pub automation_coverage: f64,
}

const PRESETS: [(&str, &str); 2] = [
    ("securities-firm", include_str!("../../presets/securities-firm.toml")),
    ("cloud-provider", include_str!("../../presets/cloud-provider.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset(name: &str) -> Result<Scenario, SimError> {
    let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| SimError::UnknownPreset(name.to_owned()))?;
    Scenario::from_toml(text)
}

fn probability(name: &str, p: f64) -> Result<(), SimError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SimError::InvalidScenario(format!("{name} = {p} is not a probability")))
    }
}

fn weights(name: &str, w: impl IntoIterator<Item = f64>) -> Result<(), SimError> {
    let mut total = 0.0;
    for v in w {
        if !(v.is_finite() && v >= 0.0) {
            return Err(SimError::InvalidScenario(format!("{name}: weight {v} must be non-negative")));
        }
        total += v;
    }
    if total <= 0.0 {
        return Err(SimError::InvalidScenario(format!("{name}: weights sum to zero")));
    }
    Ok(())
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        probability("violation_rate", self.violation_rate)?;
        probability("watchlist_rate", self.watchlist_rate)?;
        probability("docs.probability", self.docs.probability)?;
        probability("automation_coverage", self.automation_coverage)?;
        if !(self.event_rate.is_finite() && self.event_rate > 0.0) {
            return Err(SimError::InvalidScenario("event_rate must be positive".into()));
        }
        if self.accounts == 0 || self.raw_dim == 0 || self.latent_dim == 0 || self.latent_dim > self.raw_dim {
            return Err(SimError::InvalidScenario("need accounts > 0 and 0 < latent_dim <= raw_dim".into()));
        }
        if self.start_ms < 0 {
            return Err(SimError::InvalidScenario("start_ms must be non-negative".into()));
        }
        weights("amount_bands", self.amount_bands.iter().map(|b| b.weight))?;
        for b in &self.amount_bands {
            if !(b.low > 0.0 && b.low <= b.high) {
                return Err(SimError::InvalidScenario(format!("band {}: need 0 < low <= high", b.name)));
            }
        }
        weights("regions", self.regions.iter().map(|r| r.weight))?;
        weights("channels", [self.channels.online, self.channels.branch, self.channels.api])?;
        let p = &self.patterns;
        weights("patterns", [p.burst, p.offshore, p.keyword_doc, p.feature_shift])?;
        if !(p.burst_low > 0.0 && p.burst_low <= p.burst_high) {
            return Err(SimError::InvalidScenario("patterns: need 0 < burst_low <= burst_high".into()));
        }
        if self.docs.min_words == 0 || self.docs.min_words > self.docs.max_words {
            return Err(SimError::InvalidScenario("docs: need 0 < min_words <= max_words".into()));
        }
        for st in &self.stages {
            if !(st.manual_hours > 0.0 && st.automated_hours >= 0.0) {
                return Err(SimError::InvalidScenario(format!("stage {}: hours must be positive", st.name)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for name in preset_names() {
            let s = preset(name).unwrap();
            assert_eq!(s.name, name);
            assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
        }
        assert!(matches!(preset("bank"), Err(SimError::UnknownPreset(_))));
    }

    #[test]
    fn invalid_probability_rejected() {
        let mut s = preset("securities-firm").unwrap();
        s.violation_rate = 1.5;
        assert!(s.validate().is_err());
    }
}
