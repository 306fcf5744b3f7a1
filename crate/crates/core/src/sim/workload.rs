//! Seeded event streams with planted violation patterns.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::Distribution;

use super::tasks::{compose_doc, gaussian_vec};
use super::{Scenario, SimError};
use crate::doc::DocClass;
use crate::domain::{Channel, Event, GroundTruth, Label, LabelOrigin};
use crate::rng::SplitMix64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    Burst,
    Offshore,
    KeywordDoc,
    FeatureShift,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Workload {
    pub events: Vec<Event>,
    pub labels: Vec<Label>,
}

impl Workload {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|l| l.ground_truth == GroundTruth::Violation).count()
    }

    /// Events as JSON lines.
    pub fn write_events<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_labels<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for l in &self.labels {
            serde_json::to_writer(&mut out, l)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Fixed linear map from the latent factors to the raw features, plus one
/// unit displacement direction per planted pattern.
pub struct FeatureModel {
    loadings: Vec<Vec<f64>>,
    directions: [Vec<f64>; 4],
    noise: f64,
}

impl FeatureModel {
    pub fn new(raw_dim: usize, latent_dim: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed ^ 0xFEA7);
        let scale = 1.0 / (latent_dim as f64).sqrt();
        let loadings = (0..raw_dim).map(|_| gaussian_vec(&mut rng, latent_dim).iter().map(|v| v * scale).collect()).collect();
        let mut unit = || {
            let v = gaussian_vec(&mut rng, raw_dim);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let directions = [unit(), unit(), unit(), unit()];
        Self { loadings, directions, noise: 0.3 }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, shift: Option<(Pattern, f64)>) -> Vec<f64> {
        let z = gaussian_vec(rng, self.loadings[0].len());
        let mut x: Vec<f64> = self
            .loadings
            .iter()
            .map(|row| row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + self.noise * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        if let Some((pattern, magnitude)) = shift {
            let d = &self.directions[pattern as usize];
            let scale = magnitude * rng.random_range(0.75..1.25);
            for (xi, di) in x.iter_mut().zip(d) {
                *xi += scale * di;
            }
        }
        x
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, low: f64, high: f64) -> f64 {
    if low == high {
        return low;
    }
    let a = rng.random_range(low.ln()..=high.ln()).exp();
    (a * 100.0).round() / 100.0
}

/// Per-slot violation probability that yields `rate` violating events once
/// burst slots expand into three events each.
pub fn slot_violation_probability(rate: f64, burst_share: f64) -> f64 {
    rate / (1.0 + 2.0 * burst_share * (1.0 - rate))
}

/// Generates `scenario.count` events and one synthetic label per event.
///
/// Violations are planted as amount bursts (three consecutive high-amount
/// events on one account), offshore routing, non-compliance documents, or a
/// pure feature-space displacement. Every violating event is also displaced
/// in feature space so the anomaly detector has signal.
pub fn generate_workload(scenario: &Scenario) -> Result<Workload, SimError> {
    scenario.validate()?;
    let mut rng = SplitMix64::new(scenario.seed);
    let features = FeatureModel::new(scenario.raw_dim, scenario.latent_dim, scenario.seed);
    let err = |e: rand::distr::weighted::Error| SimError::InvalidScenario(e.to_string());
    let bands = WeightedIndex::new(scenario.amount_bands.iter().map(|b| b.weight)).map_err(err)?;
    let regions = WeightedIndex::new(scenario.regions.iter().map(|r| r.weight)).map_err(err)?;
    let c = &scenario.channels;
    let channels = WeightedIndex::new([c.online, c.branch, c.api]).map_err(err)?;
    let p = &scenario.patterns;
    let patterns = WeightedIndex::new([p.burst, p.offshore, p.keyword_doc, p.feature_shift]).map_err(err)?;
    let burst_share = p.burst / (p.burst + p.offshore + p.keyword_doc + p.feature_shift);
    let q = slot_violation_probability(scenario.violation_rate, burst_share);
    let step_ms = 1_000.0 / scenario.event_rate;

    let mut events = Vec::with_capacity(scenario.count);
    let mut labels = Vec::with_capacity(scenario.count);
    while events.len() < scenario.count {
        let account = if rng.random_bool(scenario.watchlist_rate) {
            format!("acct-{}", 9001 + rng.random_range(0..8))
        } else {
            format!("acct-{:05}", rng.random_range(0..scenario.accounts))
        };
        let violation = rng.random_bool(q);
        let pattern = violation.then(|| [Pattern::Burst, Pattern::Offshore, Pattern::KeywordDoc, Pattern::FeatureShift][patterns.sample(&mut rng)]);
        let steps = if pattern == Some(Pattern::Burst) { 3 } else { 1 };
        for _ in 0..steps {
            if events.len() == scenario.count {
                break;
            }
            let i = events.len();
            let band = &scenario.amount_bands[bands.sample(&mut rng)];
            let mut amount = log_uniform(&mut rng, band.low, band.high);
            let mut region = scenario.regions[regions.sample(&mut rng)].name.clone();
            let channel = Channel::ALL[channels.sample(&mut rng)];
            let mut doc_text = None;
            match pattern {
                Some(Pattern::Burst) => amount = log_uniform(&mut rng, p.burst_low, p.burst_high),
                Some(Pattern::Offshore) => region = "offshore".into(),
                Some(Pattern::KeywordDoc) => {
                    doc_text = Some(compose_doc(DocClass::NonComplianceRisk, &mut rng, scenario.docs.min_words, scenario.docs.max_words, 0.0));
                }
                Some(Pattern::FeatureShift) | None => {}
            }
            if pattern.is_none() && rng.random_bool(scenario.docs.probability) {
                let class = DocClass::ALL[rng.random_range(0..3)];
                doc_text = Some(compose_doc(class, &mut rng, scenario.docs.min_words, scenario.docs.max_words, 0.0));
            }
            let raw = features.sample(&mut rng, pattern.map(|pt| (pt, p.shift_magnitude)));
            let id = format!("{}-{:07}", scenario.name, i);
            labels.push(Label {
                case_id: id.clone(),
                ground_truth: if violation { GroundTruth::Violation } else { GroundTruth::Compliant },
                origin: LabelOrigin::Synthetic,
            });
            events.push(Event {
                id,
                timestamp: scenario.start_ms + (i as f64 * step_ms) as i64,
                account: account.clone(),
                amount,
                channel,
                region,
                features: Some(raw),
                doc_text,
            });
        }
    }
    Ok(Workload { events, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::preset;

    fn small(count: usize, rate: f64) -> Scenario {
        let mut s = preset("securities-firm").unwrap();
        s.count = count;
        s.violation_rate = rate;
        s
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = small(300, 0.52);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        generate_workload(&s).unwrap().write_events(&mut a).unwrap();
        generate_workload(&s).unwrap().write_events(&mut b).unwrap();
        assert_eq!(a, b);
        let mut other = s.clone();
        other.seed += 1;
        let mut c = Vec::new();
        generate_workload(&other).unwrap().write_events(&mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_rate_means_no_positives() {
        let w = generate_workload(&small(500, 0.0)).unwrap();
        assert_eq!(w.positives(), 0);
        assert_eq!(w.events.len(), 500);
    }

    #[test]
    fn slot_probability_inverts_burst_expansion() {
        for &(r, b) in &[(0.52, 0.3), (0.1, 0.5), (1.0, 0.2), (0.0, 0.4)] {
            let q = slot_violation_probability(r, b);
            let frac = q * (1.0 + 2.0 * b) / (1.0 + 2.0 * q * b);
            assert!((frac - r).abs() < 1e-12);
        }
    }

    #[test]
    fn timestamps_are_monotone_and_ids_unique() {
        let w = generate_workload(&small(400, 0.52)).unwrap();
        assert!(w.events.windows(2).all(|p| p[0].timestamp <= p[1].timestamp));
        let ids: std::collections::BTreeSet<_> = w.events.iter().map(|e| &e.id).collect();
        assert_eq!(ids.len(), 400);
        assert!(w.events.iter().all(|e| e.validate().is_ok()));
    }
}
