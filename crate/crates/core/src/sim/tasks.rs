//! Constructed learning tasks with known structure: the burst sequence task,
//! a keyword document corpus and an injected-anomaly benchmark.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::doc::{DocClass, LabeledDoc};
use crate::domain::{Channel, Event, GroundTruth};
use crate::engine::step_features;
use crate::rng::SplitMix64;
use crate::sequence::SequenceSample;

/// Step amounts at or above this count as high.
pub const HIGH_AMOUNT: f64 = 20_000.0;
pub const BURST_RUN: usize = 3;

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, low: f64, high: f64) -> f64 {
    let a = rng.random_range(low.ln()..=high.ln()).exp();
    (a * 100.0).round() / 100.0
}

/// Longest run of consecutive steps with amount ≥ [`HIGH_AMOUNT`].
pub fn longest_high_run(amounts: &[f64]) -> usize {
    let (mut best, mut cur) = (0, 0);
    for &a in amounts {
        cur = if a >= HIGH_AMOUNT { cur + 1 } else { 0 };
        best = best.max(cur);
    }
    best
}

fn synthetic_step(amount: f64, rng: &mut SplitMix64) -> Vec<f64> {
    let e = Event {
        id: String::new(),
        timestamp: 0,
        account: String::new(),
        amount,
        channel: *Channel::ALL.choose(rng).expect("non-empty"),
        region: if rng.random_bool(0.1) { "offshore".into() } else { "domestic".into() },
        features: None,
        doc_text: None,
    };
    step_features(&e)
}

/// Amount sequences of length `len` labelled violation iff they contain
/// [`BURST_RUN`] consecutive high steps. Negatives carry isolated highs and
/// pairs so that a single large amount is not enough.
pub fn burst_amounts(n: usize, len: usize, seed: u64) -> Vec<(Vec<f64>, GroundTruth)> {
    assert!(len >= BURST_RUN, "sequence shorter than a burst");
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|i| {
            let positive = i % 2 == 0;
            let mut amounts: Vec<f64> = (0..len)
                .map(|_| if rng.random_bool(0.2) { log_uniform(&mut rng, HIGH_AMOUNT, 200_000.0) } else { log_uniform(&mut rng, 50.0, 8_000.0) })
                .collect();
            if positive {
                let at = rng.random_range(0..=len - BURST_RUN);
                for a in &mut amounts[at..at + BURST_RUN] {
                    *a = log_uniform(&mut rng, HIGH_AMOUNT, 200_000.0);
                }
            } else {
                // Break every run of three by lowering its third step.
                let mut run = 0;
                for a in amounts.iter_mut() {
                    run = if *a >= HIGH_AMOUNT { run + 1 } else { 0 };
                    if run == BURST_RUN {
                        *a = log_uniform(&mut rng, 50.0, 8_000.0);
                        run = 0;
                    }
                }
            }
            let label = if longest_high_run(&amounts) >= BURST_RUN { GroundTruth::Violation } else { GroundTruth::Compliant };
            (amounts, label)
        })
        .collect()
}

/// The burst task as engine step-feature sequences.
pub fn burst_task(n: usize, len: usize, seed: u64) -> Vec<SequenceSample> {
    let mut rng = SplitMix64::new(seed ^ 0xB0B5);
    burst_amounts(n, len, seed)
        .into_iter()
        .map(|(amounts, label)| SequenceSample {
            sequence: amounts.iter().map(|&a| synthetic_step(a, &mut rng)).collect(),
            label,
        })
        .collect()
}

/// Same sequences with labels permuted; a learner should fall to chance.
pub fn shuffle_labels(samples: &[SequenceSample], seed: u64) -> Vec<SequenceSample> {
    let mut labels: Vec<GroundTruth> = samples.iter().map(|s| s.label).collect();
    labels.shuffle(&mut SplitMix64::new(seed));
    samples.iter().zip(labels).map(|(s, label)| SequenceSample { sequence: s.sequence.clone(), label }).collect()
}

pub fn class_keywords(class: DocClass) -> &'static [&'static str] {
    match class {
        DocClass::DataSecurity => &[
            "encryption", "breach", "firewall", "credentials", "malware", "intrusion", "vulnerability", "patching",
            "ransomware", "phishing", "keys", "endpoint",
        ],
        DocClass::Privacy => &[
            "consent", "personal", "gdpr", "anonymization", "retention", "profiling", "cookies", "erasure",
            "pseudonymous", "biometric", "minimization", "portability",
        ],
        DocClass::Operational => &[
            "settlement", "reconciliation", "outage", "vendor", "continuity", "backlog", "workflow", "staffing",
            "maintenance", "capacity", "escalation", "handover",
        ],
        DocClass::NonComplianceRisk => &[
            "sanctions", "laundering", "structuring", "bribery", "kickback", "insider", "fraud", "evasion",
            "misreporting", "embargo", "smurfing", "shell",
        ],
    }
}

pub const FILLER: &[&str] = &[
    "the", "report", "quarterly", "team", "review", "account", "client", "process", "update", "system", "policy",
    "notice", "department", "regarding", "please", "attached", "summary", "meeting", "transaction", "office",
    "request", "status", "internal", "memo", "follow", "up", "with", "for", "and", "on", "of", "to",
];

/// A document for `class`: a few class keywords among filler words. With
/// probability `confusion` one keyword is borrowed from another class.
pub fn compose_doc<R: Rng + ?Sized>(class: DocClass, rng: &mut R, min_words: usize, max_words: usize, confusion: f64) -> String {
    let n_kw = rng.random_range(2..=4);
    let mut words: Vec<&str> = (0..n_kw).map(|_| *class_keywords(class).choose(rng).expect("keywords")).collect();
    if rng.random_bool(confusion) {
        let other = DocClass::ALL[(class.index() + rng.random_range(1..4)) % 4];
        words[0] = class_keywords(other).choose(rng).expect("keywords");
    }
    let n_fill = rng.random_range(min_words..=max_words.max(min_words));
    words.extend((0..n_fill).map(|_| *FILLER.choose(rng).expect("filler")));
    words.shuffle(rng);
    words.join(" ")
}

/// Balanced keyword corpus: `n_train` and `n_test` documents over the four classes.
pub fn doc_corpus(n_train: usize, n_test: usize, seed: u64) -> (Vec<LabeledDoc>, Vec<LabeledDoc>) {
    let mut rng = SplitMix64::new(seed);
    let mut make = |n: usize| -> Vec<LabeledDoc> {
        (0..n)
            .map(|i| {
                let class = DocClass::ALL[i % 4];
                LabeledDoc { text: compose_doc(class, &mut rng, 8, 20, 0.1), class }
            })
            .collect()
    };
    let train = make(n_train);
    let test = make(n_test);
    (train, test)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyBenchmark {
    pub train: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
    pub test_is_anomaly: Vec<bool>,
}

/// Inliers from a three-component Gaussian mixture in `dim` dimensions;
/// anomalies drawn uniformly from a box four times the mixture's spread and
/// kept only if they lie at least 3σ·√dim from every centre.
pub fn anomaly_benchmark(dim: usize, n_train: usize, n_test_inliers: usize, n_anomalies: usize, seed: u64) -> AnomalyBenchmark {
    let mut rng = SplitMix64::new(seed);
    let sigma = 0.5;
    let centres: Vec<Vec<f64>> = (0..3).map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let noise = Normal::new(0.0, sigma).expect("valid sigma");
    let inlier = |rng: &mut SplitMix64| -> Vec<f64> {
        let c = centres.choose(rng).expect("centres");
        c.iter().map(|m| m + noise.sample(rng)).collect()
    };
    let train: Vec<Vec<f64>> = (0..n_train).map(|_| inlier(&mut rng)).collect();
    let mut test: Vec<Vec<f64>> = (0..n_test_inliers).map(|_| inlier(&mut rng)).collect();
    let min_dist = 3.0 * sigma * (dim as f64).sqrt();
    let mut anomalies = Vec::with_capacity(n_anomalies);
    while anomalies.len() < n_anomalies {
        let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-6.0..6.0)).collect();
        let far = centres.iter().all(|c| crate::linalg::squared_distance(c, &p).sqrt() >= min_dist);
        if far {
            anomalies.push(p);
        }
    }
    let mut test_is_anomaly = vec![false; test.len()];
    test.extend(anomalies);
    test_is_anomaly.resize(test.len(), true);
    AnomalyBenchmark { train, test, test_is_anomaly }
}

/// ROC-AUC by rank sum, ties at half credit. `scores` rank positives high.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return 0.5;
    }
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

/// Standard normal draws, for callers that only need a quick noise vector.
pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::pairwise_auc;

    #[test]
    fn burst_labels_follow_the_run_rule() {
        let data = burst_amounts(400, 20, 3);
        let pos = data.iter().filter(|(_, l)| *l == GroundTruth::Violation).count();
        assert_eq!(pos, 200);
        for (a, l) in &data {
            assert_eq!(longest_high_run(a) >= 3, *l == GroundTruth::Violation);
        }
        // Negatives still contain high steps.
        assert!(data.iter().any(|(a, l)| *l == GroundTruth::Compliant && longest_high_run(a) == 2));
    }

    #[test]
    fn burst_task_is_deterministic() {
        assert_eq!(burst_task(10, 20, 5), burst_task(10, 20, 5));
        assert_eq!(burst_task(10, 20, 5)[0].sequence.len(), 20);
    }

    #[test]
    fn roc_auc_matches_pairwise_oracle() {
        let mut rng = SplitMix64::new(9);
        let scores: Vec<f64> = (0..300).map(|_| (rng.random_range(0..20) as f64) / 4.0).collect();
        let labels: Vec<bool> = (0..300).map(|_| rng.random_bool(0.3)).collect();
        let pos: Vec<f64> = scores.iter().zip(&labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
        let neg: Vec<f64> = scores.iter().zip(&labels).filter(|(_, &l)| !l).map(|(s, _)| *s).collect();
        assert!((roc_auc(&scores, &labels) - pairwise_auc(&pos, &neg)).abs() < 1e-12);
    }

    #[test]
    fn corpus_is_balanced_and_keyword_bearing() {
        let (train, test) = doc_corpus(80, 20, 1);
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        for class in DocClass::ALL {
            assert_eq!(train.iter().filter(|d| d.class == class).count(), 20);
        }
    }

    #[test]
    fn anomalies_are_far_from_centres() {
        let b = anomaly_benchmark(4, 50, 30, 10, 2);
        assert_eq!(b.test.len(), 40);
        assert_eq!(b.test_is_anomaly.iter().filter(|&&a| a).count(), 10);
    }
}
