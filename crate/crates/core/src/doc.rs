//! Compliance-document classifier: tokenizer, TF-IDF vectors and softmax
//! regression trained on the autodiff core.
//!
//! This is a lexical stand-in for a pretrained transformer. The interface is
//! text in, label plus probability simplex out, so a different backend can be
//! dropped in behind [`DocClassifier::classify`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{self, softmax, Adam, CheckpointError, DenseParams, Gradients, Graph, NnError, Optimizer, ParamStore, Tensor};
use crate::rng::SplitMix64;

pub const VOCAB_FILE: &str = "vocab.json";
pub const META_FILE: &str = "classifier.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocClass {
    DataSecurity,
    Privacy,
    Operational,
    NonComplianceRisk,
}

impl DocClass {
    pub const ALL: [DocClass; 4] =
        [DocClass::DataSecurity, DocClass::Privacy, DocClass::Operational, DocClass::NonComplianceRisk];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DocClass::DataSecurity => "data_security",
            DocClass::Privacy => "privacy",
            DocClass::Operational => "operational",
            DocClass::NonComplianceRisk => "non_compliance_risk",
        }
    }
}

impl fmt::Display for DocClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DocClass {
    type Err = DocError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DocClass::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| DocError::UnknownClass(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum DocError {
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("unknown document class {0:?}")]
    UnknownClass(String),
    #[error("no training documents")]
    EmptyCorpus,
    #[error("vocabulary file: {0}")]
    BadVocabulary(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    terms: Vec<String>,
    df: Vec<usize>,
    n_docs: usize,
}

impl Vocabulary {
    /// Terms are indexed in order of first appearance across `docs`.
    pub fn fit<S: AsRef<str>>(docs: &[S]) -> Self {
        let mut vocab = Vocabulary { n_docs: docs.len(), ..Default::default() };
        for doc in docs {
            let mut seen: Vec<usize> = Vec::new();
            for tok in tokenize(doc.as_ref()) {
                let idx = match vocab.index.get(&tok) {
                    Some(&i) => i,
                    None => {
                        let i = vocab.terms.len();
                        vocab.index.insert(tok.clone(), i);
                        vocab.terms.push(tok);
                        vocab.df.push(0);
                        i
                    }
                };
                if !seen.contains(&idx) {
                    seen.push(idx);
                    vocab.df[idx] += 1;
                }
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn df(&self, index: usize) -> usize {
        self.df[index]
    }

    pub fn term(&self, index: usize) -> &str {
        &self.terms[index]
    }

    pub fn idf(&self, index: usize) -> f64 {
        (self.n_docs as f64 / self.df[index] as f64).ln()
    }

    /// Sparse `(index, weight)` pairs sorted by index; zero weights omitted.
    pub fn tfidf(&self, tokens: &[String]) -> Result<Vec<(usize, f64)>, DocError> {
        if self.is_empty() {
            return Err(DocError::EmptyVocabulary);
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for tok in tokens {
            if let Some(i) = self.index_of(tok) {
                *counts.entry(i).or_default() += 1;
            }
        }
        Ok(counts
            .into_iter()
            .map(|(i, tf)| (i, tf as f64 * self.idf(i)))
            .filter(|&(_, w)| w != 0.0)
            .collect())
    }

    pub fn dense_tfidf(&self, tokens: &[String]) -> Result<Vec<f64>, DocError> {
        let mut out = vec![0.0; self.len()];
        for (i, w) in self.tfidf(tokens)? {
            out[i] = w;
        }
        Ok(out)
    }

    /// `{term: [index, df]}`; `n_docs` is stored separately.
    pub fn to_json(&self) -> serde_json::Value {
        let map: BTreeMap<&str, [usize; 2]> =
            self.terms.iter().enumerate().map(|(i, t)| (t.as_str(), [i, self.df[i]])).collect();
        serde_json::to_value(map).expect("string keys")
    }

    pub fn from_json(value: &serde_json::Value, n_docs: usize) -> Result<Self, DocError> {
        let map: BTreeMap<String, [usize; 2]> = serde_json::from_value(value.clone())?;
        let mut entries: Vec<(usize, String, usize)> = map.into_iter().map(|(t, [i, df])| (i, t, df)).collect();
        entries.sort();
        let mut vocab = Vocabulary { n_docs, ..Default::default() };
        for (expected, (i, term, df)) in entries.into_iter().enumerate() {
            if i != expected {
                return Err(DocError::BadVocabulary(format!("indices not dense at {expected}")));
            }
            if df == 0 || df > n_docs {
                return Err(DocError::BadVocabulary(format!("term {term:?} has df {df}")));
            }
            vocab.index.insert(term.clone(), i);
            vocab.terms.push(term);
            vocab.df.push(df);
        }
        Ok(vocab)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DocTrainConfig {
    fn default() -> Self {
        Self { epochs: 30, learning_rate: 0.05, batch_size: 32, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDoc {
    pub text: String,
    pub class: DocClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: DocClass,
    pub probabilities: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    n_docs: usize,
    classes: Vec<DocClass>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocClassifier {
    vocab: Vocabulary,
    params: ParamStore,
    head: DenseParams,
}

impl DocClassifier {
    /// Zero weights: every text gets the uniform distribution.
    pub fn zeroed(vocab: Vocabulary) -> Self {
        let mut params = ParamStore::new();
        let head = DenseParams::register_zeros(&mut params, "doc", vocab.len(), DocClass::ALL.len());
        Self { vocab, params, head }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn logits(&self, text: &str) -> Vec<f64> {
        let mut out = self.params.get(self.head.b).data().to_vec();
        if self.vocab.is_empty() {
            return out;
        }
        let w = self.params.get(self.head.w).data();
        let v = self.vocab.len();
        let sparse = self.vocab.tfidf(&tokenize(text)).unwrap_or_default();
        for (k, o) in out.iter_mut().enumerate() {
            *o += sparse.iter().map(|&(i, x)| w[k * v + i] * x).sum::<f64>();
        }
        out
    }

    pub fn classify(&self, text: &str) -> Classification {
        let probabilities = softmax(&self.logits(text));
        Classification { label: DocClass::ALL[argmax(&probabilities)], probabilities }
    }

    pub fn accuracy(&self, docs: &[LabeledDoc]) -> f64 {
        if docs.is_empty() {
            return 0.0;
        }
        docs.iter().filter(|d| self.classify(&d.text).label == d.class).count() as f64 / docs.len() as f64
    }

    pub fn save(&self, dir: &Path) -> Result<(), DocError> {
        nn::save_checkpoint(dir, &self.params)?;
        fs::write(dir.join(VOCAB_FILE), serde_json::to_vec(&self.vocab.to_json())?)?;
        let meta = Meta { n_docs: self.vocab.n_docs(), classes: DocClass::ALL.to_vec() };
        fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DocError> {
        let meta: Meta = serde_json::from_slice(&fs::read(dir.join(META_FILE))?)?;
        if meta.classes != DocClass::ALL {
            return Err(DocError::BadVocabulary("class list differs from the built-in taxonomy".into()));
        }
        let vocab_json: serde_json::Value = serde_json::from_slice(&fs::read(dir.join(VOCAB_FILE))?)?;
        let vocab = Vocabulary::from_json(&vocab_json, meta.n_docs)?;
        let params = nn::load_checkpoint(dir)?;
        let head = DenseParams::lookup(&params, "doc")?;
        if head.input != vocab.len() || head.output != DocClass::ALL.len() {
            return Err(NnError::ShapeMismatch {
                op: "doc classifier",
                detail: format!("weights {}x{} for vocabulary of {}", head.output, head.input, vocab.len()),
            }
            .into());
        }
        Ok(Self { vocab, params, head })
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fits the vocabulary on `train` and minimizes mean softmax cross-entropy with Adam.
pub fn train_doc_classifier(train: &[LabeledDoc], config: &DocTrainConfig) -> Result<DocClassifier, DocError> {
    if train.is_empty() {
        return Err(DocError::EmptyCorpus);
    }
    let texts: Vec<&str> = train.iter().map(|d| d.text.as_str()).collect();
    let vocab = Vocabulary::fit(&texts);
    if vocab.is_empty() {
        return Err(DocError::EmptyVocabulary);
    }
    let inputs: Vec<Vec<f64>> =
        train.iter().map(|d| vocab.dense_tfidf(&tokenize(&d.text))).collect::<Result<_, _>>()?;
    let mut model = DocClassifier::zeroed(vocab);
    let mut opt = Adam::new(config.learning_rate);
    let mut rng = SplitMix64::new(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grads = Gradients::zeros_for(&model.params);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            grads.zero();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let mut g = Graph::new(&model.params);
                let x = g.input(Tensor::vector(inputs[i].clone()))?;
                let logits = model.head.forward(&mut g, x)?;
                let loss = g.softmax_cross_entropy(logits, train[i].class.index())?;
                total += g.value(loss).item();
                g.backward_into(loss, &mut grads, scale)?;
            }
            opt.step(&mut model.params, &grads);
        }
        log::debug!("doc epoch {epoch}: loss {:.5}", total / train.len() as f64);
    }
    Ok(model)
}
