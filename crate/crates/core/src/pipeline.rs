//! Two-stage extraction.
//!
//! Stage 1 asks a backend for the sentence's predicates. Stage 2 encodes the
//! sentence with one sentinel group per predicate, asks a (possibly
//! different) backend to fill the groups, and decodes triples. Under the
//! voting policy stage 2 runs once per generation order and the results are
//! merged by [`majority_vote`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::{majority_vote, AnchorScheme, GenerationOrder};
use crate::backend::{generate_checked, BackendError, SeqBackend};
use crate::codec::{
    build_stage2_input, contains_sentinel, parse_stage1_output, parse_stage2_output, DecodeWarning,
    EncodedInstance, Sentence, Triple,
};

/// Triples and warnings per encoded instance.
type Decodes = Vec<(Vec<Triple>, Vec<DecodeWarning>)>;

#[derive(Debug, Error)]
#[error("extraction failed for {sentence:?}: {source}")]
pub struct PipelineError {
    pub sentence: String,
    #[source]
    pub source: BackendError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum OrderPolicy {
    Fixed { order: GenerationOrder },
    AllOrdersVote { threshold: f64 },
}

impl Default for OrderPolicy {
    fn default() -> Self {
        OrderPolicy::Fixed {
            order: GenerationOrder::Spo,
        }
    }
}

impl OrderPolicy {
    pub fn orders(&self) -> Vec<GenerationOrder> {
        match self {
            OrderPolicy::Fixed { order } => vec![*order],
            OrderPolicy::AllOrdersVote { .. } => GenerationOrder::ALL.to_vec(),
        }
    }
}

/// Whether stage 2 fills every predicate in one input or one input per
/// predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotGranularity {
    #[default]
    AllInOne,
    PerPredicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub scheme: AnchorScheme,
    pub policy: OrderPolicy,
    pub granularity: SlotGranularity,
    /// Sentences per backend call in corpus mode.
    pub batch_size: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            scheme: AnchorScheme::anchored(),
            policy: OrderPolicy::default(),
            granularity: SlotGranularity::AllInOne,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderedWarning {
    pub order: GenerationOrder,
    #[serde(flatten)]
    pub warning: DecodeWarning,
}

/// Everything that went wrong or was skipped for one sentence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub warnings: Vec<OrderedWarning>,
    /// Stage 1 produced no usable predicate.
    pub no_predicates: bool,
    /// Stage-1 outputs that could not be encoded as predicates.
    pub rejected_predicates: Vec<String>,
    /// Backend failure, if the sentence could not be processed at all.
    pub error: Option<String>,
}

impl Diagnostics {
    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
            && !self.no_predicates
            && self.rejected_predicates.is_empty()
            && self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub triples: Vec<Triple>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub sentence: Sentence,
    pub triples: Vec<Triple>,
    pub diagnostics: Diagnostics,
}

/// Stage 1 alone: predicates for `sentence`, de-duplicated in order.
pub fn extract_predicates(
    backend: &dyn SeqBackend,
    sentence: &Sentence,
) -> Result<Vec<String>, PipelineError> {
    let out = generate_checked(backend, &[sentence.as_str().to_string()]).map_err(|source| {
        PipelineError {
            sentence: sentence.as_str().to_string(),
            source,
        }
    })?;
    Ok(parse_stage1_output(&out[0]))
}

/// A configured pair of backends.
pub struct Pipeline<'a> {
    stage1: &'a dyn SeqBackend,
    stage2: &'a dyn SeqBackend,
    config: ExtractionConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        stage1: &'a dyn SeqBackend,
        stage2: &'a dyn SeqBackend,
        config: ExtractionConfig,
    ) -> Self {
        Self {
            stage1,
            stage2,
            config,
        }
    }

    /// Both stages served by the same backend.
    pub fn shared(backend: &'a dyn SeqBackend, config: ExtractionConfig) -> Self {
        Self::new(backend, backend, config)
    }

    pub fn config(&self) -> &ExtractionConfig {
        &self.config
    }

    pub fn extract(&self, sentence: &Sentence) -> Result<Extraction, PipelineError> {
        self.extract_batch(std::slice::from_ref(sentence))
            .map(|mut v| v.remove(0))
            .map_err(|source| PipelineError {
                sentence: sentence.as_str().to_string(),
                source,
            })
    }

    /// Streams records in input order. Backend failures are retried
    /// sentence by sentence and end up in the record's diagnostics.
    pub fn extract_corpus<I>(&self, sentences: I) -> CorpusExtraction<'_, 'a, I::IntoIter>
    where
        I: IntoIterator<Item = Sentence>,
    {
        CorpusExtraction {
            pipeline: self,
            source: sentences.into_iter(),
            ready: std::collections::VecDeque::new(),
        }
    }

    fn instances_for(
        &self,
        sentence: &Sentence,
        predicates: &[String],
        order: GenerationOrder,
    ) -> Vec<EncodedInstance> {
        let build = |preds: &[String]| {
            build_stage2_input(sentence, preds, &self.config.scheme, &[order])
                .expect("predicates were validated")
        };
        match self.config.granularity {
            SlotGranularity::AllInOne => vec![build(predicates)],
            SlotGranularity::PerPredicate => predicates
                .iter()
                .map(|p| build(std::slice::from_ref(p)))
                .collect(),
        }
    }

    fn extract_batch(&self, sentences: &[Sentence]) -> Result<Vec<Extraction>, BackendError> {
        let stage1_inputs: Vec<String> = sentences.iter().map(|s| s.as_str().to_string()).collect();
        let stage1_out = generate_checked(self.stage1, &stage1_inputs)?;

        let mut diagnostics: Vec<Diagnostics> = vec![Diagnostics::default(); sentences.len()];
        let mut predicates: Vec<Vec<String>> = Vec::with_capacity(sentences.len());
        for (k, out) in stage1_out.iter().enumerate() {
            let (ok, bad): (Vec<String>, Vec<String>) = parse_stage1_output(out)
                .into_iter()
                .partition(|p| !contains_sentinel(p) && !self.config.scheme.contains_anchor(p));
            diagnostics[k].rejected_predicates = bad;
            diagnostics[k].no_predicates = ok.is_empty();
            predicates.push(ok);
        }

        let orders = self.config.policy.orders();
        let per_order: Vec<Result<Decodes, BackendError>> = if orders.len() == 1 {
            vec![self.run_order(sentences, &predicates, orders[0])]
        } else {
            let predicates = &predicates;
            std::thread::scope(|scope| {
                let handles: Vec<_> = orders
                    .iter()
                    .map(|&o| scope.spawn(move || self.run_order(sentences, predicates, o)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("stage-2 worker thread panicked"))
                    .collect()
            })
        };

        let mut by_sentence: Vec<BTreeMap<GenerationOrder, Vec<Triple>>> =
            vec![BTreeMap::new(); sentences.len()];
        for (order, result) in orders.iter().zip(per_order) {
            for (k, (triples, warnings)) in result?.into_iter().enumerate() {
                diagnostics[k]
                    .warnings
                    .extend(warnings.into_iter().map(|warning| OrderedWarning {
                        order: *order,
                        warning,
                    }));
                by_sentence[k].insert(*order, triples);
            }
        }

        let mut results = Vec::with_capacity(sentences.len());
        for (k, per_order) in by_sentence.into_iter().enumerate() {
            let triples = if predicates[k].is_empty() {
                Vec::new()
            } else {
                match self.config.policy {
                    OrderPolicy::Fixed { .. } => per_order.into_values().next().unwrap_or_default(),
                    OrderPolicy::AllOrdersVote { threshold } => {
                        majority_vote(&per_order, threshold)
                            .map_err(|e| BackendError::Precondition(e.to_string()))?
                    }
                }
            };
            results.push(Extraction {
                triples,
                diagnostics: std::mem::take(&mut diagnostics[k]),
            });
        }
        Ok(results)
    }

    /// One stage-2 call for `order` over every sentence with predicates.
    fn run_order(
        &self,
        sentences: &[Sentence],
        predicates: &[Vec<String>],
        order: GenerationOrder,
    ) -> Result<Decodes, BackendError> {
        let mut owners = Vec::new();
        let mut instances = Vec::new();
        for (k, (sentence, preds)) in sentences.iter().zip(predicates).enumerate() {
            if preds.is_empty() {
                continue;
            }
            for inst in self.instances_for(sentence, preds, order) {
                owners.push(k);
                instances.push(inst);
            }
        }
        let inputs: Vec<String> = instances.iter().map(|i| i.input_text.clone()).collect();
        let outputs = generate_checked(self.stage2, &inputs)?;

        let mut per_sentence = vec![(Vec::new(), Vec::new()); sentences.len()];
        for ((owner, inst), out) in owners.into_iter().zip(&instances).zip(outputs) {
            let decoded = parse_stage2_output(&out, inst);
            per_sentence[owner].0.extend(decoded.triples);
            per_sentence[owner].1.extend(decoded.warnings);
        }
        Ok(per_sentence)
    }
}

/// Iterator returned by [`Pipeline::extract_corpus`].
pub struct CorpusExtraction<'p, 'a, I> {
    pipeline: &'p Pipeline<'a>,
    source: I,
    ready: std::collections::VecDeque<CorpusRecord>,
}

impl<I: Iterator<Item = Sentence>> Iterator for CorpusExtraction<'_, '_, I> {
    type Item = CorpusRecord;

    fn next(&mut self) -> Option<CorpusRecord> {
        if self.ready.is_empty() {
            let batch: Vec<Sentence> = self
                .source
                .by_ref()
                .take(self.pipeline.config.batch_size.max(1))
                .collect();
            if batch.is_empty() {
                return None;
            }
            let extractions = match self.pipeline.extract_batch(&batch) {
                Ok(done) => done.into_iter().map(Ok).collect(),
                Err(_) => batch
                    .iter()
                    .map(|s| self.pipeline.extract(s))
                    .collect::<Vec<_>>(),
            };
            for (sentence, result) in batch.into_iter().zip(extractions) {
                let record = match result {
                    Ok(e) => CorpusRecord {
                        sentence,
                        triples: e.triples,
                        diagnostics: e.diagnostics,
                    },
                    Err(err) => CorpusRecord {
                        sentence,
                        triples: Vec::new(),
                        diagnostics: Diagnostics {
                            error: Some(err.source.to_string()),
                            ..Diagnostics::default()
                        },
                    },
                };
                self.ready.push_back(record);
            }
        }
        self.ready.pop_front()
    }
}
