use std::collections::{BTreeSet, HashMap};

use super::{
    Acknowledgment, BackendError, EpochCallback, EpochEnd, SeqBackend, TrainConfig, TrainReport,
    TrainingPair,
};
use crate::anchor::AnchorScheme;
use crate::codec::{
    build_stage1_io, build_stage2_target, predicate_inventory, recover_instance, EncodedInstance,
    Sentence, Triple, PREDICATE_CLAUSE,
};

/// Answers every request by applying the codec to gold annotations.
///
/// Stage-1 inputs (a bare gold sentence) get the stage-1 target of the gold
/// predicates. Stage-2 inputs get the target of the gold triples under the
/// orders recorded in the input. Anything else yields an empty string.
#[derive(Debug, Clone)]
pub struct MockOracleBackend {
    gold: HashMap<String, (Sentence, Vec<Triple>)>,
    scheme: AnchorScheme,
    registered: BTreeSet<String>,
    accepts_special_tokens: bool,
}

impl MockOracleBackend {
    pub fn new(gold: impl IntoIterator<Item = (Sentence, Vec<Triple>)>) -> Self {
        Self {
            gold: gold
                .into_iter()
                .map(|(s, t)| (s.as_str().to_string(), (s, t)))
                .collect(),
            scheme: AnchorScheme::anchored(),
            registered: BTreeSet::new(),
            accepts_special_tokens: true,
        }
    }

    /// Anchor scheme used to read roles back out of anchored inputs.
    pub fn with_scheme(mut self, scheme: AnchorScheme) -> Self {
        self.scheme = scheme;
        self
    }

    /// Makes `register_special_tokens` fail, for exercising error paths.
    pub fn refusing_special_tokens(mut self) -> Self {
        self.accepts_special_tokens = false;
        self
    }

    pub fn registered_tokens(&self) -> impl Iterator<Item = &str> {
        self.registered.iter().map(String::as_str)
    }

    fn answer(&self, input: &str) -> String {
        if let Some((sentence, triples)) = self.gold.get(input) {
            return build_stage1_io(sentence, &predicate_inventory(triples)).1;
        }
        for (at, _) in input.match_indices(PREDICATE_CLAUSE) {
            if let Some((sentence, triples)) = self.gold.get(&input[..at]) {
                return self
                    .answer_stage2(input, sentence, triples)
                    .unwrap_or_default();
            }
        }
        String::new()
    }

    fn answer_stage2(&self, input: &str, sentence: &Sentence, gold: &[Triple]) -> Option<String> {
        let instance = recover_instance(input, sentence, &self.scheme)
            .or_else(|_| recover_instance(input, sentence, &AnchorScheme::plain()))
            .ok()?;
        let chosen = pick_gold_for_slots(gold, &instance)?;
        build_stage2_target(&chosen, &instance).ok()
    }
}

/// First unconsumed gold triple for every slot, or `None` if a slot has none.
fn pick_gold_for_slots(gold: &[Triple], instance: &EncodedInstance) -> Option<Vec<Triple>> {
    let mut used = vec![false; gold.len()];
    instance
        .predicate_slots
        .iter()
        .map(|slot| {
            let k = (0..gold.len()).find(|&k| !used[k] && gold[k].predicate() == slot.predicate)?;
            used[k] = true;
            Some(gold[k].clone())
        })
        .collect()
}

impl SeqBackend for MockOracleBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn generate(&self, inputs: &[String]) -> Result<Vec<String>, BackendError> {
        Ok(inputs.iter().map(|i| self.answer(i)).collect())
    }

    fn register_special_tokens(
        &mut self,
        tokens: &[String],
    ) -> Result<Acknowledgment, BackendError> {
        if !self.accepts_special_tokens {
            return Err(BackendError::Capability(
                "this backend does not accept special tokens".into(),
            ));
        }
        self.registered.extend(tokens.iter().cloned());
        Ok(Acknowledgment {
            registered: self.registered.iter().cloned().collect(),
        })
    }

    fn fine_tune(
        &mut self,
        pairs: &[TrainingPair],
        config: &TrainConfig,
        on_epoch: &mut EpochCallback<'_>,
    ) -> Result<TrainReport, BackendError> {
        config.validate()?;
        for epoch in 1..=config.epochs {
            on_epoch(&EpochEnd {
                epoch,
                loss: None,
                model: self,
            })?;
        }
        Ok(TrainReport {
            epochs_completed: config.epochs,
            pairs_seen: pairs.len() * config.epochs,
            final_loss: None,
            synthetic: true,
        })
    }
}
