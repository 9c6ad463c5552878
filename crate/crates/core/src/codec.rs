//! Span-corruption encoding of extraction instances.
//!
//! A sentence and its predicates are turned into a single infilling input in
//! which every triple field is a masked span introduced by a sentinel
//! `<id_K>`. The target lists each sentinel followed by the text it stands
//! for. Both directions live here: builders for training data and a lenient
//! parser for generated text.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::{render_group, AnchorError, AnchorScheme, GenerationOrder, Role};

/// Separator between predicates in stage-1 targets.
pub const STAGE1_SEPARATOR: &str = "; ";

/// Literal that introduces each predicate clause in a stage-2 input.
pub const PREDICATE_CLAUSE: &str = ". With predicate ";

fn sentinel_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<id_(\d+)>").expect("static regex"))
}

/// Returns true if `text` contains anything that looks like a sentinel.
pub fn contains_sentinel(text: &str) -> bool {
    sentinel_regex().is_match(text)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("empty predicate list")]
    EmptyPredicates,
    #[error("malformed predicate {0:?}")]
    MalformedPredicate(String),
    #[error("invalid sentence: {0}")]
    InvalidSentence(String),
    #[error("invalid triple: {0}")]
    InvalidTriple(String),
    #[error("got {orders} generation orders for {predicates} predicates")]
    OrderCountMismatch { predicates: usize, orders: usize },
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error(transparent)]
    Anchor(#[from] AnchorError),
}

/// A sentinel placeholder, rendered as `<id_K>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SentinelId(pub u32);

impl SentinelId {
    pub fn index(self) -> u32 {
        self.0
    }
}

impl fmt::Display for SentinelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<id_{}>", self.0)
    }
}

/// An input sentence. Non-empty and free of sentinel tokens.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Sentence(String);

impl Sentence {
    pub fn new(text: impl Into<String>) -> Result<Self, CodecError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(CodecError::InvalidSentence("empty sentence".into()));
        }
        if contains_sentinel(&text) {
            return Err(CodecError::InvalidSentence(format!(
                "sentence contains a sentinel token: {text:?}"
            )));
        }
        Ok(Self(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Sentence {
    type Error = CodecError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Sentence> for String {
    fn from(value: Sentence) -> Self {
        value.0
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Deserialize)]
struct RawTriple {
    subject: String,
    predicate: String,
    object: String,
}

/// One (subject, predicate, object) extraction.
///
/// Fields are stored trimmed; each is non-empty and free of sentinels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawTriple")]
pub struct Triple {
    subject: String,
    predicate: String,
    object: String,
}

impl TryFrom<RawTriple> for Triple {
    type Error = CodecError;

    fn try_from(raw: RawTriple) -> Result<Self, Self::Error> {
        Triple::new(raw.subject, raw.predicate, raw.object)
    }
}

impl Triple {
    pub fn new(
        subject: impl AsRef<str>,
        predicate: impl AsRef<str>,
        object: impl AsRef<str>,
    ) -> Result<Self, CodecError> {
        let check = |name: &str, value: &str| -> Result<String, CodecError> {
            let value = value.trim();
            if value.is_empty() {
                return Err(CodecError::InvalidTriple(format!("empty {name}")));
            }
            if contains_sentinel(value) {
                return Err(CodecError::InvalidTriple(format!(
                    "{name} contains a sentinel token: {value:?}"
                )));
            }
            Ok(value.to_string())
        };
        Ok(Self {
            subject: check("subject", subject.as_ref())?,
            predicate: check("predicate", predicate.as_ref())?,
            object: check("object", object.as_ref())?,
        })
    }

    pub fn subject(&self) -> &str {
        &self.subject
    }

    pub fn predicate(&self) -> &str {
        &self.predicate
    }

    pub fn object(&self) -> &str {
        &self.object
    }

    pub fn field(&self, role: Role) -> &str {
        match role {
            Role::Subject => &self.subject,
            Role::Predicate => &self.predicate,
            Role::Object => &self.object,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}; {}; {})", self.subject, self.predicate, self.object)
    }
}

/// The sentinels allocated to one predicate, in emission order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateSlot {
    pub predicate: String,
    pub sentinels: [SentinelId; 3],
    pub order: GenerationOrder,
}

impl PredicateSlot {
    /// The role that the span following `sentinels[position]` fills.
    pub fn role_at(&self, position: usize) -> Role {
        self.order.roles()[position]
    }
}

/// A stage-2 input together with the bookkeeping needed to build or parse
/// its target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedInstance {
    pub input_text: String,
    pub sentinel_count: u32,
    pub predicate_slots: Vec<PredicateSlot>,
}

impl EncodedInstance {
    fn slot_of(&self, id: SentinelId) -> Option<(usize, usize)> {
        // Ids are allocated left to right, three per slot.
        if id.0 >= self.sentinel_count {
            return None;
        }
        let slot = (id.0 / 3) as usize;
        let position = (id.0 % 3) as usize;
        (self.predicate_slots.get(slot)?.sentinels[position] == id).then_some((slot, position))
    }
}

/// Builds the stage-2 infilling input for `sentence` and its predicates.
///
/// `orders` holds one order per predicate, or a single order applied to all.
pub fn build_stage2_input(
    sentence: &Sentence,
    predicates: &[impl AsRef<str>],
    scheme: &AnchorScheme,
    orders: &[GenerationOrder],
) -> Result<EncodedInstance, CodecError> {
    if predicates.is_empty() {
        return Err(CodecError::EmptyPredicates);
    }
    if orders.len() != 1 && orders.len() != predicates.len() {
        return Err(CodecError::OrderCountMismatch {
            predicates: predicates.len(),
            orders: orders.len(),
        });
    }

    let mut input_text = sentence.as_str().to_string();
    let mut slots = Vec::with_capacity(predicates.len());
    for (k, predicate) in predicates.iter().enumerate() {
        let predicate = predicate.as_ref().trim();
        if predicate.is_empty() || contains_sentinel(predicate) || scheme.contains_anchor(predicate)
        {
            return Err(CodecError::MalformedPredicate(predicate.to_string()));
        }
        let order = if orders.len() == 1 {
            orders[0]
        } else {
            orders[k]
        };
        let base = 3 * k as u32;
        let sentinels = [SentinelId(base), SentinelId(base + 1), SentinelId(base + 2)];
        let group = render_group(sentinels, order, scheme)?;

        input_text.push_str(PREDICATE_CLAUSE);
        input_text.push_str(predicate);
        input_text.push_str(", ");
        input_text.push_str(&group);

        slots.push(PredicateSlot {
            predicate: predicate.to_string(),
            sentinels,
            order,
        });
    }

    Ok(EncodedInstance {
        input_text,
        sentinel_count: 3 * slots.len() as u32,
        predicate_slots: slots,
    })
}

/// Assigns each triple to the slot whose predicate it matches, consuming
/// slots left to right. Returns triples reordered to slot order.
pub fn align_triples<'a>(
    triples: &'a [Triple],
    instance: &EncodedInstance,
) -> Result<Vec<&'a Triple>, CodecError> {
    let slots = &instance.predicate_slots;
    if triples.len() != slots.len() {
        return Err(CodecError::Alignment(format!(
            "{} triples for {} predicate slots",
            triples.len(),
            slots.len()
        )));
    }
    let mut assigned: Vec<Option<&Triple>> = vec![None; slots.len()];
    for triple in triples {
        let free = slots
            .iter()
            .enumerate()
            .find(|(k, slot)| assigned[*k].is_none() && slot.predicate == triple.predicate());
        match free {
            Some((k, _)) => assigned[k] = Some(triple),
            None => {
                return Err(CodecError::Alignment(format!(
                    "triple {triple} matches no unconsumed predicate slot"
                )))
            }
        }
    }
    Ok(assigned
        .into_iter()
        .map(|t| t.expect("counts match"))
        .collect())
}

/// Builds the infilling target: every sentinel followed by its field text.
pub fn build_stage2_target(
    triples: &[Triple],
    instance: &EncodedInstance,
) -> Result<String, CodecError> {
    let aligned = align_triples(triples, instance)?;
    let mut parts = Vec::with_capacity(6 * aligned.len());
    for (slot, triple) in instance.predicate_slots.iter().zip(aligned) {
        for (position, id) in slot.sentinels.iter().enumerate() {
            parts.push(id.to_string());
            parts.push(triple.field(slot.role_at(position)).to_string());
        }
    }
    Ok(parts.join(" "))
}

/// Problems found while decoding generated text. Never fatal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecodeWarning {
    /// A slot could not be completed: some sentinels were absent or their
    /// spans were empty.
    IncompleteSlot {
        slot: usize,
        missing: Vec<SentinelId>,
        empty: Vec<SentinelId>,
    },
    /// A sentinel outside the instance's range; its span was ignored.
    OutOfRange { sentinel: SentinelId },
    /// A sentinel generated more than once; later spans were ignored.
    Duplicate { sentinel: SentinelId },
    /// Non-whitespace text before the first sentinel; ignored.
    LeadingText { text: String },
}

impl fmt::Display for DecodeWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeWarning::IncompleteSlot {
                slot,
                missing,
                empty,
            } => write!(
                f,
                "slot {slot} incomplete ({} missing, {} empty)",
                missing.len(),
                empty.len()
            ),
            DecodeWarning::OutOfRange { sentinel } => write!(f, "{sentinel} out of range"),
            DecodeWarning::Duplicate { sentinel } => write!(f, "{sentinel} generated twice"),
            DecodeWarning::LeadingText { text } => write!(f, "stray leading text {text:?}"),
        }
    }
}

/// Decoded triples plus whatever went wrong on the way.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Decoded {
    pub triples: Vec<Triple>,
    pub warnings: Vec<DecodeWarning>,
}

/// Splits generated text into sentinel-introduced spans.
fn split_on_sentinels(output: &str) -> (String, Vec<(SentinelId, String)>) {
    let re = sentinel_regex();
    let mut spans = Vec::new();
    let mut leading = String::new();
    let mut current: Option<(SentinelId, usize)> = None;
    for caps in re.captures_iter(output) {
        let whole = caps.get(0).expect("group 0");
        let id = caps[1].parse::<u32>().map(SentinelId);
        match current.take() {
            Some((prev, start)) => spans.push((prev, output[start..whole.start()].to_string())),
            None => leading = output[..whole.start()].to_string(),
        }
        // Indices too large for u32 are out of range for every instance.
        current = Some((id.unwrap_or(SentinelId(u32::MAX)), whole.end()));
    }
    match current {
        Some((prev, start)) => spans.push((prev, output[start..].to_string())),
        None => leading = output.to_string(),
    }
    (leading, spans)
}

/// Parses generated stage-2 text back into triples, in slot order.
pub fn parse_stage2_output(output: &str, instance: &EncodedInstance) -> Decoded {
    let (leading, spans) = split_on_sentinels(output);
    let mut warnings = Vec::new();
    if !leading.trim().is_empty() {
        warnings.push(DecodeWarning::LeadingText {
            text: leading.trim().to_string(),
        });
    }

    let mut filled: Vec<[Option<String>; 3]> =
        vec![Default::default(); instance.predicate_slots.len()];
    for (id, span) in spans {
        match instance.slot_of(id) {
            None => warnings.push(DecodeWarning::OutOfRange { sentinel: id }),
            Some((slot, position)) => {
                let cell = &mut filled[slot][position];
                if cell.is_some() {
                    warnings.push(DecodeWarning::Duplicate { sentinel: id });
                } else {
                    *cell = Some(span.trim().to_string());
                }
            }
        }
    }

    let mut triples = Vec::new();
    for (k, (slot, cells)) in instance.predicate_slots.iter().zip(filled).enumerate() {
        let mut missing = Vec::new();
        let mut empty = Vec::new();
        let mut fields: [&str; 3] = ["", "", ""];
        for (position, cell) in cells.iter().enumerate() {
            match cell {
                None => missing.push(slot.sentinels[position]),
                Some(text) if text.is_empty() => empty.push(slot.sentinels[position]),
                Some(text) => fields[slot.role_at(position).index()] = text,
            }
        }
        if !missing.is_empty() || !empty.is_empty() {
            warnings.push(DecodeWarning::IncompleteSlot {
                slot: k,
                missing,
                empty,
            });
            continue;
        }
        match Triple::new(fields[0], fields[1], fields[2]) {
            Ok(triple) => triples.push(triple),
            Err(_) => warnings.push(DecodeWarning::IncompleteSlot {
                slot: k,
                missing: Vec::new(),
                empty: slot.sentinels.to_vec(),
            }),
        }
    }

    Decoded { triples, warnings }
}

/// Reconstructs the instance behind a stage-2 input built for `sentence`.
///
/// Plain groups carry no order information and are read as SPO. The result
/// is re-rendered and must reproduce `input` exactly.
pub fn recover_instance(
    input: &str,
    sentence: &Sentence,
    scheme: &AnchorScheme,
) -> Result<EncodedInstance, CodecError> {
    let rest = input.strip_prefix(sentence.as_str()).ok_or_else(|| {
        CodecError::InvalidSentence("input does not start with the sentence".into())
    })?;
    let rest = rest
        .strip_prefix(PREDICATE_CLAUSE)
        .ok_or(CodecError::EmptyPredicates)?;

    let mut predicates = Vec::new();
    let mut orders = Vec::new();
    for clause in rest.split(PREDICATE_CLAUSE) {
        let first_sentinel = sentinel_regex()
            .find(clause)
            .ok_or_else(|| CodecError::MalformedPredicate(clause.to_string()))?;
        let split = clause[..first_sentinel.start()]
            .rfind(", ")
            .ok_or_else(|| CodecError::MalformedPredicate(clause.to_string()))?;
        let entries = crate::anchor::parse_group(&clause[split + 2..], scheme)?;
        if entries.len() != 3 {
            return Err(CodecError::Anchor(AnchorError::InvalidGroup(format!(
                "expected 3 sentinels, found {}",
                entries.len()
            ))));
        }
        let order = match (entries[0].role, entries[1].role, entries[2].role) {
            (Some(a), Some(b), Some(c)) => {
                GenerationOrder::from_roles([a, b, c]).ok_or_else(|| {
                    AnchorError::InvalidGroup("anchors do not name three distinct roles".into())
                })?
            }
            _ => GenerationOrder::Spo,
        };
        predicates.push(clause[..split].to_string());
        orders.push(order);
    }

    let instance = build_stage2_input(sentence, &predicates, scheme, &orders)?;
    if instance.input_text != input {
        return Err(CodecError::Alignment(
            "input does not re-render identically".into(),
        ));
    }
    Ok(instance)
}

/// Stage-1 training pair: the sentence and its predicates joined by `; `.
pub fn build_stage1_io(sentence: &Sentence, predicates: &[impl AsRef<str>]) -> (String, String) {
    let target = predicates
        .iter()
        .map(|p| p.as_ref().trim())
        .collect::<Vec<_>>()
        .join(STAGE1_SEPARATOR);
    (sentence.as_str().to_string(), target)
}

/// Splits a stage-1 generation into distinct predicates, first occurrence wins.
pub fn parse_stage1_output(output: &str) -> Vec<String> {
    let mut seen = Vec::<String>::new();
    for piece in output.split(STAGE1_SEPARATOR.trim()) {
        let piece = piece.trim();
        if !piece.is_empty() && !seen.iter().any(|p| p == piece) {
            seen.push(piece.to_string());
        }
    }
    seen
}

/// Distinct predicates of `triples` in order of first appearance.
pub fn predicate_inventory(triples: &[Triple]) -> Vec<String> {
    let mut seen = Vec::<String>::new();
    for t in triples {
        if !seen.iter().any(|p| p == t.predicate()) {
            seen.push(t.predicate().to_string());
        }
    }
    seen
}
