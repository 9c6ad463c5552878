//! Role anchors and generation-order control.
//!
//! An anchor is a role marker placed on both sides of a sentinel so the model
//! knows which triple field to emit there. Anchors are rendered as a meaning
//! word immediately followed by an optional reserved special token whose
//! embedding the backend can train. The pair is treated as one unit.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{contains_sentinel, SentinelId, Triple};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnchorError {
    #[error("invalid sentinel group: {0}")]
    InvalidGroup(String),
    #[error("invalid anchor scheme: {0}")]
    InvalidScheme(String),
    #[error("unknown generation order {0:?}")]
    UnknownOrder(String),
    #[error("vote needs at least one order")]
    EmptyVote,
    #[error("vote threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Subject,
    Predicate,
    Object,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Subject, Role::Predicate, Role::Object];

    /// Position of the role in a (subject, predicate, object) triple.
    pub fn index(self) -> usize {
        match self {
            Role::Subject => 0,
            Role::Predicate => 1,
            Role::Object => 2,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Role::Subject => 'S',
            Role::Predicate => 'P',
            Role::Object => 'O',
        }
    }
}

/// One value per role.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoleMap<T> {
    pub subject: T,
    pub predicate: T,
    pub object: T,
}

impl<T> RoleMap<T> {
    pub fn get(&self, role: Role) -> &T {
        match role {
            Role::Subject => &self.subject,
            Role::Predicate => &self.predicate,
            Role::Object => &self.object,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Role) -> T) -> Self {
        Self {
            subject: f(Role::Subject),
            predicate: f(Role::Predicate),
            object: f(Role::Object),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Role, &T)> {
        Role::ALL.into_iter().map(move |r| (r, self.get(r)))
    }
}

/// The order in which a triple's fields are emitted.
///
/// Variants are declared in the canonical enumeration order used by voting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum GenerationOrder {
    Spo,
    Sop,
    Pso,
    Pos,
    Osp,
    Ops,
}

impl GenerationOrder {
    pub const ALL: [GenerationOrder; 6] = [
        GenerationOrder::Spo,
        GenerationOrder::Sop,
        GenerationOrder::Pso,
        GenerationOrder::Pos,
        GenerationOrder::Osp,
        GenerationOrder::Ops,
    ];

    pub fn roles(self) -> [Role; 3] {
        use Role::*;
        match self {
            GenerationOrder::Spo => [Subject, Predicate, Object],
            GenerationOrder::Sop => [Subject, Object, Predicate],
            GenerationOrder::Pso => [Predicate, Subject, Object],
            GenerationOrder::Pos => [Predicate, Object, Subject],
            GenerationOrder::Osp => [Object, Subject, Predicate],
            GenerationOrder::Ops => [Object, Predicate, Subject],
        }
    }

    pub fn from_roles(roles: [Role; 3]) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.roles() == roles)
    }
}

impl fmt::Display for GenerationOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.roles().iter().map(|r| r.letter()).collect();
        f.write_str(&s)
    }
}

impl FromStr for GenerationOrder {
    type Err = AnchorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|o| o.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| AnchorError::UnknownOrder(s.to_string()))
    }
}

impl From<GenerationOrder> for String {
    fn from(value: GenerationOrder) -> Self {
        value.to_string()
    }
}

impl TryFrom<String> for GenerationOrder {
    type Error = AnchorError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    Plain,
    Anchored,
}

/// How sentinels are decorated with role anchors.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnchorScheme {
    pub mode: AnchorMode,
    /// Meaning word per role.
    pub anchor_text: RoleMap<String>,
    /// Reserved special token per role, registered with the backend so its
    /// embedding can be tuned.
    pub tunable: RoleMap<Option<String>>,
}

impl Default for AnchorScheme {
    fn default() -> Self {
        Self::anchored()
    }
}

impl AnchorScheme {
    /// No anchors; groups render as bare sentinels.
    pub fn plain() -> Self {
        Self {
            mode: AnchorMode::Plain,
            ..Self::anchored()
        }
    }

    /// The default anchored scheme: `[S]`, `[P]`, `[O]` each followed by a
    /// tunable `<anchor_*>` token.
    pub fn anchored() -> Self {
        Self {
            mode: AnchorMode::Anchored,
            anchor_text: RoleMap {
                subject: "[S]".into(),
                predicate: "[P]".into(),
                object: "[O]".into(),
            },
            tunable: RoleMap {
                subject: Some("<anchor_subject>".into()),
                predicate: Some("<anchor_predicate>".into()),
                object: Some("<anchor_object>".into()),
            },
        }
    }

    /// An anchored scheme with custom meaning words and optional tunable tokens.
    pub fn anchored_with(
        anchor_text: [&str; 3],
        tunable: Option<[&str; 3]>,
    ) -> Result<Self, AnchorError> {
        let scheme = Self {
            mode: AnchorMode::Anchored,
            anchor_text: RoleMap::from_fn(|r| anchor_text[r.index()].to_string()),
            tunable: RoleMap::from_fn(|r| tunable.map(|t| t[r.index()].to_string())),
        };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn is_anchored(&self) -> bool {
        self.mode == AnchorMode::Anchored
    }

    /// The rendered anchor unit for `role`: meaning word then tunable token.
    pub fn unit(&self, role: Role) -> String {
        let mut unit = self.anchor_text.get(role).clone();
        if let Some(token) = self.tunable.get(role) {
            unit.push_str(token);
        }
        unit
    }

    /// Tunable special tokens the backend must know about.
    pub fn tunable_tokens(&self) -> Vec<String> {
        if !self.is_anchored() {
            return Vec::new();
        }
        self.tunable.iter().filter_map(|(_, t)| t.clone()).collect()
    }

    /// True when `text` contains one of this scheme's reserved tokens.
    pub fn contains_anchor(&self, text: &str) -> bool {
        self.tunable_tokens()
            .iter()
            .any(|t| text.contains(t.as_str()))
    }

    pub fn validate(&self) -> Result<(), AnchorError> {
        if !self.is_anchored() {
            return Ok(());
        }
        let units: Vec<String> = Role::ALL.iter().map(|&r| self.unit(r)).collect();
        for (role, unit) in Role::ALL.iter().zip(&units) {
            if self.anchor_text.get(*role).is_empty() {
                return Err(AnchorError::InvalidScheme(format!(
                    "empty anchor for {role:?}"
                )));
            }
            if unit.chars().any(char::is_whitespace) || unit.contains(',') {
                return Err(AnchorError::InvalidScheme(format!(
                    "anchor {unit:?} contains whitespace or a comma"
                )));
            }
            if contains_sentinel(unit) || unit.contains("<id_") {
                return Err(AnchorError::InvalidScheme(format!(
                    "anchor {unit:?} looks like a sentinel"
                )));
            }
        }
        if units[0] == units[1] || units[0] == units[2] || units[1] == units[2] {
            return Err(AnchorError::InvalidScheme(
                "anchors are not pairwise distinct".into(),
            ));
        }
        Ok(())
    }
}

/// Renders one slot's three sentinels under `order`.
///
/// Plain: `<id_a><id_b><id_c>`. Anchored: `A<id_a>A B<id_b>B C<id_c>C`, where
/// each letter is the anchor unit of the role emitted at that position.
pub fn render_group(
    ids: [SentinelId; 3],
    order: GenerationOrder,
    scheme: &AnchorScheme,
) -> Result<String, AnchorError> {
    if ids[0] == ids[1] || ids[0] == ids[2] || ids[1] == ids[2] {
        return Err(AnchorError::InvalidGroup(format!(
            "duplicate sentinel ids {}, {}, {}",
            ids[0], ids[1], ids[2]
        )));
    }
    if !scheme.is_anchored() {
        return Ok(ids.iter().map(ToString::to_string).collect());
    }
    scheme.validate()?;
    let parts: Vec<String> = ids
        .iter()
        .zip(order.roles())
        .map(|(id, role)| {
            let unit = scheme.unit(role);
            format!("{unit}{id}{unit}")
        })
        .collect();
    Ok(parts.join(" "))
}

/// Renders one group per slot, allocating sentinels consecutively from
/// `start_id`.
pub fn mixed_order_template(
    orders: &[GenerationOrder],
    scheme: &AnchorScheme,
    start_id: u32,
) -> Result<Vec<String>, AnchorError> {
    orders
        .iter()
        .enumerate()
        .map(|(k, &order)| {
            let base = start_id + 3 * k as u32;
            render_group(
                [SentinelId(base), SentinelId(base + 1), SentinelId(base + 2)],
                order,
                scheme,
            )
        })
        .collect()
}

/// A sentinel found in a rendered group together with the role its anchors
/// name (`None` for plain groups).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupEntry {
    pub sentinel: SentinelId,
    pub role: Option<Role>,
}

/// Inverse of [`render_group`]: recovers sentinels and the roles their
/// anchors announce.
pub fn parse_group(group: &str, scheme: &AnchorScheme) -> Result<Vec<GroupEntry>, AnchorError> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"<id_(\d+)>").expect("static regex"));

    let matches: Vec<_> = re.captures_iter(group).collect();
    if matches.is_empty() {
        return Err(AnchorError::InvalidGroup(format!(
            "no sentinels in {group:?}"
        )));
    }
    let by_unit: HashMap<String, Role> = Role::ALL.iter().map(|&r| (scheme.unit(r), r)).collect();

    let mut entries = Vec::with_capacity(matches.len());
    for (k, caps) in matches.iter().enumerate() {
        let whole = caps.get(0).expect("group 0");
        let sentinel = caps[1]
            .parse::<u32>()
            .map(SentinelId)
            .map_err(|_| AnchorError::InvalidGroup(format!("bad sentinel {}", whole.as_str())))?;
        let left_bound = if k == 0 {
            0
        } else {
            matches[k - 1].get(0).expect("g0").end()
        };
        let right_bound = matches
            .get(k + 1)
            .map(|m| m.get(0).expect("g0").start())
            .unwrap_or(group.len());
        let before = &group[left_bound..whole.start()];
        let after = &group[whole.end()..right_bound];

        let role = if scheme.is_anchored() {
            let left = before.rsplit(char::is_whitespace).next().unwrap_or("");
            let right = after.split(char::is_whitespace).next().unwrap_or("");
            if left != right {
                return Err(AnchorError::InvalidGroup(format!(
                    "{} flanked by different anchors {left:?} and {right:?}",
                    whole.as_str()
                )));
            }
            let role = by_unit
                .get(left)
                .copied()
                .ok_or_else(|| AnchorError::InvalidGroup(format!("unknown anchor {left:?}")))?;
            Some(role)
        } else {
            if !before.trim().is_empty() && k > 0 {
                return Err(AnchorError::InvalidGroup(format!(
                    "unexpected text {before:?} in plain group"
                )));
            }
            None
        };
        entries.push(GroupEntry { sentinel, role });
    }
    Ok(entries)
}

/// Case-folded, whitespace-collapsed key used to compare triples across orders.
pub fn vote_key(triple: &Triple) -> [String; 3] {
    let norm = |s: &str| {
        s.split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase()
    };
    [
        norm(triple.subject()),
        norm(triple.predicate()),
        norm(triple.object()),
    ]
}

/// Keeps triples produced under strictly more than `threshold` of the orders.
///
/// Output follows first appearance when the orders are walked in canonical
/// sequence, and each kept triple is the representative from the earliest
/// order that produced it.
pub fn majority_vote(
    per_order_results: &BTreeMap<GenerationOrder, Vec<Triple>>,
    threshold: f64,
) -> Result<Vec<Triple>, AnchorError> {
    if per_order_results.is_empty() {
        return Err(AnchorError::EmptyVote);
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(AnchorError::InvalidThreshold(threshold));
    }

    let mut first_seen: Vec<([String; 3], &Triple)> = Vec::new();
    let mut counts: HashMap<[String; 3], usize> = HashMap::new();
    for triples in per_order_results.values() {
        let mut in_this_order = std::collections::HashSet::new();
        for triple in triples {
            let key = vote_key(triple);
            if !in_this_order.insert(key.clone()) {
                continue;
            }
            let count = counts.entry(key.clone()).or_insert(0);
            if *count == 0 {
                first_seen.push((key, triple));
            }
            *count += 1;
        }
    }

    let needed = threshold * per_order_results.len() as f64;
    Ok(first_seen
        .into_iter()
        .filter(|(key, _)| counts[key] as f64 > needed)
        .map(|(_, t)| t.clone())
        .collect())
}
