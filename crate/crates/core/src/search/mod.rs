//! Rule-based scene search over annotation tiers.
//!
//! A query is a boolean expression over per-frame comparisons on tiers,
//! e.g. `smile@teacher AND smile@parent MERGE 200ms FOR 1s`. Evaluation
//! samples every referenced tier onto a common frame grid, finds the
//! maximal runs of frames where the expression holds, joins runs separated
//! by less than the MERGE gap and finally drops scenes shorter than the FOR
//! duration.

mod eval;
mod parse;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eval::{evaluate, evaluate_runs, merge_and_filter, scenes_to_annotation, FrameRuns};
pub use parse::parse_query;

use crate::error::ModelError;
use crate::model::{AnnotationBody, ContinuousTrack, DiscreteSegment};
use crate::sampling::{resolve_key, SamplingError};
use crate::storage::{StorageError, Store};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("duplicate modifier {name} at offset {offset}")]
    DuplicateModifier { offset: usize, name: String },
    #[error("unresolvable stream reference {0}")]
    Unresolvable(String),
    #[error("tier {0} cannot be compared (transcripts hold text)")]
    UnsupportedTier(String),
    #[error("unsupported scheme for scenes: {0}")]
    UnsupportedScheme(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StreamRef {
    pub scheme: String,
    pub role: String,
    pub annotator: Option<String>,
}

impl fmt::Display for StreamRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.scheme, self.role)?;
        match &self.annotator {
            Some(a) if crate::model::is_identifier(a) => write!(f, ".{a}"),
            Some(a) => write!(f, ".\"{a}\""),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CmpOp {
    Gt,
    Lt,
    Ge,
    Le,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Gt => ">",
            CmpOp::Lt => "<",
            CmpOp::Ge => ">=",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    /// NaN compares false under every operator, `!=` included.
    pub fn apply(self, lhs: f64, rhs: f64) -> bool {
        if lhs.is_nan() {
            return false;
        }
        match self {
            CmpOp::Gt => lhs > rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expr {
    Cmp { stream: StreamRef, op: CmpOp, value: f64 },
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn stream_refs(&self) -> Vec<&StreamRef> {
        let mut out = Vec::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs<'a>(&'a self, out: &mut Vec<&'a StreamRef>) {
        match self {
            Expr::Cmp { stream, .. } => {
                if !out.contains(&stream) {
                    out.push(stream)
                }
            }
            Expr::Not(e) => e.collect_refs(out),
            Expr::And(a, b) | Expr::Or(a, b) => {
                a.collect_refs(out);
                b.collect_refs(out);
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Cmp { stream, op, value } => write!(f, "{stream} {} {value}", op.symbol()),
            Expr::Not(e) => write!(f, "NOT {e}"),
            Expr::And(a, b) => write!(f, "({a} AND {b})"),
            Expr::Or(a, b) => write!(f, "({a} OR {b})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub expr: Expr,
    pub min_duration_ms: Option<u64>,
    pub merge_gap_ms: Option<u64>,
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.expr)?;
        if let Some(g) = self.merge_gap_ms {
            write!(f, " MERGE {g}ms")?;
        }
        if let Some(d) = self.min_duration_ms {
            write!(f, " FOR {d}ms")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub start_ms: u64,
    pub end_ms: u64,
    pub score: f64,
}

/// A tier as seen by the evaluator.
#[derive(Clone, Debug, PartialEq)]
pub enum Tier {
    Discrete(Vec<DiscreteSegment>),
    Continuous(ContinuousTrack),
}

/// Resolves stream references to tiers.
pub trait TierSource {
    fn tier(&self, stream: &StreamRef) -> Result<Tier, SearchError>;
}

/// Tiers held in memory, keyed by `(scheme, role)`; an annotator in a
/// reference must match the stored one when given.
#[derive(Clone, Debug, Default)]
pub struct MemoryTiers {
    tiers: BTreeMap<(String, String), (String, Tier)>,
}

impl MemoryTiers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, scheme: &str, role: &str, annotator: &str, tier: Tier) -> &mut Self {
        self.tiers
            .insert((scheme.into(), role.into()), (annotator.into(), tier));
        self
    }
}

impl TierSource for MemoryTiers {
    fn tier(&self, stream: &StreamRef) -> Result<Tier, SearchError> {
        match self.tiers.get(&(stream.scheme.clone(), stream.role.clone())) {
            Some((annotator, tier)) if stream.annotator.as_ref().is_none_or(|a| a == annotator) => Ok(tier.clone()),
            _ => Err(SearchError::Unresolvable(stream.to_string())),
        }
    }
}

/// Tiers of one stored session.
pub struct SessionTiers<'a> {
    pub store: &'a Store,
    pub dataset: &'a str,
    pub session: &'a str,
}

impl TierSource for SessionTiers<'_> {
    fn tier(&self, stream: &StreamRef) -> Result<Tier, SearchError> {
        let key = resolve_key(
            self.store,
            self.dataset,
            self.session,
            &stream.scheme,
            &stream.role,
            stream.annotator.as_deref(),
        )
        .map_err(|e| match e {
            SamplingError::Storage(e) => SearchError::Storage(e),
            _ => SearchError::Unresolvable(stream.to_string()),
        })?;
        let (a, _) = self.store.load_annotation(&key)?;
        match a.body {
            AnnotationBody::Segments { segments } => Ok(Tier::Discrete(segments)),
            AnnotationBody::Track(t) => Ok(Tier::Continuous(t)),
            AnnotationBody::Transcript { .. } => Err(SearchError::UnsupportedTier(stream.to_string())),
        }
    }
}

/// Parses and evaluates `query` over a stored session.
pub fn search_session(
    store: &Store,
    dataset: &str,
    session: &str,
    query: &str,
    frame_ms: u64,
) -> Result<Vec<Scene>, SearchError> {
    let q = parse_query(query)?;
    let sess = store.get_session(dataset, session)?;
    let tiers = SessionTiers {
        store,
        dataset,
        session,
    };
    evaluate(&q, &tiers, sess.duration_ms, frame_ms)
}
