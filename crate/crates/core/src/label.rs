//! Threshold-calibration labeling sessions.
//!
//! A session samples graph edges, hands them out one at a time and keeps the
//! completed judgements. Every state change is a [`LogEvent`]; replaying the
//! events of a session reproduces it exactly.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{precision_curve, LabelSource, PairLabel, PrecisionCurve};
use crate::error::{Error, Result};
use crate::graph::KnnGraph;

pub const DEFAULT_SAMPLE_SIZE: usize = 1000;
pub const DEFAULT_RANGE_LO: f32 = 0.85;
pub const DEFAULT_RANGE_HI: f32 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub n: usize,
    pub seed: u64,
    pub lo: f32,
    pub hi: f32,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            n: DEFAULT_SAMPLE_SIZE,
            seed: 0,
            lo: DEFAULT_RANGE_LO,
            hi: DEFAULT_RANGE_HI,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCard {
    pub pair_id: String,
    pub a: u64,
    pub b: u64,
    #[serde(rename = "sim")]
    pub similarity: f32,
    pub crop_a: String,
    pub crop_b: String,
}

pub fn pair_id(a: u64, b: u64) -> String {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    format!("{}-{}", lo, hi)
}

impl PairCard {
    pub fn new(a: u64, b: u64, similarity: f32) -> Self {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let id = pair_id(a, b);
        Self {
            crop_a: format!("/crops/{}/a.png", id),
            crop_b: format!("/crops/{}/b.png", id),
            pair_id: id,
            a,
            b,
            similarity,
        }
    }
}

/// Distinct unordered edges with similarity in `[lo, hi]`, ordered by pair.
/// When both directions exist the first one seen keeps its similarity.
pub fn eligible_pairs(graph: &KnnGraph, lo: f32, hi: f32) -> Vec<PairCard> {
    let mut seen: BTreeMap<(u64, u64), f32> = BTreeMap::new();
    for (id, edges) in graph.nodes() {
        for e in edges {
            if e.similarity < lo || e.similarity > hi || e.id == id {
                continue;
            }
            let key = if id < e.id { (id, e.id) } else { (e.id, id) };
            seen.entry(key).or_insert(e.similarity);
        }
    }
    seen.into_iter().map(|((a, b), s)| PairCard::new(a, b, s)).collect()
}

/// One line of the append-only session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Session {
        session_id: String,
        spec: SampleSpec,
        pairs: Vec<PairCard>,
    },
    Label {
        pair_id: String,
        a: u64,
        b: u64,
        sim: f32,
        #[serde(rename = "match")]
        is_match: bool,
    },
    Threshold {
        value: f32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub session_id: String,
    pub total: usize,
    pub labeled: usize,
    pub pending: usize,
    pub matches: usize,
    pub threshold: Option<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSession {
    session_id: String,
    spec: SampleSpec,
    pairs: Vec<PairCard>,
    by_id: BTreeMap<String, usize>,
    labeled: BTreeSet<usize>,
    labels: Vec<PairLabel>,
    cursor: usize,
    threshold: Option<f32>,
}

impl LabelSession {
    /// Samples `spec.n` eligible edges uniformly without replacement.
    pub fn create(session_id: &str, graph: &KnnGraph, spec: SampleSpec) -> Result<(Self, LogEvent)> {
        if graph.is_empty() {
            return Err(Error::invalid("cannot label an empty graph"));
        }
        if !(spec.lo <= spec.hi) {
            return Err(Error::config(format!("bad similarity range [{}, {}]", spec.lo, spec.hi)));
        }
        let pool = eligible_pairs(graph, spec.lo, spec.hi);
        if pool.len() < spec.n {
            return Err(Error::invalid(format!(
                "only {} eligible pairs in [{}, {}], need {}",
                pool.len(),
                spec.lo,
                spec.hi,
                spec.n
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let pairs: Vec<PairCard> = index::sample(&mut rng, pool.len(), spec.n)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect();
        let event = LogEvent::Session {
            session_id: String::from(session_id),
            spec,
            pairs: pairs.clone(),
        };
        Ok((Self::from_pairs(session_id, spec, pairs)?, event))
    }

    fn from_pairs(session_id: &str, spec: SampleSpec, pairs: Vec<PairCard>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for (i, p) in pairs.iter().enumerate() {
            if by_id.insert(p.pair_id.clone(), i).is_some() {
                return Err(Error::Format(format!("pair {} sampled twice", p.pair_id)));
            }
        }
        Ok(Self {
            session_id: String::from(session_id),
            spec,
            pairs,
            by_id,
            labeled: BTreeSet::new(),
            labels: Vec::new(),
            cursor: 0,
            threshold: None,
        })
    }

    /// Rebuilds a session from its log. The first event must be the header.
    pub fn replay<I: IntoIterator<Item = LogEvent>>(events: I) -> Result<Self> {
        let mut it = events.into_iter();
        let mut session = match it.next() {
            Some(LogEvent::Session { session_id, spec, pairs }) => Self::from_pairs(&session_id, spec, pairs)?,
            Some(_) => return Err(Error::Format(String::from("label log does not start with a session header"))),
            None => return Err(Error::Format(String::from("label log is empty"))),
        };
        for (i, ev) in it.enumerate() {
            match ev {
                LogEvent::Session { .. } => {
                    return Err(Error::Format(format!("second session header at event {}", i + 2)))
                }
                LogEvent::Label { pair_id, is_match, .. } => {
                    session.submit(&pair_id, is_match)?;
                }
                LogEvent::Threshold { value } => {
                    session.set_threshold(value)?;
                }
            }
        }
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.session_id
    }

    pub fn spec(&self) -> &SampleSpec {
        &self.spec
    }

    pub fn pairs(&self) -> &[PairCard] {
        &self.pairs
    }

    pub fn pair(&self, pair_id: &str) -> Option<&PairCard> {
        self.by_id.get(pair_id).map(|&i| &self.pairs[i])
    }

    pub fn labels(&self) -> &[PairLabel] {
        &self.labels
    }

    pub fn threshold(&self) -> Option<f32> {
        self.threshold
    }

    pub fn is_done(&self) -> bool {
        self.labeled.len() == self.pairs.len()
    }

    /// Head of the pending queue; `None` once every pair is labeled.
    pub fn next_pair(&mut self) -> Option<&PairCard> {
        while self.cursor < self.pairs.len() && self.labeled.contains(&self.cursor) {
            self.cursor += 1;
        }
        self.pairs.get(self.cursor)
    }

    pub fn submit(&mut self, pair_id: &str, is_match: bool) -> Result<LogEvent> {
        let &i = self
            .by_id
            .get(pair_id)
            .ok_or_else(|| Error::UnknownPair(String::from(pair_id)))?;
        if !self.labeled.insert(i) {
            return Err(Error::AlreadyLabeled(String::from(pair_id)));
        }
        let p = &self.pairs[i];
        self.labels.push(PairLabel {
            a: p.a,
            b: p.b,
            similarity: p.similarity,
            is_match,
            source: LabelSource::Human,
        });
        Ok(LogEvent::Label {
            pair_id: p.pair_id.clone(),
            a: p.a,
            b: p.b,
            sim: p.similarity,
            is_match,
        })
    }

    pub fn set_threshold(&mut self, value: f32) -> Result<LogEvent> {
        if !(-1.0..=1.0).contains(&value) {
            return Err(Error::invalid(format!("threshold {} outside [-1, 1]", value)));
        }
        self.threshold = Some(value);
        Ok(LogEvent::Threshold { value })
    }

    pub fn live_precision(&self, thresholds: &[f32]) -> Result<PrecisionCurve> {
        precision_curve(&self.labels, thresholds)
    }

    pub fn stats(&self) -> SessionStats {
        SessionStats {
            session_id: self.session_id.clone(),
            total: self.pairs.len(),
            labeled: self.labels.len(),
            pending: self.pairs.len() - self.labels.len(),
            matches: self.labels.iter().filter(|l| l.is_match).count(),
            threshold: self.threshold,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, SimilarityBand};
    use alloc::vec;

    fn graph(edges: &[(u64, u64, f32)]) -> KnnGraph {
        let mut g = KnnGraph::new(SimilarityBand::default(), 5);
        let mut adj: BTreeMap<u64, Vec<Edge>> = BTreeMap::new();
        for &(a, b, s) in edges {
            adj.entry(a).or_default().push(Edge { id: b, similarity: s });
        }
        for (id, e) in adj {
            g.insert(id, e);
        }
        g
    }

    fn five() -> KnnGraph {
        graph(&[
            (1, 2, 0.95),
            (2, 1, 0.95),
            (3, 4, 0.92),
            (5, 6, 0.97),
            (7, 8, 0.86),
            (9, 10, 0.99),
            (11, 12, 0.5),
        ])
    }

    fn spec(n: usize, seed: u64) -> SampleSpec {
        SampleSpec { n, seed, ..SampleSpec::default() }
    }

    #[test]
    fn exhaustive_sample() {
        let (s, _) = LabelSession::create("s", &five(), spec(5, 1)).unwrap();
        let mut ids: Vec<&str> = s.pairs().iter().map(|p| p.pair_id.as_str()).collect();
        ids.sort();
        assert_eq!(ids, vec!["1-2", "3-4", "5-6", "7-8", "9-10"]);
        assert!(s.pairs().iter().all(|p| (0.85..=1.0).contains(&p.similarity)));
        assert!(LabelSession::create("s", &five(), spec(6, 1)).is_err());
        assert!(LabelSession::create("s", &KnnGraph::default(), spec(0, 1)).is_err());
    }

    #[test]
    fn deterministic_order() {
        let a = LabelSession::create("s", &five(), spec(4, 9)).unwrap().0;
        let b = LabelSession::create("s", &five(), spec(4, 9)).unwrap().0;
        assert_eq!(a.pairs(), b.pairs());
    }

    #[test]
    fn peek_submit_done() {
        let (mut s, _) = LabelSession::create("s", &five(), spec(5, 2)).unwrap();
        let first = s.next_pair().unwrap().clone();
        assert_eq!(s.next_pair().unwrap(), &first);
        s.submit(&first.pair_id, true).unwrap();
        assert_eq!(s.stats().labeled, 1);
        assert_eq!(s.submit(&first.pair_id, false), Err(Error::AlreadyLabeled(first.pair_id.clone())));
        assert_eq!(s.submit("99-100", true), Err(Error::UnknownPair(String::from("99-100"))));
        assert_eq!(s.stats().labeled, 1);
        while let Some(p) = s.next_pair().cloned() {
            s.submit(&p.pair_id, false).unwrap();
        }
        assert!(s.is_done());
        assert_eq!(s.stats().pending, 0);
    }

    #[test]
    fn live_precision_hand_count() {
        let g = graph(&[(1, 2, 0.95), (3, 4, 0.92), (5, 6, 0.94)]);
        let (mut s, _) = LabelSession::create("s", &g, spec(3, 0)).unwrap();
        assert!(s.live_precision(&[0.93]).is_err());
        s.submit("1-2", true).unwrap();
        s.submit("3-4", false).unwrap();
        let p = s.live_precision(&[0.93]).unwrap().points[0].clone();
        assert_eq!((p.precision, p.support), (Some(1.0), 1));
        s.submit("5-6", false).unwrap();
        let p = s.live_precision(&[0.93]).unwrap().points[0].clone();
        assert_eq!((p.precision, p.support), (Some(0.5), 2));
    }

    #[test]
    fn replay_reconstructs() {
        let (mut s, header) = LabelSession::create("s", &five(), spec(5, 3)).unwrap();
        let mut log = vec![header];
        for (i, p) in s.pairs().to_vec().iter().enumerate().take(3) {
            log.push(s.submit(&p.pair_id, i % 2 == 0).unwrap());
        }
        log.push(s.set_threshold(0.93).unwrap());
        let mut r = LabelSession::replay(log.clone()).unwrap();
        assert_eq!(r.pairs(), s.pairs());
        assert_eq!(r.labels(), s.labels());
        assert_eq!(r.stats(), s.stats());
        assert_eq!(r.next_pair(), s.next_pair());
        assert!(LabelSession::replay(log[1..].to_vec()).is_err());
        let mut dup = log.clone();
        dup.push(log[1].clone());
        assert!(LabelSession::replay(dup).is_err());
    }

    #[test]
    fn thousand_distinct_pairs() {
        let edges: Vec<(u64, u64, f32)> = (0..10_000u64)
            .map(|i| (2 * i, 2 * i + 1, 0.85 + (i % 150) as f32 * 0.001))
            .collect();
        let (s, _) = LabelSession::create("s", &graph(&edges), spec(1000, 5)).unwrap();
        let ids: BTreeSet<&str> = s.pairs().iter().map(|p| p.pair_id.as_str()).collect();
        assert_eq!(ids.len(), 1000);
    }
}
