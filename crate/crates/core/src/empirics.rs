//! Event-log ingestion and empirical SIS parameter extraction.
//!
//! Input is JSON lines, one post per line:
//!
//! ```text
//! {"ts": 1296000000000, "user": "alice", "mentions": ["bob"], "text": "... #tag ..."}
//! ```
//!
//! `ts` is in epoch milliseconds. A post is tagged when its text contains the
//! tracked hashtag (case-insensitive substring match).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::graph::Graph;
use crate::sis::{infected_fraction_up_to, infected_neighbors, InfectionState, TransitionKernel};

/// One minute in milliseconds.
pub const DEFAULT_BIN_WIDTH_MS: u64 = 60_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffusionEvent {
    pub timestamp: u64,
    pub user: String,
    pub mentions: Vec<String>,
    pub tagged: bool,
}

#[derive(Deserialize)]
struct RawEvent {
    ts: u64,
    user: String,
    #[serde(default)]
    mentions: Vec<String>,
    #[serde(default)]
    text: String,
}

/// Parsed, filtered log.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestedLog {
    pub events: Vec<DiffusionEvent>,
    /// Set when no tagged event survived filtering.
    pub empty_warning: bool,
}

fn clean_id(s: &str) -> &str {
    s.trim().trim_start_matches('@')
}

/// Reads JSON lines, keeps posts containing `hashtag`, sorts by timestamp
/// (stable, so ties keep file order). Blank lines are skipped.
pub fn ingest_events<R: BufRead>(input: R, hashtag: &str) -> Result<IngestedLog> {
    let needle = hashtag.to_lowercase();
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEvent = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let user = clean_id(&raw.user).to_string();
        if user.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                reason: "empty user id".into(),
            });
        }
        if !raw.text.to_lowercase().contains(&needle) {
            continue;
        }
        let mentions = raw
            .mentions
            .iter()
            .map(|m| clean_id(m).to_string())
            .filter(|m| !m.is_empty())
            .collect();
        events.push(DiffusionEvent {
            timestamp: raw.ts,
            user,
            mentions,
            tagged: true,
        });
    }
    events.sort_by_key(|e| e.timestamp);
    let empty_warning = events.is_empty();
    Ok(IngestedLog {
        events,
        empty_warning,
    })
}

pub fn ingest_file(path: &std::path::Path, hashtag: &str) -> Result<IngestedLog> {
    let f = std::fs::File::open(path)?;
    ingest_events(std::io::BufReader::new(f), hashtag)
}

/// Mention graph with node `i` standing for `users[i]` (sorted ids).
#[derive(Debug, Clone, PartialEq)]
pub struct MentionGraph {
    pub graph: Graph,
    pub users: Vec<String>,
}

impl MentionGraph {
    pub fn index_of(&self, user: &str) -> Option<usize> {
        self.users.binary_search_by(|u| u.as_str().cmp(user)).ok()
    }
}

/// Undirected simple graph: `{u, v}` is an edge iff one mentions the other in
/// a tagged event. Every author and mentioned user is a node.
pub fn build_mention_graph(events: &[DiffusionEvent]) -> Result<MentionGraph> {
    let mut ids = BTreeSet::new();
    for e in events.iter().filter(|e| e.tagged) {
        ids.insert(e.user.as_str());
        ids.extend(e.mentions.iter().map(String::as_str));
    }
    if ids.is_empty() {
        return Err(param("events", "no tagged events"));
    }
    let users: Vec<String> = ids.into_iter().map(str::to_string).collect();
    let index: BTreeMap<&str, usize> = users.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let mut edges = BTreeSet::new();
    for e in events.iter().filter(|e| e.tagged) {
        let u = index[e.user.as_str()];
        for m in &e.mentions {
            let v = index[m.as_str()];
            if u != v {
                edges.insert((u.min(v), u.max(v)));
            }
        }
    }
    let graph = Graph::from_edges(users.len(), edges)?;
    Ok(MentionGraph { graph, users })
}

/// Per-bin node states and per-degree infected fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct InfectionTimeSeries {
    pub bin_width: u64,
    pub start: u64,
    pub states: Vec<InfectionState>,
    /// `x[b][l-1]`, degrees `1..=max_degree` of the graph.
    pub x: Vec<Vec<f64>>,
}

impl InfectionTimeSeries {
    pub fn bins(&self) -> usize {
        self.states.len()
    }

    /// CSV `bin,degree,x`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin,degree,x\n");
        for (b, row) in self.x.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                let _ = writeln!(s, "{b},{},{v}", i + 1);
            }
        }
        s
    }
}

/// Binned infection states. In bin `b`, previously infected nodes first
/// recover with probability `delta` each (one uniform draw per infected node
/// in node order), then every author of a tagged post in the bin is
/// infected. Posting re-seeds an already infected node.
pub fn extract_infection_series<R: Rng + ?Sized>(
    events: &[DiffusionEvent],
    mg: &MentionGraph,
    delta: f64,
    bin_width: u64,
    rng: &mut R,
) -> Result<InfectionTimeSeries> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(param("delta", format!("must lie in [0,1], got {delta}")));
    }
    if bin_width == 0 {
        return Err(param("bin_width", "must be positive"));
    }
    let tagged: Vec<&DiffusionEvent> = events.iter().filter(|e| e.tagged).collect();
    let n = mg.graph.node_count();
    let l_max = mg.graph.max_degree();
    let Some(first) = tagged.iter().map(|e| e.timestamp).min() else {
        return Ok(InfectionTimeSeries {
            bin_width,
            start: 0,
            states: Vec::new(),
            x: Vec::new(),
        });
    };
    let last = tagged.iter().map(|e| e.timestamp).max().expect("non-empty");
    let bins = ((last - first) / bin_width + 1) as usize;
    let mut posters: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for e in &tagged {
        let b = ((e.timestamp - first) / bin_width) as usize;
        let v = mg
            .index_of(&e.user)
            .ok_or_else(|| param("events", format!("user {} missing from graph", e.user)))?;
        posters[b].push(v);
    }
    let mut state = InfectionState::all_susceptible(n);
    let mut states = Vec::with_capacity(bins);
    let mut x = Vec::with_capacity(bins);
    for bin_posters in &posters {
        for v in 0..n {
            if state.is_infected(v) && rng.random::<f64>() < delta {
                state.set(v, false);
            }
        }
        for &v in bin_posters {
            state.set(v, true);
        }
        x.push(infected_fraction_up_to(&mg.graph, &state, l_max));
        states.push(state.clone());
    }
    Ok(InfectionTimeSeries {
        bin_width,
        start: first,
        states,
        x,
    })
}

/// Empirical susceptible → infected rates per `(l, a)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRates {
    pub max_degree: usize,
    /// `exposures[l][a]`: susceptible node-steps with degree `l`, `a` infected neighbours.
    pub exposures: Vec<Vec<u64>>,
    /// Of those, how many were infected in the next bin.
    pub infections: Vec<Vec<u64>>,
}

impl EmpiricalRates {
    pub fn is_missing(&self, l: usize, a: usize) -> bool {
        self.exposures[l][a] == 0
    }

    /// `P_hat(l, a)`, zero for missing cells.
    pub fn p_hat(&self, l: usize, a: usize) -> f64 {
        let n = self.exposures[l][a];
        if n == 0 {
            0.0
        } else {
            self.infections[l][a] as f64 / n as f64
        }
    }

    /// Kernel with `P21 = P_hat` and constant recovery `P12 = delta`.
    /// With `add_one` the infection estimate is `(k + 1) / (n + 2)`.
    pub fn to_kernel(&self, delta: f64, add_one: bool) -> Result<TransitionKernel> {
        TransitionKernel::from_fn(self.max_degree, 1.0, |l, a| {
            let p = if add_one {
                (self.infections[l][a] as f64 + 1.0) / (self.exposures[l][a] as f64 + 2.0)
            } else {
                self.p_hat(l, a)
            };
            (delta, p)
        })
    }

    /// CSV `l,a,p_hat,count`; missing cells have an empty `p_hat`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("l,a,p_hat,count\n");
        for l in 1..=self.max_degree {
            for a in 0..=l {
                let p = if self.is_missing(l, a) {
                    String::new()
                } else {
                    self.p_hat(l, a).to_string()
                };
                let _ = writeln!(s, "{l},{a},{p},{}", self.exposures[l][a]);
            }
        }
        s
    }
}

/// Counts, over consecutive bins, susceptible nodes by `(degree, infected
/// neighbours)` and how many of them are infected one bin later.
pub fn empirical_transition_rates(
    series: &InfectionTimeSeries,
    graph: &Graph,
) -> Result<EmpiricalRates> {
    if series.bins() < 2 {
        return Err(param("series", "needs at least two bins"));
    }
    let l_max = graph.max_degree();
    let mut exposures: Vec<Vec<u64>> = (0..=l_max).map(|l| vec![0; l + 1]).collect();
    let mut infections = exposures.clone();
    for w in series.states.windows(2) {
        for v in 0..graph.node_count() {
            let l = graph.degree(v);
            if l == 0 || w[0].is_infected(v) {
                continue;
            }
            let a = infected_neighbors(graph, &w[0], v);
            exposures[l][a] += 1;
            if w[1].is_infected(v) {
                infections[l][a] += 1;
            }
        }
    }
    Ok(EmpiricalRates {
        max_degree: l_max,
        exposures,
        infections,
    })
}

/// Writes an event log line for `user` in JSON-lines format.
pub fn event_line(ts: u64, user: &str, mentions: &[String], text: &str) -> String {
    serde_json::json!({"ts": ts, "user": user, "mentions": mentions, "text": text}).to_string()
}
