//! Continuous-time interaction streams: ingestion, indexing and the
//! chronological train/test split.
//!
//! A [`TemporalGraph`] is immutable once built. Events are undirected and
//! stored once under the ordered key `(min(u, v), max(u, v))`; every pair is
//! also reachable from both endpoints through the per-node adjacency.
//! Duplicate `(u, v, t)` rows are distinct contacts.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// One timestamped undirected contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub u: NodeId,
    pub v: NodeId,
    pub t: f64,
}

impl Event {
    pub fn new(u: NodeId, v: NodeId, t: f64) -> Self {
        Event { u, v, t }
    }

    /// Unordered pair key.
    pub fn key(&self) -> (NodeId, NodeId) {
        pair_key(self.u, self.v)
    }
}

#[inline]
pub fn pair_key(u: NodeId, v: NodeId) -> (NodeId, NodeId) {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

#[derive(Debug, Clone)]
pub struct TemporalGraph {
    num_nodes: usize,
    events: Vec<Event>,
    pair_ids: HashMap<(NodeId, NodeId), usize>,
    /// Sorted timestamps per pair id.
    pair_times: Vec<Vec<f64>>,
    pair_keys: Vec<(NodeId, NodeId)>,
    /// Per node: (neighbor, pair id), sorted by neighbor.
    adjacency: Vec<Vec<(NodeId, usize)>>,
}

impl TemporalGraph {
    /// Builds the indices over `events`. Events are stably sorted by time.
    pub fn from_events(num_nodes: usize, mut events: Vec<Event>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if e.u == e.v {
                return Err(Error::InvalidArgument(format!("event {i} is a self-loop")));
            }
            if e.u >= num_nodes || e.v >= num_nodes {
                return Err(Error::InvalidArgument(format!(
                    "event {i} references node outside 0..{num_nodes}"
                )));
            }
            if !e.t.is_finite() || e.t < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "event {i} has invalid timestamp {}",
                    e.t
                )));
            }
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));

        let mut pair_ids = HashMap::new();
        let mut pair_times: Vec<Vec<f64>> = Vec::new();
        let mut pair_keys = Vec::new();
        let mut adjacency: Vec<Vec<(NodeId, usize)>> = vec![Vec::new(); num_nodes];
        for e in &events {
            let key = e.key();
            let id = *pair_ids.entry(key).or_insert_with(|| {
                pair_times.push(Vec::new());
                pair_keys.push(key);
                adjacency[key.0].push((key.1, pair_keys.len() - 1));
                adjacency[key.1].push((key.0, pair_keys.len() - 1));
                pair_keys.len() - 1
            });
            // events are time-sorted, so each list stays non-decreasing
            pair_times[id].push(e.t);
        }
        for list in &mut adjacency {
            list.sort_unstable_by_key(|&(n, _)| n);
        }

        Ok(TemporalGraph {
            num_nodes,
            events,
            pair_ids,
            pair_times,
            pair_keys,
            adjacency,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn num_events(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn num_pairs(&self) -> usize {
        self.pair_keys.len()
    }

    /// Largest timestamp, or 0 for an empty graph.
    pub fn max_time(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.t)
    }

    /// Every distinct unordered pair with its sorted timestamps.
    pub fn pairs(&self) -> impl Iterator<Item = ((NodeId, NodeId), &[f64])> + '_ {
        self.pair_keys
            .iter()
            .zip(&self.pair_times)
            .map(|(&k, ts)| (k, ts.as_slice()))
    }

    /// All timestamps of `(u, v)` contacts; empty for unknown pairs.
    pub fn pair_times(&self, u: NodeId, v: NodeId) -> &[f64] {
        match self.pair_ids.get(&pair_key(u, v)) {
            Some(&id) => &self.pair_times[id],
            None => &[],
        }
    }

    pub fn has_pair(&self, u: NodeId, v: NodeId) -> bool {
        self.pair_ids.contains_key(&pair_key(u, v))
    }

    /// Timestamps of `(u, v)` contacts strictly before `t`.
    pub fn pair_history(&self, u: NodeId, v: NodeId, t: f64) -> &[f64] {
        let ts = self.pair_times(u, v);
        &ts[..ts.partition_point(|&x| x < t)]
    }

    /// Number of `(u, v)` contacts with timestamp in `[from, to)`.
    pub fn count_in_window(&self, u: NodeId, v: NodeId, from: f64, to: f64) -> usize {
        let ts = self.pair_times(u, v);
        let lo = ts.partition_point(|&x| x < from);
        let hi = ts.partition_point(|&x| x < to);
        hi.saturating_sub(lo)
    }

    /// Neighbors of `u` over the whole stream, with their contact timestamps,
    /// ordered by neighbor id.
    pub fn neighbors(&self, u: NodeId) -> impl Iterator<Item = (NodeId, &[f64])> + '_ {
        self.adjacency[u]
            .iter()
            .map(move |&(n, id)| (n, self.pair_times[id].as_slice()))
    }

    pub fn degree(&self, u: NodeId) -> usize {
        self.adjacency[u].len()
    }

    /// Writes the stream back out as a dense-id `u v t` edge list.
    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for e in &self.events {
            writeln!(w, "{} {} {}", e.u, e.v, e.t).map_err(|err| Error::io(path, err))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Counts recorded while normalizing a raw edge list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub rows: usize,
    pub self_loops_dropped: usize,
    pub comment_lines: usize,
    pub raw_time_min: f64,
    pub raw_time_max: f64,
    pub time_unit: f64,
}

/// A loaded edge list: the graph plus the dense-id to original-label table.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: TemporalGraph,
    pub node_labels: Vec<String>,
    pub stats: IngestStats,
}

impl Dataset {
    /// Writes the `node_id,original_id` remap table.
    pub fn write_node_map(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "node_id,original_id").map_err(|e| Error::io(path, e))?;
        for (id, label) in self.node_labels.iter().enumerate() {
            writeln!(w, "{id},{label}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a `u v t` edge list (whitespace or comma separated, `#`/`%`
/// comments). Rows with four or more columns take the timestamp from the last
/// column, which covers the `u v weight t` variant.
///
/// Node labels are remapped to `0..N` in order of first appearance.
/// Timestamps are shifted so the earliest is 0 and divided by `time_unit`.
pub fn load_edge_list(path: &Path, time_unit: f64) -> Result<Dataset> {
    if !(time_unit.is_finite() && time_unit > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "time_unit must be positive, got {time_unit}"
        )));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut ids: HashMap<String, NodeId> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut raw: Vec<(NodeId, NodeId, f64)> = Vec::new();
    let mut stats = IngestStats {
        time_unit,
        ..IngestStats::default()
    };

    let mut intern = |label: &str| -> NodeId {
        if let Some(&id) = ids.get(label) {
            return id;
        }
        let id = labels.len();
        labels.push(label.to_string());
        ids.insert(label.to_string(), id);
        id
    };

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') || trimmed.starts_with('%') {
            stats.comment_lines += 1;
            continue;
        }
        let fields: Vec<&str> = trimmed
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("expected `u v t`, found {} field(s)", fields.len()),
            });
        }
        let t: f64 = fields[fields.len() - 1].parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            msg: format!("bad timestamp `{}`", fields[fields.len() - 1]),
        })?;
        if !t.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("non-finite timestamp `{}`", fields[fields.len() - 1]),
            });
        }
        stats.rows += 1;
        if fields[0] == fields[1] {
            stats.self_loops_dropped += 1;
            continue;
        }
        let u = intern(fields[0]);
        let v = intern(fields[1]);
        raw.push((u, v, t));
    }

    if stats.self_loops_dropped > 0 {
        warn!(
            "{}: dropped {} self-loop row(s)",
            path.display(),
            stats.self_loops_dropped
        );
    }
    if raw.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }

    let t_min = raw.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let t_max = raw.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    stats.raw_time_min = t_min;
    stats.raw_time_max = t_max;

    let events = raw
        .into_iter()
        .map(|(u, v, t)| Event::new(u, v, (t - t_min) / time_unit))
        .collect();
    let graph = TemporalGraph::from_events(labels.len(), events)?;
    Ok(Dataset {
        graph,
        node_labels: labels,
        stats,
    })
}

#[derive(Debug, Clone)]
pub struct DataSplit {
    pub t_split: f64,
    pub train: TemporalGraph,
    /// Distinct pairs contacting after `t_split`, with their first test-time contact.
    pub test_pairs: BTreeMap<(NodeId, NodeId), f64>,
}

/// Chronological split at `ratio * T_max`: contacts at or before the split
/// train, later contacts are collapsed into a static set of test pairs.
pub fn split_train_test(g: &TemporalGraph, ratio: f64) -> Result<DataSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Split(format!(
            "ratio must lie in (0, 1), got {ratio}"
        )));
    }
    if g.is_empty() {
        return Err(Error::Split("graph has no events".into()));
    }
    let t_split = ratio * g.max_time();
    let mut train = Vec::new();
    let mut test_pairs = BTreeMap::new();
    for e in g.events() {
        if e.t <= t_split {
            train.push(*e);
        } else {
            test_pairs.entry(e.key()).or_insert(e.t);
        }
    }
    if train.is_empty() {
        return Err(Error::Split(format!(
            "no training events at or before t={t_split}"
        )));
    }
    if test_pairs.is_empty() {
        return Err(Error::Split(format!("no test events after t={t_split}")));
    }
    Ok(DataSplit {
        t_split,
        train: TemporalGraph::from_events(g.num_nodes(), train)?,
        test_pairs,
    })
}
