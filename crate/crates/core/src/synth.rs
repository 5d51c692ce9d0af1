//! Planted-significant-ties test streams.
//!
//! Nodes are split round-robin into communities. Each planted pair lives
//! inside one community and emits a renewal process with Pareto gaps, wrapped
//! onto the horizon, so its contacts arrive in bursts. Background contacts
//! are uniform in time and join two members of the same community with
//! probability `within_community`, otherwise two arbitrary nodes.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{pair_key, Event, NodeId};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_nodes: usize,
    pub n_communities: usize,
    pub n_significant_pairs: usize,
    pub events_per_significant_pair: usize,
    pub n_background_events: usize,
    pub within_community: f64,
    /// Tail exponent of the planted inter-contact gaps.
    pub gap_alpha: f64,
    pub horizon: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_nodes: 100,
            n_communities: 4,
            n_significant_pairs: 20,
            events_per_significant_pair: 50,
            n_background_events: 1000,
            within_community: 0.9,
            gap_alpha: 2.2,
            horizon: 100.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_nodes < 2 {
            return bad("need at least two nodes");
        }
        if self.n_communities == 0 || self.n_communities > self.n_nodes / 2 {
            return bad("communities must hold at least two nodes each");
        }
        if !(0.0..=1.0).contains(&self.within_community) {
            return bad("within_community must be a probability");
        }
        if self.horizon.is_nan()
            || self.horizon <= 0.0
            || self.gap_alpha.is_nan()
            || self.gap_alpha <= 2.0
        {
            return bad("horizon must be positive and gap_alpha above 2");
        }
        let mut capacity = 0;
        for c in 0..self.n_communities {
            let size = self.members(c).len();
            capacity += size * (size - 1) / 2;
        }
        if self.n_significant_pairs > capacity {
            return bad("more planted pairs than within-community pairs");
        }
        Ok(())
    }

    pub fn community(&self, u: NodeId) -> usize {
        u % self.n_communities
    }

    fn members(&self, c: usize) -> Vec<NodeId> {
        (c..self.n_nodes).step_by(self.n_communities).collect()
    }

    pub fn total_events(&self) -> usize {
        self.n_significant_pairs * self.events_per_significant_pair + self.n_background_events
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticStream {
    pub events: Vec<Event>,
    pub planted: Vec<(NodeId, NodeId)>,
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticStream> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::Synthetic);
    let communities: Vec<Vec<NodeId>> = (0..spec.n_communities).map(|c| spec.members(c)).collect();

    let mut planted = BTreeSet::new();
    while planted.len() < spec.n_significant_pairs {
        let members = &communities[rng.random_range(0..communities.len())];
        let a = members[rng.random_range(0..members.len())];
        let b = members[rng.random_range(0..members.len())];
        if a != b {
            planted.insert(pair_key(a, b));
        }
    }
    let planted: Vec<(NodeId, NodeId)> = planted.into_iter().collect();

    // Pareto gaps with mean horizon / events_per_pair
    let k = spec.events_per_significant_pair.max(1) as f64;
    let a = spec.gap_alpha;
    let gap_min = spec.horizon / k * (a - 2.0) / (a - 1.0);
    let mut events = Vec::with_capacity(spec.total_events());
    for &(u, v) in &planted {
        let mut t = rng.random_range(0.0..spec.horizon);
        for _ in 0..spec.events_per_significant_pair {
            events.push(Event::new(u, v, round_time(t.rem_euclid(spec.horizon))));
            let uniform: f64 = 1.0 - rng.random::<f64>();
            t += gap_min * uniform.powf(-1.0 / (a - 1.0));
        }
    }

    for _ in 0..spec.n_background_events {
        let t = rng.random_range(0.0..spec.horizon);
        let u = rng.random_range(0..spec.n_nodes);
        let v = loop {
            let v = if rng.random_bool(spec.within_community) {
                let members = &communities[spec.community(u)];
                members[rng.random_range(0..members.len())]
            } else {
                rng.random_range(0..spec.n_nodes)
            };
            if v != u {
                break v;
            }
        };
        events.push(Event::new(u, v, round_time(t)));
    }

    events.sort_by(|x, y| x.t.total_cmp(&y.t));
    Ok(SyntheticStream { events, planted })
}

/// Six decimals so the written file reloads to the same values.
fn round_time(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

impl SyntheticStream {
    /// Writes `<path>` as a `u v t` edge list and `<path>.planted.csv`
    /// with the planted pairs. Returns the planted-pairs path.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "# u v t").map_err(|e| Error::io(path, e))?;
        for e in &self.events {
            writeln!(w, "{} {} {:.6}", e.u, e.v, e.t).map_err(|err| Error::io(path, err))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;

        let mut planted_path = path.as_os_str().to_owned();
        planted_path.push(".planted.csv");
        let planted_path = PathBuf::from(planted_path);
        let file = File::create(&planted_path).map_err(|e| Error::io(&planted_path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "u,v").map_err(|e| Error::io(&planted_path, e))?;
        for (u, v) in &self.planted {
            writeln!(w, "{u},{v}").map_err(|e| Error::io(&planted_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&planted_path, e))?;
        Ok(planted_path)
    }
}
