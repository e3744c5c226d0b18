//! Power-grid data model: nodes, directed-capacity links, generator fleets,
//! plus the topology queries (adjacency, t-hop reachability, incidence) that
//! the rest of the pipeline is built on.
//!
//! A [`Network`] is immutable once constructed; construction validates the
//! raw parts and refuses invalid grids. All matrices and per-node vectors in
//! this crate are aligned with the network's index order (entities sorted by
//! id), so `demand[i]` always refers to `network.nodes()[i]`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Generators below this nominal power (1 kW) are dropped at load time.
pub const GEN_DROP_THRESHOLD_MW: f64 = 1e-3;

/// Schema version accepted by the network file reader.
pub const NETWORK_SCHEMA_VERSION: &str = "gridflow-net/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GenId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node#{}", self.0)
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "link#{}", self.0)
    }
}

impl fmt::Display for GenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "gen#{}", self.0)
    }
}

/// Energy carrier of a generator, ordered by merit rank (cheapest actual
/// marginal cost first: solar, wind, OCGT, coal).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Carrier {
    Solar,
    Wind,
    Ocgt,
    Coal,
}

impl Carrier {
    pub const ALL: [Carrier; 4] = [Carrier::Solar, Carrier::Wind, Carrier::Ocgt, Carrier::Coal];

    /// Position in the merit order (0 = cheapest).
    pub fn merit_rank(self) -> usize {
        match self {
            Carrier::Solar => 0,
            Carrier::Wind => 1,
            Carrier::Ocgt => 2,
            Carrier::Coal => 3,
        }
    }

    /// Weather-dependent carriers have their available capacity scaled by a
    /// per-snapshot coefficient.
    pub fn is_renewable(self) -> bool {
        matches!(self, Carrier::Solar | Carrier::Wind)
    }

    /// Default actual marginal cost (currency/MWh), carbon cost included.
    pub fn default_marginal_cost(self) -> f64 {
        match self {
            Carrier::Solar => 0.010,
            Carrier::Wind => 0.015,
            Carrier::Ocgt => 121.89,
            Carrier::Coal => 125.00,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Carrier::Solar => "solar",
            Carrier::Wind => "wind",
            Carrier::Ocgt => "ocgt",
            Carrier::Coal => "coal",
        }
    }
}

impl fmt::Display for Carrier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub name: String,
}

/// Directed-capacity transport link. Positive flow is an export from
/// `from_node` (withdrawal at the sending end).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: LinkId,
    pub from_node: NodeId,
    pub to_node: NodeId,
    /// Nominal power limit in MW; flows are bounded to [-f_nom, f_nom].
    pub f_nom: f64,
    /// Transfer efficiency in (0, 1]. Stored for all links; only applied to
    /// the balance equation when the oracle runs in strict-efficiency mode.
    pub efficiency: f64,
    /// Cost per MWh moved (applied to |flow| when link costs are enabled).
    pub marginal_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: GenId,
    pub node_id: NodeId,
    pub carrier: Carrier,
    /// Nominal power in MW.
    pub p_nom: f64,
    /// Actual marginal cost in currency/MWh.
    pub marginal_cost: f64,
}

/// One validation problem found in a raw network description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    /// Stable machine-readable code, e.g. "unknown node" or "graph not connected".
    pub code: String,
    pub message: String,
}

impl ValidationIssue {
    fn new(code: &str, message: String) -> Self {
        ValidationIssue {
            code: code.to_string(),
            message,
        }
    }
}

/// Structured list of validation errors; empty means the network is valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, code: &str, message: String) {
        self.issues.push(ValidationIssue::new(code, message));
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "network valid");
        }
        for issue in &self.issues {
            writeln!(f, "[{}] {}", issue.code, issue.message)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("network validation failed:\n{0}")]
    Invalid(ValidationReport),
    #[error("unsupported network schema version {found:?}, expected {expected:?}")]
    SchemaVersion { found: String, expected: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed network file {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// On-disk network description, schema "gridflow-net/1". Units are MW and
/// currency/MWh throughout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawNetwork {
    pub version: String,
    pub nodes: Vec<NodeRecord>,
    pub links: Vec<Link>,
    pub generators: Vec<Generator>,
}

/// Validated, immutable power network. Safe to share read-only across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    nodes: Vec<NodeRecord>,
    links: Vec<Link>,
    generators: Vec<Generator>,
    node_index: HashMap<NodeId, usize>,
    /// Generator indices per node index.
    gens_by_node: Vec<Vec<usize>>,
    /// Neighbor node indices per node index (undirected, deduplicated).
    neighbors: Vec<Vec<usize>>,
}

impl Network {
    /// Validates and indexes a network. Entities are sorted by id; generators
    /// with `p_nom` below [`GEN_DROP_THRESHOLD_MW`] are dropped before
    /// validation.
    pub fn new(
        mut nodes: Vec<NodeRecord>,
        mut links: Vec<Link>,
        mut generators: Vec<Generator>,
    ) -> Result<Network, GridError> {
        nodes.sort_by_key(|n| n.id);
        links.sort_by_key(|l| l.id);
        generators.sort_by_key(|g| g.id);
        generators.retain(|g| g.p_nom >= GEN_DROP_THRESHOLD_MW);

        let report = validate_parts(&nodes, &links, &generators);
        if !report.is_empty() {
            return Err(GridError::Invalid(report));
        }

        let node_index: HashMap<NodeId, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();

        let mut gens_by_node = vec![Vec::new(); nodes.len()];
        for (gi, g) in generators.iter().enumerate() {
            gens_by_node[node_index[&g.node_id]].push(gi);
        }

        let mut neighbor_sets = vec![HashSet::new(); nodes.len()];
        for l in &links {
            let a = node_index[&l.from_node];
            let b = node_index[&l.to_node];
            neighbor_sets[a].insert(b);
            neighbor_sets[b].insert(a);
        }
        let neighbors = neighbor_sets
            .into_iter()
            .map(|s| {
                let mut v: Vec<usize> = s.into_iter().collect();
                v.sort_unstable();
                v
            })
            .collect();

        Ok(Network {
            nodes,
            links,
            generators,
            node_index,
            gens_by_node,
            neighbors,
        })
    }

    pub fn from_raw(raw: RawNetwork) -> Result<Network, GridError> {
        if raw.version != NETWORK_SCHEMA_VERSION {
            return Err(GridError::SchemaVersion {
                found: raw.version,
                expected: NETWORK_SCHEMA_VERSION.to_string(),
            });
        }
        Network::new(raw.nodes, raw.links, raw.generators)
    }

    pub fn to_raw(&self) -> RawNetwork {
        RawNetwork {
            version: NETWORK_SCHEMA_VERSION.to_string(),
            nodes: self.nodes.clone(),
            links: self.links.clone(),
            generators: self.generators.clone(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Network, GridError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let raw: RawNetwork = serde_json::from_str(&text).map_err(|source| GridError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        Network::from_raw(raw)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GridError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_raw()).expect("network serializes");
        std::fs::write(path, text).map_err(|source| GridError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.node_index.get(&id).copied()
    }

    /// Generator indices located at the given node index.
    pub fn generators_at(&self, node_idx: usize) -> &[usize] {
        &self.gens_by_node[node_idx]
    }

    /// Node index of a generator.
    pub fn gen_node(&self, gen_idx: usize) -> usize {
        self.node_index[&self.generators[gen_idx].node_id]
    }

    /// Endpoint node indices (from, to) of a link.
    pub fn link_endpoints(&self, link_idx: usize) -> (usize, usize) {
        let l = &self.links[link_idx];
        (self.node_index[&l.from_node], self.node_index[&l.to_node])
    }

    pub fn neighbors(&self, node_idx: usize) -> &[usize] {
        &self.neighbors[node_idx]
    }

    /// Symmetric binary adjacency matrix with zero diagonal. Parallel links
    /// collapse to a single 1 entry.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let n = self.n_nodes();
        let mut a = DMatrix::zeros(n, n);
        for l in 0..self.n_links() {
            let (i, j) = self.link_endpoints(l);
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    /// Node-link incidence matrix: column `l` holds +1 at the from-node and
    /// -1 at the to-node, so positive flow is a withdrawal at the sending end.
    pub fn incidence(&self) -> DMatrix<f64> {
        let n = self.n_nodes();
        let m = self.n_links();
        let mut inc = DMatrix::zeros(n, m);
        for l in 0..m {
            let (i, j) = self.link_endpoints(l);
            inc[(i, l)] += 1.0;
            inc[(j, l)] -= 1.0;
        }
        inc
    }

    /// Nodes reachable from `node_idx` within `hops` edges, itself included.
    /// Computed as the support of the `hops`-th power of (A + I).
    pub fn t_hop_neighborhood(&self, node_idx: usize, hops: usize) -> Vec<usize> {
        let n = self.n_nodes();
        assert!(node_idx < n, "node index out of range");
        // Row of (A+I)^T restricted to the start node: propagate a boolean
        // frontier through A+I `hops` times.
        let mut reach = vec![false; n];
        reach[node_idx] = true;
        for _ in 0..hops {
            let mut next = reach.clone();
            for (i, r) in reach.iter().enumerate() {
                if *r {
                    for &j in self.neighbors(i) {
                        next[j] = true;
                    }
                }
            }
            if next == reach {
                break;
            }
            reach = next;
        }
        reach
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.then_some(i))
            .collect()
    }

    /// Boolean mask rows for every node at the given hop radius; `mask[i][j]`
    /// is true iff `j` is within `hops` of `i`.
    pub fn t_hop_masks(&self, hops: usize) -> Vec<Vec<bool>> {
        let n = self.n_nodes();
        (0..n)
            .map(|i| {
                let mut row = vec![false; n];
                for j in self.t_hop_neighborhood(i, hops) {
                    row[j] = true;
                }
                row
            })
            .collect()
    }

    /// Total nominal capacity per node, with renewables scaled by the given
    /// per-node coefficients. This is the per-node generation upper bound.
    pub fn available_capacity(&self, eta_wind: &[f64], eta_solar: &[f64]) -> Vec<f64> {
        let mut avail = vec![0.0; self.n_nodes()];
        for (gi, g) in self.generators.iter().enumerate() {
            let j = self.gen_node(gi);
            let c = match g.carrier {
                Carrier::Wind => eta_wind[j],
                Carrier::Solar => eta_solar[j],
                _ => 1.0,
            };
            avail[j] += c * g.p_nom;
        }
        avail
    }
}

/// Validates raw network parts without constructing a `Network`. Returns an
/// empty report when the parts describe a usable grid.
pub fn validate(raw: &RawNetwork) -> ValidationReport {
    let mut nodes = raw.nodes.clone();
    let mut links = raw.links.clone();
    let mut gens = raw.generators.clone();
    nodes.sort_by_key(|n| n.id);
    links.sort_by_key(|l| l.id);
    gens.sort_by_key(|g| g.id);
    gens.retain(|g| g.p_nom >= GEN_DROP_THRESHOLD_MW);
    validate_parts(&nodes, &links, &gens)
}

fn validate_parts(nodes: &[NodeRecord], links: &[Link], gens: &[Generator]) -> ValidationReport {
    let mut report = ValidationReport::default();

    if nodes.is_empty() {
        report.push("empty network", "network has no nodes".to_string());
        return report;
    }

    let mut seen_nodes = HashSet::new();
    for n in nodes {
        if !seen_nodes.insert(n.id) {
            report.push("duplicate id", format!("{} declared twice", n.id));
        }
    }
    let mut seen_links = HashSet::new();
    for l in links {
        if !seen_links.insert(l.id) {
            report.push("duplicate id", format!("{} declared twice", l.id));
        }
    }
    let mut seen_gens = HashSet::new();
    for g in gens {
        if !seen_gens.insert(g.id) {
            report.push("duplicate id", format!("{} declared twice", g.id));
        }
    }

    let node_index: HashMap<NodeId, usize> =
        nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();

    for l in links {
        if !node_index.contains_key(&l.from_node) {
            report.push("unknown node", format!("{} references missing {}", l.id, l.from_node));
        }
        if !node_index.contains_key(&l.to_node) {
            report.push("unknown node", format!("{} references missing {}", l.id, l.to_node));
        }
        if l.from_node == l.to_node {
            report.push("self loop", format!("{} joins {} to itself", l.id, l.from_node));
        }
        if !(l.f_nom > 0.0) || !l.f_nom.is_finite() {
            report.push(
                "nonpositive capacity",
                format!("{} has f_nom {} MW; must be > 0", l.id, l.f_nom),
            );
        }
        if !(l.efficiency > 0.0 && l.efficiency <= 1.0) {
            report.push(
                "bad efficiency",
                format!("{} has efficiency {}; must be in (0, 1]", l.id, l.efficiency),
            );
        }
        if !l.marginal_cost.is_finite() || l.marginal_cost < 0.0 {
            report.push(
                "bad cost",
                format!("{} has marginal cost {}", l.id, l.marginal_cost),
            );
        }
    }

    for g in gens {
        if !node_index.contains_key(&g.node_id) {
            report.push("unknown node", format!("{} references missing {}", g.id, g.node_id));
        }
        if !g.p_nom.is_finite() || g.p_nom < 0.0 {
            report.push(
                "nonpositive capacity",
                format!("{} has p_nom {} MW", g.id, g.p_nom),
            );
        }
        if !g.marginal_cost.is_finite() || g.marginal_cost < 0.0 {
            report.push(
                "bad cost",
                format!("{} has marginal cost {}", g.id, g.marginal_cost),
            );
        }
    }

    // Connectivity via breadth-first search over valid links only.
    if report.is_empty() && nodes.len() > 1 {
        let mut adj = vec![Vec::new(); nodes.len()];
        for l in links {
            let a = node_index[&l.from_node];
            let b = node_index[&l.to_node];
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut visited = vec![false; nodes.len()];
        let mut queue = std::collections::VecDeque::from([0usize]);
        visited[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        let unreachable = visited.iter().filter(|v| !**v).count();
        if unreachable > 0 {
            report.push(
                "graph not connected",
                format!("{unreachable} of {} nodes unreachable from {}", nodes.len(), nodes[0].id),
            );
        }
    }

    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: u32) -> NodeRecord {
        NodeRecord {
            id: NodeId(id),
            name: format!("n{id}"),
        }
    }

    fn link(id: u32, from: u32, to: u32) -> Link {
        Link {
            id: LinkId(id),
            from_node: NodeId(from),
            to_node: NodeId(to),
            f_nom: 100.0,
            efficiency: 1.0,
            marginal_cost: 0.0,
        }
    }

    fn gen(id: u32, at: u32, carrier: Carrier, p_nom: f64) -> Generator {
        Generator {
            id: GenId(id),
            node_id: NodeId(at),
            carrier,
            p_nom,
            marginal_cost: carrier.default_marginal_cost(),
        }
    }

    fn two_node() -> Network {
        Network::new(vec![node(1), node(2)], vec![link(1, 1, 2)], vec![]).unwrap()
    }

    #[test]
    fn merit_rank_follows_actual_marginal_cost() {
        let costs: Vec<f64> = Carrier::ALL.iter().map(|c| c.default_marginal_cost()).collect();
        for w in costs.windows(2) {
            assert!(w[0] < w[1], "merit order must ascend in cost: {costs:?}");
        }
        assert_eq!(Carrier::Solar.merit_rank(), 0);
        assert_eq!(Carrier::Coal.merit_rank(), 3);
    }

    #[test]
    fn adjacency_two_node_single_link() {
        let net = two_node();
        let a = net.adjacency();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn adjacency_path_non_adjacent_pair() {
        let net = Network::new(
            vec![node(1), node(2), node(3)],
            vec![link(1, 1, 2), link(2, 2, 3)],
            vec![],
        )
        .unwrap();
        let a = net.adjacency();
        assert_eq!(a[(0, 2)], 0.0);
        assert_eq!(a[(2, 0)], 0.0);
    }

    #[test]
    fn adjacency_binary_under_parallel_links() {
        let net = Network::new(
            vec![node(1), node(2)],
            vec![link(1, 1, 2), link(2, 1, 2)],
            vec![],
        )
        .unwrap();
        assert_eq!(net.adjacency()[(0, 1)], 1.0);
    }

    #[test]
    fn t_hop_path_one_hop() {
        let net = Network::new(
            vec![node(1), node(2), node(3)],
            vec![link(1, 1, 2), link(2, 2, 3)],
            vec![],
        )
        .unwrap();
        assert_eq!(net.t_hop_neighborhood(0, 1), vec![0, 1]);
    }

    #[test]
    fn t_hop_zero_is_self() {
        let net = two_node();
        assert_eq!(net.t_hop_neighborhood(0, 0), vec![0]);
        assert_eq!(net.t_hop_neighborhood(1, 0), vec![1]);
    }

    #[test]
    fn validate_triangle_is_clean() {
        let raw = RawNetwork {
            version: NETWORK_SCHEMA_VERSION.to_string(),
            nodes: vec![node(1), node(2), node(3)],
            links: vec![link(1, 1, 2), link(2, 2, 3), link(3, 3, 1)],
            generators: vec![gen(1, 1, Carrier::Coal, 10.0)],
        };
        assert!(validate(&raw).is_empty());
    }

    #[test]
    fn validate_reports_unknown_node() {
        let raw = RawNetwork {
            version: NETWORK_SCHEMA_VERSION.to_string(),
            nodes: vec![node(1), node(2)],
            links: vec![link(1, 1, 2)],
            generators: vec![gen(1, 9, Carrier::Wind, 10.0)],
        };
        let report = validate(&raw);
        assert!(report.issues.iter().any(|i| i.code == "unknown node"));
    }

    #[test]
    fn validate_reports_disconnected_graph() {
        let raw = RawNetwork {
            version: NETWORK_SCHEMA_VERSION.to_string(),
            nodes: vec![node(1), node(2), node(3), node(4)],
            links: vec![link(1, 1, 2), link(2, 3, 4)],
            generators: vec![],
        };
        let report = validate(&raw);
        assert!(report.issues.iter().any(|i| i.code == "graph not connected"));
    }

    #[test]
    fn sub_threshold_generators_dropped() {
        let net = Network::new(
            vec![node(1), node(2)],
            vec![link(1, 1, 2)],
            vec![gen(1, 1, Carrier::Solar, 0.0005), gen(2, 2, Carrier::Coal, 5.0)],
        )
        .unwrap();
        assert_eq!(net.n_generators(), 1);
        assert_eq!(net.generators()[0].id, GenId(2));
    }

    #[test]
    fn incidence_signs_and_column_sums() {
        let net = two_node();
        let inc = net.incidence();
        assert_eq!(inc[(0, 0)], 1.0);
        assert_eq!(inc[(1, 0)], -1.0);
        for l in 0..net.n_links() {
            let col_sum: f64 = (0..net.n_nodes()).map(|i| inc[(i, l)]).sum();
            assert_eq!(col_sum, 0.0);
        }
    }

    #[test]
    fn schema_version_mismatch_rejected() {
        let raw = RawNetwork {
            version: "gridflow-net/99".to_string(),
            nodes: vec![node(1)],
            links: vec![],
            generators: vec![],
        };
        assert!(matches!(
            Network::from_raw(raw),
            Err(GridError::SchemaVersion { .. })
        ));
    }
}
