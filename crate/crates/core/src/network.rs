//! Radial distribution network under the lossless, flat-voltage (DC)
//! approximation.
//!
//! With the root voltage at 1 p.u. the branch current equals the branch
//! active power, so every security check is done directly in kW: the flow
//! on a line is the sum of the net consumption of all nodes below it.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance for kW comparisons.
pub const KW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId(pub usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("line {from}-{to} closes a cycle")]
    CycleDetected { from: String, to: String },
    #[error("node {0} is not connected to the root")]
    Disconnected(String),
    #[error("root {0} cannot be a customer")]
    RootIsCustomer(String),
    #[error("duplicate identifier {0}")]
    DuplicateId(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("line {from}-{to} has invalid limit {limit_kw} kW")]
    InvalidLimit { from: String, to: String, limit_kw: f64 },
    #[error("line {from}-{to} has a negative or non-finite impedance")]
    InvalidImpedance { from: String, to: String },
    #[error("unknown line #{0}")]
    UnknownEdge(usize),
    #[error("{0} is not a customer of the network")]
    UnknownCustomer(String),
    #[error("power of customer {0} is not finite")]
    NonFinitePower(String),
}

/// A line as described in an input file. Direction is irrelevant until
/// validation orients it away from the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: String,
    pub to: String,
    pub limit_kw: f64,
    #[serde(default)]
    pub resistance_ohm: f64,
    #[serde(default)]
    pub reactance_ohm: f64,
}

impl Line {
    pub fn new(from: impl Into<String>, to: impl Into<String>, limit_kw: f64) -> Self {
        Line {
            from: from.into(),
            to: to.into(),
            limit_kw,
            resistance_ohm: 0.0,
            reactance_ohm: 0.0,
        }
    }
}

/// Unvalidated network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub nodes: Vec<String>,
    pub lines: Vec<Line>,
    pub root: String,
    #[serde(default)]
    pub customers: Vec<String>,
    /// Stored for completeness; never binding under flat voltages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voltage_bounds: Option<(f64, f64)>,
}

/// A validated radial network with every line oriented root to leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    names: Vec<String>,
    index: HashMap<String, NodeId>,
    lines: Vec<Line>,
    ends: Vec<(NodeId, NodeId)>,
    root: NodeId,
    customers: Vec<NodeId>,
    customer_pos: HashMap<NodeId, usize>,
    voltage_bounds: Option<(f64, f64)>,
    /// Parent edge of every node (None for the root).
    parent_edge: Vec<Option<EdgeId>>,
    /// Nodes in breadth-first order from the root.
    bfs_order: Vec<NodeId>,
    /// Per edge, positions (into `customers`) of customers downstream.
    downstream_customers: Vec<Vec<usize>>,
}

/// Net active power per customer in kW; positive values are withdrawals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PowerProfile(pub BTreeMap<String, f64>);

impl PowerProfile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, customer: impl Into<String>, kw: f64) -> Self {
        self.0.insert(customer.into(), kw);
        self
    }

    pub fn get(&self, customer: &str) -> f64 {
        self.0.get(customer).copied().unwrap_or(0.0)
    }
}

impl<S: Into<String>> FromIterator<(S, f64)> for PowerProfile {
    fn from_iter<I: IntoIterator<Item = (S, f64)>>(iter: I) -> Self {
        PowerProfile(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

/// Active power per line, positive in the root-to-leaf direction.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub flows_kw: Vec<f64>,
}

impl FlowResult {
    pub fn flow(&self, edge: EdgeId) -> f64 {
        self.flows_kw[edge.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub edge: EdgeId,
    pub flow_kw: f64,
    pub limit_kw: f64,
}

impl Violation {
    pub fn excess_kw(&self) -> f64 {
        self.flow_kw.abs() - self.limit_kw
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecurityReport {
    /// `max_e |flow_e| - limit_e`; negative infinity when there are no lines.
    pub worst_margin_kw: f64,
    pub worst_edge: Option<EdgeId>,
    pub violations: Vec<Violation>,
}

impl SecurityReport {
    pub fn is_secure(&self) -> bool {
        self.worst_margin_kw <= KW_TOL
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "network rooted at {} ({} nodes, {} lines, {} customers)",
            self.names[self.root.0],
            self.names.len(),
            self.lines.len(),
            self.customers.len()
        )
    }
}

/// Checks that `spec` describes a tree rooted at `spec.root` and orients
/// each line away from the root.
pub fn validate_radial(spec: &NetworkSpec) -> Result<Network, NetworkError> {
    let mut index = HashMap::with_capacity(spec.nodes.len());
    for (i, name) in spec.nodes.iter().enumerate() {
        if index.insert(name.clone(), NodeId(i)).is_some() {
            return Err(NetworkError::DuplicateId(name.clone()));
        }
    }
    let lookup = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| NetworkError::UnknownNode(name.to_string()))
    };
    let root = lookup(&spec.root)?;

    let n = spec.nodes.len();
    let mut adjacency: Vec<Vec<(NodeId, usize)>> = vec![Vec::new(); n];
    let mut uf = UnionFind::new(n);
    for (k, line) in spec.lines.iter().enumerate() {
        let a = lookup(&line.from)?;
        let b = lookup(&line.to)?;
        if !(line.limit_kw.is_finite() && line.limit_kw > 0.0) {
            return Err(NetworkError::InvalidLimit {
                from: line.from.clone(),
                to: line.to.clone(),
                limit_kw: line.limit_kw,
            });
        }
        let impedance_ok = |x: f64| x.is_finite() && x >= 0.0;
        if !impedance_ok(line.resistance_ohm) || !impedance_ok(line.reactance_ohm) {
            return Err(NetworkError::InvalidImpedance {
                from: line.from.clone(),
                to: line.to.clone(),
            });
        }
        if !uf.union(a.0, b.0) {
            return Err(NetworkError::CycleDetected {
                from: line.from.clone(),
                to: line.to.clone(),
            });
        }
        adjacency[a.0].push((b, k));
        adjacency[b.0].push((a, k));
    }

    // Orient by BFS from the root.
    let mut parent_edge = vec![None; n];
    let mut seen = vec![false; n];
    let mut bfs_order = Vec::with_capacity(n);
    let mut ends = vec![(NodeId(0), NodeId(0)); spec.lines.len()];
    let mut lines = spec.lines.clone();
    let mut queue = VecDeque::from([root]);
    seen[root.0] = true;
    while let Some(u) = queue.pop_front() {
        bfs_order.push(u);
        for &(v, k) in &adjacency[u.0] {
            if seen[v.0] {
                continue;
            }
            seen[v.0] = true;
            parent_edge[v.0] = Some(EdgeId(k));
            ends[k] = (u, v);
            if lines[k].from != spec.nodes[u.0] {
                let line = &mut lines[k];
                std::mem::swap(&mut line.from, &mut line.to);
            }
            queue.push_back(v);
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(NetworkError::Disconnected(spec.nodes[i].clone()));
    }

    let mut customers = Vec::with_capacity(spec.customers.len());
    let mut customer_pos = HashMap::with_capacity(spec.customers.len());
    for name in &spec.customers {
        let id = index
            .get(name)
            .copied()
            .ok_or_else(|| NetworkError::UnknownCustomer(name.clone()))?;
        if id == root {
            return Err(NetworkError::RootIsCustomer(name.clone()));
        }
        if customer_pos.insert(id, customers.len()).is_some() {
            return Err(NetworkError::DuplicateId(name.clone()));
        }
        customers.push(id);
    }

    // Downstream customers per edge: walk each customer up to the root.
    let mut downstream_customers = vec![Vec::new(); lines.len()];
    for (pos, &c) in customers.iter().enumerate() {
        let mut node = c;
        while let Some(e) = parent_edge[node.0] {
            downstream_customers[e.0].push(pos);
            node = ends[e.0].0;
        }
    }

    Ok(Network {
        names: spec.nodes.clone(),
        index,
        lines,
        ends,
        root,
        customers,
        customer_pos,
        voltage_bounds: spec.voltage_bounds,
        parent_edge,
        bfs_order,
        downstream_customers,
    })
}

impl Network {
    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.names[id.0]
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.index.get(name).copied()
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn line(&self, edge: EdgeId) -> &Line {
        &self.lines[edge.0]
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = EdgeId> {
        (0..self.lines.len()).map(EdgeId)
    }

    /// Oriented endpoints `(parent, child)` of a line.
    pub fn endpoints(&self, edge: EdgeId) -> (NodeId, NodeId) {
        self.ends[edge.0]
    }

    pub fn edge_between(&self, a: &str, b: &str) -> Option<EdgeId> {
        let a = self.node_id(a)?;
        let b = self.node_id(b)?;
        self.ends
            .iter()
            .position(|&(p, c)| (p, c) == (a, b) || (p, c) == (b, a))
            .map(EdgeId)
    }

    pub fn parent_edge(&self, node: NodeId) -> Option<EdgeId> {
        self.parent_edge[node.0]
    }

    pub fn customers(&self) -> &[NodeId] {
        &self.customers
    }

    pub fn customer_names(&self) -> impl Iterator<Item = &str> {
        self.customers.iter().map(|c| self.names[c.0].as_str())
    }

    pub fn customer_position(&self, name: &str) -> Option<usize> {
        self.node_id(name)
            .and_then(|id| self.customer_pos.get(&id).copied())
    }

    pub fn is_customer(&self, name: &str) -> bool {
        self.customer_position(name).is_some()
    }

    pub fn voltage_bounds(&self) -> Option<(f64, f64)> {
        self.voltage_bounds
    }

    /// Positions (into [`Network::customers`]) of customers below `edge`.
    pub fn downstream_customers(&self, edge: EdgeId) -> &[usize] {
        &self.downstream_customers[edge.0]
    }

    /// Every node whose path to the root crosses `edge`.
    pub fn downstream_set(&self, edge: EdgeId) -> Result<Vec<NodeId>, NetworkError> {
        if edge.0 >= self.lines.len() {
            return Err(NetworkError::UnknownEdge(edge.0));
        }
        let head = self.ends[edge.0].1;
        let mut inside = vec![false; self.names.len()];
        inside[head.0] = true;
        // BFS order guarantees parents are visited before children.
        for &node in &self.bfs_order {
            if let Some(e) = self.parent_edge[node.0] {
                if inside[self.ends[e.0].0 .0] {
                    inside[node.0] = true;
                }
            }
        }
        Ok((0..self.names.len())
            .filter(|&i| inside[i])
            .map(NodeId)
            .collect())
    }

    /// Dense per-customer vector (ordered as [`Network::customers`]) from a
    /// named profile; absent customers read as 0 kW.
    pub fn dense_profile(&self, profile: &PowerProfile) -> Result<Vec<f64>, NetworkError> {
        let mut dense = vec![0.0; self.customers.len()];
        for (name, &kw) in &profile.0 {
            let pos = self
                .customer_position(name)
                .ok_or_else(|| NetworkError::UnknownCustomer(name.clone()))?;
            if !kw.is_finite() {
                return Err(NetworkError::NonFinitePower(name.clone()));
            }
            dense[pos] = kw;
        }
        Ok(dense)
    }

    /// Line flows for a dense per-customer power vector.
    pub fn flows_dense(&self, per_customer: &[f64]) -> Vec<f64> {
        assert_eq!(per_customer.len(), self.customers.len());
        let mut subtree = vec![0.0; self.names.len()];
        for (&c, &p) in self.customers.iter().zip(per_customer) {
            subtree[c.0] += p;
        }
        let mut flows = vec![0.0; self.lines.len()];
        for &node in self.bfs_order.iter().rev() {
            if let Some(e) = self.parent_edge[node.0] {
                flows[e.0] = subtree[node.0];
                let parent = self.ends[e.0].0;
                subtree[parent.0] += subtree[node.0];
            }
        }
        flows
    }

    /// `max_e |flow_e| - limit_e` for a flow vector.
    pub fn worst_margin(&self, flows: &[f64]) -> (f64, Option<EdgeId>) {
        let mut worst = (f64::NEG_INFINITY, None);
        for (k, (line, &f)) in self.lines.iter().zip(flows).enumerate() {
            let m = f.abs() - line.limit_kw;
            if m > worst.0 {
                worst = (m, Some(EdgeId(k)));
            }
        }
        worst
    }

    pub fn security_of_flows(&self, flows: &[f64]) -> SecurityReport {
        let (worst_margin_kw, worst_edge) = self.worst_margin(flows);
        let violations = self
            .lines
            .iter()
            .zip(flows)
            .enumerate()
            .filter(|(_, (line, f))| f.abs() - line.limit_kw > KW_TOL)
            .map(|(k, (line, &f))| Violation {
                edge: EdgeId(k),
                flow_kw: f,
                limit_kw: line.limit_kw,
            })
            .collect();
        SecurityReport {
            worst_margin_kw,
            worst_edge,
            violations,
        }
    }

    pub fn edge_label(&self, edge: EdgeId) -> String {
        let (p, c) = self.ends[edge.0];
        format!("({},{})", self.names[p.0], self.names[c.0])
    }
}

pub fn dc_power_flow(network: &Network, profile: &PowerProfile) -> Result<FlowResult, NetworkError> {
    let dense = network.dense_profile(profile)?;
    Ok(FlowResult {
        flows_kw: network.flows_dense(&dense),
    })
}

pub fn check_profile_security(
    network: &Network,
    profile: &PowerProfile,
) -> Result<SecurityReport, NetworkError> {
    let flows = dc_power_flow(network, profile)?;
    Ok(network.security_of_flows(&flows.flows_kw))
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if `a` and `b` were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}
