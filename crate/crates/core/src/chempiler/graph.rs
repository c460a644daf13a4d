use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chemlang::OpKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    ReagentFlask,
    Pump,
    Valve,
    Reactor,
    Separator,
    Filter,
    Rotavap,
    SensorPhoton,
    SensorConductivity,
    Chromatograph,
    HeaterStirrerChiller,
    Waste,
    Product,
    Storage,
}

impl NodeKind {
    /// Operations a node of this kind may host.
    pub fn allowed(self) -> &'static [OpKind] {
        use OpKind::*;
        match self {
            NodeKind::Reactor => &[ReactHot, ReactCold, HeatStir, Chill],
            NodeKind::Separator => &[Separate],
            NodeKind::Rotavap => &[Evaporate, Dry, Distil, Crystallise, Sublime],
            NodeKind::Filter => &[Filter],
            _ => &[],
        }
    }

    /// Nodes that hold matter and become tape cells.
    pub fn holds_matter(self) -> bool {
        matches!(
            self,
            NodeKind::ReagentFlask
                | NodeKind::Reactor
                | NodeKind::Separator
                | NodeKind::Filter
                | NodeKind::Rotavap
                | NodeKind::Waste
                | NodeKind::Product
                | NodeKind::Storage
                | NodeKind::Pump
        )
    }

    /// Nodes a route may pass through.
    pub fn is_route_interior(self) -> bool {
        matches!(self, NodeKind::Valve | NodeKind::Pump | NodeKind::Chromatograph)
    }

    pub fn arity(self) -> u32 {
        match self {
            NodeKind::Valve => 7,
            _ => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SensorKind {
    Photon,
    Conductivity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareNode {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub capabilities: BTreeSet<OpKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_ml: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sensors: Vec<SensorKind>,
}

impl HardwareNode {
    pub fn new(id: &str, kind: NodeKind, capacity_ml: Option<f64>) -> Self {
        HardwareNode {
            id: id.into(),
            kind,
            capabilities: kind.allowed().iter().copied().collect(),
            capacity_ml,
            sensors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: String,
    pub from_port: u32,
    pub to: String,
    pub to_port: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareGraph {
    pub name: String,
    pub nodes: BTreeMap<String, HardwareNode>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    name: String,
    nodes: Vec<HardwareNode>,
    edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
pub enum GraphViolation {
    #[error("edge endpoint `{0}` does not exist")]
    UnknownEndpoint(String),
    #[error("port {port} on `{node}` exceeds arity {arity}")]
    PortOutOfRange { node: String, port: u32, arity: u32 },
    #[error("`{node}` declares capabilities its kind cannot host")]
    BadCapability { node: String },
    #[error("flask `{0}` cannot reach waste")]
    FlaskCannotReachWaste(String),
    #[error("processing node `{0}` unreachable from any flask")]
    Unreachable(String),
}

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("duplicate node `{0}`")]
    Duplicate(String),
    #[error("invalid graph: {0:?}")]
    Invalid(Vec<GraphViolation>),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouteError {
    #[error("no route from `{from}` to `{to}`")]
    NoRoute { from: String, to: String },
    #[error("route endpoints must differ and exist")]
    BadEndpoints,
}

impl HardwareGraph {
    /// Graph from nodes and undirected-neighbour-ordered ports.
    pub fn build(name: &str, nodes: Vec<HardwareNode>, links: &[(&str, &str)]) -> Self {
        let mut neigh: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (a, b) in links {
            neigh.entry(a).or_default().insert(b);
            neigh.entry(b).or_default().insert(a);
        }
        let port = |n: &str, other: &str| neigh[n].iter().position(|x| *x == other).unwrap_or(0) as u32;
        let edges = links
            .iter()
            .map(|(a, b)| Edge {
                from: a.to_string(),
                from_port: port(a, b),
                to: b.to_string(),
                to_port: port(b, a),
            })
            .collect();
        HardwareGraph {
            name: name.into(),
            nodes: nodes.into_iter().map(|n| (n.id.clone(), n)).collect(),
            edges,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let f: GraphFile = serde_json::from_str(text).map_err(|e| GraphError::Schema(e.to_string()))?;
        let mut nodes = BTreeMap::new();
        for n in f.nodes {
            if nodes.contains_key(&n.id) {
                return Err(GraphError::Duplicate(n.id));
            }
            nodes.insert(n.id.clone(), n);
        }
        let g = HardwareGraph {
            name: f.name,
            nodes,
            edges: f.edges,
        };
        let v = g.validate();
        if !v.is_empty() {
            return Err(GraphError::Invalid(v));
        }
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        HardwareGraph::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let f = GraphFile {
            name: self.name.clone(),
            nodes: self.nodes.values().cloned().collect(),
            edges: self.edges.clone(),
        };
        let mut s = serde_json::to_string_pretty(&f).expect("graph serializes");
        s.push('\n');
        s
    }

    pub fn remove_edge(&mut self, from: &str, to: &str) {
        self.edges.retain(|e| !(e.from == from && e.to == to));
    }

    pub fn kind(&self, id: &str) -> Option<NodeKind> {
        self.nodes.get(id).map(|n| n.kind)
    }

    fn successors(&self, id: &str) -> BTreeSet<&str> {
        self.edges.iter().filter(|e| e.from == id).map(|e| e.to.as_str()).collect()
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = &HardwareNode> {
        self.nodes.values().filter(move |n| n.kind == kind)
    }

    /// Structural invariants; empty means valid.
    pub fn validate(&self) -> Vec<GraphViolation> {
        let mut out = Vec::new();
        for e in &self.edges {
            for (n, p) in [(&e.from, e.from_port), (&e.to, e.to_port)] {
                match self.nodes.get(n) {
                    None => out.push(GraphViolation::UnknownEndpoint(n.clone())),
                    Some(node) if p >= node.kind.arity() => out.push(GraphViolation::PortOutOfRange {
                        node: n.clone(),
                        port: p,
                        arity: node.kind.arity(),
                    }),
                    _ => {}
                }
            }
        }
        if !out.is_empty() {
            return out;
        }
        for n in self.nodes.values() {
            if !n.capabilities.iter().all(|c| n.kind.allowed().contains(c)) {
                out.push(GraphViolation::BadCapability { node: n.id.clone() });
            }
        }
        let flasks: Vec<&str> = self.nodes_of(NodeKind::ReagentFlask).map(|n| n.id.as_str()).collect();
        let wastes: Vec<&str> = self.nodes_of(NodeKind::Waste).map(|n| n.id.as_str()).collect();
        for f in &flasks {
            if !wastes.iter().any(|w| self.route(f, w).is_ok()) {
                out.push(GraphViolation::FlaskCannotReachWaste(f.to_string()));
            }
        }
        for n in self.nodes.values() {
            if matches!(
                n.kind,
                NodeKind::Reactor | NodeKind::Separator | NodeKind::Rotavap | NodeKind::Filter
            ) && !flasks.iter().any(|f| self.route(f, &n.id).is_ok())
            {
                out.push(GraphViolation::Unreachable(n.id.clone()));
            }
        }
        out
    }

    /// Shortest directed path from `src` to `dst` whose interior nodes are
    /// all valves, pumps or the chromatograph; ties go to the
    /// lexicographically smallest node sequence.
    pub fn route(&self, src: &str, dst: &str) -> Result<Vec<String>, RouteError> {
        if src == dst || !self.nodes.contains_key(src) || !self.nodes.contains_key(dst) {
            return Err(RouteError::BadEndpoints);
        }
        let mut best: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        best.insert(src, vec![src]);
        let mut frontier: VecDeque<&str> = VecDeque::from([src]);
        while !frontier.is_empty() {
            let mut next: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            for u in frontier.drain(..) {
                if u != src && !self.nodes[u].kind.is_route_interior() {
                    continue;
                }
                for v in self.successors(u) {
                    if best.contains_key(v) {
                        continue;
                    }
                    let mut cand = best[u].clone();
                    cand.push(v);
                    match next.get(v) {
                        Some(cur) if *cur <= cand => {}
                        _ => {
                            next.insert(v, cand);
                        }
                    }
                }
            }
            if let Some(p) = next.get(dst) {
                return Ok(p.iter().map(|s| s.to_string()).collect());
            }
            for (v, p) in next {
                best.insert(v, p);
                frontier.push_back(v);
            }
        }
        Err(RouteError::NoRoute {
            from: src.into(),
            to: dst.into(),
        })
    }

    /// Smallest pump capacity on a route's interior, with that pump's id.
    pub fn route_pump(&self, route: &[String]) -> Option<(String, f64)> {
        let inner = &route[1..route.len().saturating_sub(1)];
        inner
            .iter()
            .filter_map(|id| {
                let n = &self.nodes[id];
                (n.kind == NodeKind::Pump).then(|| (id.clone(), n.capacity_ml.unwrap_or(f64::INFINITY)))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
    }
}

/// The shipped general-purpose graph.
pub fn build_default_graph() -> HardwareGraph {
    use NodeKind::*;
    let n = |id: &str, k: NodeKind, cap: Option<f64>| HardwareNode::new(id, k, cap);
    let mut rx = n("RX1", Reactor, Some(500.0));
    rx.sensors.push(SensorKind::Photon);
    let mut sep = n("SEP1", Separator, Some(500.0));
    sep.sensors.push(SensorKind::Conductivity);
    let nodes = vec![
        n("R1", ReagentFlask, Some(1000.0)),
        n("R2", ReagentFlask, Some(1000.0)),
        n("R3", ReagentFlask, Some(1000.0)),
        n("R4", ReagentFlask, Some(1000.0)),
        n("V1", Valve, None),
        n("V2", Valve, None),
        n("V3", Valve, None),
        n("P1", Pump, Some(10.0)),
        rx,
        n("HSC1", HeaterStirrerChiller, None),
        sep,
        n("RV1", Rotavap, Some(1000.0)),
        n("F1", Filter, Some(250.0)),
        n("CH1", Chromatograph, None),
        n("S1", Storage, Some(1000.0)),
        n("W", Waste, None),
        n("OUT", Product, None),
    ];
    let links = [
        ("R1", "V1"),
        ("R2", "V2"),
        ("R3", "V3"),
        ("R4", "V3"),
        ("V1", "P1"),
        ("P1", "V1"),
        ("P1", "V2"),
        ("V2", "P1"),
        ("V2", "V3"),
        ("V3", "V2"),
        ("V2", "RX1"),
        ("RX1", "V2"),
        ("HSC1", "RX1"),
        ("V3", "SEP1"),
        ("SEP1", "V3"),
        ("SEP1", "CH1"),
        ("V3", "CH1"),
        ("CH1", "OUT"),
        ("V3", "RV1"),
        ("RV1", "V3"),
        ("V1", "F1"),
        ("F1", "V1"),
        ("V1", "S1"),
        ("S1", "V1"),
        ("V3", "W"),
    ];
    HardwareGraph::build("default", nodes, &links)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_graph_shape() {
        let g = build_default_graph();
        assert_eq!(g.nodes.len(), 17);
        assert!(g.validate().is_empty(), "{:?}", g.validate());
    }

    #[test]
    fn pinned_route() {
        let g = build_default_graph();
        assert_eq!(g.route("R1", "RX1").unwrap(), ["R1", "V1", "P1", "V2", "RX1"]);
    }

    #[test]
    fn removing_reactor_feed_breaks_graph() {
        let mut g = build_default_graph();
        g.remove_edge("V2", "RX1");
        assert!(g.validate().contains(&GraphViolation::Unreachable("RX1".into())));
    }

    #[test]
    fn no_route_without_chromatograph_edge() {
        let mut g = build_default_graph();
        assert!(g.route("R1", "OUT").is_ok());
        g.remove_edge("CH1", "OUT");
        assert!(matches!(g.route("R1", "OUT"), Err(RouteError::NoRoute { .. })));
    }

    #[test]
    fn self_route_rejected() {
        assert_eq!(build_default_graph().route("RX1", "RX1"), Err(RouteError::BadEndpoints));
    }

    #[test]
    fn json_round_trip() {
        let g = build_default_graph();
        assert_eq!(HardwareGraph::from_json(&g.to_json()).unwrap(), g);
    }
}
