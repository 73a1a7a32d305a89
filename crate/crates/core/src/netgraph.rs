//! Wavelength-saving routing plans.
//!
//! A network of `2N + 1` nodes hangs off a passive router with one port per
//! node. The edge set of the complete graph `K_{2N+1}` is split into `N`
//! edge-disjoint Hamiltonian cycles; each cycle is oriented and carried on its
//! own wavelength. Every node then transmits exactly once and receives exactly
//! once per wavelength, and every unordered node pair is joined by exactly one
//! directed link.
//!
//! The decomposition used here is Walecki's construction: the vertex set is a
//! hub plus `Z_{2N}`, and cycle `k` is
//! `hub, k, k+1, k-1, k+2, k-2, ..., k+N, hub` with arithmetic mod `2N`.
//! The hub is node 0 and residue `i` is node `i + 1`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a node; node `i` is attached to router port `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavelengthChannel {
    pub index: usize,
    /// Display only.
    pub nominal_nm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectedLink {
    pub src: NodeId,
    pub dst: NodeId,
    pub wavelength: WavelengthChannel,
    pub router_in_port: usize,
    pub router_out_port: usize,
}

impl DirectedLink {
    fn new(src: usize, dst: usize, wavelength: WavelengthChannel) -> Self {
        DirectedLink {
            src: NodeId(src),
            dst: NodeId(dst),
            wavelength,
            router_in_port: src,
            router_out_port: dst,
        }
    }

    pub fn connects(&self, a: NodeId, b: NodeId) -> bool {
        (self.src == a && self.dst == b) || (self.src == b && self.dst == a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkPlan {
    pub n_wavelengths: usize,
    pub node_count: usize,
    pub labels: Vec<String>,
    pub wavelengths: Vec<WavelengthChannel>,
    /// Cycle `k` is carried on wavelength `k`; each entry lists node indices
    /// in propagation order, the closing edge back to the first is implied.
    pub cycles: Vec<Vec<usize>>,
    pub links: Vec<DirectedLink>,
}

/// Exit port per entry port for one wavelength inside the router.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortPermutation {
    pub wavelength: WavelengthChannel,
    pub mapping: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Transmit,
    Receive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub wavelength: WavelengthChannel,
    pub role: Role,
    pub peer: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Invariant {
    NodeCount,
    CycleCount,
    Hamiltonicity,
    EdgeDisjointness,
    Coverage,
    PairCoverage,
    Degree,
    LinkConsistency,
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Invariant::NodeCount => "node-count",
            Invariant::CycleCount => "cycle-count",
            Invariant::Hamiltonicity => "hamiltonicity",
            Invariant::EdgeDisjointness => "edge-disjointness",
            Invariant::Coverage => "coverage",
            Invariant::PairCoverage => "pair-coverage",
            Invariant::Degree => "degree",
            Invariant::LinkConsistency => "link-consistency",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub invariant: Invariant,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.invariant, self.detail)
    }
}

/// Letter label for a node index: A..Z, then N26, N27, ...
pub fn default_label(index: usize) -> String {
    if index < 26 {
        char::from(b'A' + index as u8).to_string()
    } else {
        format!("N{index}")
    }
}

/// Nominal wavelengths on a 20 nm CWDM-style grid starting at 1530 nm.
pub fn default_wavelengths_nm(n: usize) -> Vec<f64> {
    (0..n).map(|k| 1530.0 + 20.0 * k as f64).collect()
}

/// Walecki cycles on `2N + 1` vertices, hub = 0.
fn walecki_cycles(n: usize) -> Vec<Vec<usize>> {
    let m = 2 * n as i64;
    (0..n as i64)
        .map(|k| {
            let mut cycle = Vec::with_capacity(2 * n + 1);
            cycle.push(0);
            cycle.push((k.rem_euclid(m) + 1) as usize);
            for j in 1..=n as i64 {
                cycle.push(((k + j).rem_euclid(m) + 1) as usize);
                if j < n as i64 {
                    cycle.push(((k - j).rem_euclid(m) + 1) as usize);
                }
            }
            cycle
        })
        .collect()
}

/// Builds the `2N + 1`-node, `N`-wavelength plan. Deterministic in `N`.
pub fn build_plan(n_wavelengths: usize) -> Result<NetworkPlan> {
    if n_wavelengths == 0 {
        return Err(Error::param("n_wavelengths", "must be at least 1"));
    }
    let labels = (0..2 * n_wavelengths + 1).map(default_label).collect();
    NetworkPlan::from_cycles(
        walecki_cycles(n_wavelengths),
        labels,
        default_wavelengths_nm(n_wavelengths),
    )
}

/// Plan for a given node count; even counts are rejected.
pub fn plan_for_nodes(node_count: usize) -> Result<NetworkPlan> {
    if node_count.is_multiple_of(2) {
        return Err(Error::EvenNodeCount { count: node_count });
    }
    if node_count < 3 {
        return Err(Error::param("node_count", "at least 3 nodes are needed"));
    }
    build_plan((node_count - 1) / 2)
}

impl NetworkPlan {
    /// Assembles a plan from oriented cycles. No invariant checking happens
    /// here beyond shape; run [`validate_plan`] for that.
    pub fn from_cycles(
        cycles: Vec<Vec<usize>>,
        labels: Vec<String>,
        wavelengths_nm: Vec<f64>,
    ) -> Result<Self> {
        let n = cycles.len();
        if wavelengths_nm.len() != n {
            return Err(Error::param(
                "wavelengths_nm",
                format!("expected {n} values, got {}", wavelengths_nm.len()),
            ));
        }
        if wavelengths_nm.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("wavelengths_nm", "must be strictly increasing"));
        }
        let node_count = labels.len();
        let wavelengths: Vec<_> = wavelengths_nm
            .into_iter()
            .enumerate()
            .map(|(index, nominal_nm)| WavelengthChannel { index, nominal_nm })
            .collect();
        let mut links = Vec::new();
        for (k, cycle) in cycles.iter().enumerate() {
            if let Some(&bad) = cycle.iter().find(|&&v| v >= node_count) {
                return Err(Error::UnknownNode(bad.to_string()));
            }
            for i in 0..cycle.len() {
                let (a, b) = (cycle[i], cycle[(i + 1) % cycle.len()]);
                links.push(DirectedLink::new(a, b, wavelengths[k]));
            }
        }
        Ok(NetworkPlan {
            n_wavelengths: n,
            node_count,
            labels,
            wavelengths,
            cycles,
            links,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.node_count {
            return Err(Error::param(
                "labels",
                format!("expected {} labels, got {}", self.node_count, labels.len()),
            ));
        }
        let distinct: BTreeSet<_> = labels.iter().collect();
        if distinct.len() != labels.len() {
            return Err(Error::param("labels", "labels must be distinct"));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn with_wavelengths_nm(self, nm: Vec<f64>) -> Result<Self> {
        NetworkPlan::from_cycles(self.cycles, self.labels, nm)
    }

    pub fn label(&self, node: NodeId) -> &str {
        &self.labels[node.0]
    }

    pub fn node(&self, label: &str) -> Result<NodeId> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(NodeId)
            .ok_or_else(|| Error::UnknownNode(label.to_string()))
    }

    pub fn wavelength(&self, index: usize) -> Result<WavelengthChannel> {
        self.wavelengths
            .get(index)
            .copied()
            .ok_or(Error::UnknownWavelength(index))
    }

    fn check_node(&self, node: NodeId) -> Result<()> {
        if node.0 < self.node_count {
            Ok(())
        } else {
            Err(Error::UnknownNode(node.0.to_string()))
        }
    }

    /// The link leaving `node` on `wavelength`, if any.
    pub fn outgoing(&self, node: NodeId, wavelength: usize) -> Option<&DirectedLink> {
        self.links
            .iter()
            .find(|l| l.src == node && l.wavelength.index == wavelength)
    }

    /// The link arriving at `node` on `wavelength`, if any.
    pub fn incoming(&self, node: NodeId, wavelength: usize) -> Option<&DirectedLink> {
        self.links
            .iter()
            .find(|l| l.dst == node && l.wavelength.index == wavelength)
    }

    /// `src dst wavelength nm` per link, labels instead of indices.
    pub fn to_records_text(&self) -> String {
        let mut out = String::from("# src dst wavelength nominal_nm\n");
        for l in &self.links {
            let _ = writeln!(
                out,
                "{} {} {} {}",
                self.label(l.src),
                self.label(l.dst),
                l.wavelength.index,
                l.wavelength.nominal_nm
            );
        }
        out
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph plan {\n");
        for label in &self.labels {
            let _ = writeln!(out, "  \"{label}\";");
        }
        for l in &self.links {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{} nm\", wavelength={}];",
                self.label(l.src),
                self.label(l.dst),
                l.wavelength.nominal_nm,
                l.wavelength.index
            );
        }
        out.push_str("}\n");
        out
    }
}

fn undirected(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

fn cycle_edges(cycle: &[usize]) -> Vec<(usize, usize)> {
    (0..cycle.len())
        .map(|i| undirected(cycle[i], cycle[(i + 1) % cycle.len()]))
        .collect()
}

/// Brute-force check of every plan invariant. Empty iff the plan is sound.
pub fn validate_plan(plan: &NetworkPlan) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |invariant, detail: String| out.push(Violation { invariant, detail });
    let n = plan.n_wavelengths;
    let nodes = plan.node_count;

    if nodes != 2 * n + 1 {
        push(
            Invariant::NodeCount,
            format!("{nodes} nodes for {n} wavelengths, expected {}", 2 * n + 1),
        );
    }
    if plan.cycles.len() != n {
        push(
            Invariant::CycleCount,
            format!("{} cycles for {n} wavelengths", plan.cycles.len()),
        );
    }

    for (k, cycle) in plan.cycles.iter().enumerate() {
        let seen: BTreeSet<usize> = cycle.iter().copied().collect();
        let missing: Vec<usize> = (0..nodes).filter(|v| !seen.contains(v)).collect();
        let repeated = cycle.len() != seen.len();
        if !missing.is_empty() || repeated || cycle.len() != nodes {
            push(
                Invariant::Hamiltonicity,
                format!(
                    "cycle {k} has {} entries, missing nodes {missing:?}{}",
                    cycle.len(),
                    if repeated { ", repeats a node" } else { "" }
                ),
            );
        }
    }

    let edge_sets: Vec<BTreeSet<(usize, usize)>> = plan
        .cycles
        .iter()
        .map(|c| cycle_edges(c).into_iter().filter(|(a, b)| a != b).collect())
        .collect();
    for i in 0..edge_sets.len() {
        for j in i + 1..edge_sets.len() {
            let shared: Vec<_> = edge_sets[i].intersection(&edge_sets[j]).collect();
            if !shared.is_empty() {
                push(
                    Invariant::EdgeDisjointness,
                    format!("cycles {i} and {j} share edges {shared:?}"),
                );
            }
        }
    }
    let union: BTreeSet<(usize, usize)> = edge_sets.iter().flatten().copied().collect();
    let uncovered: Vec<(usize, usize)> = (0..nodes)
        .flat_map(|a| (a + 1..nodes).map(move |b| (a, b)))
        .filter(|e| !union.contains(e))
        .collect();
    if !uncovered.is_empty() {
        push(
            Invariant::Coverage,
            format!("edges not on any cycle: {uncovered:?}"),
        );
    }

    let mut pair_count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for l in &plan.links {
        let (s, d) = (l.src.0, l.dst.0);
        if s == d || s >= nodes || d >= nodes {
            push(
                Invariant::LinkConsistency,
                format!("link {s}->{d} is a self link or leaves the plan"),
            );
            continue;
        }
        if l.router_in_port != s || l.router_out_port != d {
            push(
                Invariant::LinkConsistency,
                format!(
                    "link {s}->{d} uses router ports {}->{}",
                    l.router_in_port, l.router_out_port
                ),
            );
        }
        let k = l.wavelength.index;
        let on_cycle = plan.cycles.get(k).is_some_and(|c| {
            (0..c.len()).any(|i| c[i] == s && c[(i + 1) % c.len()] == d)
        });
        if !on_cycle {
            push(
                Invariant::LinkConsistency,
                format!("link {s}->{d} is not an arc of cycle {k}"),
            );
        }
        *pair_count.entry(undirected(s, d)).or_default() += 1;
    }
    for a in 0..nodes {
        for b in a + 1..nodes {
            let c = pair_count.get(&(a, b)).copied().unwrap_or(0);
            if c != 1 {
                push(
                    Invariant::PairCoverage,
                    format!("pair {{{a}, {b}}} carried by {c} links"),
                );
            }
        }
    }

    for v in 0..nodes {
        for k in 0..n {
            let out_deg = plan
                .links
                .iter()
                .filter(|l| l.src.0 == v && l.wavelength.index == k)
                .count();
            let in_deg = plan
                .links
                .iter()
                .filter(|l| l.dst.0 == v && l.wavelength.index == k)
                .count();
            if out_deg != 1 || in_deg != 1 {
                push(
                    Invariant::Degree,
                    format!("node {v} on wavelength {k}: out {out_deg}, in {in_deg}"),
                );
            }
        }
    }
    out
}

/// The unique link joining `a` and `b`, in whichever direction the plan uses.
pub fn route_lookup(plan: &NetworkPlan, a: NodeId, b: NodeId) -> Result<DirectedLink> {
    plan.check_node(a)?;
    plan.check_node(b)?;
    if a == b {
        return Err(Error::SelfLink(plan.label(a).to_string()));
    }
    plan.links
        .iter()
        .find(|l| l.connects(a, b))
        .copied()
        .ok_or_else(|| Error::UnknownLink(format!("{}-{}", plan.label(a), plan.label(b))))
}

pub fn router_permutation(plan: &NetworkPlan, wavelength: usize) -> Result<PortPermutation> {
    let channel = plan.wavelength(wavelength)?;
    let mut mapping = vec![usize::MAX; plan.node_count];
    for l in plan.links.iter().filter(|l| l.wavelength.index == wavelength) {
        mapping[l.router_in_port] = l.router_out_port;
    }
    Ok(PortPermutation {
        wavelength: channel,
        mapping,
    })
}

impl PortPermutation {
    pub fn apply(&self, port: usize) -> usize {
        self.mapping[port]
    }

    pub fn is_permutation(&self) -> bool {
        let n = self.mapping.len();
        let seen: BTreeSet<_> = self.mapping.iter().filter(|&&p| p < n).collect();
        seen.len() == n
    }

    /// Length of the orbit through `start`, or `None` if the walk leaves the
    /// port range or fails to return within `len` steps.
    pub fn orbit_len(&self, start: usize) -> Option<usize> {
        let mut p = start;
        for step in 1..=self.mapping.len() {
            p = *self.mapping.get(p)?;
            if p == start {
                return Some(step);
            }
        }
        None
    }

    pub fn is_single_cycle(&self) -> bool {
        self.is_permutation() && self.orbit_len(0) == Some(self.mapping.len())
    }

    pub fn has_fixed_point(&self) -> bool {
        self.mapping.iter().enumerate().any(|(p, &q)| p == q)
    }
}

/// Everything node `a` sends and receives: one transmit and one receive entry
/// per wavelength.
pub fn node_schedule(plan: &NetworkPlan, a: NodeId) -> Result<Vec<ScheduleEntry>> {
    plan.check_node(a)?;
    let mut entries = Vec::with_capacity(2 * plan.n_wavelengths);
    for w in &plan.wavelengths {
        if let Some(l) = plan.outgoing(a, w.index) {
            entries.push(ScheduleEntry {
                wavelength: *w,
                role: Role::Transmit,
                peer: l.dst,
            });
        }
        if let Some(l) = plan.incoming(a, w.index) {
            entries.push(ScheduleEntry {
                wavelength: *w,
                role: Role::Receive,
                peer: l.src,
            });
        }
    }
    Ok(entries)
}

/// Arc sets per wavelength, as `(src, dst)` index pairs.
fn arc_sets(plan: &NetworkPlan) -> Vec<BTreeSet<(usize, usize)>> {
    let mut sets = vec![BTreeSet::new(); plan.n_wavelengths];
    for l in &plan.links {
        if let Some(s) = sets.get_mut(l.wavelength.index) {
            s.insert((l.src.0, l.dst.0));
        }
    }
    sets
}

/// Searches for a node relabeling `sigma` (index in `plan` → index in
/// `reference`) that maps every wavelength's arc set of `plan` onto the arc set
/// of the same wavelength in `reference`. Wavelength indices are held fixed.
pub fn find_isomorphism(plan: &NetworkPlan, reference: &NetworkPlan) -> Option<Vec<usize>> {
    if plan.node_count != reference.node_count || plan.n_wavelengths != reference.n_wavelengths {
        return None;
    }
    let ours = arc_sets(plan);
    let theirs = arc_sets(reference);
    if ours.iter().zip(&theirs).any(|(a, b)| a.len() != b.len()) {
        return None;
    }
    let n = plan.node_count;
    let mut sigma = vec![usize::MAX; n];
    let mut used = vec![false; n];

    // Extends sigma one node at a time, checking every arc whose endpoints are
    // both assigned.
    fn extend(
        v: usize,
        sigma: &mut Vec<usize>,
        used: &mut Vec<bool>,
        ours: &[BTreeSet<(usize, usize)>],
        theirs: &[BTreeSet<(usize, usize)>],
    ) -> bool {
        let n = sigma.len();
        if v == n {
            return true;
        }
        for cand in 0..n {
            if used[cand] {
                continue;
            }
            sigma[v] = cand;
            let consistent = ours.iter().zip(theirs).all(|(arcs, target)| {
                arcs.iter().all(|&(a, b)| {
                    if a > v || b > v {
                        return true;
                    }
                    target.contains(&(sigma[a], sigma[b]))
                })
            });
            if consistent {
                used[cand] = true;
                if extend(v + 1, sigma, used, ours, theirs) {
                    return true;
                }
                used[cand] = false;
            }
        }
        sigma[v] = usize::MAX;
        false
    }

    extend(0, &mut sigma, &mut used, &ours, &theirs).then_some(sigma)
}
