//! Network, commodity and discretization data model, scenario document
//! parsing and validation, and the instance constants derived from them.

use std::collections::BTreeMap;

use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pwl::PwlFn;
use crate::rational::{
    ceil_to_grid, format_rational, is_on_grid, parse_rational, rat_int, Rational,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArcId(pub u32);

/// Dense commodity index; commodities are ordered by their id label,
/// players come after all commodities in player-id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CommodityId(pub u32);

#[derive(Debug, Clone)]
pub struct Arc {
    pub id: ArcId,
    pub label: String,
    pub tail: NodeId,
    pub head: NodeId,
    pub transit_time: Rational,
    pub capacity: Rational,
    /// Lower value wins merge ties.
    pub merge_priority: i64,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub node_labels: Vec<String>,
    pub arcs: Vec<Arc>,
    in_arcs: Vec<Vec<ArcId>>,
    out_arcs: Vec<Vec<ArcId>>,
}

impl Network {
    pub fn new(node_labels: Vec<String>, arcs: Vec<Arc>) -> Self {
        let mut in_arcs = vec![Vec::new(); node_labels.len()];
        let mut out_arcs = vec![Vec::new(); node_labels.len()];
        for a in &arcs {
            out_arcs[a.tail.0 as usize].push(a.id);
            in_arcs[a.head.0 as usize].push(a.id);
        }
        Network {
            node_labels,
            arcs,
            in_arcs,
            out_arcs,
        }
    }

    pub fn arc(&self, id: ArcId) -> &Arc {
        &self.arcs[id.0 as usize]
    }

    pub fn node_label(&self, id: NodeId) -> &str {
        &self.node_labels[id.0 as usize]
    }

    pub fn num_nodes(&self) -> usize {
        self.node_labels.len()
    }

    pub fn in_arcs(&self, v: NodeId) -> &[ArcId] {
        &self.in_arcs[v.0 as usize]
    }

    pub fn out_arcs(&self, v: NodeId) -> &[ArcId] {
        &self.out_arcs[v.0 as usize]
    }

    pub fn min_transit_time(&self) -> Option<Rational> {
        self.arcs.iter().map(|a| a.transit_time.clone()).min()
    }
}

/// Piecewise-constant supply rate with bounded support.
#[derive(Debug, Clone)]
pub struct SupplyRate {
    pub pieces: Vec<(Rational, Rational, Rational)>,
}

impl SupplyRate {
    pub fn mass(&self) -> Rational {
        self.pieces
            .iter()
            .fold(Rational::zero(), |acc, (s, e, r)| acc + r * (e - s))
    }

    pub fn max_rate(&self) -> Rational {
        self.pieces
            .iter()
            .map(|(_, _, r)| r.clone())
            .max()
            .unwrap_or_else(Rational::zero)
    }

    pub fn support_end(&self) -> Rational {
        self.pieces
            .iter()
            .map(|(_, e, _)| e.clone())
            .max()
            .unwrap_or_else(Rational::zero)
    }

    pub fn as_step_fn(&self) -> crate::pwl::StepFn {
        crate::pwl::StepFn::from_pieces(&self.pieces).expect("validated supply")
    }

    /// Cumulative supply U_j, exact piecewise linear.
    pub fn cumulative(&self) -> PwlFn {
        self.as_step_fn().integrate()
    }
}

#[derive(Debug, Clone)]
pub struct Commodity {
    pub id: CommodityId,
    pub label: String,
    pub origin: NodeId,
    pub destination: NodeId,
    pub path: Vec<ArcId>,
    pub supply: SupplyRate,
}

impl Commodity {
    /// Node sequence o_j = v_0, v_1, ..., v_L = d_j along the path.
    pub fn node_sequence(&self, net: &Network) -> Vec<NodeId> {
        let mut nodes = vec![self.origin];
        for a in &self.path {
            nodes.push(net.arc(*a).head);
        }
        nodes
    }
}

/// A single packet acting as a player in the routing game.
#[derive(Debug, Clone)]
pub struct Player {
    pub id: u64,
    pub origin: NodeId,
    pub destination: NodeId,
    pub release_time: Rational,
    pub path: Option<Vec<ArcId>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discretization {
    pub alpha: Rational,
    pub beta: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscretizedArc {
    pub arc: ArcId,
    /// τ̂_e = ⌈τ_e⌉_α / α, a positive integer number of steps.
    pub transit_steps: u64,
    /// ν̂_e = ν_e·α/β, packets per step; may be non-integer.
    pub capacity_per_step: Rational,
}

/// Normalizes arc properties to step counts and per-step packet capacities.
pub fn discretize(net: &Network, d: &Discretization) -> Vec<DiscretizedArc> {
    net.arcs
        .iter()
        .map(|a| {
            let tau_grid = ceil_to_grid(&a.transit_time, &d.alpha).expect("positive transit time");
            let steps = (tau_grid / &d.alpha).to_integer();
            DiscretizedArc {
                arc: a.id,
                transit_steps: steps.to_u64().expect("transit steps fit in u64"),
                capacity_per_step: &a.capacity * &d.alpha / &d.beta,
            }
        })
        .collect()
}

/// Rate bound κ_e = max{Σ_{e'∈δ⁻_u}(ν_{e'}+1), ν_e+1}, where commodities
/// released at tail(e) contribute auxiliary incoming arcs of capacity ū_j.
pub fn rate_bound(net: &Network, commodities: &[Commodity], e: ArcId) -> Rational {
    let arc = net.arc(e);
    let mut incoming_sum = Rational::zero();
    for e2 in net.in_arcs(arc.tail) {
        incoming_sum += &net.arc(*e2).capacity + rat_int(1);
    }
    for j in commodities {
        if j.origin == arc.tail {
            incoming_sum += j.supply.max_rate() + rat_int(1);
        }
    }
    let own = &arc.capacity + rat_int(1);
    incoming_sum.max(own)
}

/// Warnings for the convergence preconditions (β/α < 1 and at least two
/// packets admitted per step on every arc); outside this regime the two
/// engines are not expected to track each other.
pub fn discretization_warnings(net: &Network, d: &Discretization) -> Vec<String> {
    let mut warnings = Vec::new();
    if &d.beta / &d.alpha >= Rational::one() {
        warnings.push(format!(
            "beta/alpha = {} is not below 1",
            format_rational(&(&d.beta / &d.alpha))
        ));
    }
    for da in discretize(net, d) {
        if da.capacity_per_step < rat_int(2) {
            warnings.push(format!(
                "arc {} admits fewer than 2 packets per step (nu_hat = {})",
                net.arc(da.arc).label,
                format_rational(&da.capacity_per_step)
            ));
        }
    }
    warnings
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub network: Network,
    pub commodities: Vec<Commodity>,
    pub players: Vec<Player>,
    pub discretization: Discretization,
}

impl Scenario {
    /// User-visible label for an internal commodity slot: commodity labels
    /// first, then player ids.
    pub fn commodity_label(&self, c: CommodityId) -> String {
        let idx = c.0 as usize;
        if idx < self.commodities.len() {
            self.commodities[idx].label.clone()
        } else {
            self.players[idx - self.commodities.len()].id.to_string()
        }
    }

    pub fn player_commodity_id(&self, player_index: usize) -> CommodityId {
        CommodityId((self.commodities.len() + player_index) as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scenario validation failed:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
}

// ---------------------------------------------------------------------------
// Scenario document (external JSON interface)
// ---------------------------------------------------------------------------

/// A number in a scenario document: JSON integer, decimal string or "p/q".
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RawNumber {
    Int(i64),
    Float(f64),
    Str(String),
}

impl RawNumber {
    fn to_rational(&self) -> Result<Rational, String> {
        match self {
            RawNumber::Int(n) => Ok(rat_int(*n)),
            RawNumber::Float(x) => Err(format!(
                "non-integer JSON number {x} is not exact; write it as a string"
            )),
            RawNumber::Str(s) => parse_rational(s).map_err(|e| e.to_string()),
        }
    }
}

impl Serialize for RawNumber {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        match self {
            RawNumber::Int(n) => ser.serialize_i64(*n),
            RawNumber::Float(x) => ser.serialize_f64(*x),
            RawNumber::Str(s) => ser.serialize_str(s),
        }
    }
}

fn raw(r: &Rational) -> RawNumber {
    RawNumber::Str(format_rational(r))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArcDoc {
    pub id: String,
    pub from: String,
    pub to: String,
    pub transit_time: RawNumber,
    pub capacity: RawNumber,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merge_priority: Option<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupplyPieceDoc {
    pub start: RawNumber,
    pub end: RawNumber,
    pub rate: RawNumber,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommodityDoc {
    pub id: String,
    pub origin: String,
    pub destination: String,
    pub path: Vec<String>,
    pub supply: Vec<SupplyPieceDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlayerDoc {
    pub id: u64,
    pub origin: String,
    pub destination: String,
    pub release_time: RawNumber,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscretizationDoc {
    pub alpha: RawNumber,
    pub beta: RawNumber,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioDoc {
    pub nodes: Vec<String>,
    pub arcs: Vec<ArcDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub commodities: Vec<CommodityDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub players: Vec<PlayerDoc>,
    pub discretization: DiscretizationDoc,
}

pub fn parse_scenario(json: &str) -> Result<(Scenario, Vec<String>), ScenarioError> {
    let doc: ScenarioDoc = serde_json::from_str(json)?;
    validate_scenario(&doc).map_err(ScenarioError::Invalid)
}

struct Validator {
    diagnostics: Vec<Diagnostic>,
}

impl Validator {
    fn report(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.diagnostics.push(Diagnostic {
            path: path.into(),
            message: message.into(),
        });
    }

    fn number(
        &mut self,
        path: &str,
        n: &RawNumber,
    ) -> Option<Rational> {
        match n.to_rational() {
            Ok(r) => Some(r),
            Err(msg) => {
                self.report(path, msg);
                None
            }
        }
    }
}

/// Checks every model invariant and builds the internal scenario; returns all
/// diagnostics (with paths into the document) if any invariant fails.
pub fn validate_scenario(doc: &ScenarioDoc) -> Result<(Scenario, Vec<String>), Vec<Diagnostic>> {
    let mut v = Validator {
        diagnostics: Vec::new(),
    };

    let mut node_index: BTreeMap<&str, NodeId> = BTreeMap::new();
    for (i, label) in doc.nodes.iter().enumerate() {
        if node_index
            .insert(label.as_str(), NodeId(i as u32))
            .is_some()
        {
            v.report(format!("nodes[{i}]"), format!("duplicate node id `{label}`"));
        }
    }

    let mut arc_index: BTreeMap<&str, ArcId> = BTreeMap::new();
    let mut arcs = Vec::new();
    for (i, a) in doc.arcs.iter().enumerate() {
        let path = format!("arcs[{i}]");
        if arc_index.insert(a.id.as_str(), ArcId(i as u32)).is_some() {
            v.report(&path, format!("duplicate arc id `{}`", a.id));
        }
        let tail = node_index.get(a.from.as_str()).copied();
        if tail.is_none() {
            v.report(format!("{path}.from"), format!("unknown node `{}`", a.from));
        }
        let head = node_index.get(a.to.as_str()).copied();
        if head.is_none() {
            v.report(format!("{path}.to"), format!("unknown node `{}`", a.to));
        }
        let transit = v.number(&format!("{path}.transit_time"), &a.transit_time);
        if let Some(t) = &transit {
            if !t.is_positive() {
                v.report(format!("{path}.transit_time"), "transit time must be positive");
            }
        }
        let capacity = v.number(&format!("{path}.capacity"), &a.capacity);
        if let Some(c) = &capacity {
            if !c.is_positive() {
                v.report(format!("{path}.capacity"), "capacity must be positive");
            }
        }
        if let (Some(tail), Some(head), Some(transit), Some(capacity)) =
            (tail, head, transit, capacity)
        {
            arcs.push(Arc {
                id: ArcId(i as u32),
                label: a.id.clone(),
                tail,
                head,
                transit_time: transit,
                capacity,
                merge_priority: a.merge_priority.unwrap_or(i as i64),
            });
        }
    }
    // structural failures make deeper checks meaningless
    if !v.diagnostics.is_empty() {
        return Err(v.diagnostics);
    }

    let network = Network::new(doc.nodes.clone(), arcs);

    let alpha = v.number("discretization.alpha", &doc.discretization.alpha);
    let beta = v.number("discretization.beta", &doc.discretization.beta);
    if let Some(a) = &alpha {
        if !a.is_positive() {
            v.report("discretization.alpha", "alpha must be positive");
        }
    }
    if let Some(b) = &beta {
        if !b.is_positive() {
            v.report("discretization.beta", "beta must be positive");
        }
    }

    let check_path = |v: &mut Validator,
                      path_ctx: &str,
                      arc_labels: &[String],
                      origin: NodeId,
                      destination: NodeId|
     -> Option<Vec<ArcId>> {
        if arc_labels.is_empty() {
            v.report(path_ctx, "path must not be empty");
            return None;
        }
        let mut ids = Vec::new();
        for (k, label) in arc_labels.iter().enumerate() {
            match arc_index.get(label.as_str()) {
                Some(id) => ids.push(*id),
                None => {
                    v.report(
                        format!("{path_ctx}[{k}]"),
                        format!("unknown arc `{label}`"),
                    );
                    return None;
                }
            }
        }
        let mut nodes = vec![network.arc(ids[0]).tail];
        for id in &ids {
            let arc = network.arc(*id);
            if arc.tail != *nodes.last().unwrap() {
                v.report(path_ctx, "path arcs are not consecutive");
                return None;
            }
            nodes.push(arc.head);
        }
        if nodes[0] != origin {
            v.report(path_ctx, "path does not start at the origin");
            return None;
        }
        if *nodes.last().unwrap() != destination {
            v.report(path_ctx, "path does not end at the destination");
            return None;
        }
        let mut seen = std::collections::BTreeSet::new();
        if !nodes.iter().all(|n| seen.insert(*n)) {
            v.report(path_ctx, "path not simple");
            return None;
        }
        Some(ids)
    };

    // commodities, ordered by id label
    let mut commodity_docs: Vec<(usize, &CommodityDoc)> = doc.commodities.iter().enumerate().collect();
    commodity_docs.sort_by(|a, b| a.1.id.cmp(&b.1.id));
    let mut seen_commodities = std::collections::BTreeSet::new();
    let mut commodities = Vec::new();
    for (slot, (i, c)) in commodity_docs.iter().enumerate() {
        let path = format!("commodities[{i}]");
        if !seen_commodities.insert(c.id.as_str()) {
            v.report(&path, format!("duplicate commodity id `{}`", c.id));
        }
        let origin = match node_index.get(c.origin.as_str()) {
            Some(n) => *n,
            None => {
                v.report(format!("{path}.origin"), format!("unknown node `{}`", c.origin));
                continue;
            }
        };
        let destination = match node_index.get(c.destination.as_str()) {
            Some(n) => *n,
            None => {
                v.report(
                    format!("{path}.destination"),
                    format!("unknown node `{}`", c.destination),
                );
                continue;
            }
        };
        let arc_path = check_path(&mut v, &format!("{path}.path"), &c.path, origin, destination);

        let mut pieces = Vec::new();
        let mut prev_end: Option<Rational> = None;
        for (k, p) in c.supply.iter().enumerate() {
            let ppath = format!("{path}.supply[{k}]");
            let start = v.number(&format!("{ppath}.start"), &p.start);
            let end = v.number(&format!("{ppath}.end"), &p.end);
            let rate = v.number(&format!("{ppath}.rate"), &p.rate);
            let (Some(start), Some(end), Some(rate)) = (start, end, rate) else {
                continue;
            };
            if start.is_negative() {
                v.report(&ppath, "piece must not start before time 0");
            }
            if start >= end {
                v.report(&ppath, "piece must have start < end");
            }
            if rate.is_negative() {
                v.report(&ppath, "rate must be nonnegative");
            }
            if let Some(pe) = &prev_end {
                if &start < pe {
                    v.report(&ppath, "supply pieces must be sorted and disjoint");
                }
            }
            prev_end = Some(end.clone());
            pieces.push((start, end, rate));
        }
        let supply = SupplyRate { pieces };
        if !supply.mass().is_positive() {
            v.report(format!("{path}.supply"), "supply must have positive total mass");
        }
        if let Some(arc_path) = arc_path {
            commodities.push(Commodity {
                id: CommodityId(slot as u32),
                label: c.id.clone(),
                origin,
                destination,
                path: arc_path,
                supply,
            });
        }
    }

    // players, ordered by id
    let mut player_docs: Vec<(usize, &PlayerDoc)> = doc.players.iter().enumerate().collect();
    player_docs.sort_by_key(|(_, p)| p.id);
    let mut seen_players = std::collections::BTreeSet::new();
    let mut players = Vec::new();
    for (i, p) in player_docs {
        let path = format!("players[{i}]");
        if !seen_players.insert(p.id) {
            v.report(&path, format!("duplicate player id `{}`", p.id));
        }
        let origin = match node_index.get(p.origin.as_str()) {
            Some(n) => *n,
            None => {
                v.report(format!("{path}.origin"), format!("unknown node `{}`", p.origin));
                continue;
            }
        };
        let destination = match node_index.get(p.destination.as_str()) {
            Some(n) => *n,
            None => {
                v.report(
                    format!("{path}.destination"),
                    format!("unknown node `{}`", p.destination),
                );
                continue;
            }
        };
        let release = v.number(&format!("{path}.release_time"), &p.release_time);
        let Some(release) = release else { continue };
        if release.is_negative() {
            v.report(format!("{path}.release_time"), "release time must be nonnegative");
        } else if let Some(alpha) = &alpha {
            if alpha.is_positive() && !is_on_grid(&release, alpha) {
                v.report(
                    format!("{path}.release_time"),
                    "release time must lie on the alpha-grid",
                );
            }
        }
        let arc_path = match &p.path {
            Some(labels) => {
                match check_path(&mut v, &format!("{path}.path"), labels, origin, destination) {
                    Some(ids) => Some(ids),
                    None => continue,
                }
            }
            None => None,
        };
        players.push(Player {
            id: p.id,
            origin,
            destination,
            release_time: release,
            path: arc_path,
        });
    }

    if !v.diagnostics.is_empty() {
        return Err(v.diagnostics);
    }

    let discretization = Discretization {
        alpha: alpha.expect("validated"),
        beta: beta.expect("validated"),
    };
    let warnings = discretization_warnings(&network, &discretization);
    Ok((
        Scenario {
            network,
            commodities,
            players,
            discretization,
        },
        warnings,
    ))
}

/// Serializes a scenario back to its document form (rationals as exact strings).
pub fn to_document(s: &Scenario) -> ScenarioDoc {
    ScenarioDoc {
        nodes: s.network.node_labels.clone(),
        arcs: s
            .network
            .arcs
            .iter()
            .map(|a| ArcDoc {
                id: a.label.clone(),
                from: s.network.node_label(a.tail).to_string(),
                to: s.network.node_label(a.head).to_string(),
                transit_time: raw(&a.transit_time),
                capacity: raw(&a.capacity),
                merge_priority: Some(a.merge_priority),
            })
            .collect(),
        commodities: s
            .commodities
            .iter()
            .map(|c| CommodityDoc {
                id: c.label.clone(),
                origin: s.network.node_label(c.origin).to_string(),
                destination: s.network.node_label(c.destination).to_string(),
                path: c
                    .path
                    .iter()
                    .map(|a| s.network.arc(*a).label.clone())
                    .collect(),
                supply: c
                    .supply
                    .pieces
                    .iter()
                    .map(|(start, end, rate)| SupplyPieceDoc {
                        start: raw(start),
                        end: raw(end),
                        rate: raw(rate),
                    })
                    .collect(),
            })
            .collect(),
        players: s
            .players
            .iter()
            .map(|p| PlayerDoc {
                id: p.id,
                origin: s.network.node_label(p.origin).to_string(),
                destination: s.network.node_label(p.destination).to_string(),
                release_time: raw(&p.release_time),
                path: p.path.as_ref().map(|path| {
                    path.iter()
                        .map(|a| s.network.arc(*a).label.clone())
                        .collect()
                }),
            })
            .collect(),
        discretization: DiscretizationDoc {
            alpha: raw(&s.discretization.alpha),
            beta: raw(&s.discretization.beta),
        },
    }
}
