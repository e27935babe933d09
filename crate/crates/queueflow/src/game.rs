//! Competitive packet routing: strategy profiles, arrival-time costs, best
//! responses by exhaustive simple-path enumeration, ε-equilibrium
//! certification and exhaustive pure-Nash search, plus the built-in
//! matching-pennies instance without a pure Nash equilibrium.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::discrete::{network_loading, LoadingConfig, PacketId, SimError, SimPacket};
use crate::model::{
    discretize, ArcDoc, ArcId, DiscretizationDoc, Network, NodeId, PlayerDoc, RawNumber, Scenario,
    ScenarioDoc,
};
use crate::rational::{floor_div, format_rational, rat_int, to_f64, Rational};
use num_traits::ToPrimitive;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("destination is not reachable from the origin")]
    Unreachable,
    #[error("enumeration exceeded the cap of {0}")]
    CapExceeded(u64),
    #[error("player {0} has no path; provide one in the scenario or run search-pne")]
    MissingPath(u64),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One simple path per player, in player order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathProfile {
    pub paths: Vec<Vec<ArcId>>,
}

/// Arrival times c_i = α·ĉ_i, in player order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostVector {
    pub costs: Vec<Rational>,
}

/// All simple o–d paths in lexicographic arc-id order.
pub fn enumerate_simple_paths(
    net: &Network,
    origin: NodeId,
    destination: NodeId,
    cap: u64,
) -> Result<Vec<Vec<ArcId>>, GameError> {
    fn dfs(
        net: &Network,
        node: NodeId,
        destination: NodeId,
        visited: &mut BTreeSet<NodeId>,
        current: &mut Vec<ArcId>,
        found: &mut Vec<Vec<ArcId>>,
        cap: u64,
    ) -> Result<(), GameError> {
        if node == destination {
            if found.len() as u64 >= cap {
                return Err(GameError::CapExceeded(cap));
            }
            found.push(current.clone());
            return Ok(());
        }
        let mut outs: Vec<ArcId> = net.out_arcs(node).to_vec();
        outs.sort();
        for arc_id in outs {
            let head = net.arc(arc_id).head;
            if visited.contains(&head) {
                continue;
            }
            visited.insert(head);
            current.push(arc_id);
            dfs(net, head, destination, visited, current, found, cap)?;
            current.pop();
            visited.remove(&head);
        }
        Ok(())
    }
    let mut found = Vec::new();
    let mut visited = BTreeSet::from([origin]);
    dfs(
        net,
        origin,
        destination,
        &mut visited,
        &mut Vec::new(),
        &mut found,
        cap,
    )?;
    if found.is_empty() {
        return Err(GameError::Unreachable);
    }
    Ok(found)
}

/// The initial profile declared in the scenario document.
pub fn declared_profile(scenario: &Scenario) -> Result<PathProfile, GameError> {
    let mut paths = Vec::with_capacity(scenario.players.len());
    for p in &scenario.players {
        paths.push(p.path.clone().ok_or(GameError::MissingPath(p.id))?);
    }
    Ok(PathProfile { paths })
}

/// Runs the discrete network loading for the profile and converts arrival
/// steps to times.
pub fn evaluate_profile(
    scenario: &Scenario,
    profile: &PathProfile,
    config: &LoadingConfig,
) -> Result<CostVector, GameError> {
    assert_eq!(profile.paths.len(), scenario.players.len());
    let d = &scenario.discretization;
    let discretized = discretize(&scenario.network, d);
    let packets: Vec<SimPacket> = scenario
        .players
        .iter()
        .zip(&profile.paths)
        .enumerate()
        .map(|(idx, (p, path))| SimPacket {
            id: PacketId {
                commodity: scenario.player_commodity_id(idx),
                index: 1,
            },
            path: path.clone(),
            release_step: floor_div(&p.release_time, &d.alpha)
                .to_u64()
                .expect("validated grid release"),
        })
        .collect();
    let log = network_loading(&scenario.network, &discretized, &packets, config)?;
    let costs = packets
        .iter()
        .map(|p| &d.alpha * rat_int(log.arrivals[&p.id] as i64))
        .collect();
    Ok(CostVector { costs })
}

/// Best unilateral deviation of one player: argmin over all simple paths,
/// re-simulating each candidate; ties go to the lexicographically first path.
pub fn best_response(
    scenario: &Scenario,
    profile: &PathProfile,
    player_index: usize,
    cap: u64,
    config: &LoadingConfig,
) -> Result<(Vec<ArcId>, Rational), GameError> {
    let player = &scenario.players[player_index];
    let candidates = enumerate_simple_paths(&scenario.network, player.origin, player.destination, cap)?;
    let mut best: Option<(Vec<ArcId>, Rational)> = None;
    for candidate in candidates {
        let mut trial = profile.clone();
        trial.paths[player_index] = candidate.clone();
        let costs = evaluate_profile(scenario, &trial, config)?;
        let cost = costs.costs[player_index].clone();
        match &best {
            Some((_, incumbent)) if *incumbent <= cost => {}
            _ => best = Some((candidate, cost)),
        }
    }
    Ok(best.expect("enumeration yields at least one path"))
}

#[derive(Debug, Clone)]
pub struct PlayerVerdict {
    pub player: u64,
    pub current_cost: Rational,
    pub best_path: Vec<ArcId>,
    pub best_cost: Rational,
    pub improvement: Rational,
}

#[derive(Debug, Clone)]
pub struct EquilibriumReport {
    pub epsilon: Rational,
    pub verdicts: Vec<PlayerVerdict>,
    pub is_equilibrium: bool,
}

/// ε-equilibrium check: no player can improve by more than ε.
pub fn epsilon_check(
    scenario: &Scenario,
    profile: &PathProfile,
    epsilon: &Rational,
    cap: u64,
    config: &LoadingConfig,
) -> Result<EquilibriumReport, GameError> {
    let current = evaluate_profile(scenario, profile, config)?;
    let mut verdicts = Vec::with_capacity(scenario.players.len());
    let mut is_equilibrium = true;
    for (idx, player) in scenario.players.iter().enumerate() {
        let (best_path, best_cost) = best_response(scenario, profile, idx, cap, config)?;
        let improvement = &current.costs[idx] - &best_cost;
        if &improvement > epsilon {
            is_equilibrium = false;
        }
        verdicts.push(PlayerVerdict {
            player: player.id,
            current_cost: current.costs[idx].clone(),
            best_path,
            best_cost,
            improvement,
        });
    }
    Ok(EquilibriumReport {
        epsilon: epsilon.clone(),
        verdicts,
        is_equilibrium,
    })
}

/// Checks every profile of the strategy-set product with ε = 0.
pub fn exhaustive_pne_search(
    scenario: &Scenario,
    cap: u64,
    config: &LoadingConfig,
) -> Result<Vec<PathProfile>, GameError> {
    let mut strategy_sets = Vec::with_capacity(scenario.players.len());
    let mut product: u64 = 1;
    for p in &scenario.players {
        let set = enumerate_simple_paths(&scenario.network, p.origin, p.destination, cap)?;
        product = product.saturating_mul(set.len() as u64);
        if product > cap {
            return Err(GameError::CapExceeded(cap));
        }
        strategy_sets.push(set);
    }
    let mut equilibria = Vec::new();
    let mut indices = vec![0usize; strategy_sets.len()];
    loop {
        let profile = PathProfile {
            paths: indices
                .iter()
                .zip(&strategy_sets)
                .map(|(i, set)| set[*i].clone())
                .collect(),
        };
        let report = epsilon_check(scenario, &profile, &rat_int(0), cap, config)?;
        if report.is_equilibrium {
            equilibria.push(profile);
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == indices.len() {
                return Ok(equilibria);
            }
            indices[pos] += 1;
            if indices[pos] < strategy_sets[pos].len() {
                break;
            }
            indices[pos] = 0;
            pos += 1;
        }
    }
}

/// Equilibrium report CSV: (player, current_cost, best_deviation_path,
/// best_cost, improvement, verdict_at_epsilon).
pub fn write_equilibrium_csv<W: std::io::Write>(
    report: &EquilibriumReport,
    scenario: &Scenario,
    out: W,
    decimal: bool,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "player",
        "current_cost",
        "best_deviation_path",
        "best_cost",
        "improvement",
        "verdict_at_epsilon",
    ];
    if decimal {
        header.push("current_cost_decimal");
        header.push("best_cost_decimal");
    }
    w.write_record(&header)?;
    for v in &report.verdicts {
        let path: Vec<String> = v
            .best_path
            .iter()
            .map(|a| scenario.network.arc(*a).label.clone())
            .collect();
        let mut record = vec![
            v.player.to_string(),
            format_rational(&v.current_cost),
            path.join("|"),
            format_rational(&v.best_cost),
            format_rational(&v.improvement),
            (v.improvement <= report.epsilon).to_string(),
        ];
        if decimal {
            record.push(format!("{}", to_f64(&v.current_cost)));
            record.push(format!("{}", to_f64(&v.best_cost)));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// The six-player instance without a pure Nash equilibrium: a pursuer who
/// wants to match the evader's side, an evader who wants to avoid the
/// pursuer, and four single-strategy couriers carrying the information
/// between them. All capacities are 1, α = β = 1, the four long arcs win
/// merge ties, and everyone is released at time 0.
pub fn builtin_no_pne() -> ScenarioDoc {
    let int = |n: i64| RawNumber::Int(n);
    let arc = |id: &str, from: &str, to: &str, tau: i64, prio: i64| ArcDoc {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        transit_time: int(tau),
        capacity: int(1),
        merge_priority: Some(prio),
    };
    let player = |id: u64, origin: &str, destination: &str, path: &[&str]| PlayerDoc {
        id,
        origin: origin.into(),
        destination: destination.into(),
        release_time: int(0),
        path: Some(path.iter().map(|s| s.to_string()).collect()),
    };
    ScenarioDoc {
        nodes: [
            "oP", "oE", "v1", "v2", "v3", "v4", "v5", "v6", "v7", "v8", "d3", "d4", "d5", "d6",
            "dP", "dE",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        arcs: vec![
            // the four long arcs, prioritized in merges
            arc("v1_v6", "v1", "v6", 1, 0),
            arc("v5_v2", "v5", "v2", 2, 1),
            arc("v7_v4", "v7", "v4", 2, 2),
            arc("v3_v8", "v3", "v8", 1, 3),
            // origin fan-outs
            arc("oP_v1", "oP", "v1", 1, 10),
            arc("oP_v3", "oP", "v3", 1, 11),
            arc("oE_v5", "oE", "v5", 1, 12),
            arc("oE_v7", "oE", "v7", 1, 13),
            // inner segments of the main players' routes
            arc("v1_v2", "v1", "v2", 2, 14),
            arc("v3_v4", "v3", "v4", 2, 15),
            arc("v5_v6", "v5", "v6", 2, 16),
            arc("v7_v8", "v7", "v8", 2, 17),
            // shared bottlenecks in front of the courier destinations
            arc("v2_d3", "v2", "d3", 1, 18),
            arc("v4_d4", "v4", "d4", 1, 19),
            arc("v6_d5", "v6", "d5", 1, 20),
            arc("v8_d6", "v8", "d6", 1, 21),
            // final hops of the main players
            arc("d3_dP", "d3", "dP", 1, 22),
            arc("d4_dP", "d4", "dP", 1, 23),
            arc("d5_dE", "d5", "dE", 1, 24),
            arc("d6_dE", "d6", "dE", 1, 25),
        ],
        commodities: Vec::new(),
        players: vec![
            player(1, "oP", "dP", &["oP_v1", "v1_v2", "v2_d3", "d3_dP"]),
            player(2, "oE", "dE", &["oE_v5", "v5_v6", "v6_d5", "d5_dE"]),
            player(3, "oE", "d3", &["oE_v5", "v5_v2", "v2_d3"]),
            player(4, "oE", "d4", &["oE_v7", "v7_v4", "v4_d4"]),
            player(5, "oP", "d5", &["oP_v1", "v1_v6", "v6_d5"]),
            player(6, "oP", "d6", &["oP_v3", "v3_v8", "v8_d6"]),
        ],
        discretization: DiscretizationDoc {
            alpha: int(1),
            beta: int(1),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_scenario, validate_scenario};
    use crate::rational::rat;

    fn no_pne_scenario() -> Scenario {
        let doc = builtin_no_pne();
        let (s, _warnings) = validate_scenario(&doc).expect("builtin must validate");
        s
    }

    fn profile(scenario: &Scenario, pursuer_top: bool, evader_top: bool) -> PathProfile {
        let mut paths: Vec<Vec<ArcId>> = scenario
            .players
            .iter()
            .map(|p| p.path.clone().unwrap())
            .collect();
        let by_label = |labels: &[&str]| -> Vec<ArcId> {
            labels
                .iter()
                .map(|l| {
                    scenario
                        .network
                        .arcs
                        .iter()
                        .find(|a| a.label == *l)
                        .unwrap()
                        .id
                })
                .collect()
        };
        if !pursuer_top {
            paths[0] = by_label(&["oP_v3", "v3_v4", "v4_d4", "d4_dP"]);
        }
        if !evader_top {
            paths[1] = by_label(&["oE_v7", "v7_v8", "v8_d6", "d6_dE"]);
        }
        PathProfile { paths }
    }

    #[test]
    fn builtin_validates_and_has_expected_strategy_counts() {
        let s = no_pne_scenario();
        assert_eq!(s.players.len(), 6);
        let counts: Vec<usize> = s
            .players
            .iter()
            .map(|p| {
                enumerate_simple_paths(&s.network, p.origin, p.destination, 100)
                    .unwrap()
                    .len()
            })
            .collect();
        assert_eq!(counts, vec![2, 2, 1, 1, 1, 1]);
    }

    #[test]
    fn matching_pennies_payoffs() {
        let s = no_pne_scenario();
        let cfg = LoadingConfig::default();
        let expect = |pt: bool, et: bool, pc: i64, ec: i64| {
            let costs = evaluate_profile(&s, &profile(&s, pt, et), &cfg).unwrap();
            assert_eq!(costs.costs[0], rat_int(pc), "pursuer at ({pt},{et})");
            assert_eq!(costs.costs[1], rat_int(ec), "evader at ({pt},{et})");
        };
        expect(true, true, 5, 6);
        expect(true, false, 6, 5);
        expect(false, true, 6, 5);
        expect(false, false, 5, 6);
    }

    #[test]
    fn no_pure_nash_equilibrium_exists() {
        let s = no_pne_scenario();
        let cfg = LoadingConfig::default();
        let equilibria = exhaustive_pne_search(&s, 10_000, &cfg).unwrap();
        assert!(equilibria.is_empty());
    }

    #[test]
    fn every_state_is_a_one_equilibrium_but_not_below() {
        let s = no_pne_scenario();
        let cfg = LoadingConfig::default();
        for (pt, et) in [(true, true), (true, false), (false, true), (false, false)] {
            let pi = profile(&s, pt, et);
            let at_one = epsilon_check(&s, &pi, &rat_int(1), 10_000, &cfg).unwrap();
            assert!(at_one.is_equilibrium, "profile ({pt},{et}) at eps=1");
            let at_half = epsilon_check(&s, &pi, &rat(1, 2), 10_000, &cfg).unwrap();
            assert!(!at_half.is_equilibrium, "profile ({pt},{et}) at eps=1/2");
        }
    }

    #[test]
    fn best_response_of_evader_in_top_top() {
        let s = no_pne_scenario();
        let cfg = LoadingConfig::default();
        let pi = profile(&s, true, true);
        // evader deviates to bottom and arrives at 5
        let (path, cost) = best_response(&s, &pi, 1, 100, &cfg).unwrap();
        assert_eq!(cost, rat_int(5));
        let labels: Vec<&str> = path
            .iter()
            .map(|a| s.network.arc(*a).label.as_str())
            .collect();
        assert_eq!(labels, vec!["oE_v7", "v7_v8", "v8_d6", "d6_dE"]);
        // pursuer deviates from (top, bottom) by matching to bottom, cost 5
        let pi2 = profile(&s, true, false);
        let (_, cost2) = best_response(&s, &pi2, 0, 100, &cfg).unwrap();
        assert_eq!(cost2, rat_int(5));
    }

    #[test]
    fn single_player_game_has_its_best_path_as_pne() {
        let (s, _) = parse_scenario(
            r#"{
            "nodes": ["o", "m", "d"],
            "arcs": [
                {"id": "slow", "from": "o", "to": "d", "transit_time": "5", "capacity": "1"},
                {"id": "h1", "from": "o", "to": "m", "transit_time": "1", "capacity": "1"},
                {"id": "h2", "from": "m", "to": "d", "transit_time": "1", "capacity": "1"}
            ],
            "players": [{"id": 1, "origin": "o", "destination": "d", "release_time": "0",
                         "path": ["slow"]}],
            "discretization": {"alpha": "1", "beta": "1"}
        }"#,
        )
        .unwrap();
        let cfg = LoadingConfig::default();
        let equilibria = exhaustive_pne_search(&s, 1000, &cfg).unwrap();
        assert_eq!(equilibria.len(), 1);
        let labels: Vec<&str> = equilibria[0].paths[0]
            .iter()
            .map(|a| s.network.arc(*a).label.as_str())
            .collect();
        assert_eq!(labels, vec!["h1", "h2"]);
        // uncongested single player improves by 3 from the slow path
        let report = epsilon_check(&s, &declared_profile(&s).unwrap(), &rat_int(0), 100, &cfg).unwrap();
        assert_eq!(report.verdicts[0].improvement, rat_int(3));
        // and on its best path the improvement is 0
        let report2 = epsilon_check(&s, &equilibria[0], &rat_int(0), 100, &cfg).unwrap();
        assert_eq!(report2.verdicts[0].improvement, rat_int(0));
        assert!(report2.is_equilibrium);
    }

    #[test]
    fn disjoint_players_compose_their_optima() {
        let (s, _) = parse_scenario(
            r#"{
            "nodes": ["o1", "d1", "o2", "m", "d2"],
            "arcs": [
                {"id": "a", "from": "o1", "to": "d1", "transit_time": "1", "capacity": "1"},
                {"id": "b_fast", "from": "o2", "to": "d2", "transit_time": "1", "capacity": "1"},
                {"id": "b1", "from": "o2", "to": "m", "transit_time": "1", "capacity": "1"},
                {"id": "b2", "from": "m", "to": "d2", "transit_time": "1", "capacity": "1"}
            ],
            "players": [
                {"id": 1, "origin": "o1", "destination": "d1", "release_time": "0"},
                {"id": 2, "origin": "o2", "destination": "d2", "release_time": "0"}
            ],
            "discretization": {"alpha": "1", "beta": "1"}
        }"#,
        )
        .unwrap();
        let cfg = LoadingConfig::default();
        let equilibria = exhaustive_pne_search(&s, 1000, &cfg).unwrap();
        // player 1 has a unique path; player 2 strictly prefers the direct arc
        assert_eq!(equilibria.len(), 1);
        assert_eq!(
            s.network.arc(equilibria[0].paths[1][0]).label,
            "b_fast"
        );
    }

    #[test]
    fn enumeration_counts_and_caps() {
        let (s, _) = parse_scenario(
            r#"{
            "nodes": ["o", "a", "b", "d"],
            "arcs": [
                {"id": "oa", "from": "o", "to": "a", "transit_time": "1", "capacity": "1"},
                {"id": "ob", "from": "o", "to": "b", "transit_time": "1", "capacity": "1"},
                {"id": "ad", "from": "a", "to": "d", "transit_time": "1", "capacity": "1"},
                {"id": "bd", "from": "b", "to": "d", "transit_time": "1", "capacity": "1"}
            ],
            "discretization": {"alpha": "1", "beta": "1"}
        }"#,
        )
        .unwrap();
        let paths = enumerate_simple_paths(&s.network, NodeId(0), NodeId(3), 100).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(matches!(
            enumerate_simple_paths(&s.network, NodeId(0), NodeId(3), 1),
            Err(GameError::CapExceeded(1))
        ));
        assert!(matches!(
            enumerate_simple_paths(&s.network, NodeId(3), NodeId(0), 10),
            Err(GameError::Unreachable)
        ));
    }
}
