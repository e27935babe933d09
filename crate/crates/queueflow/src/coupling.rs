//! Coupling of the two engines: packet construction from supply rates,
//! in/outflow rate extraction from event logs, refined arrival times,
//! per-step positions and the discrete queue/waiting/exit-time functions.

use std::collections::BTreeMap;

use num_traits::{Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::discrete::{
    default_step_cap, network_loading, EventLog, LoadingConfig, PacketId, SimError, SimPacket,
};
use crate::model::{
    discretize, ArcId, Commodity, CommodityId, Discretization, DiscretizedArc, Network, Scenario,
};
use crate::pwl::{PwlFn, StepFn};
use crate::rational::{ceil_to_grid, floor_div, format_rational, rat_int, to_f64, Rational};

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error("packet index {0} is out of range (commodity has {1} packets)")]
    PacketOutOfRange(u64, u64),
    #[error("node position {0} is not on the path")]
    NodeOffPath(usize),
    #[error("no flow of this commodity on the arc")]
    NoFlowOnArc,
    #[error("position formula produced the non-integer {0}")]
    NonIntegerPosition(String),
    #[error("arc entries at step 0 cannot carry a rate rectangle; build packets from supplies")]
    StepZeroRate,
    #[error("player {0} has no declared path")]
    PlayerWithoutPath(u64),
    #[error("csv write failed: {0}")]
    Csv(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Packets of one commodity: count ⌊m_j/β⌋ and release times on the α-grid.
#[derive(Debug, Clone)]
pub struct PacketSet {
    pub commodity: CommodityId,
    pub count: u64,
    /// r_i for i = 1..count (index 0 holds r_1).
    pub release_times: Vec<Rational>,
    pub release_steps: Vec<u64>,
}

/// r_i = min{θ ∈ Θ_α | ∫₀^θ u_j ≥ i·β}, exactly inverted on the cumulative
/// supply; the packet count is ⌊m_j/β⌋.
pub fn build_packets(commodity: &Commodity, alpha: &Rational, beta: &Rational) -> PacketSet {
    let mass = commodity.supply.mass();
    let count = floor_div(&mass, beta).to_u64().expect("desk-scale packet count");
    let cumulative = commodity.supply.cumulative();
    let mut release_times = Vec::with_capacity(count as usize);
    let mut release_steps = Vec::with_capacity(count as usize);
    for i in 1..=count {
        let target = beta * rat_int(i as i64);
        let exact = cumulative
            .inv_min(&target)
            .expect("i*beta is at most the supply mass");
        let grid = ceil_to_grid(&exact, alpha).expect("times are nonnegative");
        release_steps.push(floor_div(&grid, alpha).to_u64().expect("grid step"));
        release_times.push(grid);
    }
    PacketSet {
        commodity: commodity.id,
        count,
        release_times,
        release_steps,
    }
}

/// Per-(commodity, arc) discrete flow rates and cumulative flows extracted
/// from an event log. Rates are β/α per packet, spread over the step ending
/// at the event's grid time; cumulative flows are their exact integrals, with
/// step-0 event volume carried as an initial value at time 0.
#[derive(Debug, Clone)]
pub struct DiscreteFlowFunctions {
    pub alpha: Rational,
    pub beta: Rational,
    pub entry_counts: BTreeMap<(CommodityId, ArcId), BTreeMap<u64, u64>>,
    pub exit_counts: BTreeMap<(CommodityId, ArcId), BTreeMap<u64, u64>>,
    pub inflow_rate: BTreeMap<(CommodityId, ArcId), StepFn>,
    pub outflow_rate: BTreeMap<(CommodityId, ArcId), StepFn>,
    pub cumulative_inflow: BTreeMap<(CommodityId, ArcId), PwlFn>,
    pub cumulative_outflow: BTreeMap<(CommodityId, ArcId), PwlFn>,
    /// J_e: commodities with events on each arc.
    pub commodities_on_arc: BTreeMap<ArcId, Vec<CommodityId>>,
}

fn rate_from_counts(counts: &BTreeMap<u64, u64>, alpha: &Rational, beta: &Rational) -> StepFn {
    let pieces: Vec<(Rational, Rational, Rational)> = counts
        .iter()
        .filter(|(step, _)| **step >= 1)
        .map(|(step, n)| {
            let end = alpha * rat_int(*step as i64);
            let start = &end - alpha;
            (start, end, beta * rat_int(*n as i64) / alpha)
        })
        .collect();
    StepFn::from_pieces(&pieces).expect("steps are in order")
}

fn cumulative_from_counts(
    counts: &BTreeMap<u64, u64>,
    alpha: &Rational,
    beta: &Rational,
) -> PwlFn {
    let atom = counts.get(&0).copied().unwrap_or(0);
    let mut points = vec![(Rational::zero(), beta * rat_int(atom as i64))];
    let mut acc = points[0].1.clone();
    for (step, n) in counts.iter().filter(|(step, _)| **step >= 1) {
        let end = alpha * rat_int(*step as i64);
        let start = &end - alpha;
        if points.last().unwrap().0 < start {
            points.push((start, acc.clone()));
        }
        acc += beta * rat_int(*n as i64);
        points.push((end, acc.clone()));
    }
    PwlFn::new(points, Rational::zero())
}

/// g and G functions from a completed event log.
pub fn extract_rates(log: &EventLog, alpha: &Rational, beta: &Rational) -> DiscreteFlowFunctions {
    let mut entry_counts: BTreeMap<(CommodityId, ArcId), BTreeMap<u64, u64>> = BTreeMap::new();
    let mut exit_counts: BTreeMap<(CommodityId, ArcId), BTreeMap<u64, u64>> = BTreeMap::new();
    let mut on_arc: BTreeMap<ArcId, std::collections::BTreeSet<CommodityId>> = BTreeMap::new();
    let tally = |dest: &mut BTreeMap<(CommodityId, ArcId), BTreeMap<u64, u64>>,
                     per_arc: &Vec<Vec<(u64, Vec<PacketId>)>>,
                     on_arc: &mut BTreeMap<ArcId, std::collections::BTreeSet<CommodityId>>| {
        for (arc_idx, steps) in per_arc.iter().enumerate() {
            let arc = ArcId(arc_idx as u32);
            for (step, packets) in steps {
                for p in packets {
                    *dest
                        .entry((p.commodity, arc))
                        .or_default()
                        .entry(*step)
                        .or_insert(0) += 1;
                    on_arc.entry(arc).or_default().insert(p.commodity);
                }
            }
        }
    };
    tally(&mut entry_counts, &log.enters, &mut on_arc);
    tally(&mut exit_counts, &log.leaves, &mut on_arc);

    let mut dff = DiscreteFlowFunctions {
        alpha: alpha.clone(),
        beta: beta.clone(),
        inflow_rate: BTreeMap::new(),
        outflow_rate: BTreeMap::new(),
        cumulative_inflow: BTreeMap::new(),
        cumulative_outflow: BTreeMap::new(),
        entry_counts,
        exit_counts,
        commodities_on_arc: on_arc
            .into_iter()
            .map(|(a, set)| (a, set.into_iter().collect()))
            .collect(),
    };
    for (key, counts) in &dff.entry_counts {
        dff.inflow_rate
            .insert(*key, rate_from_counts(counts, alpha, beta));
        dff.cumulative_inflow
            .insert(*key, cumulative_from_counts(counts, alpha, beta));
    }
    for (key, counts) in &dff.exit_counts {
        dff.outflow_rate
            .insert(*key, rate_from_counts(counts, alpha, beta));
        dff.cumulative_outflow
            .insert(*key, cumulative_from_counts(counts, alpha, beta));
    }
    dff
}

impl DiscreteFlowFunctions {
    pub fn cum_in(&self, j: CommodityId, e: ArcId) -> Option<&PwlFn> {
        self.cumulative_inflow.get(&(j, e))
    }

    pub fn cum_out(&self, j: CommodityId, e: ArcId) -> Option<&PwlFn> {
        self.cumulative_outflow.get(&(j, e))
    }

    /// Total G⁺_e or G⁻_e over all commodities on the arc.
    pub fn total_cumulative(&self, e: ArcId, outflow: bool) -> PwlFn {
        let source = if outflow {
            &self.cumulative_outflow
        } else {
            &self.cumulative_inflow
        };
        let mut acc = PwlFn::constant(Rational::zero());
        if let Some(js) = self.commodities_on_arc.get(&e) {
            for j in js {
                if let Some(f) = source.get(&(*j, e)) {
                    acc = acc.add(f);
                }
            }
        }
        acc
    }

    /// Total inflow rate g⁺_e as a step function (errors on step-0 entries).
    pub fn total_inflow_rate(&self, e: ArcId) -> Result<StepFn, CouplingError> {
        let mut acc = StepFn::zero();
        if let Some(js) = self.commodities_on_arc.get(&e) {
            for j in js {
                if let Some(counts) = self.entry_counts.get(&(*j, e)) {
                    if counts.contains_key(&0) {
                        return Err(CouplingError::StepZeroRate);
                    }
                }
                if let Some(f) = self.inflow_rate.get(&(*j, e)) {
                    acc = acc.add(f);
                }
            }
        }
        Ok(acc)
    }
}

/// Refined arrival time ℓ^D_{j,v}(i) = min{θ | G(θ) ≥ i·β}: the origin uses
/// G⁺ of the first path arc, every later node the G⁻ of its incoming arc.
pub fn refined_arrival(
    dff: &DiscreteFlowFunctions,
    j: CommodityId,
    path: &[ArcId],
    node_pos: usize,
    packet_index: u64,
) -> Result<Rational, CouplingError> {
    if node_pos > path.len() {
        return Err(CouplingError::NodeOffPath(node_pos));
    }
    let cumulative = if node_pos == 0 {
        dff.cum_in(j, path[0])
    } else {
        dff.cum_out(j, path[node_pos - 1])
    }
    .ok_or(CouplingError::NoFlowOnArc)?;
    let target = &dff.beta * rat_int(packet_index as i64);
    cumulative.inv_min(&target).map_err(|_| {
        let total = floor_div(&cumulative.last_point().1, &dff.beta)
            .to_u64()
            .unwrap_or(0);
        CouplingError::PacketOutOfRange(packet_index, total)
    })
}

/// Position k of a packet among the packets of its commodity entering the
/// arc in the same step: k = (1/α)·(ℓ^D − (⌈ℓ^D⌉_α − α)) · g⁺(ℓ^D)·α/β.
pub fn position_in_step(
    dff: &DiscreteFlowFunctions,
    j: CommodityId,
    e: ArcId,
    refined_time: &Rational,
) -> Result<u64, CouplingError> {
    let grid_time = ceil_to_grid(refined_time, &dff.alpha).expect("refined times are nonnegative");
    let step = floor_div(&grid_time, &dff.alpha)
        .to_u64()
        .expect("grid step");
    let count = dff
        .entry_counts
        .get(&(j, e))
        .and_then(|m| m.get(&step))
        .copied()
        .ok_or(CouplingError::NoFlowOnArc)?;
    // g⁺(ℓ^D)·α/β is exactly the packet count of the step
    let k = (refined_time - (&grid_time - &dff.alpha)) / &dff.alpha * rat_int(count as i64);
    if !k.is_integer() {
        return Err(CouplingError::NonIntegerPosition(format_rational(&k)));
    }
    Ok(k.to_integer().to_u64().expect("positions are small"))
}

/// Commodity-specific queue size z^D, waiting time q^D and exit time T^D of
/// one arc, as exact point evaluations on the extracted cumulative flows.
#[derive(Debug, Clone)]
pub struct DiscreteQueueStats {
    pub arc: ArcId,
    pub transit_grid: Rational,
    per_commodity: BTreeMap<CommodityId, (PwlFn, PwlFn)>,
    /// Total queue size z^D_e(σ) for σ ≥ ⌈τ_e⌉_α.
    pub total_queue: PwlFn,
}

/// Derives z^D_{j,e}(θ+⌈τ⌉_α) = G⁺_{j,e}(θ) − G⁻_{j,e}(θ+⌈τ⌉_α) and the
/// functions built on it.
pub fn discrete_queue_stats(
    dff: &DiscreteFlowFunctions,
    e: ArcId,
    transit_steps: u64,
) -> DiscreteQueueStats {
    let transit_grid = &dff.alpha * rat_int(transit_steps as i64);
    let mut per_commodity = BTreeMap::new();
    let mut total_queue = PwlFn::constant(Rational::zero());
    if let Some(js) = dff.commodities_on_arc.get(&e) {
        for j in js {
            let zero = PwlFn::constant(Rational::zero());
            let cum_in = dff.cum_in(*j, e).unwrap_or(&zero).clone();
            let cum_out = dff.cum_out(*j, e).unwrap_or(&zero).clone();
            // breakpoints of σ ↦ G⁺(σ−⌈τ⌉) − G⁻(σ) on σ ≥ ⌈τ⌉
            let mut sigmas: Vec<Rational> = cum_out
                .points()
                .iter()
                .map(|(t, _)| t.clone())
                .filter(|t| t >= &transit_grid)
                .collect();
            sigmas.extend(cum_in.points().iter().map(|(t, _)| t + &transit_grid));
            sigmas.push(transit_grid.clone());
            sigmas.sort();
            sigmas.dedup();
            let points: Vec<(Rational, Rational)> = sigmas
                .into_iter()
                .map(|sigma| {
                    let v = cum_in.eval(&(&sigma - &transit_grid)) - cum_out.eval(&sigma);
                    (sigma, v)
                })
                .collect();
            let z = PwlFn::new(points, Rational::zero());
            total_queue = total_queue.add(&z);
            per_commodity.insert(*j, (z, cum_out));
        }
    }
    DiscreteQueueStats {
        arc: e,
        transit_grid,
        per_commodity,
        total_queue,
    }
}

impl DiscreteQueueStats {
    pub fn commodities(&self) -> impl Iterator<Item = &CommodityId> {
        self.per_commodity.keys()
    }

    /// z^D_{j,e}(σ), for σ ≥ ⌈τ_e⌉_α.
    pub fn queue_of(&self, j: CommodityId, sigma: &Rational) -> Rational {
        match self.per_commodity.get(&j) {
            Some((z, _)) => z.eval(sigma),
            None => Rational::zero(),
        }
    }

    /// Total z^D_e(σ).
    pub fn total_queue_at(&self, sigma: &Rational) -> Rational {
        self.total_queue.eval(sigma)
    }

    /// q^D_{j,e}(θ) = min{q ≥ 0 | ∫ over (θ+⌈τ⌉, θ+⌈τ⌉+q] of g⁻_j ≥ z^D_j}.
    pub fn waiting_time(&self, j: CommodityId, theta: &Rational) -> Rational {
        let Some((z, cum_out)) = self.per_commodity.get(&j) else {
            return Rational::zero();
        };
        let sigma = theta + &self.transit_grid;
        let backlog = z.eval(&sigma);
        if !backlog.is_positive() {
            return Rational::zero();
        }
        let target = cum_out.eval(&sigma) + backlog;
        let reach = cum_out
            .inv_min(&target)
            .expect("completed logs drain every queue");
        let q = reach - sigma;
        if q.is_negative() {
            Rational::zero()
        } else {
            q
        }
    }

    /// T^D_{j,e}(θ) = θ + ⌈τ_e⌉_α + q^D_{j,e}(θ).
    pub fn exit_time(&self, j: CommodityId, theta: &Rational) -> Rational {
        theta + &self.transit_grid + self.waiting_time(j, theta)
    }
}

/// A fully coupled run: packets built from supplies, simulated, and with all
/// discrete flow functions extracted.
#[derive(Debug, Clone)]
pub struct CoupledRun {
    pub discretization: Discretization,
    pub discretized_arcs: Vec<DiscretizedArc>,
    pub packet_sets: Vec<PacketSet>,
    pub log: EventLog,
    pub dff: DiscreteFlowFunctions,
}

/// Builds packets for every commodity, runs the discrete loading and extracts
/// the discrete flow functions.
pub fn couple(
    net: &Network,
    commodities: &[Commodity],
    d: &Discretization,
    config: &LoadingConfig,
) -> Result<CoupledRun, CouplingError> {
    let discretized = discretize(net, d);
    let mut packets = Vec::new();
    let mut packet_sets = Vec::new();
    for c in commodities {
        let set = build_packets(c, &d.alpha, &d.beta);
        for i in 1..=set.count {
            packets.push(SimPacket {
                id: PacketId {
                    commodity: c.id,
                    index: i,
                },
                path: c.path.clone(),
                release_step: set.release_steps[(i - 1) as usize],
            });
        }
        packet_sets.push(set);
    }
    let horizon = commodities
        .iter()
        .map(|c| c.supply.support_end())
        .max()
        .unwrap_or_else(Rational::zero);
    let horizon_steps = if horizon.is_zero() {
        0
    } else {
        floor_div(
            &ceil_to_grid(&horizon, &d.alpha).expect("supply times nonnegative"),
            &d.alpha,
        )
        .to_u64()
        .expect("horizon steps")
    };
    let max_transit = discretized
        .iter()
        .map(|a| a.transit_steps)
        .max()
        .unwrap_or(0);
    let mut cfg = LoadingConfig {
        node_source_priority: config.node_source_priority,
        step_cap: config.step_cap,
    };
    if cfg.step_cap.is_none() {
        cfg.step_cap = Some(default_step_cap(
            horizon_steps,
            packets.len() as u64,
            max_transit,
        ));
    }
    let log = network_loading(net, &discretized, &packets, &cfg)?;
    let dff = extract_rates(&log, &d.alpha, &d.beta);
    Ok(CoupledRun {
        discretization: d.clone(),
        discretized_arcs: discretized,
        packet_sets,
        log,
        dff,
    })
}

/// Simulates a whole scenario: commodity packets are built from their
/// supplies, players contribute one packet each on their declared path.
pub fn discretize_and_load(
    scenario: &Scenario,
    config: &LoadingConfig,
) -> Result<EventLog, CouplingError> {
    let d = &scenario.discretization;
    let discretized = discretize(&scenario.network, d);
    let mut packets = Vec::new();
    for c in &scenario.commodities {
        let set = build_packets(c, &d.alpha, &d.beta);
        for i in 1..=set.count {
            packets.push(SimPacket {
                id: PacketId {
                    commodity: c.id,
                    index: i,
                },
                path: c.path.clone(),
                release_step: set.release_steps[(i - 1) as usize],
            });
        }
    }
    for (idx, p) in scenario.players.iter().enumerate() {
        let path = p
            .path
            .clone()
            .ok_or(CouplingError::PlayerWithoutPath(p.id))?;
        packets.push(SimPacket {
            id: PacketId {
                commodity: scenario.player_commodity_id(idx),
                index: 1,
            },
            path,
            release_step: floor_div(&p.release_time, &d.alpha)
                .to_u64()
                .expect("validated grid release"),
        });
    }
    Ok(network_loading(
        &scenario.network,
        &discretized,
        &packets,
        config,
    )?)
}

/// Asserts the exit-time identity ℓ^D_{j,v}(i) = T^D_{j,e}(ℓ^D_{j,u}(i)) as
/// exact rational equality for every packet on every arc of its path.
pub fn check_exit_time_identity(
    run: &CoupledRun,
    commodities: &[Commodity],
) -> Result<(), String> {
    for c in commodities {
        let set = &run.packet_sets[c.id.0 as usize];
        if set.count == 0 {
            continue;
        }
        for (pos, arc_id) in c.path.iter().enumerate() {
            let transit = run.discretized_arcs[arc_id.0 as usize].transit_steps;
            let stats = discrete_queue_stats(&run.dff, *arc_id, transit);
            for i in 1..=set.count {
                let at_tail = refined_arrival(&run.dff, c.id, &c.path, pos, i)
                    .map_err(|e| format!("commodity {}: {e}", c.label))?;
                let at_head = refined_arrival(&run.dff, c.id, &c.path, pos + 1, i)
                    .map_err(|e| format!("commodity {}: {e}", c.label))?;
                let via_exit = stats.exit_time(c.id, &at_tail);
                if via_exit != at_head {
                    return Err(format!(
                        "commodity {} packet {i} arc {}: T^D gives {} but the refined arrival is {}",
                        c.label,
                        arc_id.0,
                        format_rational(&via_exit),
                        format_rational(&at_head)
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Refined-times CSV: (commodity, packet, node, refined_time, step, position).
/// Interior nodes carry the entry position on the outgoing arc; the
/// destination carries the exit position on the incoming arc.
pub fn write_refined_csv<W: std::io::Write>(
    run: &CoupledRun,
    scenario: &Scenario,
    out: W,
    decimal: bool,
) -> Result<(), CouplingError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["commodity", "packet", "node", "refined_time", "step", "position"];
    if decimal {
        header.push("refined_time_decimal");
    }
    w.write_record(&header).map_err(io_err)?;
    for c in &scenario.commodities {
        let set = &run.packet_sets[c.id.0 as usize];
        let nodes = c.node_sequence(&scenario.network);
        for i in 1..=set.count {
            for (pos, node) in nodes.iter().enumerate() {
                let time = refined_arrival(&run.dff, c.id, &c.path, pos, i)?;
                let grid = ceil_to_grid(&time, &run.dff.alpha).expect("nonnegative");
                let step = floor_div(&grid, &run.dff.alpha);
                let position = if pos < c.path.len() {
                    position_in_step(&run.dff, c.id, c.path[pos], &time)?
                } else {
                    exit_position(&run.dff, c.id, *c.path.last().unwrap(), &time)?
                };
                let mut record = vec![
                    c.label.clone(),
                    i.to_string(),
                    scenario.network.node_label(*node).to_string(),
                    format_rational(&time),
                    step.to_string(),
                    position.to_string(),
                ];
                if decimal {
                    record.push(format!("{}", to_f64(&time)));
                }
                w.write_record(&record).map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(|e| io_err(csv::Error::from(e)))?;
    Ok(())
}

fn exit_position(
    dff: &DiscreteFlowFunctions,
    j: CommodityId,
    e: ArcId,
    refined_time: &Rational,
) -> Result<u64, CouplingError> {
    let grid_time = ceil_to_grid(refined_time, &dff.alpha).expect("nonnegative");
    let step = floor_div(&grid_time, &dff.alpha).to_u64().expect("grid step");
    let count = dff
        .exit_counts
        .get(&(j, e))
        .and_then(|m| m.get(&step))
        .copied()
        .ok_or(CouplingError::NoFlowOnArc)?;
    let k = (refined_time - (&grid_time - &dff.alpha)) / &dff.alpha * rat_int(count as i64);
    if !k.is_integer() {
        return Err(CouplingError::NonIntegerPosition(format_rational(&k)));
    }
    Ok(k.to_integer().to_u64().expect("positions are small"))
}

fn io_err(e: csv::Error) -> CouplingError {
    CouplingError::Csv(e.to_string())
}
