//! Flow-over-time network loading with deterministic queuing for fixed paths
//! and piecewise-constant inflows. All cumulative flows, queues and exit
//! times are exact piecewise-linear functions.

use std::collections::BTreeMap;

use num_traits::{Signed, Zero};
use thiserror::Error;

use crate::model::{ArcId, Commodity, CommodityId, Network, NodeId, Scenario};
use crate::pwl::{PwlFn, StepFn};
use crate::rational::{format_rational, rat_int, to_f64, Rational};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("continuous loading passed the horizon cap {0}; the instance looks non-terminating")]
    HorizonExceeded(String),
    #[error("particle {0} exceeds the commodity mass {1}")]
    ParticleOutOfRange(String, String),
    #[error("node is not on the commodity's path")]
    NodeNotOnPath,
    #[error("loaded flow violates its defining conditions: {0}")]
    Infeasible(String),
}

/// Exact deterministic-queue dynamics of one arc.
#[derive(Debug, Clone)]
pub struct ArcDynamics {
    /// Total outflow rate f⁻_e.
    pub outflow: StepFn,
    /// Queue volume z_e(θ) = F⁺_e(θ−τ_e) − F⁻_e(θ).
    pub queue: PwlFn,
    /// Waiting time q_e(θ) = z_e(θ+τ_e)/ν_e of particles entering at θ.
    pub waiting: PwlFn,
    /// Exit time T_e(θ) = θ + τ_e + q_e(θ); grows with slope 1 after the
    /// last breakpoint.
    pub exit_time: PwlFn,
}

fn push_z(points: &mut Vec<(Rational, Rational)>, t: Rational, v: Rational) {
    if let Some(last) = points.last() {
        if last.0 == t {
            debug_assert_eq!(last.1, v, "queue trajectory must be a function");
            return;
        }
    }
    points.push((t, v));
}

/// Runs the queue at capacity rate whenever it is nonempty; queue-depletion
/// times are exact rational roots of the linear pieces.
pub fn arc_outflow(inflow: &StepFn, tau: &Rational, nu: &Rational) -> ArcDynamics {
    let shifted = inflow.shift_right(tau);
    let mut out_pieces: Vec<(Rational, Rational, Rational)> = Vec::new();
    let mut zp: Vec<(Rational, Rational)> = vec![(Rational::zero(), Rational::zero())];
    let mut z = Rational::zero();
    for (start, end, rate) in shifted.iter_pieces() {
        let mut t = start;
        while t < end {
            if z.is_zero() {
                if &rate <= nu {
                    if !rate.is_zero() {
                        out_pieces.push((t.clone(), end.clone(), rate.clone()));
                    }
                    t = end.clone();
                } else {
                    out_pieces.push((t.clone(), end.clone(), nu.clone()));
                    push_z(&mut zp, t.clone(), Rational::zero());
                    z = (&end - &t) * (&rate - nu);
                    push_z(&mut zp, end.clone(), z.clone());
                    t = end.clone();
                }
            } else {
                out_pieces.push((t.clone(), end.clone(), nu.clone()));
                if &rate >= nu {
                    z += (&end - &t) * (&rate - nu);
                    push_z(&mut zp, end.clone(), z.clone());
                    t = end.clone();
                } else {
                    let depletion = &t + &z / (nu - &rate);
                    if depletion < end {
                        out_pieces.pop();
                        out_pieces.push((t.clone(), depletion.clone(), nu.clone()));
                        push_z(&mut zp, depletion.clone(), Rational::zero());
                        z = Rational::zero();
                        t = depletion;
                    } else {
                        z -= (&end - &t) * (nu - &rate);
                        push_z(&mut zp, end.clone(), z.clone());
                        t = end.clone();
                    }
                }
            }
        }
    }
    if z.is_positive() {
        let s = shifted.support_end();
        let depletion = &s + &z / nu;
        out_pieces.push((s, depletion.clone(), nu.clone()));
        push_z(&mut zp, depletion, Rational::zero());
    }
    let outflow = StepFn::from_pieces(&out_pieces).expect("pieces are built in order");
    let queue = PwlFn::new(zp, Rational::zero());
    // q(θ) = z(θ+τ)/ν; z is 0 up to the shifted support start ≥ τ
    let mut qp: Vec<(Rational, Rational)> = vec![(Rational::zero(), Rational::zero())];
    for (t, v) in queue.points() {
        if t >= tau {
            push_z(&mut qp, t - tau, v / nu);
        }
    }
    let waiting = PwlFn::new(qp, Rational::zero());
    let tp: Vec<(Rational, Rational)> = waiting
        .points()
        .iter()
        .map(|(t, q)| (t.clone(), t + tau + q))
        .collect();
    let exit_time = PwlFn::new(tp, rat_int(1));
    ArcDynamics {
        outflow,
        queue,
        waiting,
        exit_time,
    }
}

/// Splits the total outflow among commodities in proportion to their share of
/// the inflow at the queue entrance time ϑ(θ) = min{ξ ≤ θ | T_e(ξ) = θ}.
pub fn commodity_split(
    total_outflow: &StepFn,
    exit_time: &PwlFn,
    total_inflow: &StepFn,
    inflows: &BTreeMap<CommodityId, StepFn>,
) -> BTreeMap<CommodityId, StepFn> {
    let mut cuts: Vec<Rational> = total_inflow.cut_points().to_vec();
    for f in inflows.values() {
        cuts.extend(f.cut_points().iter().cloned());
    }
    cuts.sort();
    cuts.dedup();
    let mut result: BTreeMap<CommodityId, Vec<StepFn>> =
        inflows.keys().map(|j| (*j, Vec::new())).collect();
    for w in cuts.windows(2) {
        let (c0, c1) = (&w[0], &w[1]);
        let lambda = total_inflow.eval(c0);
        if lambda.is_zero() {
            continue;
        }
        let a = exit_time.eval(c0);
        let b = exit_time.eval(c1);
        if a == b {
            continue;
        }
        let window = total_outflow.restrict(&a, &b);
        if window.is_zero() {
            continue;
        }
        for (j, f) in inflows {
            let share = f.eval(c0) / &lambda;
            if share.is_zero() {
                continue;
            }
            result.get_mut(j).unwrap().push(window.scale(&share));
        }
    }
    result
        .into_iter()
        .map(|(j, parts)| (j, StepFn::sum(parts.iter())))
        .collect()
}

/// Per-arc flow state of a loaded network.
#[derive(Debug, Clone)]
pub struct ArcFlowState {
    pub arc: ArcId,
    pub inflow: StepFn,
    pub outflow: StepFn,
    pub inflow_by_commodity: BTreeMap<CommodityId, StepFn>,
    pub outflow_by_commodity: BTreeMap<CommodityId, StepFn>,
    pub cumulative_inflow: PwlFn,
    pub cumulative_outflow: PwlFn,
    pub queue: PwlFn,
    pub waiting: PwlFn,
    pub exit_time: PwlFn,
}

impl ArcFlowState {
    pub fn cumulative_inflow_of(&self, j: CommodityId) -> PwlFn {
        self.inflow_by_commodity
            .get(&j)
            .map(|f| f.integrate())
            .unwrap_or_else(|| PwlFn::constant(Rational::zero()))
    }

    pub fn cumulative_outflow_of(&self, j: CommodityId) -> PwlFn {
        self.outflow_by_commodity
            .get(&j)
            .map(|f| f.integrate())
            .unwrap_or_else(|| PwlFn::constant(Rational::zero()))
    }
}

#[derive(Debug, Clone)]
pub struct FlowOverTime {
    pub arcs: Vec<ArcFlowState>,
    /// Time by which the network is empty.
    pub horizon: Rational,
}

impl FlowOverTime {
    pub fn arc(&self, id: ArcId) -> &ArcFlowState {
        &self.arcs[id.0 as usize]
    }
}

/// Default horizon cap: (last supply breakpoint + total mass / min ν + Σ τ) · 2.
pub fn default_horizon_cap(net: &Network, commodities: &[Commodity]) -> Rational {
    let supply_end = commodities
        .iter()
        .map(|c| c.supply.support_end())
        .max()
        .unwrap_or_else(Rational::zero);
    let total_mass = commodities
        .iter()
        .fold(Rational::zero(), |acc, c| acc + c.supply.mass());
    let min_capacity = net
        .arcs
        .iter()
        .map(|a| a.capacity.clone())
        .min()
        .unwrap_or_else(|| rat_int(1));
    let total_transit = net
        .arcs
        .iter()
        .fold(Rational::zero(), |acc, a| acc + &a.transit_time);
    (supply_end + total_mass / min_capacity + total_transit) * rat_int(2)
}

/// Loads the network by advancing a global frontier in slabs of min_e τ_e:
/// within one slab every arc's inflow is already final, because flow entering
/// an arc needs at least τ_min time to leave it again.
pub fn load_network(
    net: &Network,
    commodities: &[Commodity],
    horizon_cap: Option<Rational>,
) -> Result<FlowOverTime, FlowError> {
    let zero_state = |arc: ArcId| ArcFlowState {
        arc,
        inflow: StepFn::zero(),
        outflow: StepFn::zero(),
        inflow_by_commodity: BTreeMap::new(),
        outflow_by_commodity: BTreeMap::new(),
        cumulative_inflow: PwlFn::constant(Rational::zero()),
        cumulative_outflow: PwlFn::constant(Rational::zero()),
        queue: PwlFn::constant(Rational::zero()),
        waiting: PwlFn::constant(Rational::zero()),
        exit_time: PwlFn::new(
            vec![(Rational::zero(), Rational::zero())],
            rat_int(1),
        ),
    };
    if commodities.is_empty() {
        let arcs = net
            .arcs
            .iter()
            .map(|a| {
                let mut st = zero_state(a.id);
                st.exit_time = PwlFn::new(
                    vec![(Rational::zero(), a.transit_time.clone())],
                    rat_int(1),
                );
                st
            })
            .collect();
        return Ok(FlowOverTime {
            arcs,
            horizon: Rational::zero(),
        });
    }

    let tau_min = net
        .min_transit_time()
        .expect("network with commodities has arcs");
    let cap = horizon_cap.unwrap_or_else(|| default_horizon_cap(net, commodities));
    let supplies: Vec<StepFn> = commodities.iter().map(|c| c.supply.as_step_fn()).collect();
    let supply_end = commodities
        .iter()
        .map(|c| c.supply.support_end())
        .max()
        .unwrap();

    // committed inflows on [0, frontier)
    let mut inflows: Vec<BTreeMap<CommodityId, StepFn>> = vec![BTreeMap::new(); net.arcs.len()];
    let mut used_arcs: Vec<ArcId> = Vec::new();
    for c in commodities {
        for a in &c.path {
            if !used_arcs.contains(a) {
                used_arcs.push(*a);
            }
        }
    }
    used_arcs.sort();

    let mut frontier = Rational::zero();
    loop {
        let next = &frontier + &tau_min;
        if next > cap {
            return Err(FlowError::HorizonExceeded(format_rational(&cap)));
        }

        // outflows valid on [0, next) from inflows committed on [0, frontier)
        let mut splits: Vec<BTreeMap<CommodityId, StepFn>> =
            vec![BTreeMap::new(); net.arcs.len()];
        for arc_id in &used_arcs {
            let idx = arc_id.0 as usize;
            let arc = net.arc(*arc_id);
            let total_in = StepFn::sum(inflows[idx].values());
            if total_in.is_zero() {
                continue;
            }
            let dynamics = arc_outflow(&total_in, &arc.transit_time, &arc.capacity);
            splits[idx] = commodity_split(
                &dynamics.outflow,
                &dynamics.exit_time,
                &total_in,
                &inflows[idx],
            );
        }

        // propagate the [frontier, next) window downstream
        for c in commodities {
            for pair in c.path.windows(2) {
                let upstream = pair[0].0 as usize;
                if let Some(out_j) = splits[upstream].get(&c.id) {
                    let window = out_j.restrict(&frontier, &next);
                    if !window.is_zero() {
                        let entry = inflows[pair[1].0 as usize]
                            .entry(c.id)
                            .or_insert_with(StepFn::zero);
                        *entry = entry.add(&window);
                    }
                }
            }
            let window = supplies[c.id.0 as usize].restrict(&frontier, &next);
            if !window.is_zero() {
                let entry = inflows[c.path[0].0 as usize]
                    .entry(c.id)
                    .or_insert_with(StepFn::zero);
                *entry = entry.add(&window);
            }
        }

        frontier = next;

        // done once supplies are exhausted and every used arc has drained
        if frontier >= supply_end {
            let drained = used_arcs.iter().all(|arc_id| {
                let idx = arc_id.0 as usize;
                let total_in = StepFn::sum(inflows[idx].values());
                if total_in.support_end() > frontier {
                    return false;
                }
                let arc = net.arc(*arc_id);
                let dynamics = arc_outflow(&total_in, &arc.transit_time, &arc.capacity);
                dynamics.outflow.support_end() <= frontier
            });
            if drained {
                break;
            }
        }
    }

    // final exact assembly
    let mut arcs = Vec::with_capacity(net.arcs.len());
    let mut horizon = Rational::zero();
    for a in &net.arcs {
        let idx = a.id.0 as usize;
        let by_commodity = inflows[idx].clone();
        if by_commodity.is_empty() {
            let mut st = zero_state(a.id);
            st.exit_time = PwlFn::new(
                vec![(Rational::zero(), a.transit_time.clone())],
                rat_int(1),
            );
            arcs.push(st);
            continue;
        }
        let total_in = StepFn::sum(by_commodity.values());
        let dynamics = arc_outflow(&total_in, &a.transit_time, &a.capacity);
        let out_by_commodity = commodity_split(
            &dynamics.outflow,
            &dynamics.exit_time,
            &total_in,
            &by_commodity,
        );
        horizon = horizon.max(dynamics.outflow.support_end());
        arcs.push(ArcFlowState {
            arc: a.id,
            cumulative_inflow: total_in.integrate(),
            cumulative_outflow: dynamics.outflow.integrate(),
            inflow: total_in,
            outflow: dynamics.outflow,
            inflow_by_commodity: by_commodity,
            outflow_by_commodity: out_by_commodity,
            queue: dynamics.queue,
            waiting: dynamics.waiting,
            exit_time: dynamics.exit_time,
        });
    }
    let flow = FlowOverTime { arcs, horizon };
    let violations = verify_feasibility(&flow, net, commodities);
    if !violations.is_empty() {
        let joined: Vec<String> = violations.into_iter().map(|v| v.0).collect();
        return Err(FlowError::Infeasible(joined.join("; ")));
    }
    Ok(flow)
}

/// Arrival time ℓ_{j,v}(φ): exact inverse of the cumulative supply at the
/// origin, then the exit-time recursion along the path.
pub fn arrival_time(
    flow: &FlowOverTime,
    net: &Network,
    commodity: &Commodity,
    phi: &Rational,
    v: NodeId,
) -> Result<Rational, FlowError> {
    let mass = commodity.supply.mass();
    if phi > &mass || phi.is_negative() {
        return Err(FlowError::ParticleOutOfRange(
            format_rational(phi),
            format_rational(&mass),
        ));
    }
    let nodes = commodity.node_sequence(net);
    let hops = nodes
        .iter()
        .position(|n| *n == v)
        .ok_or(FlowError::NodeNotOnPath)?;
    let mut theta = commodity
        .supply
        .cumulative()
        .inv_min(phi)
        .expect("phi is within the supply mass");
    for arc_id in commodity.path.iter().take(hops) {
        theta = flow.arc(*arc_id).exit_time.eval(&theta);
    }
    Ok(theta)
}

/// One feasibility violation, as a human-readable finding.
#[derive(Debug, Clone)]
pub struct Violation(pub String);

fn midpoints_of(cuts: &[Rational]) -> Vec<Rational> {
    cuts.windows(2)
        .map(|w| (&w[0] + &w[1]) / rat_int(2))
        .collect()
}

/// Post-hoc check of the defining conditions: queue-rate outflow, FIFO
/// proportional split, per-commodity conservation along paths, nonnegative
/// queues and the FIFO mass identity.
pub fn verify_feasibility(
    flow: &FlowOverTime,
    net: &Network,
    commodities: &[Commodity],
) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut report = |msg: String| violations.push(Violation(msg));

    for a in &net.arcs {
        let st = flow.arc(a.id);
        let label = &a.label;

        // z_e >= 0 at breakpoints (piecewise linear, so everywhere)
        if st.queue.min_value().is_negative() {
            report(format!("arc {label}: queue volume goes negative"));
        }

        // z identity: z_e = F⁺(·−τ) − F⁻
        let z_from_cumulative = st
            .cumulative_inflow
            .shift_right(&a.transit_time)
            .sub(&st.cumulative_outflow);
        if z_from_cumulative != st.queue {
            report(format!(
                "arc {label}: queue differs from F+(θ−τ)−F−(θ)"
            ));
        }

        // queue-rate outflow condition, checked at piece midpoints
        let mut cuts: Vec<Rational> = st.outflow.cut_points().to_vec();
        cuts.extend(st.inflow.cut_points().iter().map(|c| c + &a.transit_time));
        cuts.extend(st.queue.points().iter().map(|(t, _)| t.clone()));
        cuts.push(Rational::zero());
        cuts.sort();
        cuts.dedup();
        for m in midpoints_of(&cuts) {
            let z = st.queue.eval(&m);
            let out = st.outflow.eval(&m);
            let expected = if z.is_positive() {
                a.capacity.clone()
            } else {
                st.inflow.eval(&(&m - &a.transit_time)).min(a.capacity.clone())
            };
            if out != expected {
                report(format!(
                    "arc {label}: outflow {} differs from queue rule {} at time {}",
                    format_rational(&out),
                    format_rational(&expected),
                    format_rational(&m)
                ));
                break;
            }
        }

        // FIFO proportional split at midpoints
        let mut theta_cuts: Vec<Rational> = st.outflow.cut_points().to_vec();
        for f in st.outflow_by_commodity.values() {
            theta_cuts.extend(f.cut_points().iter().cloned());
        }
        for c in st.inflow.cut_points() {
            theta_cuts.push(st.exit_time.eval(c));
        }
        for f in st.inflow_by_commodity.values() {
            for c in f.cut_points() {
                theta_cuts.push(st.exit_time.eval(c));
            }
        }
        theta_cuts.sort();
        theta_cuts.dedup();
        'fifo: for m in midpoints_of(&theta_cuts) {
            let entrance = match st.exit_time.inv_min(&m) {
                Ok(x) => x,
                Err(_) => continue,
            };
            let total_at_entrance = st.inflow.eval(&entrance);
            for (j, f_out) in &st.outflow_by_commodity {
                let expected = if total_at_entrance.is_positive() {
                    st.outflow.eval(&m)
                        * st
                            .inflow_by_commodity
                            .get(j)
                            .map(|f| f.eval(&entrance))
                            .unwrap_or_else(Rational::zero)
                        / &total_at_entrance
                } else {
                    Rational::zero()
                };
                if f_out.eval(&m) != expected {
                    report(format!(
                        "arc {label}: commodity split violates the FIFO proportion at {}",
                        format_rational(&m)
                    ));
                    break 'fifo;
                }
            }
        }

        // commodity sums and mass balance
        let sum_out = StepFn::sum(st.outflow_by_commodity.values());
        if sum_out != st.outflow {
            report(format!("arc {label}: commodity outflows do not sum to the total"));
        }
        let sum_in = StepFn::sum(st.inflow_by_commodity.values());
        if sum_in != st.inflow {
            report(format!("arc {label}: commodity inflows do not sum to the total"));
        }
        if st.inflow.mass() != st.outflow.mass() {
            report(format!("arc {label}: inflow mass differs from outflow mass"));
        }

        // FIFO mass identity F⁻_j(T(θ)) = F⁺_j(θ) at breakpoints
        for (j, f_in) in &st.inflow_by_commodity {
            let cum_in = f_in.integrate();
            let cum_out = st
                .outflow_by_commodity
                .get(j)
                .map(|f| f.integrate())
                .unwrap_or_else(|| PwlFn::constant(Rational::zero()));
            let mut thetas: Vec<Rational> =
                cum_in.points().iter().map(|(t, _)| t.clone()).collect();
            thetas.extend(st.exit_time.points().iter().map(|(t, _)| t.clone()));
            thetas.sort();
            thetas.dedup();
            for theta in thetas {
                let lhs = cum_out.eval(&st.exit_time.eval(&theta));
                let rhs = cum_in.eval(&theta);
                if lhs != rhs {
                    report(format!(
                        "arc {label}, commodity {}: FIFO mass identity fails at {} ({} vs {})",
                        j.0,
                        format_rational(&theta),
                        format_rational(&lhs),
                        format_rational(&rhs)
                    ));
                    break;
                }
            }
        }
    }

    // per-commodity conservation along each path
    for c in commodities {
        let first = flow.arc(c.path[0]);
        let supply_fn = c.supply.as_step_fn();
        let got = first
            .inflow_by_commodity
            .get(&c.id)
            .cloned()
            .unwrap_or_else(StepFn::zero);
        if got != supply_fn {
            report(format!(
                "commodity {}: inflow of the first arc differs from the supply rate",
                c.label
            ));
        }
        for pair in c.path.windows(2) {
            let upstream = flow.arc(pair[0]);
            let downstream = flow.arc(pair[1]);
            let out_j = upstream
                .outflow_by_commodity
                .get(&c.id)
                .cloned()
                .unwrap_or_else(StepFn::zero);
            let in_j = downstream
                .inflow_by_commodity
                .get(&c.id)
                .cloned()
                .unwrap_or_else(StepFn::zero);
            if out_j != in_j {
                report(format!(
                    "commodity {}: conservation fails between arcs {} and {}",
                    c.label,
                    net.arc(pair[0]).label,
                    net.arc(pair[1]).label
                ));
            }
        }
    }
    violations
}

/// Breakpoint dump CSV: (arc, commodity|"total", kind, time, value_or_slope).
/// Rates list the value holding from `time` on; the queue lists its value at
/// each breakpoint.
pub fn write_flow_csv<W: std::io::Write>(
    flow: &FlowOverTime,
    scenario: &Scenario,
    out: W,
    decimal: bool,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["arc", "commodity", "kind", "time", "value_or_slope"];
    if decimal {
        header.push("time_decimal");
        header.push("value_or_slope_decimal");
    }
    w.write_record(&header)?;
    let mut rows: Vec<(String, String, &str, Rational, Rational)> = Vec::new();
    for a in &scenario.network.arcs {
        let st = flow.arc(a.id);
        let mut push_step = |commodity: String, kind: &'static str, f: &StepFn| {
            for (start, _end, value) in f.iter_pieces() {
                rows.push((a.label.clone(), commodity.clone(), kind, start, value));
            }
            if !f.is_zero() {
                rows.push((
                    a.label.clone(),
                    commodity.clone(),
                    kind,
                    f.support_end(),
                    Rational::zero(),
                ));
            }
        };
        push_step("total".into(), "inflow", &st.inflow);
        push_step("total".into(), "outflow", &st.outflow);
        for (j, f) in &st.inflow_by_commodity {
            push_step(scenario.commodity_label(*j), "inflow", f);
        }
        for (j, f) in &st.outflow_by_commodity {
            push_step(scenario.commodity_label(*j), "outflow", f);
        }
        for (t, v) in st.queue.points() {
            rows.push((
                a.label.clone(),
                "total".into(),
                "queue",
                t.clone(),
                v.clone(),
            ));
        }
    }
    rows.sort_by(|x, y| {
        x.0.cmp(&y.0)
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(y.2))
            .then(x.3.cmp(&y.3))
    });
    for (arc, commodity, kind, time, value) in rows {
        let mut record = vec![
            arc,
            commodity,
            kind.to_string(),
            format_rational(&time),
            format_rational(&value),
        ];
        if decimal {
            record.push(format!("{}", to_f64(&time)));
            record.push(format!("{}", to_f64(&value)));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
