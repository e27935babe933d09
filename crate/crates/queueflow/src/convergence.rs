//! (α, β)-sweeps comparing discrete and continuous arrival times and
//! cumulative flows, the waiting-time bound as a runtime assertion, the
//! hypothetical per-arc flow, and the empirical rate fit (the one floating
//! point computation in the crate).

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::continuous::{arc_outflow, arrival_time, commodity_split, load_network, FlowError};
use crate::coupling::{
    couple, discrete_queue_stats, refined_arrival, CoupledRun, CouplingError,
};
use crate::discrete::LoadingConfig;
use crate::model::{
    discretization_warnings, rate_bound, ArcId, Commodity, CommodityId, Discretization, Network,
    NodeId, Scenario,
};
use crate::pwl::{PwlFn, StepFn};
use crate::rational::{format_rational, rat, rat_int, to_f64, Rational};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("level {level}: {source}")]
    Level {
        level: u32,
        source: CouplingError,
    },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// How β is derived from α at each level.
#[derive(Debug, Clone)]
pub enum BetaRule {
    /// β = α^{3/2}, snapped to the nearest rational with denominator q³
    /// for α = p/q (integer square root of p³q³).
    AlphaPowThreeHalves,
    /// β = c·α for a fixed rational c.
    ProportionalToAlpha(Rational),
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub alpha0: Rational,
    pub levels: u32,
    pub ratio: Rational,
    pub beta_rule: BetaRule,
}

impl SweepConfig {
    pub fn new(alpha0: Rational, levels: u32) -> Self {
        SweepConfig {
            alpha0,
            levels,
            ratio: rat(1, 2),
            beta_rule: BetaRule::AlphaPowThreeHalves,
        }
    }
}

/// Nearest-integer square root.
fn isqrt_round(x: &BigInt) -> BigInt {
    let s = x.sqrt();
    let lower = &s * &s;
    let upper = (&s + 1u32) * (&s + 1u32);
    if &upper - x <= x - &lower {
        s + 1u32
    } else {
        s
    }
}

/// The β for a level under the given rule.
pub fn beta_for(alpha: &Rational, rule: &BetaRule) -> Rational {
    match rule {
        BetaRule::AlphaPowThreeHalves => {
            let p = alpha.numer();
            let q = alpha.denom();
            let radicand = p * p * p * q * q * q;
            let root = isqrt_round(&radicand).max(BigInt::one());
            Rational::new(root, q * q * q)
        }
        BetaRule::ProportionalToAlpha(c) => alpha * c,
    }
}

#[derive(Debug, Clone)]
pub struct ErrorRecord {
    pub level: u32,
    pub commodity: CommodityId,
    pub node: NodeId,
    pub packet: u64,
    pub discrete_time: Rational,
    pub continuous_time: Rational,
    pub abs_error: Rational,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FlowDirection {
    Inflow,
    Outflow,
}

#[derive(Debug, Clone)]
pub struct LevelReport {
    pub level: u32,
    pub alpha: Rational,
    pub beta: Rational,
    pub max_arrival_error: Rational,
    pub max_cumflow_error: Rational,
    pub flow_errors: BTreeMap<(CommodityId, ArcId, FlowDirection), Rational>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub levels: Vec<LevelReport>,
    pub records: Vec<ErrorRecord>,
    pub fitted_rate: Option<f64>,
    /// Time the continuous network is empty.
    pub horizon: Rational,
    /// ε̂ = min_e τ_e / 2.
    pub epsilon_step: Rational,
    /// K = ⌈H/ε̂⌉ for the empirical constant fit.
    pub k_bound: u64,
    /// Empirical C with max error ≤ √α·C^K across levels (never a claim
    /// about the true instance constant).
    pub fitted_c: Option<f64>,
}

/// Exact sup |G − F| of two cumulative flows.
pub fn uniform_flow_error(g: &PwlFn, f: &PwlFn) -> Rational {
    g.sup_abs_diff(f)
        .expect("cumulative flows are eventually constant")
}

/// Per-level packet/particle arrival comparison plus uniform flow errors.
pub fn run_sweep(
    net: &Network,
    commodities: &[Commodity],
    cfg: &SweepConfig,
) -> Result<ConvergenceReport, SweepError> {
    let flow = load_network(net, commodities, None)?;
    let epsilon_step = net
        .min_transit_time()
        .map(|t| t / rat_int(2))
        .unwrap_or_else(|| rat_int(1));
    let k_bound = if flow.horizon.is_zero() {
        1
    } else {
        (&flow.horizon / &epsilon_step)
            .ceil()
            .to_integer()
            .to_u64()
            .unwrap_or(1)
            .max(1)
    };

    let mut levels = Vec::new();
    let mut records = Vec::new();
    let mut alpha = cfg.alpha0.clone();
    for level in 0..cfg.levels {
        let beta = beta_for(&alpha, &cfg.beta_rule);
        let d = Discretization {
            alpha: alpha.clone(),
            beta: beta.clone(),
        };
        let warnings = discretization_warnings(net, &d);
        let run = couple(net, commodities, &d, &LoadingConfig::default())
            .map_err(|source| SweepError::Level { level, source })?;

        let mut max_arrival_error = Rational::zero();
        for c in commodities {
            let set = &run.packet_sets[c.id.0 as usize];
            let nodes = c.node_sequence(net);
            for i in 1..=set.count {
                let phi = &beta * rat_int(i as i64);
                for (pos, node) in nodes.iter().enumerate() {
                    let discrete = refined_arrival(&run.dff, c.id, &c.path, pos, i)
                        .map_err(|source| SweepError::Level { level, source })?;
                    let continuous = arrival_time(&flow, net, c, &phi, *node)?;
                    let abs_error = (&discrete - &continuous).abs();
                    if abs_error > max_arrival_error {
                        max_arrival_error = abs_error.clone();
                    }
                    records.push(ErrorRecord {
                        level,
                        commodity: c.id,
                        node: *node,
                        packet: i,
                        discrete_time: discrete,
                        continuous_time: continuous,
                        abs_error,
                    });
                }
            }
        }

        let mut flow_errors = BTreeMap::new();
        let mut max_cumflow_error = Rational::zero();
        let zero = PwlFn::constant(Rational::zero());
        for c in commodities {
            for arc in &c.path {
                let st = flow.arc(*arc);
                let g_in = run.dff.cum_in(c.id, *arc).unwrap_or(&zero);
                let g_out = run.dff.cum_out(c.id, *arc).unwrap_or(&zero);
                let err_in = uniform_flow_error(g_in, &st.cumulative_inflow_of(c.id));
                let err_out = uniform_flow_error(g_out, &st.cumulative_outflow_of(c.id));
                max_cumflow_error = max_cumflow_error.max(err_in.clone()).max(err_out.clone());
                flow_errors.insert((c.id, *arc, FlowDirection::Inflow), err_in);
                flow_errors.insert((c.id, *arc, FlowDirection::Outflow), err_out);
            }
        }

        levels.push(LevelReport {
            level,
            alpha: alpha.clone(),
            beta,
            max_arrival_error,
            max_cumflow_error,
            flow_errors,
            warnings,
        });
        alpha = &alpha * &cfg.ratio;
    }

    let fit_input: Vec<(Rational, Rational)> = levels
        .iter()
        .map(|l| (l.alpha.clone(), l.max_arrival_error.clone()))
        .collect();
    let fitted_rate = match fit_rate(&fit_input) {
        FitOutcome::Slope(s) => Some(s),
        _ => None,
    };
    let fitted_c = levels
        .iter()
        .filter(|l| l.max_arrival_error.is_positive())
        .map(|l| {
            let ratio = to_f64(&l.max_arrival_error) / to_f64(&l.alpha).sqrt();
            (ratio.ln() / k_bound as f64).exp()
        })
        .fold(None, |acc: Option<f64>, c| {
            Some(acc.map_or(c, |a| a.max(c)))
        });

    Ok(ConvergenceReport {
        levels,
        records,
        fitted_rate,
        horizon: flow.horizon,
        epsilon_step,
        k_bound,
        fitted_c,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitOutcome {
    /// All levels converged exactly; no fit is possible or needed.
    ExactlyZero,
    /// Fewer than 3 levels with positive error.
    InsufficientData,
    /// Least-squares slope of log error against log α.
    Slope(f64),
}

/// Quarantined floating-point fit of the empirical convergence rate.
pub fn fit_rate(levels: &[(Rational, Rational)]) -> FitOutcome {
    let positive: Vec<(f64, f64)> = levels
        .iter()
        .filter(|(_, err)| err.is_positive())
        .map(|(alpha, err)| (to_f64(alpha).ln(), to_f64(err).ln()))
        .collect();
    if positive.is_empty() {
        return FitOutcome::ExactlyZero;
    }
    if positive.len() < 3 {
        return FitOutcome::InsufficientData;
    }
    let n = positive.len() as f64;
    let sx: f64 = positive.iter().map(|(x, _)| x).sum();
    let sy: f64 = positive.iter().map(|(_, y)| y).sum();
    let sxx: f64 = positive.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = positive.iter().map(|(x, y)| x * y).sum();
    FitOutcome::Slope((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// Result of sampling the waiting-time bound
/// |q^D_{j,e}(θ) − z^D_e(θ+⌈τ⌉_α)/ν_e| ≤ 2α + ακ_e/ν_e + β/ν_e.
#[derive(Debug, Clone)]
pub struct WaitingBoundCheck {
    pub arc: ArcId,
    pub commodity: CommodityId,
    pub samples: u64,
    pub violations: u64,
    /// min over samples of (bound − |LHS|); negative means a violation.
    pub worst_margin: Rational,
    pub worst_theta: Rational,
}

/// Samples θ over every α-grid point up to the run horizon plus every packet
/// entrance time of the commodity on the arc. Extrema of the piecewise-linear
/// quantities occur at these points.
pub fn check_waiting_bound(
    run: &CoupledRun,
    net: &Network,
    commodities: &[Commodity],
    e: ArcId,
    j: CommodityId,
) -> Result<WaitingBoundCheck, CouplingError> {
    let alpha = &run.discretization.alpha;
    let beta = &run.discretization.beta;
    let nu = &net.arc(e).capacity;
    let kappa = rate_bound(net, commodities, e);
    let bound = rat_int(2) * alpha + alpha * &kappa / nu + beta / nu;

    let transit = run.discretized_arcs[e.0 as usize].transit_steps;
    let stats = discrete_queue_stats(&run.dff, e, transit);
    let transit_grid = alpha * rat_int(transit as i64);

    let mut thetas: Vec<Rational> = (0..=run.log.final_step)
        .map(|t| alpha * rat_int(t as i64))
        .collect();
    let commodity = &commodities[j.0 as usize];
    let pos = commodity
        .path
        .iter()
        .position(|a| *a == e)
        .ok_or(CouplingError::NoFlowOnArc)?;
    let count = run.packet_sets[j.0 as usize].count;
    for i in 1..=count {
        thetas.push(refined_arrival(&run.dff, j, &commodity.path, pos, i)?);
    }
    thetas.sort();
    thetas.dedup();

    let mut worst_margin: Option<(Rational, Rational)> = None;
    let mut violations = 0;
    let samples = thetas.len() as u64;
    for theta in thetas {
        let q = stats.waiting_time(j, &theta);
        let z_total = stats.total_queue_at(&(&theta + &transit_grid));
        let lhs = (q - z_total / nu).abs();
        let margin = &bound - &lhs;
        if margin.is_negative() {
            violations += 1;
        }
        if worst_margin.as_ref().is_none_or(|(m, _)| &margin < m) {
            worst_margin = Some((margin, theta));
        }
    }
    let (worst_margin, worst_theta) =
        worst_margin.unwrap_or((bound.clone(), Rational::zero()));
    Ok(WaitingBoundCheck {
        arc: e,
        commodity: j,
        samples,
        violations,
        worst_margin,
        worst_theta,
    })
}

/// Per-arc hypothetical flow: discrete inflow rates pushed through the
/// continuous arc dynamics.
#[derive(Debug, Clone)]
pub struct HypotheticalArcFlow {
    pub arc: ArcId,
    pub inflow_by_commodity: BTreeMap<CommodityId, StepFn>,
    pub outflow_by_commodity: BTreeMap<CommodityId, StepFn>,
    pub cumulative_inflow_by_commodity: BTreeMap<CommodityId, PwlFn>,
    pub cumulative_outflow_by_commodity: BTreeMap<CommodityId, PwlFn>,
    pub queue: PwlFn,
    pub waiting: PwlFn,
    pub exit_time: PwlFn,
    transit_time: Rational,
}

/// Builds h⁺ := g⁺ on the arc and determines h⁻, z^H, q^H, T^H by the
/// continuous dynamics.
pub fn hypothetical_flow(
    run: &CoupledRun,
    net: &Network,
    e: ArcId,
) -> Result<HypotheticalArcFlow, CouplingError> {
    let arc = net.arc(e);
    let mut inflow_by_commodity = BTreeMap::new();
    if let Some(js) = run.dff.commodities_on_arc.get(&e) {
        for j in js {
            if let Some(counts) = run.dff.entry_counts.get(&(*j, e)) {
                if counts.contains_key(&0) {
                    return Err(CouplingError::StepZeroRate);
                }
            }
            if let Some(f) = run.dff.inflow_rate.get(&(*j, e)) {
                inflow_by_commodity.insert(*j, f.clone());
            }
        }
    }
    let total_in = StepFn::sum(inflow_by_commodity.values());
    let dynamics = arc_outflow(&total_in, &arc.transit_time, &arc.capacity);
    let outflow_by_commodity = commodity_split(
        &dynamics.outflow,
        &dynamics.exit_time,
        &total_in,
        &inflow_by_commodity,
    );
    let cumulative_inflow_by_commodity = inflow_by_commodity
        .iter()
        .map(|(j, f)| (*j, f.integrate()))
        .collect();
    let cumulative_outflow_by_commodity = outflow_by_commodity
        .iter()
        .map(|(j, f)| (*j, f.integrate()))
        .collect();
    Ok(HypotheticalArcFlow {
        arc: e,
        inflow_by_commodity,
        outflow_by_commodity,
        cumulative_inflow_by_commodity,
        cumulative_outflow_by_commodity,
        queue: dynamics.queue,
        waiting: dynamics.waiting,
        exit_time: dynamics.exit_time,
        transit_time: arc.transit_time.clone(),
    })
}

impl HypotheticalArcFlow {
    /// k_{j,u}(φ) = min{θ | H⁺_{j,e}(θ) = φ}.
    pub fn entry_time(&self, j: CommodityId, phi: &Rational) -> Option<Rational> {
        self.cumulative_inflow_by_commodity
            .get(&j)?
            .inv_min(phi)
            .ok()
    }

    /// k_{j,v}(φ) = k_{j,u}(φ) + τ_e + q^H_e(k_{j,u}(φ)).
    pub fn exit_time_of_particle(&self, j: CommodityId, phi: &Rational) -> Option<Rational> {
        let entry = self.entry_time(j, phi)?;
        Some(&entry + &self.transit_time + self.waiting.eval(&entry))
    }

    /// The same exit via inversion of H⁻_{j,e}; must agree with the formula.
    pub fn exit_time_by_inversion(&self, j: CommodityId, phi: &Rational) -> Option<Rational> {
        self.cumulative_outflow_by_commodity
            .get(&j)?
            .inv_min(phi)
            .ok()
    }
}

/// Report CSV #1: one row per compared packet/particle pair.
pub fn write_records_csv<W: std::io::Write>(
    report: &ConvergenceReport,
    scenario: &Scenario,
    out: W,
    decimal: bool,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "level",
        "alpha",
        "beta",
        "commodity",
        "node",
        "packet",
        "discrete_time",
        "continuous_time",
        "abs_error",
    ];
    if decimal {
        header.push("abs_error_decimal");
    }
    w.write_record(&header)?;
    for r in &report.records {
        let level = &report.levels[r.level as usize];
        let mut record = vec![
            r.level.to_string(),
            format_rational(&level.alpha),
            format_rational(&level.beta),
            scenario.commodity_label(r.commodity),
            scenario.network.node_label(r.node).to_string(),
            r.packet.to_string(),
            format_rational(&r.discrete_time),
            format_rational(&r.continuous_time),
            format_rational(&r.abs_error),
        ];
        if decimal {
            record.push(format!("{}", to_f64(&r.abs_error)));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Report CSV #2: one summary row per level; the fitted rate only on the
/// last row.
pub fn write_summary_csv<W: std::io::Write>(
    report: &ConvergenceReport,
    out: W,
    decimal: bool,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "level",
        "alpha",
        "beta",
        "max_arrival_error",
        "max_cumflow_error",
        "fitted_rate",
    ];
    if decimal {
        header.push("max_arrival_error_decimal");
    }
    w.write_record(&header)?;
    for (idx, level) in report.levels.iter().enumerate() {
        let fitted = if idx + 1 == report.levels.len() {
            report
                .fitted_rate
                .map(|r| format!("{r:.6}"))
                .unwrap_or_else(|| "exact".to_string())
        } else {
            String::new()
        };
        let mut record = vec![
            level.level.to_string(),
            format_rational(&level.alpha),
            format_rational(&level.beta),
            format_rational(&level.max_arrival_error),
            format_rational(&level.max_cumflow_error),
            fitted,
        ];
        if decimal {
            record.push(format!("{}", to_f64(&level.max_arrival_error)));
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
