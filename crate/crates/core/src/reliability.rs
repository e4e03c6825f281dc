//! Failure events and availability statistics over hourly loss series.
//!
//! A failure is a maximal run of consecutive observed hours whose loss rate
//! meets or exceeds a threshold. Hours missing from a series are gaps: they
//! split runs and count toward neither uptime nor downtime. Availability
//! ratios are kept as exact rationals until report emission so that the
//! identity MTBF/(MTBF+MDT) = uptime/(uptime+downtime) holds exactly.

use std::collections::BTreeMap;
use std::net::IpAddr;

use num::traits::ToPrimitive;
use num::Zero;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ratio, HourStamp, HourlyRecord, Rational, UnitId, UnitMeta};
use crate::net::IpPrefix;

/// Hours in the reporting year used for annualized downtime.
pub const HOURS_PER_YEAR: f64 = 8760.0;

/// One maximal run of consecutive hours at or above a loss threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureEvent {
    pub unit_id: UnitId,
    pub start: HourStamp,
    pub duration_hours: u64,
    pub threshold: f64,
    /// Worst hourly loss rate inside the run.
    pub max_loss: f64,
}

/// Reliability summary for one scope (a unit, a group, or a filtered view).
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityStats {
    pub scope: String,
    pub threshold: f64,
    pub uptime_hours: u64,
    pub downtime_hours: u64,
    pub failures: u64,
    /// Mean time between failures, `None` when no failure was observed.
    pub mtbf_hours: Option<Rational>,
    /// Mean downtime per failure, `None` when no failure was observed.
    pub mdt_hours: Option<Rational>,
    /// For a single series this equals uptime/(uptime+downtime); for a group
    /// it is the mean of member availabilities, while the hour and failure
    /// counts stay pooled.
    pub availability: Rational,
}

impl ReliabilityStats {
    pub fn unavailability(&self) -> Rational {
        Rational::from_integer(1.into()) - self.availability.clone()
    }

    pub fn availability_f64(&self) -> f64 {
        self.availability.to_f64().unwrap_or(f64::NAN)
    }

    pub fn annual_downtime_hours(&self) -> f64 {
        annual_downtime_hours(self.availability_f64())
    }
}

/// Expected downtime over a year at a given availability.
pub fn annual_downtime_hours(availability: f64) -> f64 {
    (1.0 - availability) * HOURS_PER_YEAR
}

fn check_sorted(series: &[HourlyRecord]) -> Result<()> {
    for w in series.windows(2) {
        if w[1].hour <= w[0].hour {
            return Err(Error::Malformed {
                file: String::new(),
                line: 0,
                msg: format!(
                    "series for {} not strictly increasing at {}",
                    w[0].unit_id, w[1].hour
                ),
            });
        }
    }
    Ok(())
}

/// Scan a sorted hourly series for failure runs at `threshold`.
///
/// Returns events in time order. A missing hour terminates any open run.
pub fn classify_failures(
    series: &[HourlyRecord],
    threshold: f64,
) -> Result<Vec<FailureEvent>> {
    check_sorted(series)?;
    let mut events = Vec::new();
    let mut open: Option<FailureEvent> = None;
    let mut prev_hour: Option<HourStamp> = None;

    for rec in series {
        let contiguous = prev_hour.map_or(false, |p| rec.hour == p.next());
        if !contiguous {
            if let Some(ev) = open.take() {
                events.push(ev);
            }
        }
        if rec.loss_rate >= threshold {
            match &mut open {
                Some(ev) => {
                    ev.duration_hours += 1;
                    ev.max_loss = ev.max_loss.max(rec.loss_rate);
                }
                None => {
                    open = Some(FailureEvent {
                        unit_id: rec.unit_id.clone(),
                        start: rec.hour,
                        duration_hours: 1,
                        threshold,
                        max_loss: rec.loss_rate,
                    });
                }
            }
        } else if let Some(ev) = open.take() {
            events.push(ev);
        }
        prev_hour = Some(rec.hour);
    }
    if let Some(ev) = open {
        events.push(ev);
    }
    Ok(events)
}

/// Compute per-series reliability statistics at one threshold.
pub fn compute_stats(
    scope: impl Into<String>,
    series: &[HourlyRecord],
    threshold: f64,
) -> Result<ReliabilityStats> {
    let scope = scope.into();
    if series.is_empty() {
        return Err(Error::EmptyScope(format!("no observed hours in {scope}")));
    }
    let events = classify_failures(series, threshold)?;
    let downtime: u64 = events.iter().map(|e| e.duration_hours).sum();
    let total = series.len() as u64;
    let uptime = total - downtime;
    let failures = events.len() as u64;
    let (mtbf, mdt) = if failures > 0 {
        (Some(ratio(uptime, failures)), Some(ratio(downtime, failures)))
    } else {
        (None, None)
    };
    Ok(ReliabilityStats {
        scope,
        threshold,
        uptime_hours: uptime,
        downtime_hours: downtime,
        failures,
        mtbf_hours: mtbf,
        mdt_hours: mdt,
        availability: ratio(uptime, total),
    })
}

/// Pool several member series into one group row.
///
/// Availability is the unweighted mean of member availabilities so that a
/// chatty unit cannot dominate a group; uptime, downtime and failure counts
/// are pooled sums and MTBF/MDT derive from the pooled counts.
pub fn group_stats(
    scope: impl Into<String>,
    members: &[&[HourlyRecord]],
    threshold: f64,
) -> Result<ReliabilityStats> {
    let scope = scope.into();
    let member_stats: Vec<ReliabilityStats> = members
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| compute_stats("member", s, threshold))
        .collect::<Result<_>>()?;
    if member_stats.is_empty() {
        return Err(Error::EmptyScope(format!("no observed hours in {scope}")));
    }
    let uptime: u64 = member_stats.iter().map(|s| s.uptime_hours).sum();
    let downtime: u64 = member_stats.iter().map(|s| s.downtime_hours).sum();
    let failures: u64 = member_stats.iter().map(|s| s.failures).sum();
    let sum: Rational = member_stats
        .iter()
        .map(|s| s.availability.clone())
        .fold(Rational::zero(), |a, b| a + b);
    let availability = sum / Rational::from_integer((member_stats.len() as u64).into());
    let (mtbf, mdt) = if failures > 0 {
        (Some(ratio(uptime, failures)), Some(ratio(downtime, failures)))
    } else {
        (None, None)
    };
    Ok(ReliabilityStats {
        scope,
        threshold,
        uptime_hours: uptime,
        downtime_hours: downtime,
        failures,
        mtbf_hours: mtbf,
        mdt_hours: mdt,
        availability,
    })
}

/// Key to aggregate per-unit series into report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    All,
    Unit,
    Isp,
    Technology,
    Tier,
    Region,
    /// UTC calendar year; each unit contributes one member series per year.
    Year,
}

impl GroupBy {
    pub fn label(&self) -> &'static str {
        match self {
            GroupBy::All => "all",
            GroupBy::Unit => "unit",
            GroupBy::Isp => "isp",
            GroupBy::Technology => "tech",
            GroupBy::Tier => "tier",
            GroupBy::Region => "region",
            GroupBy::Year => "year",
        }
    }
}

impl std::str::FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => Ok(GroupBy::All),
            "unit" => Ok(GroupBy::Unit),
            "isp" => Ok(GroupBy::Isp),
            "tech" | "technology" => Ok(GroupBy::Technology),
            "tier" => Ok(GroupBy::Tier),
            "region" => Ok(GroupBy::Region),
            "year" => Ok(GroupBy::Year),
            other => Err(Error::Config(format!("unknown group key `{other}`"))),
        }
    }
}

/// Aggregate every unit's series into one stats row per group value.
///
/// Groups with no observed hours are omitted. Units absent from `meta` are
/// skipped for metadata-keyed groupings.
pub fn aggregate_stats(
    series: &BTreeMap<UnitId, Vec<HourlyRecord>>,
    meta: &BTreeMap<UnitId, UnitMeta>,
    group_by: GroupBy,
    threshold: f64,
) -> Result<BTreeMap<String, ReliabilityStats>> {
    // Year grouping slices each unit's series; other keys use it whole.
    let mut groups: BTreeMap<String, Vec<&[HourlyRecord]>> = BTreeMap::new();
    let mut sliced: Vec<(String, Vec<HourlyRecord>)> = Vec::new();

    for (unit, recs) in series {
        if recs.is_empty() {
            continue;
        }
        match group_by {
            GroupBy::Year => {
                let mut by_year: BTreeMap<i32, Vec<HourlyRecord>> = BTreeMap::new();
                for r in recs {
                    by_year.entry(r.hour.year_utc()).or_default().push(r.clone());
                }
                for (year, sub) in by_year {
                    sliced.push((format!("year:{year}"), sub));
                }
            }
            GroupBy::All => groups.entry("all".into()).or_default().push(recs),
            GroupBy::Unit => {
                groups.entry(format!("unit:{unit}")).or_default().push(recs)
            }
            GroupBy::Isp | GroupBy::Technology | GroupBy::Tier | GroupBy::Region => {
                let Some(m) = meta.get(unit) else { continue };
                let value = match group_by {
                    GroupBy::Isp => m.isp.clone(),
                    GroupBy::Technology => m.technology.to_string(),
                    GroupBy::Tier => m.tier(),
                    GroupBy::Region => m.region.clone(),
                    _ => unreachable!(),
                };
                groups
                    .entry(format!("{}:{}", group_by.label(), value))
                    .or_default()
                    .push(recs);
            }
        }
    }
    for (label, sub) in &sliced {
        groups.entry(label.clone()).or_default().push(sub);
    }

    let rows: Vec<(String, ReliabilityStats)> = groups
        .into_par_iter()
        .map(|(label, members)| {
            group_stats(label.clone(), &members, threshold).map(|s| (label, s))
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().collect())
}

/// Restrict a series to hours whose local start falls inside `window`
/// (half-open, wall-clock hours). The default evening window is 19..23.
pub fn peak_hour_filter(
    series: &[HourlyRecord],
    meta: &UnitMeta,
    window: (u32, u32),
) -> Result<Vec<HourlyRecord>> {
    let zone = meta.zone()?;
    let (start, end) = window;
    let keep = |h: u32| {
        if start <= end {
            h >= start && h < end
        } else {
            h >= start || h < end
        }
    };
    Ok(series
        .iter()
        .filter(|r| keep(zone.local_hour(r.hour)))
        .cloned()
        .collect())
}

/// Convert raw probe RTTs into answered/lost outcomes. A probe with no reply
/// or with an RTT above `timeout_us` counts as lost.
pub fn probe_outcomes(rtts_us: &[Option<u64>], timeout_us: u64) -> Vec<bool> {
    rtts_us
        .iter()
        .map(|r| matches!(r, Some(rtt) if *rtt <= timeout_us))
        .collect()
}

/// Availability over fine-grained probes regrouped into fixed windows.
///
/// `outcomes[i]` is the i-th probe (true = answered) at `cadence_s` spacing.
/// A window fails when its loss fraction reaches `threshold`; the result is
/// the fraction of windows that did not fail. A trailing partial window is
/// evaluated over the probes it has.
pub fn windowed_availability(
    outcomes: &[bool],
    cadence_s: u32,
    window_s: u32,
    threshold: f64,
) -> Result<f64> {
    if cadence_s == 0 {
        return Err(Error::Config("probe cadence must be positive".into()));
    }
    if window_s < cadence_s {
        return Err(Error::WindowTooSmall { window_s, cadence_s });
    }
    if outcomes.is_empty() {
        return Err(Error::EmptyScope("no probes".into()));
    }
    let per_window = (window_s / cadence_s) as usize;
    let mut ok = 0usize;
    let mut windows = 0usize;
    for chunk in outcomes.chunks(per_window) {
        let lost = chunk.iter().filter(|a| !**a).count();
        let loss = lost as f64 / chunk.len() as f64;
        windows += 1;
        if loss < threshold {
            ok += 1;
        }
    }
    Ok(ok as f64 / windows as f64)
}

/// One point of an empirical CDF: fraction of hours with loss <= `loss`.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfPoint {
    pub loss: f64,
    pub cum_fraction: f64,
}

/// Empirical distribution of hourly loss rates plus tail fractions at the
/// configured thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCdf {
    pub points: Vec<CdfPoint>,
    /// (threshold, fraction of hours with loss >= threshold).
    pub exceedance: Vec<(f64, f64)>,
    pub hours: u64,
}

pub fn loss_cdf(losses: &[f64], thresholds: &[f64]) -> Result<LossCdf> {
    if losses.is_empty() {
        return Err(Error::EmptyScope("no hours for CDF".into()));
    }
    let mut sorted: Vec<f64> = losses.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("loss rates are finite"));
    let n = sorted.len();
    let mut points = Vec::new();
    let mut i = 0;
    while i < n {
        let v = sorted[i];
        let mut j = i + 1;
        while j < n && sorted[j] == v {
            j += 1;
        }
        points.push(CdfPoint { loss: v, cum_fraction: j as f64 / n as f64 });
        i = j;
    }
    let exceedance = thresholds
        .iter()
        .map(|t| {
            let at_or_above = sorted.iter().filter(|l| **l >= *t).count();
            (*t, at_or_above as f64 / n as f64)
        })
        .collect();
    Ok(LossCdf { points, exceedance, hours: n as u64 })
}

/// How far outbound probes got during a connectivity failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Reachability {
    /// Only the home gateway answered: the access link itself was down.
    ReachedLanGateway,
    /// Probes died inside the provider's network.
    ReachedProviderNetwork,
    /// Probes escaped the provider, so the fault was further out.
    LeftProviderNetwork,
}

impl Reachability {
    pub fn as_str(&self) -> &'static str {
        match self {
            Reachability::ReachedLanGateway => "reached-lan-gateway",
            Reachability::ReachedProviderNetwork => "reached-provider-network",
            Reachability::LeftProviderNetwork => "left-provider-network",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceHop {
    /// 1-based TTL of the hop.
    pub index: u32,
    pub responded: bool,
    pub address: Option<IpAddr>,
}

/// A traceroute launched while the destination was unreachable.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceObservation {
    pub unit_id: UnitId,
    pub destination_reached: bool,
    /// LAN-side gateway address when known; otherwise hop 1 is assumed to
    /// be the gateway.
    pub gateway_address: Option<IpAddr>,
    pub provider_prefixes: Vec<IpPrefix>,
    pub hops: Vec<TraceHop>,
}

/// Classify how far a failed traceroute reached.
pub fn classify_reachability(obs: &TraceObservation) -> Result<Reachability> {
    if obs.destination_reached {
        return Err(Error::NotAFailure(format!(
            "trace from {} reached its destination",
            obs.unit_id
        )));
    }
    let is_gateway = |hop: &TraceHop| match (hop.address, obs.gateway_address) {
        (Some(a), Some(g)) => a == g,
        (_, None) => hop.index == 1,
        _ => false,
    };
    let mut saw_provider = false;
    for hop in obs.hops.iter().filter(|h| h.responded) {
        if is_gateway(hop) {
            continue;
        }
        let Some(addr) = hop.address else { continue };
        if obs.provider_prefixes.iter().any(|p| p.contains(addr)) {
            saw_provider = true;
        } else {
            return Ok(Reachability::LeftProviderNetwork);
        }
    }
    if saw_provider {
        Ok(Reachability::ReachedProviderNetwork)
    } else {
        Ok(Reachability::ReachedLanGateway)
    }
}
