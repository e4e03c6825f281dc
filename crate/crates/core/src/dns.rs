//! Resolver availability from hourly DNS probe counters.
//!
//! A resolver is down in an hour when it failed a strict majority of its
//! queries. Hours are excluded outright when the access link itself was
//! lossy (the failure would be the line's fault, not the resolver's) or
//! when either resolver went unqueried, since one-sided data cannot
//! distinguish "one failed" from "two failed".

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::DnsCounters;
use crate::model::{HourStamp, UnitId};

/// Link loss rate above which an hour is not trusted for DNS analysis.
pub const DEFAULT_LINK_LOSS_EXCLUDE: f64 = 0.01;

/// One unit-hour of DNS probe data joined with the link's loss rate.
#[derive(Debug, Clone, PartialEq)]
pub struct DnsHour {
    pub unit_id: UnitId,
    pub hour: HourStamp,
    /// (queries, failures) for the ISP's primary resolver, when observed.
    pub primary: Option<(u64, u64)>,
    pub secondary: Option<(u64, u64)>,
    /// Hourly loss rate of the access link; `None` when unmeasured.
    pub link_loss_rate: Option<f64>,
}

impl DnsHour {
    pub fn from_counters(
        unit_id: UnitId,
        hour: HourStamp,
        counters: DnsCounters,
        link_loss_rate: Option<f64>,
    ) -> Self {
        DnsHour {
            unit_id,
            hour,
            primary: counters.primary,
            secondary: counters.secondary,
            link_loss_rate,
        }
    }
}

/// Why an hour was left out of the resolver availability estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExcludeReason {
    /// The access link lost too many probes this hour.
    LossyLink,
    /// The link's loss rate was not measured this hour.
    NoLinkData,
    /// A resolver saw zero queries this hour.
    NoQueries,
}

/// Hour classification. The three counted states are mutually exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DnsHourStatus {
    ZeroFailed,
    OneFailed,
    TwoFailed,
    Excluded(ExcludeReason),
}

/// Classify one hour. `link_loss_exclude` is the loss rate above which the
/// hour is discarded (strictly greater; the conventional cutoff is 1%).
pub fn dns_hour_status(hour: &DnsHour, link_loss_exclude: f64) -> DnsHourStatus {
    match hour.link_loss_rate {
        None => return DnsHourStatus::Excluded(ExcludeReason::NoLinkData),
        Some(loss) if loss > link_loss_exclude => {
            return DnsHourStatus::Excluded(ExcludeReason::LossyLink)
        }
        Some(_) => {}
    }
    let down = |server: Option<(u64, u64)>| match server {
        Some((q, f)) if q > 0 => Some(2 * f > q),
        _ => None,
    };
    match (down(hour.primary), down(hour.secondary)) {
        (Some(p), Some(s)) => match (p, s) {
            (false, false) => DnsHourStatus::ZeroFailed,
            (true, true) => DnsHourStatus::TwoFailed,
            _ => DnsHourStatus::OneFailed,
        },
        _ => DnsHourStatus::Excluded(ExcludeReason::NoQueries),
    }
}

/// Estimated probabilities of single and simultaneous resolver failure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DnsProbs {
    pub scope: String,
    /// P(exactly one resolver down) over non-excluded hours.
    pub p_one: f64,
    /// P(both resolvers down) over non-excluded hours.
    pub p_two: f64,
    pub hours_used: u64,
    pub hours_excluded: u64,
}

/// Estimate failure probabilities from classified hours.
///
/// Excluded hours contribute nothing to either numerator or denominator.
/// All hours excluded is an error: the estimate would be 0/0.
pub fn dns_failure_probabilities(
    scope: impl Into<String>,
    statuses: &[DnsHourStatus],
) -> Result<DnsProbs> {
    let scope = scope.into();
    let mut one = 0u64;
    let mut two = 0u64;
    let mut used = 0u64;
    let mut excluded = 0u64;
    for s in statuses {
        match s {
            DnsHourStatus::ZeroFailed => used += 1,
            DnsHourStatus::OneFailed => {
                used += 1;
                one += 1;
            }
            DnsHourStatus::TwoFailed => {
                used += 1;
                two += 1;
            }
            DnsHourStatus::Excluded(_) => excluded += 1,
        }
    }
    if used == 0 {
        return Err(Error::NoData(format!("all {excluded} DNS hours excluded in {scope}")));
    }
    Ok(DnsProbs {
        scope,
        p_one: one as f64 / used as f64,
        p_two: two as f64 / used as f64,
        hours_used: used,
        hours_excluded: excluded,
    })
}

/// Group classified hours by ISP and estimate per-ISP probabilities.
/// Scopes where every hour was excluded are omitted.
pub fn dns_probs_by_isp(
    hours: &[(String, DnsHourStatus)],
) -> Result<BTreeMap<String, DnsProbs>> {
    let mut by_isp: BTreeMap<&str, Vec<DnsHourStatus>> = BTreeMap::new();
    for (isp, status) in hours {
        by_isp.entry(isp).or_default().push(*status);
    }
    if by_isp.is_empty() {
        return Err(Error::NoData("no DNS hours at all".into()));
    }
    let mut out = BTreeMap::new();
    for (isp, statuses) in by_isp {
        match dns_failure_probabilities(isp, &statuses) {
            Ok(p) => {
                out.insert(isp.to_string(), p);
            }
            Err(Error::NoData(_)) => {
                log::warn!("dns: every hour excluded for {isp}; scope omitted");
            }
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(Error::NoData("every DNS scope was fully excluded".into()));
    }
    Ok(out)
}
