//! Simulated multihoming: the reliability a household would see if two
//! nearby lines were bonded behind an ideal failover.
//!
//! Pairs are drawn from units in the same census block group so that the
//! two lines share weather, power, and street-level infrastructure the way
//! a real dual-WAN deployment would. Combining takes the hour-by-hour
//! minimum loss over the pair's common hours, which models a failover that
//! always rides the better line.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{HourStamp, HourlyRecord, UnitId, UnitMeta};
use crate::reliability::{group_stats, ReliabilityStats};

/// Fewer common hours than this and a pair says nothing about reliability.
pub const DEFAULT_MIN_OVERLAP_HOURS: u64 = 24;

/// Two units that could plausibly serve one household.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimPair {
    pub a: UnitId,
    pub b: UnitId,
    pub same_isp: bool,
    pub overlap_hours: u64,
}

impl SimPair {
    pub fn label(&self) -> UnitId {
        UnitId(format!("{}+{}", self.a, self.b))
    }
}

fn overlap_count(a: &[HourlyRecord], b: &[HourlyRecord]) -> u64 {
    let hours: BTreeSet<HourStamp> = a.iter().map(|r| r.hour).collect();
    b.iter().filter(|r| hours.contains(&r.hour)).count() as u64
}

/// All unordered pairs of distinct units sharing a non-empty block group
/// with at least `min_overlap` common observed hours.
pub fn build_pairs(
    meta: &BTreeMap<UnitId, UnitMeta>,
    series: &BTreeMap<UnitId, Vec<HourlyRecord>>,
    min_overlap: u64,
) -> Vec<SimPair> {
    let mut by_block: BTreeMap<&str, Vec<&UnitMeta>> = BTreeMap::new();
    for m in meta.values() {
        if !m.block_group.is_empty() {
            by_block.entry(m.block_group.as_str()).or_default().push(m);
        }
    }
    let mut pairs = Vec::new();
    for members in by_block.values() {
        for (i, a) in members.iter().enumerate() {
            for b in &members[i + 1..] {
                let (Some(sa), Some(sb)) = (series.get(&a.unit_id), series.get(&b.unit_id))
                else {
                    continue;
                };
                let overlap = overlap_count(sa, sb);
                if overlap >= min_overlap.max(1) {
                    pairs.push(SimPair {
                        a: a.unit_id.clone(),
                        b: b.unit_id.clone(),
                        same_isp: a.isp == b.isp,
                        overlap_hours: overlap,
                    });
                }
            }
        }
    }
    pairs
}

/// Hour-by-hour minimum loss over the common hours of two series.
///
/// Commutative, and combining a series with itself returns it unchanged.
/// Over the overlap window the result is never less available than either
/// input, whatever the threshold.
pub fn combine(a: &[HourlyRecord], b: &[HourlyRecord], label: &UnitId) -> Vec<HourlyRecord> {
    let b_loss: BTreeMap<HourStamp, f64> = b.iter().map(|r| (r.hour, r.loss_rate)).collect();
    a.iter()
        .filter_map(|r| {
            b_loss.get(&r.hour).map(|lb| {
                HourlyRecord::loss_only(label.clone(), r.hour, r.loss_rate.min(*lb))
            })
        })
        .collect()
}

/// Restrict a series to the hours both series observed. Pair dominance is
/// only meaningful over this window.
pub fn restrict_to_overlap(series: &[HourlyRecord], other: &[HourlyRecord]) -> Vec<HourlyRecord> {
    let hours: BTreeSet<HourStamp> = other.iter().map(|r| r.hour).collect();
    series.iter().filter(|r| hours.contains(&r.hour)).cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultihomeCohort {
    NotMultihomed,
    SameIsp,
    DifferentIsp,
}

impl MultihomeCohort {
    pub fn as_str(&self) -> &'static str {
        match self {
            MultihomeCohort::NotMultihomed => "not-multihomed",
            MultihomeCohort::SameIsp => "same-isp",
            MultihomeCohort::DifferentIsp => "different-isp",
        }
    }
}

/// Reliability of one cohort at one failure threshold.
#[derive(Debug, Clone)]
pub struct MultihomeRow {
    pub cohort: MultihomeCohort,
    /// Single units for the baseline cohort, pairs otherwise.
    pub members: u64,
    pub stats: ReliabilityStats,
}

/// Compare single-line reliability against simulated same-ISP and
/// cross-ISP pairs. Availability is the unweighted mean over members;
/// MTBF and MDT pool hours and failures across the cohort. A cohort with
/// no members is omitted rather than reported as zeros.
pub fn sim_report(
    meta: &BTreeMap<UnitId, UnitMeta>,
    series: &BTreeMap<UnitId, Vec<HourlyRecord>>,
    min_overlap: u64,
    threshold: f64,
) -> Result<Vec<MultihomeRow>> {
    let singles: Vec<&[HourlyRecord]> = series
        .values()
        .filter(|s| !s.is_empty())
        .map(Vec::as_slice)
        .collect();
    if singles.is_empty() {
        return Err(Error::EmptyScope("no units with observed hours".into()));
    }
    let mut rows = vec![MultihomeRow {
        cohort: MultihomeCohort::NotMultihomed,
        members: singles.len() as u64,
        stats: group_stats(MultihomeCohort::NotMultihomed.as_str(), &singles, threshold)?,
    }];
    let pairs = build_pairs(meta, series, min_overlap);
    for cohort in [MultihomeCohort::SameIsp, MultihomeCohort::DifferentIsp] {
        let combined: Vec<Vec<HourlyRecord>> = pairs
            .iter()
            .filter(|p| p.same_isp == (cohort == MultihomeCohort::SameIsp))
            .map(|p| combine(&series[&p.a], &series[&p.b], &p.label()))
            .collect();
        if combined.is_empty() {
            log::info!("multihome: no {} pairs, cohort omitted", cohort.as_str());
            continue;
        }
        let slices: Vec<&[HourlyRecord]> = combined.iter().map(Vec::as_slice).collect();
        rows.push(MultihomeRow {
            cohort,
            members: slices.len() as u64,
            stats: group_stats(cohort.as_str(), &slices, threshold)?,
        });
    }
    Ok(rows)
}
