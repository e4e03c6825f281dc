//! Natural experiments on bandwidth demand across reliability cohorts.
//!
//! Units are binned by how lossy their line is, treatment units are matched
//! one-to-one with control units on region and subscribed capacity, and the
//! hypothesis "worse lines see lower demand" is scored per pair. Deviation
//! from a fair coin over the matched pairs is tested with an exact one-
//! tailed binomial test; no normal approximation is involved.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::model::{HourlyRecord, UnitId, UnitMeta};
use crate::reliability::peak_hour_filter;

/// Significance level for the binomial test.
pub const ALPHA: f64 = 0.05;
/// Deviations from 50% smaller than this are noise, whatever their p-value.
pub const PRACTICAL_MARGIN: f64 = 0.02;
/// Relative capacity difference two matched units may have.
pub const DEFAULT_CAPACITY_TOLERANCE: f64 = 0.1;
/// Hourly loss above this counts as a high-loss hour for the frequency metric.
pub const DEFAULT_HIGH_LOSS_THRESHOLD: f64 = 0.05;
/// Largest n the exact binomial tail accepts.
pub const MAX_BINOM_N: u64 = 1_000_000;

/// One cohort bin over a loss-derived metric, half-open `(lo, hi]`.
/// The bottom bin additionally contains its lower endpoint so that a
/// zero-loss unit belongs to the lowest bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBin {
    pub label: String,
    pub lo: f64,
    /// Upper bound; `None` means unbounded.
    pub hi: Option<f64>,
}

impl LossBin {
    pub fn new(label: &str, lo: f64, hi: Option<f64>) -> Self {
        LossBin { label: label.into(), lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = x > self.lo || (x == self.lo && self.lo == 0.0);
        let below = self.hi.map_or(true, |h| x <= h);
        above && below
    }
}

/// Which loss summary assigns units to bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CohortMetric {
    /// Lifetime mean of hourly loss rates, every observed hour weighted
    /// equally.
    AvgLoss,
    /// Fraction of observed hours whose loss exceeds the high-loss cutoff.
    HighLossFraction,
}

/// Bins for the mean-loss experiment. The gap between the control bin and
/// the first treatment bin is deliberate: near-control units are neither.
pub fn default_avg_loss_bins() -> Vec<LossBin> {
    vec![
        LossBin::new("[0,0.0625%]", 0.0, Some(0.000625)),
        LossBin::new("(0.5%,1%]", 0.005, Some(0.01)),
        LossBin::new("(1%,2%]", 0.01, Some(0.02)),
        LossBin::new("(2%,inf)", 0.02, None),
    ]
}

/// Bins for the high-loss-hour frequency experiment.
pub fn default_high_loss_fraction_bins() -> Vec<LossBin> {
    vec![
        LossBin::new("[0,0.1%]", 0.0, Some(0.001)),
        LossBin::new("(0.1%,0.5%]", 0.001, Some(0.005)),
        LossBin::new("(0.5%,1%]", 0.005, Some(0.01)),
        LossBin::new("(1%,10%]", 0.01, Some(0.1)),
        LossBin::new("(10%,inf)", 0.1, None),
    ]
}

/// Lifetime mean hourly loss of a series.
pub fn mean_loss(series: &[HourlyRecord]) -> Option<f64> {
    if series.is_empty() {
        return None;
    }
    Some(series.iter().map(|r| r.loss_rate).sum::<f64>() / series.len() as f64)
}

/// Fraction of observed hours with loss strictly above `threshold`.
pub fn high_loss_fraction(series: &[HourlyRecord], threshold: f64) -> Option<f64> {
    if series.is_empty() {
        return None;
    }
    let high = series.iter().filter(|r| r.loss_rate > threshold).count();
    Some(high as f64 / series.len() as f64)
}

/// Assign each unit to the bin containing its metric value. Units whose
/// value falls in no bin (or with no observed hours) are simply absent.
pub fn assign_cohorts(
    series: &BTreeMap<UnitId, Vec<HourlyRecord>>,
    metric: CohortMetric,
    bins: &[LossBin],
    high_loss_threshold: f64,
) -> BTreeMap<UnitId, usize> {
    let mut out = BTreeMap::new();
    for (unit, recs) in series {
        let value = match metric {
            CohortMetric::AvgLoss => mean_loss(recs),
            CohortMetric::HighLossFraction => high_loss_fraction(recs, high_loss_threshold),
        };
        let Some(value) = value else { continue };
        if let Some(idx) = bins.iter().position(|b| b.contains(value)) {
            out.insert(unit.clone(), idx);
        }
    }
    out
}

/// A treatment unit matched with a control unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub treatment: UnitId,
    pub control: UnitId,
}

fn within_tolerance(a: u64, b: u64, tolerance: f64) -> bool {
    let (a, b) = (a as f64, b as f64);
    let denom = a.max(b);
    denom > 0.0 && ((a - b).abs() / denom) <= tolerance
}

/// Greedy one-to-one matching of treatment units to control units.
///
/// A control is eligible when it shares the treatment's region and both
/// capacities are within the relative tolerance. Treatments are processed
/// in descending download capacity and take the eligible control nearest in
/// download capacity; ties break on unit id, so matching is deterministic.
pub fn match_pairs(
    treatment: &[&UnitMeta],
    control: &[&UnitMeta],
    tolerance: f64,
) -> Result<Vec<MatchedPair>> {
    let mut order: Vec<&UnitMeta> = treatment.to_vec();
    order.sort_by(|a, b| {
        b.down_kbps.cmp(&a.down_kbps).then_with(|| a.unit_id.cmp(&b.unit_id))
    });
    let mut taken: BTreeSet<&UnitId> = BTreeSet::new();
    let mut pairs = Vec::new();
    for t in order {
        let best = control
            .iter()
            .filter(|c| !taken.contains(&c.unit_id))
            .filter(|c| c.region == t.region)
            .filter(|c| {
                within_tolerance(c.down_kbps, t.down_kbps, tolerance)
                    && within_tolerance(c.up_kbps, t.up_kbps, tolerance)
            })
            .min_by(|a, b| {
                let da = a.down_kbps.abs_diff(t.down_kbps);
                let db = b.down_kbps.abs_diff(t.down_kbps);
                da.cmp(&db).then_with(|| a.unit_id.cmp(&b.unit_id))
            });
        if let Some(c) = best {
            taken.insert(&c.unit_id);
            pairs.push(MatchedPair {
                treatment: t.unit_id.clone(),
                control: c.unit_id.clone(),
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoMatches("no control unit matches any treatment unit".into()));
    }
    Ok(pairs)
}

/// Exact one-tailed binomial tail P(X >= k) for X ~ Binomial(n, 1/2).
///
/// Small n sums the integer binomial coefficients outright; larger n sums
/// the same terms through a log-space recurrence. Either way every term of
/// the tail is summed, never approximated by a normal curve.
pub fn binom_one_tailed(n: u64, k: u64) -> Result<f64> {
    if k > n {
        return Err(Error::Config(format!("binomial test needs k <= n, got k={k} n={n}")));
    }
    if n > MAX_BINOM_N {
        return Err(Error::Config(format!("binomial test capped at n={MAX_BINOM_N}, got {n}")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if n <= 110 {
        // Sum of C(n,i) over the tail fits u128 comfortably for n <= 110.
        let mut c: u128 = 1; // C(n,0)
        let mut tail: u128 = if k == 0 { 1 } else { 0 };
        for i in 0..n {
            c = c * (n - i) as u128 / (i + 1) as u128;
            if i + 1 >= k {
                tail += c;
            }
        }
        return Ok(tail as f64 / 2f64.powi(n as i32));
    }
    // P(X >= k) = 1 - P(X >= n-k+1) by symmetry; sum the shorter tail.
    if 2 * k <= n {
        return Ok(1.0 - binom_one_tailed(n, n - k + 1)?);
    }
    // ln C(n,k) by Kahan-summed logs, then the term recurrence
    // T(i+1) = T(i) * (n-i)/(i+1) until terms stop mattering.
    let mut ln_c = 0.0f64;
    let mut comp = 0.0f64;
    for i in 1..=(n - k).min(k) {
        let x = ((n - i + 1) as f64 / i as f64).ln();
        let y = x - comp;
        let t = ln_c + y;
        comp = (t - ln_c) - y;
        ln_c = t;
    }
    let ln_first = ln_c - n as f64 * std::f64::consts::LN_2;
    let mut scaled_sum = 1.0f64;
    let mut ratio = 1.0f64;
    let mut i = k;
    while i < n {
        ratio *= (n - i) as f64 / (i + 1) as f64;
        scaled_sum += ratio;
        if ratio < scaled_sum * 1e-20 {
            break;
        }
        i += 1;
    }
    Ok((ln_first + scaled_sum.ln()).exp())
}

/// Which hours feed the demand average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemandScope {
    AllHours,
    /// Hours with zero measured loss, so demand is not throttled by the
    /// very impairment under study.
    ZeroLossHours,
    /// Zero-loss hours during the local evening peak.
    PeakZeroLossHours,
}

/// Outcome of one treatment-vs-control comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub control: String,
    pub treatment: String,
    /// Pairs that produced a verdict.
    pub pairs: u64,
    /// Matched pairs discarded because a side had no hours in scope.
    pub dropped_pairs: u64,
    /// Pairs where the treatment unit demanded less than its control.
    pub h_holds: u64,
    pub h_holds_pct: f64,
    pub p_value: f64,
    pub significant: bool,
    pub practically_important: bool,
}

fn mean_demand(
    series: &[HourlyRecord],
    meta: Option<&UnitMeta>,
    scope: DemandScope,
    peak_window: (u32, u32),
) -> Option<f64> {
    let peak_filtered;
    let hours: &[HourlyRecord] = match scope {
        DemandScope::AllHours | DemandScope::ZeroLossHours => series,
        DemandScope::PeakZeroLossHours => {
            let meta = meta?;
            peak_filtered = peak_hour_filter(series, meta, peak_window).ok()?;
            &peak_filtered
        }
    };
    let selected: Vec<f64> = hours
        .iter()
        .filter(|r| match scope {
            DemandScope::AllHours => true,
            DemandScope::ZeroLossHours | DemandScope::PeakZeroLossHours => r.loss_rate == 0.0,
        })
        .map(|r| (r.bytes_down + r.bytes_up) as f64)
        .collect();
    if selected.is_empty() {
        None
    } else {
        Some(selected.iter().sum::<f64>() / selected.len() as f64)
    }
}

/// Score the hypothesis "treatment units demand less than their matched
/// controls" over a set of pairs.
///
/// Pairs where either side has no hours in scope are dropped and counted.
/// The p-value is the exact probability of at least `h_holds` successes in
/// `pairs` fair coin flips.
pub fn evaluate_hypothesis(
    control_label: &str,
    treatment_label: &str,
    pairs: &[MatchedPair],
    data: &Dataset,
    scope: DemandScope,
    peak_window: (u32, u32),
) -> Result<ExperimentResult> {
    let mut evaluated = 0u64;
    let mut holds = 0u64;
    let mut dropped = 0u64;
    for pair in pairs {
        let t = mean_demand(
            data.series_of(&pair.treatment),
            data.meta.get(&pair.treatment),
            scope,
            peak_window,
        );
        let c = mean_demand(
            data.series_of(&pair.control),
            data.meta.get(&pair.control),
            scope,
            peak_window,
        );
        match (t, c) {
            (Some(t), Some(c)) => {
                evaluated += 1;
                if t < c {
                    holds += 1;
                }
            }
            _ => dropped += 1,
        }
    }
    if evaluated == 0 {
        return Err(Error::NoData(format!(
            "all {dropped} pairs of {treatment_label} vs {control_label} had empty scopes"
        )));
    }
    let p_value = binom_one_tailed(evaluated, holds)?;
    let pct = holds as f64 / evaluated as f64;
    Ok(ExperimentResult {
        control: control_label.into(),
        treatment: treatment_label.into(),
        pairs: evaluated,
        dropped_pairs: dropped,
        h_holds: holds,
        h_holds_pct: pct,
        p_value,
        significant: p_value < ALPHA,
        practically_important: (pct - 0.5).abs() > PRACTICAL_MARGIN,
    })
}

/// Full experiment configuration, loadable from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub metric: CohortMetric,
    /// Cohort bins; defaults depend on the metric.
    pub bins: Option<Vec<LossBin>>,
    /// (control label, treatment label) comparisons to run; defaults depend
    /// on the metric.
    pub comparisons: Option<Vec<(String, String)>>,
    /// Demand scope; defaults to all hours for the mean-loss metric and to
    /// peak zero-loss hours for the frequency metric.
    pub scope: Option<DemandScope>,
    pub capacity_tolerance: f64,
    pub high_loss_threshold: f64,
    pub peak_window: (u32, u32),
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            metric: CohortMetric::AvgLoss,
            bins: None,
            comparisons: None,
            scope: None,
            capacity_tolerance: DEFAULT_CAPACITY_TOLERANCE,
            high_loss_threshold: DEFAULT_HIGH_LOSS_THRESHOLD,
            peak_window: (19, 23),
        }
    }
}

impl ExperimentConfig {
    pub fn effective_bins(&self) -> Vec<LossBin> {
        self.bins.clone().unwrap_or_else(|| match self.metric {
            CohortMetric::AvgLoss => default_avg_loss_bins(),
            CohortMetric::HighLossFraction => default_high_loss_fraction_bins(),
        })
    }

    pub fn effective_scope(&self) -> DemandScope {
        self.scope.unwrap_or(match self.metric {
            CohortMetric::AvgLoss => DemandScope::AllHours,
            CohortMetric::HighLossFraction => DemandScope::PeakZeroLossHours,
        })
    }

    /// Default comparisons: for the mean-loss metric, the control bin
    /// against each treatment bin; for the frequency metric, each of the
    /// two lossiest bins against every strictly lower bin.
    pub fn effective_comparisons(&self, bins: &[LossBin]) -> Vec<(String, String)> {
        if let Some(c) = &self.comparisons {
            return c.clone();
        }
        match self.metric {
            CohortMetric::AvgLoss => bins
                .iter()
                .skip(1)
                .map(|t| (bins[0].label.clone(), t.label.clone()))
                .collect(),
            CohortMetric::HighLossFraction => {
                let mut out = Vec::new();
                let first_treatment = bins.len().saturating_sub(2);
                for (ti, t) in bins.iter().enumerate().skip(first_treatment) {
                    for c in bins.iter().take(ti) {
                        out.push((c.label.clone(), t.label.clone()));
                    }
                }
                out
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.capacity_tolerance) {
            return Err(Error::Config("capacity_tolerance must be in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.high_loss_threshold) {
            return Err(Error::Config("high_loss_threshold must be in [0,1]".into()));
        }
        let bins = self.effective_bins();
        if bins.len() < 2 {
            return Err(Error::Config("need at least two bins".into()));
        }
        for b in &bins {
            if let Some(hi) = b.hi {
                if hi <= b.lo {
                    return Err(Error::Config(format!("bin {} has lo >= hi", b.label)));
                }
            }
        }
        for (i, a) in bins.iter().enumerate() {
            for b in bins.iter().skip(i + 1) {
                let a_hi = a.hi.unwrap_or(f64::INFINITY);
                let b_hi = b.hi.unwrap_or(f64::INFINITY);
                if a.lo < b_hi && b.lo < a_hi {
                    return Err(Error::Config(format!(
                        "bins {} and {} overlap",
                        a.label, b.label
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A comparison that could not be evaluated, kept in the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedComparison {
    pub control: String,
    pub treatment: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub metric: CohortMetric,
    pub scope: DemandScope,
    /// Matching is greedy one-to-one on region and capacity; pairs are
    /// unweighted in every aggregate.
    pub matching: String,
    pub bins: Vec<LossBin>,
    pub results: Vec<ExperimentResult>,
    pub skipped: Vec<SkippedComparison>,
}

/// Run every configured comparison over a dataset.
///
/// Comparisons that cannot be evaluated (empty cohorts, no matches, empty
/// scopes) are reported as skipped; the call only fails if nothing at all
/// could be evaluated.
pub fn run_experiment(data: &Dataset, config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let bins = config.effective_bins();
    let scope = config.effective_scope();
    let assignment = assign_cohorts(
        &data.series,
        config.metric,
        &bins,
        config.high_loss_threshold,
    );
    let mut by_bin: BTreeMap<usize, Vec<&UnitMeta>> = BTreeMap::new();
    for (unit, bin) in &assignment {
        if let Some(meta) = data.meta.get(unit) {
            by_bin.entry(*bin).or_default().push(meta);
        }
    }
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for (control_label, treatment_label) in config.effective_comparisons(&bins) {
        let find = |label: &str| bins.iter().position(|b| b.label == label);
        let (Some(ci), Some(ti)) = (find(&control_label), find(&treatment_label)) else {
            return Err(Error::Config(format!(
                "comparison ({control_label}, {treatment_label}) names an unknown bin"
            )));
        };
        let empty = Vec::new();
        let controls = by_bin.get(&ci).unwrap_or(&empty);
        let treatments = by_bin.get(&ti).unwrap_or(&empty);
        if controls.is_empty() || treatments.is_empty() {
            skipped.push(SkippedComparison {
                control: control_label,
                treatment: treatment_label,
                reason: "empty cohort".into(),
            });
            continue;
        }
        let pairs = match match_pairs(treatments, controls, config.capacity_tolerance) {
            Ok(p) => p,
            Err(Error::NoMatches(_)) => {
                skipped.push(SkippedComparison {
                    control: control_label,
                    treatment: treatment_label,
                    reason: "no matched pairs".into(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        match evaluate_hypothesis(
            &control_label,
            &treatment_label,
            &pairs,
            data,
            scope,
            config.peak_window,
        ) {
            Ok(r) => results.push(r),
            Err(Error::NoData(reason)) => skipped.push(SkippedComparison {
                control: control_label,
                treatment: treatment_label,
                reason,
            }),
            Err(e) => return Err(e),
        }
    }
    if results.is_empty() {
        return Err(Error::NoMatches("no comparison produced any matched pairs".into()));
    }
    Ok(ExperimentReport {
        metric: config.metric,
        scope,
        matching: "greedy one-to-one by region and capacity, pairs unweighted".into(),
        bins,
        results,
        skipped,
    })
}
