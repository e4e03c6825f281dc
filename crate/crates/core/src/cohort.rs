//! Cross-sectional statistics: correlation of regional indicators with
//! reliability, and information gain of unit attributes over availability.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{UnitId, UnitMeta};

/// Regional socioeconomic indicators joined against reliability by region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionIndicator {
    pub region: String,
    pub urban_fraction: f64,
    pub pop_density: f64,
    pub gsp_per_capita: f64,
}

/// Read indicators.csv (region,urban_fraction,pop_density,gsp_per_capita).
pub fn parse_indicators<R: Read>(file: &str, input: R) -> Result<Vec<RegionIndicator>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Malformed { file: file.into(), line: 1, msg: e.to_string() })?
        .clone();
    for col in ["region", "urban_fraction", "pop_density", "gsp_per_capita"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::MissingColumn { file: file.into(), column: col.into() });
        }
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row: RegionIndicator =
            rec.deserialize(Some(&headers)).map_err(|e| Error::Malformed {
                file: file.into(),
                line,
                msg: e.to_string(),
            })?;
        if !(0.0..=1.0).contains(&row.urban_fraction) {
            return Err(Error::Malformed {
                file: file.into(),
                line,
                msg: format!("urban_fraction {} outside [0,1]", row.urban_fraction),
            });
        }
        out.push(row);
    }
    if out.is_empty() {
        return Err(Error::NoData(format!("{file}: no indicator rows")));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationResult {
    pub x_name: String,
    pub y_name: String,
    pub r: f64,
    pub n: usize,
}

/// Sample Pearson correlation coefficient.
///
/// Fails on mismatched lengths, fewer than two points, or zero variance in
/// either variable (the coefficient is undefined there, not zero).
pub fn pearson(
    x_name: impl Into<String>,
    x: &[f64],
    y_name: impl Into<String>,
    y: &[f64],
) -> Result<CorrelationResult> {
    if x.len() != y.len() {
        return Err(Error::Config(format!(
            "correlation inputs differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::NoData("correlation needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance in correlation input".into()));
    }
    Ok(CorrelationResult {
        x_name: x_name.into(),
        y_name: y_name.into(),
        r: sxy / (sxx * syy).sqrt(),
        n: x.len(),
    })
}

fn entropy_bits(counts: &BTreeMap<&str, u64>) -> f64 {
    let total: u64 = counts.values().sum();
    if total == 0 {
        return 0.0;
    }
    let mut h = 0.0;
    for &c in counts.values() {
        if c > 0 {
            let p = c as f64 / total as f64;
            h -= p * p.log2();
        }
    }
    h
}

/// Shannon information gain of an attribute over a discretized target,
/// in bits: H(target) - sum_v p(v) H(target | attribute = v).
///
/// A single target class yields zero gain; that is a valid answer, not an
/// error. The result is clamped at zero against floating point noise.
pub fn information_gain(pairs: &[(String, String)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::NoData("no records for information gain".into()));
    }
    let mut target_counts: BTreeMap<&str, u64> = BTreeMap::new();
    let mut by_value: BTreeMap<&str, BTreeMap<&str, u64>> = BTreeMap::new();
    for (value, target) in pairs {
        *target_counts.entry(target).or_default() += 1;
        *by_value.entry(value).or_default().entry(target).or_default() += 1;
    }
    let total = pairs.len() as f64;
    let h_target = entropy_bits(&target_counts);
    let mut h_cond = 0.0;
    for counts in by_value.values() {
        let weight = counts.values().sum::<u64>() as f64 / total;
        h_cond += weight * entropy_bits(counts);
    }
    Ok((h_target - h_cond).max(0.0))
}

/// Unit attribute whose predictive power over availability is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum UnitAttribute {
    Isp,
    Technology,
    CapacityBin,
    Region,
}

impl UnitAttribute {
    pub const ALL: [UnitAttribute; 4] = [
        UnitAttribute::CapacityBin,
        UnitAttribute::Isp,
        UnitAttribute::Region,
        UnitAttribute::Technology,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            UnitAttribute::Isp => "isp",
            UnitAttribute::Technology => "technology",
            UnitAttribute::CapacityBin => "capacity-bin",
            UnitAttribute::Region => "region",
        }
    }

    pub fn value(&self, meta: &UnitMeta) -> String {
        match self {
            UnitAttribute::Isp => meta.isp.clone(),
            UnitAttribute::Technology => meta.technology.to_string(),
            UnitAttribute::CapacityBin => capacity_bin(meta.down_kbps),
            UnitAttribute::Region => meta.region.clone(),
        }
    }
}

/// Download capacity bucketed into powers of two of Mbit/s, so tiers with
/// marketing-grade differences land in the same bucket.
pub fn capacity_bin(down_kbps: u64) -> String {
    let mbps = (down_kbps as f64 / 1000.0).max(f64::MIN_POSITIVE);
    let exp = mbps.log2().floor() as i32;
    format!("[{},{}) Mbps", pow2(exp), pow2(exp + 1))
}

fn pow2(exp: i32) -> String {
    if exp >= 0 {
        format!("{}", 1u64 << exp.min(63))
    } else {
        format!("1/{}", 1u64 << ((-exp) as u64).min(63))
    }
}

/// Discretize availabilities at the given cut points (ascending). Values at
/// or below a cut fall in the lower bin. With no cuts supplied, empirical
/// quartiles are used.
pub fn discretize_availability(
    values: &BTreeMap<UnitId, f64>,
    cuts: Option<&[f64]>,
) -> BTreeMap<UnitId, String> {
    let cuts: Vec<f64> = match cuts {
        Some(c) => c.to_vec(),
        None => {
            let mut sorted: Vec<f64> = values.values().copied().collect();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("availability is finite"));
            [0.25, 0.5, 0.75]
                .iter()
                .map(|q| sorted[((sorted.len() as f64 * q).ceil() as usize).saturating_sub(1)])
                .collect()
        }
    };
    values
        .iter()
        .map(|(id, v)| {
            let bin = cuts.iter().position(|c| v <= c).unwrap_or(cuts.len());
            (id.clone(), format!("q{}", bin + 1))
        })
        .collect()
}

/// Information gain of every attribute over availability bins, sorted by
/// descending gain with alphabetical tie-break.
pub fn rank_attributes(
    meta: &BTreeMap<UnitId, UnitMeta>,
    availability: &BTreeMap<UnitId, f64>,
    cuts: Option<&[f64]>,
) -> Result<Vec<(String, f64)>> {
    let targets = discretize_availability(availability, cuts);
    let mut rows = Vec::new();
    for attr in UnitAttribute::ALL {
        let pairs: Vec<(String, String)> = targets
            .iter()
            .filter_map(|(id, bin)| {
                meta.get(id).map(|m| (attr.value(m), bin.clone()))
            })
            .collect();
        if pairs.is_empty() {
            return Err(Error::NoData("no units with both metadata and availability".into()));
        }
        rows.push((attr.name().to_string(), information_gain(&pairs)?));
    }
    rows.sort_by(|a, b| {
        b.1.partial_cmp(&a.1).expect("gain is finite").then_with(|| a.0.cmp(&b.0))
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Technology;

    #[test]
    fn indicators_parse_and_validate() {
        let csv = "region,urban_fraction,pop_density,gsp_per_capita\n\
                   IL,0.88,231.1,54000\n\
                   OH,0.78,282.3,48000\n";
        let rows = parse_indicators("indicators.csv", csv.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].region, "IL");
        assert_eq!(rows[1].pop_density, 282.3);
        let bad = "region,urban_fraction,pop_density,gsp_per_capita\nIL,1.5,1,1\n";
        assert!(matches!(
            parse_indicators("indicators.csv", bad.as_bytes()),
            Err(Error::Malformed { .. })
        ));
        let missing = "region,urban_fraction\nIL,0.5\n";
        assert!(matches!(
            parse_indicators("indicators.csv", missing.as_bytes()),
            Err(Error::MissingColumn { .. })
        ));
    }

    #[test]
    fn pearson_known_value() {
        let r = pearson("x", &[1.0, 2.0, 3.0, 4.0], "y", &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r.r - 0.6).abs() < 1e-12);
        assert_eq!(r.n, 4);
    }

    #[test]
    fn pearson_perfect_and_inverse() {
        let up = pearson("x", &[1.0, 2.0, 3.0], "y", &[10.0, 20.0, 30.0]).unwrap();
        assert!((up.r - 1.0).abs() < 1e-12);
        let down = pearson("x", &[1.0, 2.0, 3.0], "y", &[3.0, 2.0, 1.0]).unwrap();
        assert!((down.r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_error_cases() {
        assert!(matches!(
            pearson("x", &[1.0], "y", &[1.0]),
            Err(Error::NoData(_))
        ));
        assert!(matches!(
            pearson("x", &[1.0, 2.0], "y", &[1.0]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            pearson("x", &[1.0, 1.0], "y", &[1.0, 2.0]),
            Err(Error::Degenerate(_))
        ));
    }

    fn pairs(spec: &[(&str, &str, u64)]) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (v, t, n) in spec {
            for _ in 0..*n {
                out.push((v.to_string(), t.to_string()));
            }
        }
        out
    }

    #[test]
    fn perfect_split_is_one_bit() {
        let p = pairs(&[("a", "good", 4), ("b", "bad", 4)]);
        assert_eq!(information_gain(&p).unwrap(), 1.0);
    }

    #[test]
    fn single_class_target_gains_nothing() {
        let p = pairs(&[("a", "good", 4), ("b", "good", 4)]);
        assert_eq!(information_gain(&p).unwrap(), 0.0);
    }

    #[test]
    fn eight_unit_contingency_table() {
        // One clean half and one mixed half: H(6/8) - 0.5 = 0.311278 bits.
        let p = pairs(&[("a", "good", 4), ("b", "good", 2), ("b", "bad", 2)]);
        let gain = information_gain(&p).unwrap();
        assert!((gain - 0.311278).abs() < 1e-6);
    }

    #[test]
    fn capacity_bins_are_power_of_two() {
        assert_eq!(capacity_bin(50_000), "[32,64) Mbps");
        assert_eq!(capacity_bin(1_000), "[1,2) Mbps");
        assert_eq!(capacity_bin(768), "[1/2,1) Mbps");
    }

    #[test]
    fn ranking_sorts_desc_then_alphabetical() {
        let mut meta = BTreeMap::new();
        let mut avail = BTreeMap::new();
        // ISP separates availability perfectly; technology and region do not
        // separate at all. Capacity mirrors ISP exactly, forcing a tie that
        // must resolve alphabetically (capacity-bin before isp).
        for i in 0..8 {
            let id = UnitId(format!("u{i}"));
            let good = i < 4;
            meta.insert(
                id.clone(),
                UnitMeta {
                    unit_id: id.clone(),
                    isp: if good { "A" } else { "B" }.into(),
                    technology: Technology::Cable,
                    down_kbps: if good { 100_000 } else { 10_000 },
                    up_kbps: 1_000,
                    region: "IL".into(),
                    block_group: String::new(),
                    timezone: None,
                    active: true,
                },
            );
            avail.insert(id, if good { 0.999 } else { 0.9 });
        }
        let ranked = rank_attributes(&meta, &avail, Some(&[0.99])).unwrap();
        assert_eq!(ranked[0].0, "capacity-bin");
        assert_eq!(ranked[1].0, "isp");
        assert_eq!(ranked[0].1, ranked[1].1);
        assert!(ranked[0].1 > ranked[2].1);
        let names: Vec<&str> = ranked.iter().map(|r| r.0.as_str()).collect();
        assert_eq!(names.len(), 4);
    }
}
