//! Report emission: fixed-precision CSV and JSON writers.
//!
//! Every report starts with (CSV) or embeds (JSON) the hash of the run
//! configuration, so a report can always be traced back to the exact
//! settings that produced it and unchanged runs reproduce byte-identical
//! files. Numbers are rendered at 6 significant digits; counts stay exact.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use num::traits::ToPrimitive;
use serde::Serialize;
use serde_json::Value;

use crate::cohort::CorrelationResult;
use crate::dns::DnsProbs;
use crate::error::{Error, Result};
use crate::failover::Sample;
use crate::model::Rational;
use crate::multihome::MultihomeRow;
use crate::reliability::{LossCdf, ReliabilityStats};

/// Render a float at 6 significant digits.
///
/// Positional notation while the exponent allows it, scientific outside;
/// trailing fractional zeros are trimmed so values read naturally and
/// equal values always render identically.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.5e}", x);
    let (mant, exp) = sci.split_once('e').expect("{:.5e} always has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    let neg = mant.starts_with('-');
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    debug_assert_eq!(digits.len(), 6);
    let body = if (-4..=14).contains(&exp) {
        if exp >= 5 {
            format!("{digits}{}", "0".repeat((exp - 5) as usize))
        } else if exp >= 0 {
            let split = (exp + 1) as usize;
            let frac = digits[split..].trim_end_matches('0');
            if frac.is_empty() {
                digits[..split].to_string()
            } else {
                format!("{}.{frac}", &digits[..split])
            }
        } else {
            let frac = format!("{}{digits}", "0".repeat((-exp - 1) as usize));
            format!("0.{}", frac.trim_end_matches('0'))
        }
    } else {
        let frac = digits[1..].trim_end_matches('0');
        let m = if frac.is_empty() {
            digits[..1].to_string()
        } else {
            format!("{}.{frac}", &digits[..1])
        };
        format!("{m}e{exp}")
    };
    if neg {
        format!("-{body}")
    } else {
        body
    }
}

/// Render an exact ratio at report precision.
pub fn sig6_rational(r: &Rational) -> String {
    sig6(r.to_f64().unwrap_or(f64::NAN))
}

fn open_report(path: &Path, config_hash: &str) -> Result<csv::Writer<File>> {
    let mut f = File::create(path)?;
    writeln!(f, "# config_hash={config_hash}")?;
    Ok(csv::Writer::from_writer(f))
}

/// stats.csv: one row per (scope, threshold).
pub fn write_stats_csv(path: &Path, config_hash: &str, rows: &[ReliabilityStats]) -> Result<()> {
    let mut w = open_report(path, config_hash)?;
    w.write_record([
        "scope",
        "threshold",
        "uptime",
        "downtime",
        "failures",
        "mtbf",
        "mdt",
        "availability",
        "annual_downtime",
    ])?;
    for s in rows {
        w.write_record([
            s.scope.as_str(),
            &sig6(s.threshold),
            &s.uptime_hours.to_string(),
            &s.downtime_hours.to_string(),
            &s.failures.to_string(),
            &s.mtbf_hours.as_ref().map(sig6_rational).unwrap_or_default(),
            &s.mdt_hours.as_ref().map(sig6_rational).unwrap_or_default(),
            &sig6(s.availability_f64()),
            &sig6(s.annual_downtime_hours()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// cdf.csv: hourly loss distribution per group, long format.
pub fn write_cdf_csv(path: &Path, config_hash: &str, groups: &[(String, LossCdf)]) -> Result<()> {
    let mut w = open_report(path, config_hash)?;
    w.write_record(["group", "loss", "cum_fraction"])?;
    for (group, cdf) in groups {
        for p in &cdf.points {
            w.write_record([group.as_str(), &sig6(p.loss), &sig6(p.cum_fraction)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// dns_probs.csv: resolver failure probabilities per scope.
pub fn write_dns_csv<'a>(
    path: &Path,
    config_hash: &str,
    rows: impl IntoIterator<Item = &'a DnsProbs>,
) -> Result<()> {
    let mut w = open_report(path, config_hash)?;
    w.write_record(["isp", "p_one", "p_two", "hours_used", "hours_excluded"])?;
    for p in rows {
        w.write_record([
            p.scope.as_str(),
            &sig6(p.p_one),
            &sig6(p.p_two),
            &p.hours_used.to_string(),
            &p.hours_excluded.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// multihome.csv: one row per simulated cohort.
pub fn write_multihome_csv(path: &Path, config_hash: &str, rows: &[MultihomeRow]) -> Result<()> {
    let mut w = open_report(path, config_hash)?;
    w.write_record(["cohort", "threshold", "availability", "mtbf", "mdt", "pairs"])?;
    for r in rows {
        w.write_record([
            r.cohort.as_str(),
            &sig6(r.stats.threshold),
            &sig6(r.stats.availability_f64()),
            &r.stats.mtbf_hours.as_ref().map(sig6_rational).unwrap_or_default(),
            &r.stats.mdt_hours.as_ref().map(sig6_rational).unwrap_or_default(),
            &r.members.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// correlations.csv: Pearson r per indicator pair.
pub fn write_correlations_csv(
    path: &Path,
    config_hash: &str,
    rows: &[CorrelationResult],
) -> Result<()> {
    let mut w = open_report(path, config_hash)?;
    w.write_record(["x", "y", "r", "n"])?;
    for c in rows {
        w.write_record([c.x_name.as_str(), c.y_name.as_str(), &sig6(c.r), &c.n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// infogain.csv: attribute ranking over availability bins.
pub fn write_infogain_csv(
    path: &Path,
    config_hash: &str,
    rows: &[(String, f64)],
) -> Result<()> {
    let mut w = open_report(path, config_hash)?;
    w.write_record(["attribute", "gain_bits"])?;
    for (name, gain) in rows {
        w.write_record([name.as_str(), &sig6(*gain)])?;
    }
    w.flush()?;
    Ok(())
}

/// trajectory.csv: playback simulation trace.
pub fn write_trajectory_csv(path: &Path, config_hash: &str, samples: &[Sample]) -> Result<()> {
    let mut w = open_report(path, config_hash)?;
    w.write_record(["t", "capacity", "buffer", "quality", "stalled"])?;
    for s in samples {
        w.write_record([
            sig6(s.t).as_str(),
            &sig6(s.capacity_bps),
            &sig6(s.buffer_s),
            &s.quality,
            if s.stalled { "1" } else { "0" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn round_numbers(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if n.is_f64() {
                let f = n.as_f64().expect("is_f64 checked");
                let rounded: f64 = sig6(f).parse().unwrap_or(f);
                if let Some(r) = serde_json::Number::from_f64(rounded) {
                    *v = Value::Number(r);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_numbers),
        Value::Object(map) => map.values_mut().for_each(round_numbers),
        _ => {}
    }
}

/// Serialize a report to canonical JSON: config hash injected at the top
/// level, floats at 6 significant digits, keys sorted, pretty-printed,
/// trailing newline.
pub fn canonical_json<T: Serialize>(report: &T, config_hash: &str) -> Result<String> {
    let mut value = serde_json::to_value(report)?;
    let Value::Object(map) = &mut value else {
        return Err(Error::Config("a JSON report must serialize to an object".into()));
    };
    map.insert("config_hash".to_string(), Value::String(config_hash.to_string()));
    round_numbers(&mut value);
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

/// Write a report as canonical JSON.
pub fn write_json_report<T: Serialize>(path: &Path, config_hash: &str, report: &T) -> Result<()> {
    let text = canonical_json(report, config_hash)?;
    std::fs::write(path, text)?;
    Ok(())
}
