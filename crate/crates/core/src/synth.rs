//! Deterministic synthetic telemetry, for verifying every analysis at desk
//! scale.
//!
//! Loss is generated as integer probe counts, never as a float that then
//! gets quantized, so a generated trace serialized to CSV and ingested
//! again reproduces the in-memory records bit for bit. Every unit draws
//! from its own seeded stream: adding units to a spec leaves existing
//! units' traces untouched.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{merge_hourly, DnsCounters};
use crate::model::{HourStamp, HourlyRecord, Technology, UnitId, UnitMeta, Zone};

/// Parameters of the random loss process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossProcess {
    /// Fraction of units with a lossy line.
    pub p_lossy_unit: f64,
    /// Baseline probability that a lossy unit has a lossy hour.
    pub p_loss_hour: f64,
    /// Loss drawn for a lossy hour, before per-unit severity scaling.
    pub min_loss: f64,
    pub max_loss: f64,
}

impl Default for LossProcess {
    fn default() -> Self {
        LossProcess { p_lossy_unit: 0.25, p_loss_hour: 0.08, min_loss: 0.05, max_loss: 0.15 }
    }
}

/// A deterministic outage stamped onto the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedOutage {
    /// `None` hits every unit.
    pub unit_index: Option<u32>,
    pub start_hour: u32,
    pub duration_hours: u32,
    /// Affected hours lose at least this fraction of probes.
    pub loss_rate: f64,
}

/// Traffic volume process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSpec {
    pub mean_bytes_down: u64,
    pub mean_bytes_up: u64,
    /// Active-test bytes added to the totals each hour.
    pub test_bytes_down: u64,
    pub test_bytes_up: u64,
    /// Multiplier on user traffic for lossy units, modelling households
    /// that use a bad line less. 1.0 disables the effect.
    pub demand_suppression: f64,
}

impl Default for TrafficSpec {
    fn default() -> Self {
        TrafficSpec {
            mean_bytes_down: 500_000_000,
            mean_bytes_up: 50_000_000,
            test_bytes_down: 40_000_000,
            test_bytes_up: 10_000_000,
            demand_suppression: 0.8,
        }
    }
}

/// Which resolver a DNS outage takes down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DnsScope {
    Primary,
    Secondary,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnsOutage {
    pub unit_index: u32,
    pub server: DnsScope,
    pub start_hour: u32,
    pub duration_hours: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnsSpec {
    /// Queries per server per hour; zero disables DNS generation.
    pub queries_per_hour: u32,
    pub p_fail_primary: f64,
    pub p_fail_secondary: f64,
    /// Hours where a resolver fails every query.
    pub outages: Vec<DnsOutage>,
}

impl Default for DnsSpec {
    fn default() -> Self {
        DnsSpec { queries_per_hour: 100, p_fail_primary: 0.005, p_fail_secondary: 0.005, outages: Vec::new() }
    }
}

/// Full generator configuration, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub units: u32,
    pub hours: u32,
    /// First hour of the trace, RFC 3339.
    pub start: String,
    pub seed: u64,
    pub probes_per_hour: u32,
    /// Ping targets per unit; extra targets only ever add loss, so the
    /// per-hour minimum stays the intended rate.
    pub targets: u32,
    pub loss: LossProcess,
    pub outages: Vec<InjectedOutage>,
    pub traffic: TrafficSpec,
    pub dns: DnsSpec,
    pub isps: Vec<String>,
    pub technologies: Vec<String>,
    pub capacities_kbps: Vec<(u64, u64)>,
    pub regions: Vec<String>,
    /// Units per census block group; co-located units can be paired by the
    /// multihoming simulation.
    pub units_per_block: u32,
    pub timezones: Vec<String>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            units: 80,
            hours: 96,
            start: "2014-01-01T00:00:00Z".into(),
            seed: 0,
            probes_per_hour: 600,
            targets: 3,
            loss: LossProcess::default(),
            outages: Vec::new(),
            traffic: TrafficSpec::default(),
            dns: DnsSpec::default(),
            isps: vec!["Comcast".into(), "AT&T".into(), "Verizon".into(), "TimeWarner".into()],
            technologies: vec!["cable".into(), "dsl".into(), "fiber".into()],
            capacities_kbps: vec![(50_000, 10_000), (25_000, 5_000), (100_000, 20_000)],
            regions: vec!["IL".into(), "OH".into(), "NY".into(), "CA".into()],
            units_per_block: 2,
            timezones: vec!["America/Chicago".into(), "America/New_York".into(), "UTC".into()],
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.units == 0 || self.hours == 0 {
            return cfg("units and hours must be positive".into());
        }
        if self.probes_per_hour == 0 || self.targets == 0 {
            return cfg("probes_per_hour and targets must be positive".into());
        }
        for (name, p) in [
            ("p_lossy_unit", self.loss.p_lossy_unit),
            ("p_loss_hour", self.loss.p_loss_hour),
            ("p_fail_primary", self.dns.p_fail_primary),
            ("p_fail_secondary", self.dns.p_fail_secondary),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return cfg(format!("{name} must be in [0,1]"));
            }
        }
        if !(0.0 <= self.loss.min_loss && self.loss.min_loss <= self.loss.max_loss && self.loss.max_loss <= 1.0) {
            return cfg("need 0 <= min_loss <= max_loss <= 1".into());
        }
        for o in &self.outages {
            if !(o.loss_rate > 0.0 && o.loss_rate <= 1.0) {
                return cfg(format!("outage loss_rate {} out of (0,1]", o.loss_rate));
            }
            if o.start_hour + o.duration_hours > self.hours {
                return cfg("outage extends past the trace".into());
            }
            if let Some(u) = o.unit_index {
                if u >= self.units {
                    return cfg(format!("outage names unit {u} of {}", self.units));
                }
            }
        }
        for o in &self.dns.outages {
            if o.unit_index >= self.units || o.start_hour + o.duration_hours > self.hours {
                return cfg("dns outage out of range".into());
            }
        }
        if self.isps.is_empty()
            || self.technologies.is_empty()
            || self.capacities_kbps.is_empty()
            || self.regions.is_empty()
            || self.timezones.is_empty()
        {
            return cfg("attribute lists must not be empty".into());
        }
        if self.units_per_block == 0 {
            return cfg("units_per_block must be positive".into());
        }
        for t in &self.technologies {
            t.parse::<Technology>()?;
        }
        for tz in &self.timezones {
            if Zone::parse(tz).is_none() {
                return cfg(format!("unknown timezone `{tz}`"));
            }
        }
        HourStamp::parse(&self.start)?;
        Ok(())
    }
}

/// Raw CSV rows, kept so serialization is trivially deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct PingRowOut {
    pub unit_id: String,
    pub dtime: String,
    pub target: String,
    pub probes_sent: u32,
    pub probes_lost: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficRowOut {
    pub unit_id: String,
    pub dtime: String,
    pub bytes_down_total: u64,
    pub bytes_up_total: u64,
    pub bytes_down_test: u64,
    pub bytes_up_test: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnsRowOut {
    pub unit_id: String,
    pub dtime: String,
    pub server_role: &'static str,
    pub queries: u32,
    pub failures: u32,
}

/// Everything the generator produced: metadata, merged records identical
/// to what ingesting the CSVs yields, and the raw rows themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub meta: Vec<UnitMeta>,
    pub records: Vec<HourlyRecord>,
    pub dns: BTreeMap<(UnitId, HourStamp), DnsCounters>,
    pub ping_rows: Vec<PingRowOut>,
    pub traffic_rows: Vec<TrafficRowOut>,
    pub dns_rows: Vec<DnsRowOut>,
}

fn unit_rng(seed: u64, unit: u32, stream: u8) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..12].copy_from_slice(&unit.to_le_bytes());
    key[12] = stream;
    ChaCha8Rng::from_seed(key)
}

const STREAM_PROFILE: u8 = 0;
const STREAM_LOSS: u8 = 1;
const STREAM_TRAFFIC: u8 = 2;
const STREAM_DNS: u8 = 3;
const STREAM_JITTER: u8 = 4;

fn unit_name(i: u32) -> String {
    format!("u{i:05}")
}

/// Generate a complete trace.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let start = HourStamp::parse(&spec.start)?;
    let sent = spec.probes_per_hour;
    let mut meta = Vec::with_capacity(spec.units as usize);
    let mut pings: BTreeMap<(UnitId, HourStamp), f64> = BTreeMap::new();
    let mut traffic: BTreeMap<(UnitId, HourStamp), (u64, u64)> = BTreeMap::new();
    let mut dns: BTreeMap<(UnitId, HourStamp), DnsCounters> = BTreeMap::new();
    let mut ping_rows = Vec::new();
    let mut traffic_rows = Vec::new();
    let mut dns_rows = Vec::new();
    for i in 0..spec.units {
        let name = unit_name(i);
        let unit_id = UnitId(name.clone());
        let block = i / spec.units_per_block;
        let (down_kbps, up_kbps) = spec.capacities_kbps[i as usize % spec.capacities_kbps.len()];
        meta.push(UnitMeta {
            unit_id: unit_id.clone(),
            // ISPs advance every third unit; with two units per block the
            // pairs come out two thirds same-ISP, one third cross-ISP.
            isp: spec.isps[(i as usize / 3) % spec.isps.len()].clone(),
            technology: spec.technologies[i as usize % spec.technologies.len()]
                .parse()
                .expect("validated"),
            down_kbps,
            up_kbps,
            region: spec.regions[block as usize % spec.regions.len()].clone(),
            block_group: format!("{block:012}"),
            timezone: Some(spec.timezones[block as usize % spec.timezones.len()].clone()),
            active: true,
        });

        let mut profile = unit_rng(spec.seed, i, STREAM_PROFILE);
        let lossy = profile.gen_bool(spec.loss.p_lossy_unit);
        let severity: f64 = profile.gen_range(0.5..3.0);
        let mut loss_rng = unit_rng(spec.seed, i, STREAM_LOSS);
        let mut traffic_rng = unit_rng(spec.seed, i, STREAM_TRAFFIC);
        let mut dns_rng = unit_rng(spec.seed, i, STREAM_DNS);
        let mut jitter_rng = unit_rng(spec.seed, i, STREAM_JITTER);
        for h in 0..spec.hours {
            let hour = HourStamp(start.0 + h as i64);
            let dtime = hour.to_string();

            // Loss: random process, then injected outages raise the floor.
            let mut lost = if lossy && loss_rng.gen_bool((spec.loss.p_loss_hour * severity).min(1.0)) {
                let rate = (loss_rng.gen_range(spec.loss.min_loss..=spec.loss.max_loss) * severity)
                    .min(0.95);
                (rate * sent as f64).round() as u32
            } else {
                0
            };
            for o in &spec.outages {
                let applies = o.unit_index.map_or(true, |u| u == i)
                    && h >= o.start_hour
                    && h < o.start_hour + o.duration_hours;
                if applies {
                    lost = lost.max((o.loss_rate * sent as f64).ceil() as u32);
                }
            }
            let lost = lost.min(sent);
            for t in 0..spec.targets {
                let extra = if t > 0 && jitter_rng.gen_bool(0.1) {
                    jitter_rng.gen_range(1..=5)
                } else {
                    0
                };
                ping_rows.push(PingRowOut {
                    unit_id: name.clone(),
                    dtime: dtime.clone(),
                    target: format!("target{t}"),
                    probes_sent: sent,
                    probes_lost: (lost + extra).min(sent),
                });
            }
            pings.insert((unit_id.clone(), hour), lost as f64 / sent as f64);

            // Traffic: uniform around the means, suppressed on lossy lines.
            let scale = |mean: u64, rng: &mut ChaCha8Rng| -> u64 {
                let base = rng.gen_range(mean / 2..=mean + mean / 2);
                if lossy {
                    (base as f64 * spec.traffic.demand_suppression) as u64
                } else {
                    base
                }
            };
            let down_user = scale(spec.traffic.mean_bytes_down, &mut traffic_rng);
            let up_user = scale(spec.traffic.mean_bytes_up, &mut traffic_rng);
            traffic_rows.push(TrafficRowOut {
                unit_id: name.clone(),
                dtime: dtime.clone(),
                bytes_down_total: down_user + spec.traffic.test_bytes_down,
                bytes_up_total: up_user + spec.traffic.test_bytes_up,
                bytes_down_test: spec.traffic.test_bytes_down,
                bytes_up_test: spec.traffic.test_bytes_up,
            });
            traffic.insert((unit_id.clone(), hour), (down_user, up_user));

            // DNS: per-query Bernoulli failures, full-hour injected outages.
            if spec.dns.queries_per_hour > 0 {
                let q = spec.dns.queries_per_hour;
                let mut counts = [0u32; 2];
                for (slot, p) in
                    [(0, spec.dns.p_fail_primary), (1, spec.dns.p_fail_secondary)]
                {
                    let mut fails = 0u32;
                    for _ in 0..q {
                        if dns_rng.gen_bool(p) {
                            fails += 1;
                        }
                    }
                    counts[slot] = fails;
                }
                for o in &spec.dns.outages {
                    let applies = o.unit_index == i
                        && h >= o.start_hour
                        && h < o.start_hour + o.duration_hours;
                    if applies {
                        match o.server {
                            DnsScope::Primary => counts[0] = q,
                            DnsScope::Secondary => counts[1] = q,
                            DnsScope::Both => counts = [q, q],
                        }
                    }
                }
                for (role, fails) in [("primary", counts[0]), ("secondary", counts[1])] {
                    dns_rows.push(DnsRowOut {
                        unit_id: name.clone(),
                        dtime: dtime.clone(),
                        server_role: role,
                        queries: q,
                        failures: fails,
                    });
                }
                dns.insert(
                    (unit_id.clone(), hour),
                    DnsCounters {
                        primary: Some((q as u64, counts[0] as u64)),
                        secondary: Some((q as u64, counts[1] as u64)),
                    },
                );
            }
        }
    }
    let records = merge_hourly(&pings, &traffic, &dns);
    Ok(SynthOutput { meta, records, dns, ping_rows, traffic_rows, dns_rows })
}

/// Write units.csv, pings.csv, traffic.csv, and dns.csv (the latter only
/// when DNS rows exist) into `dir`.
pub fn write_csvs(out: &SynthOutput, dir: &Path) -> Result<()> {
    let mut units = csv::Writer::from_path(dir.join("units.csv"))?;
    units.write_record([
        "unit_id", "isp", "technology", "down_kbps", "up_kbps", "region", "block_group",
        "timezone", "active",
    ])?;
    for m in &out.meta {
        units.write_record([
            m.unit_id.as_str(),
            &m.isp,
            m.technology.as_str(),
            &m.down_kbps.to_string(),
            &m.up_kbps.to_string(),
            &m.region,
            &m.block_group,
            m.timezone.as_deref().unwrap_or(""),
            if m.active { "1" } else { "0" },
        ])?;
    }
    units.flush()?;

    let mut pings = csv::Writer::from_path(dir.join("pings.csv"))?;
    pings.write_record(["unit_id", "dtime", "target", "probes_sent", "probes_lost"])?;
    for r in &out.ping_rows {
        pings.write_record([
            &r.unit_id,
            &r.dtime,
            &r.target,
            &r.probes_sent.to_string(),
            &r.probes_lost.to_string(),
        ])?;
    }
    pings.flush()?;

    let mut traffic = csv::Writer::from_path(dir.join("traffic.csv"))?;
    traffic.write_record([
        "unit_id", "dtime", "bytes_down_total", "bytes_up_total", "bytes_down_test",
        "bytes_up_test",
    ])?;
    for r in &out.traffic_rows {
        traffic.write_record([
            &r.unit_id,
            &r.dtime,
            &r.bytes_down_total.to_string(),
            &r.bytes_up_total.to_string(),
            &r.bytes_down_test.to_string(),
            &r.bytes_up_test.to_string(),
        ])?;
    }
    traffic.flush()?;

    if !out.dns_rows.is_empty() {
        let mut dns = csv::Writer::from_path(dir.join("dns.csv"))?;
        dns.write_record(["unit_id", "dtime", "server_role", "queries", "failures"])?;
        for r in &out.dns_rows {
            dns.write_record([
                &r.unit_id,
                &r.dtime,
                r.server_role,
                &r.queries.to_string(),
                &r.failures.to_string(),
            ])?;
        }
        dns.flush()?;
    }
    Ok(())
}
