//! Telemetry ingest: raw CSV inputs to cleaned hourly records.
//!
//! Input files are `units.csv`, `pings.csv`, `traffic.csv` and `dns.csv`.
//! Rows that cannot be used are rejected and logged to the ingest report
//! rather than aborting the run; only structural problems (missing columns,
//! unreadable files) are fatal. Ingest is idempotent: feeding the same rows
//! twice produces the same records, because per-target loss rows merge by
//! minimum and duplicate traffic/DNS rows keep the first occurrence.

use std::collections::BTreeMap;
use std::io::Read;
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HourStamp, HourlyRecord, UnitId, UnitMeta};
use crate::net::IpPrefix;

/// Why a row was rejected or flagged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IssueKind {
    /// Row failed to parse; rejected.
    MalformedRow,
    /// probes_lost exceeded probes_sent; rejected.
    LostExceedsSent,
    /// probes_sent was zero, so the hour was never observed; rejected.
    ZeroProbes,
    /// Active-test byte counters exceeded the totals; clamped to zero.
    TestTrafficExceedsTotal,
    /// Duplicate row for a key that admits only one; first kept.
    DuplicateRow,
    /// DNS failures exceeded queries; rejected.
    FailuresExceedQueries,
    /// Unit marked inactive; excluded from analysis.
    InactiveUnit,
    /// Capacity fields must be positive; rejected.
    BadCapacity,
    /// Unit has telemetry but no metadata row.
    UnknownUnit,
    /// Configured resolver is not inside the unit ISP's prefixes; flagged.
    ResolverOutsideIsp,
}

/// One rejected or flagged row, written as a JSON line in the ingest report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestIssue {
    pub file: String,
    pub line: u64,
    pub reason: IssueKind,
    pub detail: String,
}

/// Outcome counters plus every row-level issue.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub rows_read: u64,
    pub rows_rejected: u64,
    pub rows_flagged: u64,
    pub issues: Vec<IngestIssue>,
}

impl IngestReport {
    fn reject(&mut self, file: &str, line: u64, reason: IssueKind, detail: String) {
        self.rows_rejected += 1;
        self.issues.push(IngestIssue { file: file.into(), line, reason, detail });
    }

    fn flag(&mut self, file: &str, line: u64, reason: IssueKind, detail: String) {
        self.rows_flagged += 1;
        self.issues.push(IngestIssue { file: file.into(), line, reason, detail });
    }

    pub fn merge(&mut self, other: IngestReport) {
        self.rows_read += other.rows_read;
        self.rows_rejected += other.rows_rejected;
        self.rows_flagged += other.rows_flagged;
        self.issues.extend(other.issues);
    }
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(r)
}

fn require_columns<R: Read>(
    rdr: &mut csv::Reader<R>,
    file: &str,
    required: &[&str],
) -> Result<csv::StringRecord> {
    let headers = rdr
        .headers()
        .map_err(|e| Error::Malformed { file: file.into(), line: 1, msg: e.to_string() })?
        .clone();
    for col in required {
        if !headers.iter().any(|h| h == *col) {
            return Err(Error::MissingColumn { file: file.into(), column: (*col).into() });
        }
    }
    Ok(headers)
}

fn row_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

#[derive(Debug, Deserialize)]
struct PingRow {
    unit_id: String,
    dtime: String,
    #[allow(dead_code)]
    target: String,
    probes_sent: u64,
    probes_lost: u64,
}

/// Per-unit-hour loss rate: the minimum loss across ping targets, so that a
/// single unhealthy target server is not mistaken for a line failure.
pub fn ingest_pings<R: Read>(
    file: &str,
    input: R,
    report: &mut IngestReport,
) -> Result<BTreeMap<(UnitId, HourStamp), f64>> {
    let mut rdr = reader(input);
    require_columns(&mut rdr, file, &["unit_id", "dtime", "target", "probes_sent", "probes_lost"])?;
    let headers = rdr.headers()?.clone();
    let mut out: BTreeMap<(UnitId, HourStamp), f64> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        report.rows_read += 1;
        let line = row_line(&rec);
        let row: PingRow = match rec.deserialize(Some(&headers)) {
            Ok(r) => r,
            Err(e) => {
                report.reject(file, line, IssueKind::MalformedRow, e.to_string());
                continue;
            }
        };
        let hour = match HourStamp::parse(&row.dtime) {
            Ok(h) => h,
            Err(_) => {
                report.reject(
                    file,
                    line,
                    IssueKind::MalformedRow,
                    format!("bad timestamp `{}`", row.dtime),
                );
                continue;
            }
        };
        if row.probes_sent == 0 {
            report.reject(file, line, IssueKind::ZeroProbes, row.unit_id.clone());
            continue;
        }
        if row.probes_lost > row.probes_sent {
            report.reject(
                file,
                line,
                IssueKind::LostExceedsSent,
                format!("{} lost {} of {}", row.unit_id, row.probes_lost, row.probes_sent),
            );
            continue;
        }
        let loss = row.probes_lost as f64 / row.probes_sent as f64;
        out.entry((UnitId(row.unit_id), hour))
            .and_modify(|cur| *cur = cur.min(loss))
            .or_insert(loss);
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct TrafficRow {
    unit_id: String,
    dtime: String,
    bytes_down_total: u64,
    bytes_up_total: u64,
    bytes_down_test: u64,
    bytes_up_test: u64,
}

/// Per-unit-hour user traffic with active-test bytes removed. Subtraction
/// clamps at zero; a clamped row is flagged because its counters disagree.
pub fn ingest_traffic<R: Read>(
    file: &str,
    input: R,
    report: &mut IngestReport,
) -> Result<BTreeMap<(UnitId, HourStamp), (u64, u64)>> {
    let mut rdr = reader(input);
    require_columns(
        &mut rdr,
        file,
        &["unit_id", "dtime", "bytes_down_total", "bytes_up_total", "bytes_down_test", "bytes_up_test"],
    )?;
    let headers = rdr.headers()?.clone();
    let mut out: BTreeMap<(UnitId, HourStamp), (u64, u64)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        report.rows_read += 1;
        let line = row_line(&rec);
        let row: TrafficRow = match rec.deserialize(Some(&headers)) {
            Ok(r) => r,
            Err(e) => {
                report.reject(file, line, IssueKind::MalformedRow, e.to_string());
                continue;
            }
        };
        let hour = match HourStamp::parse(&row.dtime) {
            Ok(h) => h,
            Err(_) => {
                report.reject(
                    file,
                    line,
                    IssueKind::MalformedRow,
                    format!("bad timestamp `{}`", row.dtime),
                );
                continue;
            }
        };
        if row.bytes_down_test > row.bytes_down_total || row.bytes_up_test > row.bytes_up_total {
            report.flag(
                file,
                line,
                IssueKind::TestTrafficExceedsTotal,
                format!("{} at {}", row.unit_id, row.dtime),
            );
        }
        let down = row.bytes_down_total.saturating_sub(row.bytes_down_test);
        let up = row.bytes_up_total.saturating_sub(row.bytes_up_test);
        let key = (UnitId(row.unit_id), hour);
        if out.contains_key(&key) {
            report.flag(file, line, IssueKind::DuplicateRow, format!("{} {}", key.0, key.1));
            continue;
        }
        out.insert(key, (down, up));
    }
    Ok(out)
}

/// Which resolver a DNS probe row describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServerRole {
    Primary,
    Secondary,
}

#[derive(Debug, Deserialize)]
struct DnsRow {
    unit_id: String,
    dtime: String,
    server_role: String,
    queries: u64,
    failures: u64,
}

/// Per-server DNS counters for one unit-hour.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DnsCounters {
    pub primary: Option<(u64, u64)>,
    pub secondary: Option<(u64, u64)>,
}

pub fn ingest_dns<R: Read>(
    file: &str,
    input: R,
    report: &mut IngestReport,
) -> Result<BTreeMap<(UnitId, HourStamp), DnsCounters>> {
    let mut rdr = reader(input);
    require_columns(&mut rdr, file, &["unit_id", "dtime", "server_role", "queries", "failures"])?;
    let headers = rdr.headers()?.clone();
    let mut out: BTreeMap<(UnitId, HourStamp), DnsCounters> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        report.rows_read += 1;
        let line = row_line(&rec);
        let row: DnsRow = match rec.deserialize(Some(&headers)) {
            Ok(r) => r,
            Err(e) => {
                report.reject(file, line, IssueKind::MalformedRow, e.to_string());
                continue;
            }
        };
        let hour = match HourStamp::parse(&row.dtime) {
            Ok(h) => h,
            Err(_) => {
                report.reject(
                    file,
                    line,
                    IssueKind::MalformedRow,
                    format!("bad timestamp `{}`", row.dtime),
                );
                continue;
            }
        };
        let role = match row.server_role.to_ascii_lowercase().as_str() {
            "primary" => ServerRole::Primary,
            "secondary" => ServerRole::Secondary,
            other => {
                report.reject(
                    file,
                    line,
                    IssueKind::MalformedRow,
                    format!("unknown server_role `{other}`"),
                );
                continue;
            }
        };
        if row.failures > row.queries {
            report.reject(
                file,
                line,
                IssueKind::FailuresExceedQueries,
                format!("{} at {}", row.unit_id, row.dtime),
            );
            continue;
        }
        let entry = out.entry((UnitId(row.unit_id.clone()), hour)).or_default();
        let slot = match role {
            ServerRole::Primary => &mut entry.primary,
            ServerRole::Secondary => &mut entry.secondary,
        };
        if slot.is_some() {
            report.flag(file, line, IssueKind::DuplicateRow, format!("{} {}", row.unit_id, hour));
            continue;
        }
        *slot = Some((row.queries, row.failures));
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct UnitRow {
    unit_id: String,
    isp: String,
    technology: String,
    down_kbps: u64,
    up_kbps: u64,
    region: String,
    block_group: String,
    timezone: String,
    active: String,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "y" => Some(true),
        "false" | "0" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// Read unit metadata, dropping inactive units and rows with impossible
/// capacities. Rejections land in the report.
pub fn ingest_units<R: Read>(
    file: &str,
    input: R,
    report: &mut IngestReport,
) -> Result<BTreeMap<UnitId, UnitMeta>> {
    let mut rdr = reader(input);
    require_columns(
        &mut rdr,
        file,
        &["unit_id", "isp", "technology", "down_kbps", "up_kbps", "region", "block_group", "timezone", "active"],
    )?;
    let headers = rdr.headers()?.clone();
    let mut out: BTreeMap<UnitId, UnitMeta> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        report.rows_read += 1;
        let line = row_line(&rec);
        let row: UnitRow = match rec.deserialize(Some(&headers)) {
            Ok(r) => r,
            Err(e) => {
                report.reject(file, line, IssueKind::MalformedRow, e.to_string());
                continue;
            }
        };
        let Some(active) = parse_bool(&row.active) else {
            report.reject(
                file,
                line,
                IssueKind::MalformedRow,
                format!("bad active flag `{}`", row.active),
            );
            continue;
        };
        if !active {
            report.flag(file, line, IssueKind::InactiveUnit, row.unit_id.clone());
            continue;
        }
        if row.down_kbps == 0 || row.up_kbps == 0 {
            report.reject(file, line, IssueKind::BadCapacity, row.unit_id.clone());
            continue;
        }
        let technology = match row.technology.parse() {
            Ok(t) => t,
            Err(_) => {
                report.reject(
                    file,
                    line,
                    IssueKind::MalformedRow,
                    format!("unknown technology `{}`", row.technology),
                );
                continue;
            }
        };
        let id = UnitId(row.unit_id);
        if out.contains_key(&id) {
            report.flag(file, line, IssueKind::DuplicateRow, id.to_string());
            continue;
        }
        out.insert(
            id.clone(),
            UnitMeta {
                unit_id: id,
                isp: row.isp,
                technology,
                down_kbps: row.down_kbps,
                up_kbps: row.up_kbps,
                region: row.region,
                block_group: row.block_group,
                timezone: if row.timezone.is_empty() { None } else { Some(row.timezone) },
                active,
            },
        );
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct ResolverRow {
    unit_id: String,
    resolver: String,
}

/// `resolvers.csv`: one row per configured resolver of a unit.
pub fn ingest_resolvers<R: Read>(
    file: &str,
    input: R,
    report: &mut IngestReport,
) -> Result<BTreeMap<UnitId, Vec<IpAddr>>> {
    let mut rdr = reader(input);
    require_columns(&mut rdr, file, &["unit_id", "resolver"])?;
    let headers = rdr.headers()?.clone();
    let mut out: BTreeMap<UnitId, Vec<IpAddr>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        report.rows_read += 1;
        let line = row_line(&rec);
        let row: ResolverRow = match rec.deserialize(Some(&headers)) {
            Ok(r) => r,
            Err(e) => {
                report.reject(file, line, IssueKind::MalformedRow, e.to_string());
                continue;
            }
        };
        match row.resolver.parse::<IpAddr>() {
            Ok(ip) => out.entry(UnitId(row.unit_id)).or_default().push(ip),
            Err(_) => report.reject(
                file,
                line,
                IssueKind::MalformedRow,
                format!("bad resolver `{}`", row.resolver),
            ),
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct PrefixRow {
    isp: String,
    prefix: String,
}

/// `isp_prefixes.csv`: announced prefixes per ISP, for resolver validation
/// and traceroute classification.
pub fn ingest_isp_prefixes<R: Read>(
    file: &str,
    input: R,
    report: &mut IngestReport,
) -> Result<BTreeMap<String, Vec<IpPrefix>>> {
    let mut rdr = reader(input);
    require_columns(&mut rdr, file, &["isp", "prefix"])?;
    let headers = rdr.headers()?.clone();
    let mut out: BTreeMap<String, Vec<IpPrefix>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        report.rows_read += 1;
        let line = row_line(&rec);
        let row: PrefixRow = match rec.deserialize(Some(&headers)) {
            Ok(r) => r,
            Err(e) => {
                report.reject(file, line, IssueKind::MalformedRow, e.to_string());
                continue;
            }
        };
        match row.prefix.parse::<IpPrefix>() {
            Ok(p) => out.entry(row.isp).or_default().push(p),
            Err(e) => report.reject(file, line, IssueKind::MalformedRow, e.to_string()),
        }
    }
    Ok(out)
}

/// Flag units whose configured resolvers fall outside their ISP's announced
/// prefixes. Units stay in the set; the mismatch only casts doubt on
/// DNS-based findings for them. Units whose ISP has no prefix list are left
/// alone.
pub fn validate_units(
    units: &BTreeMap<UnitId, UnitMeta>,
    resolvers: &BTreeMap<UnitId, Vec<IpAddr>>,
    prefixes: &BTreeMap<String, Vec<IpPrefix>>,
    report: &mut IngestReport,
) -> Vec<UnitId> {
    let mut suspect = Vec::new();
    for (id, meta) in units {
        let Some(res) = resolvers.get(id) else { continue };
        let Some(isp_prefixes) = prefixes.get(&meta.isp) else { continue };
        for ip in res {
            if !isp_prefixes.iter().any(|p| p.contains(*ip)) {
                report.flag(
                    "resolvers.csv",
                    0,
                    IssueKind::ResolverOutsideIsp,
                    format!("{id} resolver {ip} outside {}", meta.isp),
                );
                suspect.push(id.clone());
                break;
            }
        }
    }
    suspect
}

/// Join the three per-hour maps into hourly records. An hour exists only if
/// probes observed it; traffic defaults to zero bytes and DNS to no data.
pub fn merge_hourly(
    pings: &BTreeMap<(UnitId, HourStamp), f64>,
    traffic: &BTreeMap<(UnitId, HourStamp), (u64, u64)>,
    dns: &BTreeMap<(UnitId, HourStamp), DnsCounters>,
) -> Vec<HourlyRecord> {
    let mut out = Vec::with_capacity(pings.len());
    for ((unit, hour), loss) in pings {
        let (down, up) = traffic.get(&(unit.clone(), *hour)).copied().unwrap_or((0, 0));
        let d = dns.get(&(unit.clone(), *hour)).copied().unwrap_or_default();
        let majority = |s: Option<(u64, u64)>| {
            s.filter(|(q, _)| *q > 0).map(|(q, f)| 2 * f > q)
        };
        let (dq, df) = [d.primary, d.secondary]
            .iter()
            .flatten()
            .fold((0, 0), |(q, f), (q2, f2)| (q + q2, f + f2));
        out.push(HourlyRecord {
            unit_id: unit.clone(),
            hour: *hour,
            loss_rate: *loss,
            bytes_down: down,
            bytes_up: up,
            dns_queries: dq,
            dns_failures: df,
            dns_primary_failed: majority(d.primary),
            dns_secondary_failed: majority(d.secondary),
        });
    }
    out
}

/// Group records into per-unit series, sorted by hour.
pub fn series_by_unit(records: Vec<HourlyRecord>) -> BTreeMap<UnitId, Vec<HourlyRecord>> {
    let mut out: BTreeMap<UnitId, Vec<HourlyRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.unit_id.clone()).or_default().push(r);
    }
    for series in out.values_mut() {
        series.sort_by_key(|r| r.hour);
    }
    out
}

/// Paths of one telemetry drop. Traffic and DNS are optional; loss series
/// alone support most analyses.
#[derive(Debug, Clone)]
pub struct InputPaths {
    pub units: PathBuf,
    pub pings: PathBuf,
    pub traffic: Option<PathBuf>,
    pub dns: Option<PathBuf>,
}

impl InputPaths {
    /// Canonical file names inside a directory. `units.csv` and `pings.csv`
    /// must exist; `traffic.csv` and `dns.csv` are picked up when present.
    pub fn in_dir(dir: &Path) -> Result<Self> {
        let need = |name: &str| {
            let p = dir.join(name);
            if p.is_file() {
                Ok(p)
            } else {
                Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("{} not found", p.display()),
                )))
            }
        };
        let opt = |name: &str| Some(dir.join(name)).filter(|p| p.is_file());
        Ok(InputPaths {
            units: need("units.csv")?,
            pings: need("pings.csv")?,
            traffic: opt("traffic.csv"),
            dns: opt("dns.csv"),
        })
    }
}

/// A fully ingested telemetry drop.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub meta: BTreeMap<UnitId, UnitMeta>,
    pub series: BTreeMap<UnitId, Vec<HourlyRecord>>,
    /// Raw DNS counters, kept for resolver availability analysis.
    pub dns: BTreeMap<(UnitId, HourStamp), DnsCounters>,
}

impl Dataset {
    pub fn load(paths: &InputPaths) -> Result<(Dataset, IngestReport)> {
        let mut report = IngestReport::default();
        let open = |p: &Path| -> Result<std::fs::File> {
            std::fs::File::open(p).map_err(|e| {
                Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))
            })
        };
        let meta = ingest_units(
            &paths.units.file_name().unwrap_or_default().to_string_lossy(),
            open(&paths.units)?,
            &mut report,
        )?;
        let pings = ingest_pings(
            &paths.pings.file_name().unwrap_or_default().to_string_lossy(),
            open(&paths.pings)?,
            &mut report,
        )?;
        let traffic = match &paths.traffic {
            Some(p) => ingest_traffic(
                &p.file_name().unwrap_or_default().to_string_lossy(),
                open(p)?,
                &mut report,
            )?,
            None => BTreeMap::new(),
        };
        let dns = match &paths.dns {
            Some(p) => ingest_dns(
                &p.file_name().unwrap_or_default().to_string_lossy(),
                open(p)?,
                &mut report,
            )?,
            None => BTreeMap::new(),
        };
        for unit in pings.keys().map(|(u, _)| u).collect::<std::collections::BTreeSet<_>>() {
            if !meta.contains_key(unit) {
                report.flag("pings.csv", 0, IssueKind::UnknownUnit, unit.to_string());
            }
        }
        let series = series_by_unit(merge_hourly(&pings, &traffic, &dns));
        Ok((Dataset { meta, series, dns }, report))
    }

    pub fn series_of(&self, unit: &UnitId) -> &[HourlyRecord] {
        self.series.get(unit).map(Vec::as_slice).unwrap_or(&[])
    }
}
