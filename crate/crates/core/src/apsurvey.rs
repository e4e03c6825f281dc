//! Neighborhood Wi-Fi survey: how many distinct access points each client
//! can see, and whether any could serve as a backup uplink.
//!
//! A physical AP often broadcasts several BSSIDs (one per band or per
//! virtual SSID), so raw BSSID counts overstate the neighborhood. BSSIDs
//! are clustered into physical APs first (transitive closure, which can
//! over-merge in dense environments), alternatives are counted per
//! cluster, and SSID naming conventions attribute clusters to ISPs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Signal strength at or above which an alternative AP is considered
/// usable, on the 0-100 scale scanners report.
pub const DEFAULT_SIGNAL_CUTOFF: f64 = 40.0;

/// SSID substrings (matched case-insensitively) that mark printers, media
/// devices, range extenders, and similar non-networks.
pub const DEFAULT_SSID_BLOCKLIST: &[&str] = &["hp-print", "chromecast", "ext", "almond"];

/// BSSIDs whose hex renderings differ in at most this many of the twelve
/// digits are taken to be the same physical AP.
pub const MAX_HEX_DIFF: usize = 4;

/// A BSSID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mac(pub [u8; 6]);

impl Mac {
    pub fn hex_digits(&self) -> [u8; 12] {
        let mut out = [0u8; 12];
        for (i, b) in self.0.iter().enumerate() {
            out[2 * i] = b >> 4;
            out[2 * i + 1] = b & 0x0f;
        }
        out
    }

    /// Number of differing positions in the twelve-digit hex renderings,
    /// compared positionally with no alignment search.
    pub fn hex_diff(&self, other: &Mac) -> usize {
        self.hex_digits()
            .iter()
            .zip(other.hex_digits().iter())
            .filter(|(a, b)| a != b)
            .count()
    }

    /// Same physical AP: near-identical hex renderings, or a difference
    /// confined to the 24 low bits (the usual virtual-BSSID scheme).
    pub fn same_ap(&self, other: &Mac) -> bool {
        self.hex_diff(other) <= MAX_HEX_DIFF || self.0[..3] == other.0[..3]
    }
}

impl fmt::Display for Mac {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for Mac {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad BSSID `{s}`"));
        let hex: String = if s.contains(':') || s.contains('-') {
            let parts: Vec<&str> = s.split([':', '-']).collect();
            if parts.len() != 6 || parts.iter().any(|p| p.len() != 2) {
                return Err(bad());
            }
            parts.concat()
        } else {
            s.to_string()
        };
        if hex.len() != 12 {
            return Err(bad());
        }
        let mut out = [0u8; 6];
        for (i, chunk) in hex.as_bytes().chunks(2).enumerate() {
            let s = std::str::from_utf8(chunk).map_err(|_| bad())?;
            out[i] = u8::from_str_radix(s, 16).map_err(|_| bad())?;
        }
        Ok(Mac(out))
    }
}

impl Serialize for Mac {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu { parent: (0..n).collect() }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// One BSSID sighting within a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub bssid: Mac,
    pub ssid: String,
    pub signal_pct: f64,
    /// True on the row describing the AP the client is associated with.
    pub is_current: bool,
}

/// Everything one client saw in one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ApScan {
    pub client_id: String,
    pub timestamp: String,
    pub entries: Vec<Entry>,
    /// BSSID of the client's own AP, when the scan marked one.
    pub current_bssid: Option<Mac>,
}

/// A cluster of BSSIDs treated as one physical AP.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApGroup {
    /// Smallest member BSSID; stable under input reordering.
    pub group_id: Mac,
    pub members: Vec<Mac>,
    /// Distinct broadcast SSIDs, hidden (empty) ones excluded.
    pub ssids: BTreeSet<String>,
    /// Strongest signal any member was seen at.
    pub max_signal_pct: f64,
}

impl ApGroup {
    pub fn contains(&self, mac: &Mac) -> bool {
        self.members.binary_search(mac).is_ok()
    }
}

/// Cluster entries into physical APs via the transitive closure of the
/// pairwise rule. The result partitions the BSSIDs: every entry lands in
/// exactly one group regardless of input order.
pub fn group_bssids(entries: &[Entry]) -> Vec<ApGroup> {
    let mut macs: Vec<Mac> = entries.iter().map(|e| e.bssid).collect();
    macs.sort();
    macs.dedup();
    let mut dsu = Dsu::new(macs.len());
    for i in 0..macs.len() {
        for j in i + 1..macs.len() {
            if macs[i].same_ap(&macs[j]) {
                dsu.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, ApGroup> = BTreeMap::new();
    for (i, mac) in macs.iter().enumerate() {
        let root = dsu.find(i);
        let g = groups.entry(root).or_insert_with(|| ApGroup {
            group_id: *mac,
            members: Vec::new(),
            ssids: BTreeSet::new(),
            max_signal_pct: f64::NEG_INFINITY,
        });
        g.members.push(*mac);
        g.group_id = g.group_id.min(*mac);
    }
    for entry in entries {
        let idx = macs.binary_search(&entry.bssid).expect("mac came from this list");
        let root = dsu.find(idx);
        let g = groups.get_mut(&root).expect("group exists");
        if !entry.ssid.is_empty() {
            g.ssids.insert(entry.ssid.clone());
        }
        g.max_signal_pct = g.max_signal_pct.max(entry.signal_pct);
    }
    let mut out: Vec<ApGroup> = groups.into_values().collect();
    for g in &mut out {
        g.members.sort();
    }
    out.sort_by(|a, b| a.group_id.cmp(&b.group_id));
    out
}

/// Does the SSID name a blocklisted device class?
pub fn is_blocklisted(ssid: &str, blocklist: &[String]) -> bool {
    let lower = ssid.to_lowercase();
    blocklist.iter().any(|b| lower.contains(b.as_str()))
}

/// Drop entries whose SSID marks a non-gateway device.
pub fn filter_non_gateways(entries: &[Entry], blocklist: &[String]) -> Vec<Entry> {
    entries.iter().filter(|e| !is_blocklisted(&e.ssid, blocklist)).cloned().collect()
}

/// One SSID-to-ISP attribution rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IspRule {
    /// Lowercased SSID prefix.
    pub pattern: String,
    pub isp: String,
    /// Hosted-hotspot SSIDs (leading `+` in the rules file) only identify
    /// the ISP when the AP carries a second, private SSID; a standalone
    /// hotspot is not a neighbor's subscribable line.
    pub hosted_alongside: bool,
}

/// Built-in attribution rules; a rules file replaces them wholesale.
pub fn default_isp_rules() -> Vec<IspRule> {
    let rules = [
        ("+xfinitywifi", "Comcast"),
        ("comcast", "Comcast"),
        ("att", "AT&T"),
        ("2wire", "AT&T"),
        ("verizon", "Verizon"),
        ("fios", "Verizon"),
        ("centurylink", "CenturyLink"),
    ];
    rules
        .iter()
        .map(|(p, isp)| {
            let hosted = p.starts_with('+');
            IspRule {
                pattern: p.trim_start_matches('+').to_string(),
                isp: (*isp).to_string(),
                hosted_alongside: hosted,
            }
        })
        .collect()
}

/// Parse a rules file: one `pattern,isp` per line, `+pattern` for
/// hosted-hotspot rules, `#` comments. Earlier rules win.
pub fn parse_isp_rules(text: &str) -> Result<Vec<IspRule>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((pattern, isp)) = line.split_once(',') else {
            return Err(Error::Malformed {
                file: "isp rules".into(),
                line: i as u64 + 1,
                msg: format!("expected `pattern,isp`, got `{line}`"),
            });
        };
        let (pattern, isp) = (pattern.trim(), isp.trim());
        let hosted = pattern.starts_with('+');
        let pattern = pattern.trim_start_matches('+').to_lowercase();
        if pattern.is_empty() || isp.is_empty() {
            return Err(Error::Malformed {
                file: "isp rules".into(),
                line: i as u64 + 1,
                msg: "empty pattern or isp".into(),
            });
        }
        out.push(IspRule { pattern, isp: isp.to_string(), hosted_alongside: hosted });
    }
    Ok(out)
}

/// First rule whose prefix matches one of the group's SSIDs, subject to
/// the hosted-alongside condition, names the ISP.
pub fn infer_isp<'r>(group: &ApGroup, rules: &'r [IspRule]) -> Option<&'r str> {
    for rule in rules {
        let hit = group
            .ssids
            .iter()
            .any(|s| s.to_lowercase().starts_with(&rule.pattern));
        if hit && (!rule.hosted_alongside || group.ssids.len() >= 2) {
            return Some(&rule.isp);
        }
    }
    None
}

#[derive(Debug, Deserialize)]
struct ScanRow {
    client_id: String,
    timestamp: String,
    bssid: String,
    ssid: String,
    signal_pct: f64,
    is_current: u8,
}

/// Read scans.csv: one row per sighting, one scan per (client, timestamp).
/// Rows with malformed MACs or out-of-range signals are dropped with a
/// warning rather than failing the file.
pub fn parse_scans<R: Read>(file: &str, input: R) -> Result<Vec<ApScan>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Malformed { file: file.into(), line: 1, msg: e.to_string() })?
        .clone();
    for col in ["client_id", "timestamp", "bssid", "ssid", "signal_pct", "is_current"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::MissingColumn { file: file.into(), column: col.into() });
        }
    }
    let mut scans: BTreeMap<(String, String), ApScan> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row: ScanRow = rec.deserialize(Some(&headers)).map_err(|e| Error::Malformed {
            file: file.into(),
            line,
            msg: e.to_string(),
        })?;
        let Ok(bssid) = Mac::from_str(&row.bssid) else {
            log::warn!("{file}:{line}: dropping entry with bad BSSID `{}`", row.bssid);
            continue;
        };
        if !(0.0..=100.0).contains(&row.signal_pct) {
            log::warn!("{file}:{line}: dropping entry with signal {} out of [0,100]", row.signal_pct);
            continue;
        }
        let key = (row.client_id.clone(), row.timestamp.clone());
        let scan = scans.entry(key).or_insert_with(|| ApScan {
            client_id: row.client_id.clone(),
            timestamp: row.timestamp.clone(),
            entries: Vec::new(),
            current_bssid: None,
        });
        let is_current = row.is_current != 0;
        if is_current {
            scan.current_bssid.get_or_insert(bssid);
        }
        scan.entries.push(Entry { bssid, ssid: row.ssid, signal_pct: row.signal_pct, is_current });
    }
    Ok(scans.into_values().collect())
}

/// One point of the best-alternative-signal distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalCdfPoint {
    pub signal_pct: f64,
    pub cum_fraction: f64,
}

/// Survey-wide summary over all scans.
#[derive(Debug, Clone, Serialize)]
pub struct ApSurveyReport {
    pub scans: u64,
    pub blocked_entries: u64,
    /// Fractions of scans seeing at least one / at least two APs beyond
    /// the client's own.
    pub frac_with_alternative: f64,
    pub frac_with_two_alternatives: f64,
    /// Fraction of scans whose best alternative clears the signal cutoff.
    pub frac_with_strong_alternative: f64,
    /// Fraction of scans seeing an alternative attributable to an ISP.
    pub frac_with_isp_alternative: f64,
    /// Among attributed alternatives at clients with known ISPs, the
    /// fraction on a different ISP than the client.
    pub frac_alt_groups_cross_isp: f64,
    pub signal_cutoff: f64,
    /// Distribution of the strongest alternative signal per scan, over
    /// scans that saw one.
    pub best_alt_signal_cdf: Vec<SignalCdfPoint>,
    /// BSSID pairs one hex digit beyond the clustering rule: a sensitivity
    /// check on the cutoff.
    pub near_threshold_pairs: u64,
}

/// Run the survey. Blocklisted SSIDs are dropped before clustering; the
/// group containing the client's current BSSID is not an alternative.
/// `client_isps` maps client ids to their subscribed ISP; clients missing
/// from it are left out of the cross-ISP fraction entirely.
pub fn survey(
    scans: &[ApScan],
    client_isps: &BTreeMap<String, String>,
    rules: &[IspRule],
    blocklist: &[String],
    signal_cutoff: f64,
) -> Result<ApSurveyReport> {
    if scans.is_empty() {
        return Err(Error::EmptyScope("no scans".into()));
    }
    let mut blocked = 0u64;
    let mut with_alt = 0u64;
    let mut with_two = 0u64;
    let mut strong = 0u64;
    let mut with_isp_alt = 0u64;
    let mut attributed_groups = 0u64;
    let mut cross_isp_groups = 0u64;
    let mut near_threshold = 0u64;
    let mut best_signals = Vec::new();
    for scan in scans {
        let kept = filter_non_gateways(&scan.entries, blocklist);
        blocked += (scan.entries.len() - kept.len()) as u64;
        let mut macs: Vec<Mac> = kept.iter().map(|e| e.bssid).collect();
        macs.sort();
        macs.dedup();
        for i in 0..macs.len() {
            for j in i + 1..macs.len() {
                if macs[i].hex_diff(&macs[j]) == MAX_HEX_DIFF + 1 && !macs[i].same_ap(&macs[j]) {
                    near_threshold += 1;
                }
            }
        }
        let groups = group_bssids(&kept);
        let alts: Vec<&ApGroup> = groups
            .iter()
            .filter(|g| scan.current_bssid.map_or(true, |own| !g.contains(&own)))
            .collect();
        if !alts.is_empty() {
            with_alt += 1;
            let best = alts.iter().map(|g| g.max_signal_pct).fold(f64::NEG_INFINITY, f64::max);
            best_signals.push(best);
            if best >= signal_cutoff {
                strong += 1;
            }
        }
        if alts.len() >= 2 {
            with_two += 1;
        }
        let client_isp = client_isps.get(&scan.client_id);
        let mut scan_has_isp_alt = false;
        for g in &alts {
            if let Some(isp) = infer_isp(g, rules) {
                scan_has_isp_alt = true;
                if let Some(client_isp) = client_isp {
                    attributed_groups += 1;
                    if isp != client_isp {
                        cross_isp_groups += 1;
                    }
                }
            }
        }
        if scan_has_isp_alt {
            with_isp_alt += 1;
        }
    }
    let n = scans.len() as f64;
    best_signals.sort_by(|a, b| a.partial_cmp(b).expect("signals are finite"));
    let mut cdf = Vec::new();
    let total = best_signals.len();
    let mut i = 0;
    while i < total {
        let v = best_signals[i];
        let mut j = i + 1;
        while j < total && best_signals[j] == v {
            j += 1;
        }
        cdf.push(SignalCdfPoint { signal_pct: v, cum_fraction: j as f64 / total as f64 });
        i = j;
    }
    Ok(ApSurveyReport {
        scans: scans.len() as u64,
        blocked_entries: blocked,
        frac_with_alternative: with_alt as f64 / n,
        frac_with_two_alternatives: with_two as f64 / n,
        frac_with_strong_alternative: strong as f64 / n,
        frac_with_isp_alternative: with_isp_alt as f64 / n,
        frac_alt_groups_cross_isp: if attributed_groups == 0 {
            0.0
        } else {
            cross_isp_groups as f64 / attributed_groups as f64
        },
        signal_cutoff,
        best_alt_signal_cdf: cdf,
        near_threshold_pairs: near_threshold,
    })
}

/// The default blocklist as owned strings, for callers taking `&[String]`.
pub fn default_blocklist() -> Vec<String> {
    DEFAULT_SSID_BLOCKLIST.iter().map(|s| s.to_string()).collect()
}
