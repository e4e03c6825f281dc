//! bbrel: command line front end over the reliability analysis library.
//!
//! Every subcommand reads its inputs, writes report files into one output
//! directory, and finishes with a run manifest (config hash, input digests,
//! tool version). Reports are staged under hidden names and renamed into
//! place only after the whole run succeeds, so a failing run leaves no
//! partial outputs behind. Reports are deterministic: re-running with the
//! same inputs and config reproduces byte-identical files.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error, 3 missing or malformed input, 4 no matched pairs, 5 empty scope
//! or no usable data.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bbrel_core::apsurvey;
use bbrel_core::cohort;
use bbrel_core::dns::{self, DnsHour};
use bbrel_core::error::{Error, Result};
use bbrel_core::experiments::{run_experiment, ExperimentConfig};
use bbrel_core::failover::{run_scenario, Scenario};
use bbrel_core::ingest::{ingest_units, Dataset, IngestReport, InputPaths};
use bbrel_core::model::{UnitId, UnitMeta};
use bbrel_core::multihome;
use bbrel_core::reliability::{aggregate_stats, compute_stats, loss_cdf, GroupBy, LossCdf};
use bbrel_core::report;
use bbrel_core::synth;

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_NO_MATCHES: u8 = 4;
const EXIT_NO_DATA: u8 = 5;

#[derive(Parser)]
#[command(name = "bbrel", version, about = "Broadband reliability analysis toolkit")]
struct Cli {
    /// Run configuration JSON file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Comma separated loss thresholds, overriding the config.
    #[arg(long, global = true)]
    thresholds: Option<String>,

    /// Output directory for reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed override for synthetic trace generation.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel analyses (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a telemetry drop and report every rejected or flagged row.
    Ingest { input: Option<PathBuf> },

    /// Availability, MTBF/MDT, loss distributions, and attribute rankings.
    Stats {
        input: Option<PathBuf>,

        /// Grouping key: all, unit, isp, tech, tier, region, year.
        #[arg(long)]
        group_by: Option<String>,

        /// Regional indicators CSV; adds correlations.csv to the outputs.
        #[arg(long)]
        indicators: Option<PathBuf>,
    },

    /// DNS resolver failure probabilities per ISP.
    Dns { input: Option<PathBuf> },

    /// Natural experiments over loss cohorts with matched pairs.
    Experiment { input: Option<PathBuf> },

    /// Simulated multihoming: paired units versus single lines.
    Multihome { input: Option<PathBuf> },

    /// Wi-Fi neighborhood survey from AP scan data.
    Apsurvey {
        scans: Option<PathBuf>,

        /// SSID-to-ISP attribution rules file (default: built-in rules).
        #[arg(long)]
        rules: Option<PathBuf>,

        /// units.csv supplying each scanning client's subscribed ISP.
        #[arg(long)]
        units: Option<PathBuf>,
    },

    /// Playback simulation of a link failover scenario.
    Failover { scenario: Option<PathBuf> },

    /// Generate a synthetic telemetry drop into the output directory.
    Synth,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Stats { .. } => "stats",
            Command::Dns { .. } => "dns",
            Command::Experiment { .. } => "experiment",
            Command::Multihome { .. } => "multihome",
            Command::Apsurvey { .. } => "apsurvey",
            Command::Failover { .. } => "failover",
            Command::Synth => "synth",
        }
    }
}

/// Run configuration. Every field has a default; command line flags win
/// over the file. `peak_window` and `seed`, when set, push down into the
/// experiment and synth sections so there is one source of truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    /// Loss thresholds defining failure, ascending, each in (0,1].
    thresholds: Vec<f64>,
    /// Local-hour window treated as peak time, half open.
    peak_window: Option<(u32, u32)>,
    /// Minimum common hours for a multihoming pair.
    min_overlap: u64,
    /// Link loss above which DNS hours are not trusted.
    link_loss_exclude: f64,
    /// Signal percentage at which an alternative AP counts as viable.
    signal_cutoff: f64,
    /// SSID substrings filtered out of AP scans.
    ssid_blocklist: Vec<String>,
    /// Default grouping for stats reports.
    group_by: String,
    /// Availability cut points for attribute ranking (default: quartiles).
    availability_cuts: Option<Vec<f64>>,
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    experiment: ExperimentConfig,
    synth: synth::SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            thresholds: vec![0.01, 0.05, 0.10],
            peak_window: None,
            min_overlap: multihome::DEFAULT_MIN_OVERLAP_HOURS,
            link_loss_exclude: dns::DEFAULT_LINK_LOSS_EXCLUDE,
            signal_cutoff: apsurvey::DEFAULT_SIGNAL_CUTOFF,
            ssid_blocklist: apsurvey::default_blocklist(),
            group_by: "all".into(),
            availability_cuts: None,
            input: None,
            out: None,
            seed: None,
            experiment: ExperimentConfig::default(),
            synth: synth::SynthSpec::default(),
        }
    }
}

impl RunConfig {
    fn apply_flags(&mut self, cli: &Cli) -> Result<()> {
        if let Some(spec) = &cli.thresholds {
            self.thresholds = parse_thresholds(spec)?;
        }
        if let Some(out) = &cli.out {
            self.out = Some(out.clone());
        }
        if cli.seed.is_some() {
            self.seed = cli.seed;
        }
        if let Some(window) = self.peak_window {
            self.experiment.peak_window = window;
        }
        if let Some(seed) = self.seed {
            self.synth.seed = seed;
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Config("at least one loss threshold is required".into()));
        }
        for t in &self.thresholds {
            if !(*t > 0.0 && *t <= 1.0) {
                return Err(Error::Config(format!("threshold {t} outside (0,1]")));
            }
        }
        for w in self.thresholds.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config("thresholds must be strictly ascending".into()));
            }
        }
        if self.min_overlap == 0 {
            return Err(Error::Config("min_overlap must be at least 1 hour".into()));
        }
        if !(0.0..=1.0).contains(&self.link_loss_exclude) {
            return Err(Error::Config("link_loss_exclude must be in [0,1]".into()));
        }
        if !(0.0..=100.0).contains(&self.signal_cutoff) {
            return Err(Error::Config("signal_cutoff must be in [0,100]".into()));
        }
        self.group_by.parse::<GroupBy>()?;
        if let Some(cuts) = &self.availability_cuts {
            if cuts.is_empty() {
                return Err(Error::Config("availability_cuts must not be empty".into()));
            }
            for c in cuts {
                if !(0.0..=1.0).contains(c) {
                    return Err(Error::Config(format!("availability cut {c} outside [0,1]")));
                }
            }
            for w in cuts.windows(2) {
                if w[1] <= w[0] {
                    return Err(Error::Config("availability_cuts must be ascending".into()));
                }
            }
        }
        if let Some((start, end)) = self.peak_window {
            if start > 23 || end > 23 {
                return Err(Error::Config("peak_window hours must be in 0..=23".into()));
            }
        }
        Ok(())
    }
}

fn parse_thresholds(spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad threshold `{}`", s.trim())))
        })
        .collect()
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the effective configuration, embedded in every report. Input
/// and output locations are excluded: they say where files live, not what
/// the analysis computes, and must not break hash equality across runs.
fn config_hash(cfg: &RunConfig) -> Result<String> {
    let mut cfg = cfg.clone();
    cfg.input = None;
    cfg.out = None;
    let value = serde_json::to_value(&cfg)?;
    let text = serde_json::to_string(&value)?;
    Ok(hex(&Sha256::digest(text.as_bytes())))
}

fn digest_input(path: &Path, inputs: &mut BTreeMap<String, String>) -> Result<()> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let name = path.file_name().unwrap_or_default().to_string_lossy().to_string();
    inputs.insert(name, hex(&Sha256::digest(&bytes)));
    Ok(())
}

/// Staged output files: written under hidden names, renamed into place on
/// commit, deleted on drop if the run failed first.
struct Stage {
    dir: PathBuf,
    files: Vec<(PathBuf, String)>,
    temp_dirs: Vec<PathBuf>,
    committed: bool,
}

impl Stage {
    fn new(dir: &Path) -> Result<Stage> {
        fs::create_dir_all(dir)?;
        Ok(Stage { dir: dir.to_path_buf(), files: Vec::new(), temp_dirs: Vec::new(), committed: false })
    }

    /// Reserve an output name and return the path to write it at.
    fn path(&mut self, name: &str) -> PathBuf {
        let tmp = self.dir.join(format!(".stage.{name}"));
        self.files.push((tmp.clone(), name.to_string()));
        tmp
    }

    /// Register an already-written temp file for commit under `name`.
    fn adopt(&mut self, tmp: PathBuf, name: &str) {
        self.files.push((tmp, name.to_string()));
    }

    /// A scratch directory cleaned up with the stage.
    fn temp_dir(&mut self, name: &str) -> Result<PathBuf> {
        let dir = self.dir.join(format!(".stage-{name}"));
        fs::create_dir_all(&dir)?;
        self.temp_dirs.push(dir.clone());
        Ok(dir)
    }

    fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.files.iter().map(|(_, n)| n.clone()).collect();
        names.sort();
        names
    }

    fn commit(mut self) -> Result<Vec<PathBuf>> {
        let mut finals = Vec::new();
        for (tmp, name) in &self.files {
            let dest = self.dir.join(name);
            fs::rename(tmp, &dest)?;
            finals.push(dest);
        }
        self.committed = true;
        for dir in &self.temp_dirs {
            let _ = fs::remove_dir_all(dir);
        }
        Ok(finals)
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        if !self.committed {
            for (tmp, _) in &self.files {
                let _ = fs::remove_file(tmp);
            }
            for dir in &self.temp_dirs {
                let _ = fs::remove_dir_all(dir);
            }
        }
    }
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    tool_version: String,
}

fn resolve_input(positional: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    positional
        .clone()
        .or_else(|| cfg.input.clone())
        .ok_or_else(|| Error::Config("no input path given; pass one or set `input` in the config".into()))
}

fn load_dataset(
    dir: &Path,
    inputs: &mut BTreeMap<String, String>,
) -> Result<(Dataset, IngestReport)> {
    let paths = InputPaths::in_dir(dir)?;
    digest_input(&paths.units, inputs)?;
    digest_input(&paths.pings, inputs)?;
    if let Some(p) = &paths.traffic {
        digest_input(p, inputs)?;
    }
    if let Some(p) = &paths.dns {
        digest_input(p, inputs)?;
    }
    Dataset::load(&paths)
}

fn cmd_ingest(
    hash: &str,
    dir: &Path,
    stage: &mut Stage,
    inputs: &mut BTreeMap<String, String>,
) -> Result<()> {
    let (data, ingest) = load_dataset(dir, inputs)?;
    #[derive(Serialize)]
    struct IngestOutput {
        units: u64,
        units_with_telemetry: u64,
        observed_unit_hours: u64,
        #[serde(flatten)]
        report: IngestReport,
    }
    let out = IngestOutput {
        units: data.meta.len() as u64,
        units_with_telemetry: data.series.len() as u64,
        observed_unit_hours: data.series.values().map(|s| s.len() as u64).sum(),
        report: ingest,
    };
    report::write_json_report(&stage.path("ingest_report.json"), hash, &out)
}

/// Group label for one record, mirroring the stats aggregation keys.
fn cdf_label(group_by: GroupBy, unit: &UnitId, meta: Option<&UnitMeta>, year: i32) -> Option<String> {
    match group_by {
        GroupBy::All => Some("all".into()),
        GroupBy::Unit => Some(format!("unit:{unit}")),
        GroupBy::Year => Some(format!("year:{year}")),
        GroupBy::Isp => meta.map(|m| format!("isp:{}", m.isp)),
        GroupBy::Technology => meta.map(|m| format!("tech:{}", m.technology)),
        GroupBy::Tier => meta.map(|m| format!("tier:{}", m.tier())),
        GroupBy::Region => meta.map(|m| format!("region:{}", m.region)),
    }
}

fn cmd_stats(
    cfg: &RunConfig,
    hash: &str,
    dir: &Path,
    group_by: Option<&str>,
    indicators: Option<&Path>,
    stage: &mut Stage,
    inputs: &mut BTreeMap<String, String>,
) -> Result<()> {
    let group_by: GroupBy = group_by.unwrap_or(&cfg.group_by).parse()?;
    let (data, _) = load_dataset(dir, inputs)?;

    let mut rows = Vec::new();
    for t in &cfg.thresholds {
        let groups = aggregate_stats(&data.series, &data.meta, group_by, *t)?;
        rows.extend(groups.into_values());
    }
    if rows.is_empty() {
        return Err(Error::EmptyScope("no observed hours in any group".into()));
    }
    report::write_stats_csv(&stage.path("stats.csv"), hash, &rows)?;

    let mut losses_by_group: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (unit, series) in &data.series {
        let meta = data.meta.get(unit);
        for rec in series {
            if let Some(label) = cdf_label(group_by, unit, meta, rec.hour.year_utc()) {
                losses_by_group.entry(label).or_default().push(rec.loss_rate);
            }
        }
    }
    let cdfs: Vec<(String, LossCdf)> = losses_by_group
        .into_iter()
        .map(|(label, losses)| loss_cdf(&losses, &cfg.thresholds).map(|c| (label, c)))
        .collect::<Result<_>>()?;
    report::write_cdf_csv(&stage.path("cdf.csv"), hash, &cdfs)?;

    // Attribute ranking and indicator correlations run at the first
    // (tightest) threshold.
    let t0 = cfg.thresholds[0];
    let mut availability: BTreeMap<UnitId, f64> = BTreeMap::new();
    for (unit, series) in &data.series {
        if !series.is_empty() {
            let s = compute_stats(unit.as_str(), series, t0)?;
            availability.insert(unit.clone(), s.availability_f64());
        }
    }
    let ranked = cohort::rank_attributes(&data.meta, &availability, cfg.availability_cuts.as_deref())?;
    report::write_infogain_csv(&stage.path("infogain.csv"), hash, &ranked)?;

    if let Some(ind_path) = indicators {
        digest_input(ind_path, inputs)?;
        let name = ind_path.file_name().unwrap_or_default().to_string_lossy().to_string();
        let file = fs::File::open(ind_path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", ind_path.display()))))?;
        let indicators = cohort::parse_indicators(&name, file)?;
        let regional = aggregate_stats(&data.series, &data.meta, GroupBy::Region, t0)?;

        let mut avail = Vec::new();
        let mut downtime = Vec::new();
        let mut urban = Vec::new();
        let mut density = Vec::new();
        let mut gsp = Vec::new();
        for ind in &indicators {
            let Some(stats) = regional.get(&format!("region:{}", ind.region)) else {
                log::warn!("indicators: region {} has no telemetry; skipped", ind.region);
                continue;
            };
            avail.push(stats.availability_f64());
            downtime.push(stats.annual_downtime_hours());
            urban.push(ind.urban_fraction);
            density.push(ind.pop_density);
            gsp.push(ind.gsp_per_capita);
        }
        let mut correlations = Vec::new();
        for (x_name, x) in [
            ("urban_fraction", &urban),
            ("pop_density", &density),
            ("gsp_per_capita", &gsp),
        ] {
            correlations.push(cohort::pearson(x_name, x, "availability", &avail)?);
            correlations.push(cohort::pearson(x_name, x, "annual_downtime", &downtime)?);
        }
        report::write_correlations_csv(&stage.path("correlations.csv"), hash, &correlations)?;
    }
    Ok(())
}

fn cmd_dns(
    cfg: &RunConfig,
    hash: &str,
    dir: &Path,
    stage: &mut Stage,
    inputs: &mut BTreeMap<String, String>,
) -> Result<()> {
    let (data, _) = load_dataset(dir, inputs)?;
    let mut hours = Vec::new();
    for ((unit, hour), counters) in &data.dns {
        let Some(meta) = data.meta.get(unit) else {
            log::warn!("dns: unit {unit} has probes but no metadata; skipped");
            continue;
        };
        let series = data.series_of(unit);
        let link_loss = series
            .binary_search_by_key(hour, |r| r.hour)
            .ok()
            .map(|i| series[i].loss_rate);
        let dns_hour = DnsHour::from_counters(unit.clone(), *hour, counters.clone(), link_loss);
        hours.push((meta.isp.clone(), dns::dns_hour_status(&dns_hour, cfg.link_loss_exclude)));
    }
    if hours.is_empty() {
        return Err(Error::NoData("no DNS probe rows in this drop".into()));
    }
    let probs = dns::dns_probs_by_isp(&hours)?;
    report::write_dns_csv(&stage.path("dns_probs.csv"), hash, probs.values())
}

fn cmd_experiment(
    cfg: &RunConfig,
    hash: &str,
    dir: &Path,
    stage: &mut Stage,
    inputs: &mut BTreeMap<String, String>,
) -> Result<()> {
    let (data, _) = load_dataset(dir, inputs)?;
    let experiment = run_experiment(&data, &cfg.experiment)?;
    report::write_json_report(&stage.path("experiment.json"), hash, &experiment)
}

fn cmd_multihome(
    cfg: &RunConfig,
    hash: &str,
    dir: &Path,
    stage: &mut Stage,
    inputs: &mut BTreeMap<String, String>,
) -> Result<()> {
    let (data, _) = load_dataset(dir, inputs)?;
    let mut rows = Vec::new();
    for t in &cfg.thresholds {
        rows.extend(multihome::sim_report(&data.meta, &data.series, cfg.min_overlap, *t)?);
    }
    report::write_multihome_csv(&stage.path("multihome.csv"), hash, &rows)
}

fn cmd_apsurvey(
    cfg: &RunConfig,
    hash: &str,
    scans_path: &Path,
    rules_path: Option<&Path>,
    units_path: Option<&Path>,
    stage: &mut Stage,
    inputs: &mut BTreeMap<String, String>,
) -> Result<()> {
    digest_input(scans_path, inputs)?;
    let name = scans_path.file_name().unwrap_or_default().to_string_lossy().to_string();
    let file = fs::File::open(scans_path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", scans_path.display()))))?;
    let scans = apsurvey::parse_scans(&name, file)?;

    let rules = match rules_path {
        Some(p) => {
            digest_input(p, inputs)?;
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
            apsurvey::parse_isp_rules(&text)?
        }
        None => apsurvey::default_isp_rules(),
    };

    let client_isps: BTreeMap<String, String> = match units_path {
        Some(p) => {
            digest_input(p, inputs)?;
            let name = p.file_name().unwrap_or_default().to_string_lossy().to_string();
            let file = fs::File::open(p)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
            let mut ingest = IngestReport::default();
            ingest_units(&name, file, &mut ingest)?
                .into_iter()
                .map(|(id, m)| (id.to_string(), m.isp))
                .collect()
        }
        None => {
            log::info!("apsurvey: no units file; cross-ISP fraction will be empty");
            BTreeMap::new()
        }
    };

    let survey = apsurvey::survey(&scans, &client_isps, &rules, &cfg.ssid_blocklist, cfg.signal_cutoff)?;
    report::write_json_report(&stage.path("ap_report.json"), hash, &survey)
}

fn cmd_failover(
    hash: &str,
    scenario_path: &Path,
    stage: &mut Stage,
    inputs: &mut BTreeMap<String, String>,
) -> Result<()> {
    digest_input(scenario_path, inputs)?;
    let text = fs::read_to_string(scenario_path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", scenario_path.display()))))?;
    let scenario: Scenario = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        file: scenario_path.display().to_string(),
        line: e.line() as u64,
        msg: e.to_string(),
    })?;
    let run = run_scenario(&scenario)?;
    report::write_trajectory_csv(&stage.path("trajectory.csv"), hash, &run.samples)?;
    report::write_json_report(&stage.path("failover_summary.json"), hash, &run.summary)
}

fn cmd_synth(cfg: &RunConfig, stage: &mut Stage) -> Result<()> {
    let out = synth::generate(&cfg.synth)?;
    let tmp = stage.temp_dir("synth")?;
    synth::write_csvs(&out, &tmp)?;
    for name in ["units.csv", "pings.csv", "traffic.csv", "dns.csv"] {
        let p = tmp.join(name);
        if p.is_file() {
            stage.adopt(p, name);
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let mut cfg = load_config(cli.config.as_deref())?;
    cfg.apply_flags(cli)?;
    cfg.validate()?;
    let hash = config_hash(&cfg)?;
    let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let mut stage = Stage::new(&out_dir)?;
    let mut inputs = BTreeMap::new();

    match &cli.command {
        Command::Ingest { input } => {
            cmd_ingest(&hash, &resolve_input(input, &cfg)?, &mut stage, &mut inputs)?
        }
        Command::Stats { input, group_by, indicators } => cmd_stats(
            &cfg,
            &hash,
            &resolve_input(input, &cfg)?,
            group_by.as_deref(),
            indicators.as_deref(),
            &mut stage,
            &mut inputs,
        )?,
        Command::Dns { input } => {
            cmd_dns(&cfg, &hash, &resolve_input(input, &cfg)?, &mut stage, &mut inputs)?
        }
        Command::Experiment { input } => {
            cmd_experiment(&cfg, &hash, &resolve_input(input, &cfg)?, &mut stage, &mut inputs)?
        }
        Command::Multihome { input } => {
            cmd_multihome(&cfg, &hash, &resolve_input(input, &cfg)?, &mut stage, &mut inputs)?
        }
        Command::Apsurvey { scans, rules, units } => cmd_apsurvey(
            &cfg,
            &hash,
            &resolve_input(scans, &cfg)?,
            rules.as_deref(),
            units.as_deref(),
            &mut stage,
            &mut inputs,
        )?,
        Command::Failover { scenario } => {
            cmd_failover(&hash, &resolve_input(scenario, &cfg)?, &mut stage, &mut inputs)?
        }
        Command::Synth => cmd_synth(&cfg, &mut stage)?,
    }

    let manifest = Manifest {
        command: cli.command.name().to_string(),
        inputs,
        outputs: stage.names(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    report::write_json_report(&stage.path("manifest.json"), &hash, &manifest)?;
    stage.commit()
}

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::WindowTooSmall { .. } => EXIT_USAGE,
        Error::MissingColumn { .. } | Error::Malformed { .. } | Error::Csv(_) | Error::Json(_) => {
            EXIT_INPUT
        }
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => EXIT_INPUT,
        Error::NoMatches(_) => EXIT_NO_MATCHES,
        Error::EmptyScope(_) | Error::NoData(_) | Error::Degenerate(_) => EXIT_NO_DATA,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    match run(&cli) {
        Ok(written) => {
            for path in written {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_parsing() {
        assert_eq!(parse_thresholds("0.01,0.05,0.1").unwrap(), vec![0.01, 0.05, 0.1]);
        assert_eq!(parse_thresholds(" 0.5 ").unwrap(), vec![0.5]);
        assert!(parse_thresholds("a,b").is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = RunConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.thresholds = vec![0.05, 0.01];
        assert!(cfg.validate().is_err());
        cfg.thresholds = vec![0.0];
        assert!(cfg.validate().is_err());
        cfg.thresholds = vec![1.5];
        assert!(cfg.validate().is_err());
        cfg.thresholds = vec![0.01];
        cfg.group_by = "bogus".into();
        assert!(cfg.validate().is_err());
        cfg.group_by = "isp".into();
        cfg.availability_cuts = Some(vec![0.9, 0.5]);
        assert!(cfg.validate().is_err());
        cfg.availability_cuts = Some(vec![0.5, 0.9]);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = config_hash(&RunConfig::default()).unwrap();
        let b = config_hash(&RunConfig::default()).unwrap();
        assert_eq!(a, b);
        let mut cfg = RunConfig::default();
        cfg.thresholds = vec![0.02];
        assert_ne!(config_hash(&cfg).unwrap(), a);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>("{\"thresholdz\": [0.1]}");
        assert!(err.is_err());
    }

    #[test]
    fn flag_overrides_push_down() {
        let cli = Cli::parse_from(["bbrel", "--seed", "7", "--thresholds", "0.02,0.2", "synth"]);
        let mut cfg = RunConfig::default();
        cfg.apply_flags(&cli).unwrap();
        assert_eq!(cfg.synth.seed, 7);
        assert_eq!(cfg.thresholds, vec![0.02, 0.2]);
    }
}
