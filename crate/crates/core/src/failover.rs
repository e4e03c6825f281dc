//! Fluid model of a dual-link gateway and a streaming client riding it.
//!
//! Rates, not packets: capacity drains and fills a playback buffer measured
//! in seconds of media, which makes the stall criterion exact and the whole
//! simulation deterministic. The gateway serves from the primary link,
//! blacks out for the detection delay when the primary dies, then rides the
//! secondary until the primary has recovered (plus a switchback delay), or
//! forever if the policy is sticky.
//!
//! The client starts playing immediately; startup buffering is out of
//! scope. A stall begins when the buffer empties while the download rate
//! cannot sustain playback, and ends once the buffer refills to the resume
//! threshold. The ABR rule is a documented stand-in for player-internal
//! logic: drop one rung per step while the buffer sits below the low
//! watermark, rise one rung when it sits above the high watermark and the
//! link clears the next bitrate with 20% headroom.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DETECTION_DELAY_S: f64 = 5.0;
pub const DEFAULT_SWITCHBACK_DELAY_S: f64 = 5.0;
pub const DEFAULT_RESUME_THRESHOLD_S: f64 = 5.0;
pub const DEFAULT_LOW_WATERMARK_S: f64 = 10.0;
pub const DEFAULT_HIGH_WATERMARK_S: f64 = 30.0;
/// Buffers in the sessions this models plateau near 220 seconds.
pub const DEFAULT_BUFFER_CAP_S: f64 = 220.0;
pub const DEFAULT_DT_S: f64 = 0.1;
/// Headroom factor the ABR needs before climbing a rung.
pub const ABR_RISE_HEADROOM: f64 = 1.2;

/// One link outage, the half-open interval `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outage {
    pub start_s: f64,
    pub end_s: f64,
}

/// A WAN link: constant capacity except when an outage zeroes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub name: String,
    pub capacity_bps: f64,
    #[serde(default)]
    pub outages: Vec<Outage>,
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity_bps > 0.0) || !self.capacity_bps.is_finite() {
            return Err(Error::Config(format!("link {}: capacity must be positive", self.name)));
        }
        let mut prev_end = f64::NEG_INFINITY;
        for o in &self.outages {
            if !(o.start_s >= 0.0 && o.end_s > o.start_s && o.end_s.is_finite()) {
                return Err(Error::Config(format!(
                    "link {}: bad outage [{}, {})",
                    self.name, o.start_s, o.end_s
                )));
            }
            if o.start_s < prev_end {
                return Err(Error::Config(format!(
                    "link {}: outages must be sorted and disjoint",
                    self.name
                )));
            }
            prev_end = o.end_s;
        }
        Ok(())
    }

    pub fn up_at(&self, t: f64) -> bool {
        !self.outages.iter().any(|o| t >= o.start_s && t < o.end_s)
    }

    pub fn capacity_at(&self, t: f64) -> f64 {
        if self.up_at(t) {
            self.capacity_bps
        } else {
            0.0
        }
    }
}

/// When and how the gateway moves traffic off a dead primary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FailoverPolicy {
    pub detection_delay_s: f64,
    /// Return to the primary after it recovers; a sticky policy stays on
    /// the secondary once failed over.
    pub switchback: bool,
    pub switchback_delay_s: f64,
}

impl Default for FailoverPolicy {
    fn default() -> Self {
        FailoverPolicy {
            detection_delay_s: DEFAULT_DETECTION_DELAY_S,
            switchback: true,
            switchback_delay_s: DEFAULT_SWITCHBACK_DELAY_S,
        }
    }
}

impl FailoverPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.detection_delay_s < 0.0 || self.switchback_delay_s < 0.0 {
            return Err(Error::Config("failover delays must be >= 0".into()));
        }
        Ok(())
    }
}

/// Which source serves the household during a time segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Primary,
    /// Primary is down and the gateway has not yet noticed.
    Blackout,
    Secondary,
}

/// The serving source over `[0, inf)` as ordered segments. Depends only on
/// the primary's outage schedule and the policy: an outage no longer than
/// the detection delay never triggers a failover, and back-to-back outages
/// inside the switchback window extend one secondary stint.
struct Timeline {
    segments: Vec<(f64, f64, Source)>,
}

impl Timeline {
    fn build(primary: &LinkModel, policy: &FailoverPolicy) -> Timeline {
        let mut segments: Vec<(f64, f64, Source)> = Vec::new();
        let mut push = |s: f64, e: f64, src: Source| {
            if e > s {
                segments.push((s, e, src));
            }
        };
        let mut t = 0.0;
        let mut outages = primary.outages.iter().peekable();
        while let Some(o) = outages.next() {
            push(t, o.start_s, Source::Primary);
            t = o.start_s;
            let failover_at = o.start_s + policy.detection_delay_s;
            if o.end_s <= failover_at {
                push(t, o.end_s, Source::Blackout);
                t = o.end_s;
                continue;
            }
            push(t, failover_at, Source::Blackout);
            t = failover_at;
            if !policy.switchback {
                push(t, f64::INFINITY, Source::Secondary);
                return Timeline { segments };
            }
            let mut until = o.end_s + policy.switchback_delay_s;
            while let Some(next) = outages.peek() {
                if next.start_s < until {
                    until = outages.next().expect("peeked").end_s + policy.switchback_delay_s;
                } else {
                    break;
                }
            }
            push(t, until, Source::Secondary);
            t = until;
        }
        push(t, f64::INFINITY, Source::Primary);
        Timeline { segments }
    }

    fn source_at(&self, t: f64) -> Source {
        let idx = self.segments.partition_point(|(s, _, _)| *s <= t);
        self.segments[idx.saturating_sub(1)].2
    }
}

/// Capacity available to the household at time `t`.
///
/// Without a secondary the gateway never fails over and the outage is felt
/// in full. The secondary's own outages still apply while it serves.
pub fn effective_capacity(
    t: f64,
    primary: &LinkModel,
    secondary: Option<&LinkModel>,
    policy: &FailoverPolicy,
) -> f64 {
    let Some(secondary) = secondary else {
        return primary.capacity_at(t);
    };
    match Timeline::build(primary, policy).source_at(t) {
        Source::Primary => primary.capacity_at(t),
        Source::Blackout => 0.0,
        Source::Secondary => secondary.capacity_at(t),
    }
}

/// One rung of the bitrate ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRung {
    pub label: String,
    pub bitrate_bps: f64,
}

/// Player parameters. The ladder is ordered worst to best.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlayerConfig {
    pub buffer_cap_s: f64,
    pub start_buffer_s: f64,
    pub resume_threshold_s: f64,
    pub low_watermark_s: f64,
    pub high_watermark_s: f64,
    pub ladder: Vec<QualityRung>,
    /// Starting rung index; defaults to the top of the ladder.
    pub start_quality: Option<usize>,
}

impl Default for PlayerConfig {
    fn default() -> Self {
        PlayerConfig {
            buffer_cap_s: DEFAULT_BUFFER_CAP_S,
            start_buffer_s: 0.0,
            resume_threshold_s: DEFAULT_RESUME_THRESHOLD_S,
            low_watermark_s: DEFAULT_LOW_WATERMARK_S,
            high_watermark_s: DEFAULT_HIGH_WATERMARK_S,
            ladder: vec![
                QualityRung { label: "480p".into(), bitrate_bps: 1_500_000.0 },
                QualityRung { label: "720p".into(), bitrate_bps: 3_000_000.0 },
                QualityRung { label: "1080p".into(), bitrate_bps: 6_000_000.0 },
            ],
            start_quality: None,
        }
    }
}

impl PlayerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ladder.is_empty() {
            return Err(Error::Config("player ladder must not be empty".into()));
        }
        if self.ladder.iter().any(|r| !(r.bitrate_bps > 0.0)) {
            return Err(Error::Config("ladder bitrates must be positive".into()));
        }
        if self.ladder.windows(2).any(|w| w[0].bitrate_bps >= w[1].bitrate_bps) {
            return Err(Error::Config("ladder bitrates must be strictly ascending".into()));
        }
        if !(self.buffer_cap_s > 0.0) {
            return Err(Error::Config("buffer cap must be positive".into()));
        }
        if self.start_buffer_s < 0.0 || self.start_buffer_s > self.buffer_cap_s {
            return Err(Error::Config("start buffer must be within [0, cap]".into()));
        }
        if self.low_watermark_s < 0.0 || self.high_watermark_s <= self.low_watermark_s {
            return Err(Error::Config("watermarks must satisfy 0 <= low < high".into()));
        }
        if self.resume_threshold_s < 0.0 || self.resume_threshold_s > self.buffer_cap_s {
            return Err(Error::Config("resume threshold must be within [0, cap]".into()));
        }
        if let Some(q) = self.start_quality {
            if q >= self.ladder.len() {
                return Err(Error::Config("start quality is off the ladder".into()));
            }
        }
        Ok(())
    }

    fn initial_quality(&self) -> usize {
        self.start_quality.unwrap_or(self.ladder.len() - 1)
    }
}

/// Mutable player state.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamClient {
    pub buffer_s: f64,
    pub quality: usize,
    pub stalled: bool,
}

impl StreamClient {
    pub fn new(cfg: &PlayerConfig) -> StreamClient {
        StreamClient {
            buffer_s: cfg.start_buffer_s,
            quality: cfg.initial_quality(),
            stalled: false,
        }
    }
}

/// Exact accounting for one step, for conservation checks:
/// `buffer_after - buffer_before == downloaded_s - played_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Media seconds credited to the buffer (capped downloads discarded).
    pub downloaded_s: f64,
    /// Media seconds consumed by playback, at most `dt`.
    pub played_s: f64,
}

/// Advance the client by `dt` under the given capacity.
///
/// While playing, the buffer moves at `(capacity/bitrate - 1)` seconds per
/// second, capped above and stalling at zero; while stalled it refills at
/// `capacity/bitrate` until the resume threshold. The ABR rule then adjusts
/// the rung by at most one.
pub fn step_stream(
    client: &mut StreamClient,
    cfg: &PlayerConfig,
    capacity_bps: f64,
    dt: f64,
) -> StepOutcome {
    let bitrate = cfg.ladder[client.quality].bitrate_bps;
    let down = capacity_bps / bitrate * dt;
    let outcome;
    if client.stalled {
        let credited = down.min(cfg.buffer_cap_s - client.buffer_s);
        client.buffer_s += credited;
        if client.buffer_s >= cfg.resume_threshold_s {
            client.stalled = false;
        }
        outcome = StepOutcome { downloaded_s: credited, played_s: 0.0 };
    } else if client.buffer_s + down - dt <= 0.0 && down < dt {
        // The buffer empties this step with a deficit: play out what is
        // left and stall.
        let played = client.buffer_s + down;
        client.buffer_s = 0.0;
        client.stalled = true;
        outcome = StepOutcome { downloaded_s: down, played_s: played };
    } else {
        let credited = down.min(cfg.buffer_cap_s - client.buffer_s + dt);
        client.buffer_s = (client.buffer_s + credited - dt).min(cfg.buffer_cap_s);
        outcome = StepOutcome { downloaded_s: credited, played_s: dt };
    }
    if client.buffer_s < cfg.low_watermark_s {
        if client.quality > 0 {
            client.quality -= 1;
        }
    } else if client.buffer_s > cfg.high_watermark_s && client.quality + 1 < cfg.ladder.len() {
        let next = cfg.ladder[client.quality + 1].bitrate_bps;
        if capacity_bps >= ABR_RISE_HEADROOM * next {
            client.quality += 1;
        }
    }
    outcome
}

/// A complete scenario, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub primary: LinkModel,
    #[serde(default)]
    pub secondary: Option<LinkModel>,
    #[serde(default)]
    pub policy: FailoverPolicy,
    #[serde(default)]
    pub player: PlayerConfig,
    pub duration_s: f64,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
}

fn default_dt() -> f64 {
    DEFAULT_DT_S
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.primary.validate()?;
        if let Some(s) = &self.secondary {
            s.validate()?;
        }
        self.policy.validate()?;
        self.player.validate()?;
        if !(self.dt_s > 0.0) || !(self.duration_s > 0.0) {
            return Err(Error::Config("duration and dt must be positive".into()));
        }
        let steps = (self.duration_s / self.dt_s).round();
        if (steps * self.dt_s - self.duration_s).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "dt {} must divide duration {}",
                self.dt_s, self.duration_s
            )));
        }
        Ok(())
    }
}

/// State at the end of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub capacity_bps: f64,
    pub buffer_s: f64,
    pub quality: String,
    pub stalled: bool,
}

/// Whole-run summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    /// Playing-to-stalled transitions.
    pub stall_count: u64,
    /// Wall seconds not spent playing.
    pub stall_seconds: f64,
    /// Start of the first stall, if any.
    pub first_stall_s: Option<f64>,
    /// Playback seconds at each rung.
    pub quality_seconds: BTreeMap<String, f64>,
    pub min_buffer_s: f64,
    pub final_buffer_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub samples: Vec<Sample>,
    pub summary: ScenarioSummary,
}

/// Run a scenario to completion. Identical scenarios produce bitwise
/// identical trajectories.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioRun> {
    scenario.validate()?;
    let timeline = scenario
        .secondary
        .as_ref()
        .map(|_| Timeline::build(&scenario.primary, &scenario.policy));
    let capacity = |t: f64| -> f64 {
        match (&timeline, &scenario.secondary) {
            (Some(tl), Some(sec)) => match tl.source_at(t) {
                Source::Primary => scenario.primary.capacity_at(t),
                Source::Blackout => 0.0,
                Source::Secondary => sec.capacity_at(t),
            },
            _ => scenario.primary.capacity_at(t),
        }
    };
    let dt = scenario.dt_s;
    let steps = (scenario.duration_s / dt).round() as u64;
    let mut client = StreamClient::new(&scenario.player);
    let mut samples = Vec::with_capacity(steps as usize);
    let mut stall_count = 0u64;
    let mut stall_seconds = 0.0;
    let mut first_stall = None;
    let mut quality_seconds: BTreeMap<String, f64> = BTreeMap::new();
    let mut min_buffer = client.buffer_s;
    for step in 0..steps {
        let t0 = step as f64 * dt;
        let cap = capacity(t0);
        let was_stalled = client.stalled;
        let quality_before = client.quality;
        let outcome = step_stream(&mut client, &scenario.player, cap, dt);
        let t1 = t0 + dt;
        if !was_stalled && client.stalled {
            stall_count += 1;
            first_stall.get_or_insert(t0 + outcome.played_s);
        }
        stall_seconds += dt - outcome.played_s;
        if outcome.played_s > 0.0 {
            *quality_seconds
                .entry(scenario.player.ladder[quality_before].label.clone())
                .or_insert(0.0) += outcome.played_s;
        }
        min_buffer = min_buffer.min(client.buffer_s);
        samples.push(Sample {
            t: t1,
            capacity_bps: cap,
            buffer_s: client.buffer_s,
            quality: scenario.player.ladder[client.quality].label.clone(),
            stalled: client.stalled,
        });
    }
    Ok(ScenarioRun {
        samples,
        summary: ScenarioSummary {
            stall_count,
            stall_seconds,
            first_stall_s: first_stall,
            quality_seconds,
            min_buffer_s: min_buffer,
            final_buffer_s: client.buffer_s,
        },
    })
}
