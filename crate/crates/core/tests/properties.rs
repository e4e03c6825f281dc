//! Randomized property tests for the analysis invariants: failure
//! classification against a brute-force oracle, exact-arithmetic identities,
//! monotonicity laws, and simulation conservation rules.

use std::collections::BTreeMap;
use std::str::FromStr;

use proptest::prelude::*;

use bbrel_core::apsurvey::{group_bssids, Entry, Mac};
use bbrel_core::cohort::{information_gain, pearson};
use bbrel_core::dns::{dns_failure_probabilities, DnsHourStatus, ExcludeReason};
use bbrel_core::experiments::binom_one_tailed;
use bbrel_core::failover::{step_stream, PlayerConfig, StreamClient};
use bbrel_core::model::{ratio, HourStamp, HourlyRecord, UnitId};
use bbrel_core::multihome::{combine, restrict_to_overlap};
use bbrel_core::reliability::{classify_failures, compute_stats, loss_cdf};
use bbrel_core::report::sig6;

const THRESHOLDS: [f64; 3] = [0.01, 0.05, 0.10];

fn series_strategy(max_len: usize) -> impl Strategy<Value = Vec<HourlyRecord>> {
    let step = (1i64..=3, prop_oneof![3 => Just(0.0f64), 2 => 0.0..=1.0f64]);
    prop::collection::vec(step, 1..=max_len).prop_map(|steps| {
        let mut hour = 0i64;
        let mut out = Vec::with_capacity(steps.len());
        for (gap, loss) in steps {
            hour += gap;
            out.push(HourlyRecord::loss_only(UnitId("u1".into()), HourStamp(hour), loss));
        }
        out
    })
}

/// Straightforward re-derivation of the failure runs: split on missing
/// hours, then scan each contiguous block.
fn brute_events(series: &[HourlyRecord], threshold: f64) -> Vec<(HourStamp, u64)> {
    let mut events = Vec::new();
    let mut i = 0;
    while i < series.len() {
        let mut j = i;
        while j + 1 < series.len() && series[j + 1].hour.0 == series[j].hour.0 + 1 {
            j += 1;
        }
        let mut k = i;
        while k <= j {
            if series[k].loss_rate >= threshold {
                let start = series[k].hour;
                let mut len = 1u64;
                while k + 1 <= j && series[k + 1].loss_rate >= threshold {
                    k += 1;
                    len += 1;
                }
                events.push((start, len));
            }
            k += 1;
        }
        i = j + 1;
    }
    events
}

proptest! {
    #[test]
    fn classification_matches_brute_force(series in series_strategy(100)) {
        for t in THRESHOLDS {
            let events = classify_failures(&series, t).unwrap();
            let got: Vec<(HourStamp, u64)> =
                events.iter().map(|e| (e.start, e.duration_hours)).collect();
            prop_assert_eq!(&got, &brute_events(&series, t));

            let stats = compute_stats("s", &series, t).unwrap();
            let downtime: u64 = got.iter().map(|(_, d)| d).sum();
            prop_assert_eq!(stats.downtime_hours, downtime);
            prop_assert_eq!(stats.uptime_hours + stats.downtime_hours, series.len() as u64);
            prop_assert_eq!(stats.failures, got.len() as u64);
            prop_assert_eq!(stats.availability, ratio(stats.uptime_hours, series.len() as u64));
        }
    }

    #[test]
    fn every_event_hour_is_at_or_above_threshold(series in series_strategy(80)) {
        let by_hour: BTreeMap<i64, f64> = series.iter().map(|r| (r.hour.0, r.loss_rate)).collect();
        for t in THRESHOLDS {
            for e in classify_failures(&series, t).unwrap() {
                for h in e.start.0..e.start.0 + e.duration_hours as i64 {
                    prop_assert!(by_hour[&h] >= t);
                }
                prop_assert!(e.max_loss >= t);
            }
        }
    }

    #[test]
    fn availability_is_nondecreasing_in_threshold(series in series_strategy(80)) {
        let mut prev = ratio(0, 1);
        for t in THRESHOLDS {
            let a = compute_stats("s", &series, t).unwrap().availability;
            prop_assert!(a >= prev);
            prev = a;
        }
    }

    #[test]
    fn cdf_is_a_distribution(series in series_strategy(80)) {
        let losses: Vec<f64> = series.iter().map(|r| r.loss_rate).collect();
        let cdf = loss_cdf(&losses, &THRESHOLDS).unwrap();
        for w in cdf.points.windows(2) {
            prop_assert!(w[0].loss < w[1].loss);
            prop_assert!(w[0].cum_fraction < w[1].cum_fraction);
        }
        prop_assert_eq!(cdf.points.last().unwrap().cum_fraction, 1.0);
        for w in cdf.exceedance.windows(2) {
            // Higher threshold, no more exceeding hours.
            prop_assert!(w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn pearson_symmetry_and_affine_invariance(
        data in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..40),
        a in prop_oneof![0.1..10.0f64, -10.0..-0.1f64],
        b in -50.0..50.0f64,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = data.into_iter().unzip();
        let forward = pearson("x", &x, "y", &y);
        let Ok(forward) = forward else { return Ok(()); };
        let backward = pearson("y", &y, "x", &x).unwrap();
        prop_assert!((forward.r - backward.r).abs() < 1e-9);
        prop_assert!(forward.r.abs() <= 1.0 + 1e-12);

        let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let affine = pearson("ax+b", &scaled, "y", &y).unwrap();
        prop_assert!((affine.r - a.signum() * forward.r).abs() < 1e-6);
    }

    #[test]
    fn information_gain_is_bounded_by_target_entropy(
        table in prop::collection::vec((0u8..4, 0u8..3), 1..200),
    ) {
        let pairs: Vec<(String, String)> = table
            .iter()
            .map(|(v, t)| (format!("v{v}"), format!("t{t}")))
            .collect();
        let gain = information_gain(&pairs).unwrap();
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for (_, t) in &pairs {
            *counts.entry(t).or_default() += 1;
        }
        let total = pairs.len() as f64;
        let h_target: f64 = counts
            .values()
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.log2()
            })
            .sum();
        prop_assert!(gain >= 0.0);
        prop_assert!(gain <= h_target + 1e-12);
    }

    #[test]
    fn binomial_tail_is_monotone_in_k(n in 1u64..400) {
        let mut prev = binom_one_tailed(n, 0).unwrap();
        prop_assert_eq!(prev, 1.0);
        for k in 1..=n.min(60) {
            let p = binom_one_tailed(n, k).unwrap();
            prop_assert!(p <= prev + 1e-12);
            prop_assert!((0.0..=1.0).contains(&p));
            prev = p;
        }
    }

    #[test]
    fn combine_is_symmetric_idempotent_and_dominant(
        a in series_strategy(60),
        b in series_strategy(60),
    ) {
        let label = UnitId("a+b".into());
        let ab = combine(&a, &b, &label);
        let ba = combine(&b, &a, &label);
        prop_assert_eq!(&ab, &ba);

        let aa = combine(&a, &a, &UnitId("a+a".into()));
        let a_losses: Vec<f64> = a.iter().map(|r| r.loss_rate).collect();
        let aa_losses: Vec<f64> = aa.iter().map(|r| r.loss_rate).collect();
        prop_assert_eq!(a_losses, aa_losses);

        if !ab.is_empty() {
            for t in THRESHOLDS {
                let combined = compute_stats("c", &ab, t).unwrap().availability;
                let on_a = compute_stats("a", &restrict_to_overlap(&a, &b), t).unwrap().availability;
                let on_b = compute_stats("b", &restrict_to_overlap(&b, &a), t).unwrap().availability;
                prop_assert!(combined >= on_a.max(on_b));
            }
        }
    }

    #[test]
    fn ap_grouping_partitions_and_ignores_order(
        macs in prop::collection::vec(any::<[u8; 6]>(), 1..14),
        seed in 0u64..1000,
    ) {
        let mut entries: Vec<Entry> = macs
            .iter()
            .map(|bytes| Entry {
                bssid: Mac(*bytes),
                ssid: "net".into(),
                signal_pct: 50.0,
                is_current: false,
            })
            .collect();
        let groups = group_bssids(&entries);

        let mut unique: Vec<Mac> = macs.iter().map(|b| Mac(*b)).collect();
        unique.sort();
        unique.dedup();
        let mut members: Vec<Mac> = groups.iter().flat_map(|g| g.members.clone()).collect();
        members.sort();
        prop_assert_eq!(&members, &unique);

        // Deterministic shuffle; grouping must not notice.
        let n = entries.len();
        for i in 0..n {
            let j = (seed as usize + i * 7) % n;
            entries.swap(i, j);
        }
        prop_assert_eq!(&group_bssids(&entries), &groups);
    }

    #[test]
    fn dns_probabilities_are_exclusive(
        counts in (0u16..500, 0u16..500, 0u16..500, 0u16..100),
    ) {
        let (zero, one, two, excluded) = counts;
        prop_assume!(zero + one + two > 0);
        let mut statuses = vec![DnsHourStatus::ZeroFailed; zero as usize];
        statuses.extend(vec![DnsHourStatus::OneFailed; one as usize]);
        statuses.extend(vec![DnsHourStatus::TwoFailed; two as usize]);
        statuses.extend(vec![
            DnsHourStatus::Excluded(ExcludeReason::LossyLink);
            excluded as usize
        ]);
        let p = dns_failure_probabilities("isp", &statuses).unwrap();
        prop_assert!(p.p_one + p.p_two <= 1.0 + 1e-12);
        prop_assert_eq!(p.hours_used, (zero + one + two) as u64);
        prop_assert_eq!(p.hours_excluded, excluded as u64);
    }

    #[test]
    fn stream_step_conserves_buffer(
        capacities in prop::collection::vec(0.0..20_000_000.0f64, 1..200),
        start in 0.0..120.0f64,
    ) {
        let cfg = PlayerConfig { start_buffer_s: start, ..PlayerConfig::default() };
        cfg.validate().unwrap();
        let mut client = StreamClient::new(&cfg);
        let dt = 0.1;
        for cap in capacities {
            let before = client.buffer_s;
            let was_stalled = client.stalled;
            let outcome = step_stream(&mut client, &cfg, cap, dt);
            let delta = client.buffer_s - before;
            prop_assert!((delta - (outcome.downloaded_s - outcome.played_s)).abs() < 1e-9);
            prop_assert!(client.buffer_s >= -1e-12);
            prop_assert!(client.buffer_s <= cfg.buffer_cap_s + 1e-12);
            prop_assert!(outcome.downloaded_s >= 0.0);
            prop_assert!((0.0..=dt + 1e-12).contains(&outcome.played_s));
            if was_stalled && client.stalled {
                // A stall consumes nothing until the buffer refills.
                prop_assert_eq!(outcome.played_s, 0.0);
            }
        }
    }

    #[test]
    fn sig6_round_trips_to_six_digits(x in -1e14..1e14f64) {
        let rendered = sig6(x);
        let parsed: f64 = rendered.parse().unwrap();
        if x != 0.0 {
            prop_assert!(((parsed - x) / x).abs() < 1e-5);
        }
        // Re-rendering the parsed value must be a fixed point.
        prop_assert_eq!(sig6(parsed), rendered);
    }
}

#[test]
fn mac_parsing_round_trips() {
    for raw in ["00:11:22:33:44:55", "a0:b1:c2:d3:e4:f5"] {
        let mac = Mac::from_str(raw).unwrap();
        assert_eq!(mac.to_string(), raw);
    }
}
