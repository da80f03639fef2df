//! Property checks for the protocol invariants.

use std::collections::HashSet;

use proptest::prelude::*;

use picsou::receiver::AckBuffer;
use picsou::scheduler::{hamilton_apportion, smooth_schedule, PairSchedule};
use picsou::sender::QuackState;
use picsou::sim::scenario::{RsmSpec, Scenario};
use picsou::sim::{self, Outcome};
use picsou::types::{AckReport, CommittedMessage, PhiList, RsmConfig};

/// Largest `k` such that reporters whose highest ack reaches `k` carry at
/// least `u + 1` share.
fn quorum_level(highest: &[u64], shares: &[u64], u: u64) -> u64 {
    let mut best = 0;
    for &k in highest {
        let weight: u64 = highest
            .iter()
            .zip(shares)
            .filter(|(h, _)| **h >= k)
            .map(|(_, s)| s)
            .sum();
        if weight > u {
            best = best.max(k);
        }
    }
    best
}

proptest! {
    #[test]
    fn quack_level_is_monotone_and_matches_quorum(
        acks in prop::collection::vec((0u32..4, 0u64..40), 1..80),
    ) {
        let shares = vec![1u64; 4];
        let mut st = QuackState::new(shares.clone(), 1, 1);
        let mut highest = vec![0u64; 4];
        let mut last = 0;
        for (from, cum) in acks {
            st.record_ack(&AckReport::new(from, cum));
            highest[from as usize] = highest[from as usize].max(cum);
            prop_assert!(st.quack_level() >= last);
            last = st.quack_level();
            prop_assert_eq!(st.quack_level(), quorum_level(&highest, &shares, 1));
        }
    }

    #[test]
    fn acks_from_unknown_replicas_are_ignored(from in 4u32..1000, cum in 0u64..1000) {
        let mut st = QuackState::new(vec![1; 4], 1, 1);
        prop_assert!(st.record_ack(&AckReport::new(from, cum)).is_empty());
        prop_assert_eq!(st.quack_level(), 0);
    }

    #[test]
    fn ack_encoding_round_trips(
        from in any::<u32>(),
        view in 0u32..(1 << 31),
        cum in any::<u64>(),
        offsets in prop::collection::btree_set(0usize..64, 0..20),
        hint in prop::option::of(any::<u64>()),
    ) {
        let report = AckReport {
            view,
            phi_list: PhiList::from_offsets(offsets),
            highest_quacked_hint: hint,
            ..AckReport::new(from, cum)
        };
        let bytes = report.encode();
        prop_assert_eq!(bytes.len(), report.encoded_len());
        prop_assert_eq!(AckReport::decode(&bytes), Some(report));
    }

    #[test]
    fn delivered_log_has_no_duplicates(order in prop::collection::vec(0u64..30, 0..120)) {
        let cfg = RsmConfig::equal(1, 4, 1, 1);
        let mut buf = AckBuffer::new(16);
        for (i, pos) in order.iter().enumerate() {
            let msg = CommittedMessage::committed(&cfg, vec![*pos as u8], *pos, Some(*pos));
            if i % 2 == 0 {
                buf.on_foreign_message(&msg, &cfg);
            } else {
                buf.on_local_broadcast(&msg, &cfg);
            }
        }
        let log = buf.delivered_log();
        let uniq: HashSet<_> = log.iter().collect();
        prop_assert_eq!(uniq.len(), log.len());
        let distinct: HashSet<_> = order.iter().collect();
        prop_assert_eq!(log.len(), distinct.len());
        // The cumulative ack is the length of the gap-free prefix.
        let cum = (0..).find(|p| !distinct.contains(p)).unwrap();
        prop_assert_eq!(buf.cum(), cum);
    }

    #[test]
    fn tampered_messages_are_never_delivered(
        pos in 0u64..100,
        tamper in 0usize..5,
        byte in any::<u8>(),
    ) {
        let cfg = RsmConfig::equal(1, 4, 1, 1);
        let mut msg = CommittedMessage::committed(&cfg, vec![1, 2, 3], pos, Some(pos));
        match tamper {
            0 => msg.payload.push(byte),
            1 => msg.cert.signers.truncate(2),
            2 => msg.cert.rsm_id = 2,
            3 => msg.cert.signers[0].1 += 1 + byte as u64,
            _ => msg.cert.threshold = 1,
        }
        let mut buf = AckBuffer::new(16);
        prop_assert!(!buf.on_foreign_message(&msg, &cfg).deliver);
        prop_assert!(!buf.on_local_broadcast(&msg, &cfg));
        prop_assert!(buf.delivered_log().is_empty());
    }

    #[test]
    fn apportionment_follows_quota_rule(
        shares in prop::collection::vec(0u64..10_000, 1..12),
        q in 1u64..500,
    ) {
        prop_assume!(shares.iter().sum::<u64>() > 0);
        let total: u64 = shares.iter().sum();
        let quotas = hamilton_apportion(&shares, q);
        prop_assert_eq!(quotas.iter().sum::<u64>(), q);
        for (s, a) in shares.iter().zip(&quotas) {
            let lower = s * q / total;
            let upper = lower + u64::from(s * q % total != 0);
            prop_assert!(*a >= lower && *a <= upper, "share {} quota {} not in [{}, {}]", s, a, lower, upper);
        }
    }

    #[test]
    fn smooth_schedule_fills_each_quota(quotas in prop::collection::vec(0u64..20, 1..10)) {
        let sched = smooth_schedule(&quotas);
        prop_assert_eq!(sched.len() as u64, quotas.iter().sum::<u64>());
        for (l, &want) in quotas.iter().enumerate() {
            let got = sched.iter().filter(|&&x| x as usize == l).count() as u64;
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn retries_visit_every_sender_and_receiver(n_s in 1usize..9, n_r in 1usize..9, seq in 0u64..500) {
        let sched = PairSchedule::Equal { n_s, n_r };
        let horizon = n_s.max(n_r) as u32;
        let senders: HashSet<u32> = (0..horizon).map(|t| sched.retry(seq, t).0).collect();
        let receivers: HashSet<u32> = (0..horizon).map(|t| sched.retry(seq, t).1).collect();
        prop_assert_eq!(senders.len(), n_s);
        prop_assert_eq!(receivers.len(), n_r);
    }

    #[test]
    fn original_pairs_are_balanced(n_s in 1usize..9, n_r in 1usize..9, rounds in 1u64..6) {
        let sched = PairSchedule::Equal { n_s, n_r };
        let len = rounds * (n_s * n_r) as u64;
        let mut per_pair = vec![0u64; n_s * n_r];
        for seq in 0..len {
            let (s, r) = sched.original(seq);
            per_pair[s as usize * n_r + r as usize] += 1;
        }
        // Each sender's successive originals walk the receivers cyclically,
        // so whole rotations hit every pair equally often.
        prop_assert!(per_pair.iter().all(|&c| c == rounds), "{:?}", per_pair);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn failure_free_copies_do_not_depend_on_seed(seed in any::<u64>(), n in 4usize..7) {
        let mut s = Scenario::new(RsmSpec::equal(n, 1, 1), RsmSpec::equal(n, 1, 1), 60);
        s.seed = seed;
        s.rsm_s.id_seed = Some(seed);
        s.rsm_r.id_seed = Some(seed ^ 1);
        let r = sim::run(&s, false).unwrap();
        prop_assert_eq!(r.outcome, Outcome::Completed);
        prop_assert_eq!(r.metrics.totals.copies, 60);
        prop_assert_eq!(r.metrics.totals.resends, 0);
    }

    #[test]
    fn same_seed_same_trace(seed in any::<u64>()) {
        let mut s = picsou::sim::canned::integrity(80, seed);
        s.seed = seed;
        let a = sim::run(&s, false).unwrap();
        let b = sim::run(&s, true).unwrap();
        prop_assert_eq!(a.trace_hash, b.trace_hash);
        prop_assert_eq!(a.ticks, b.ticks);
    }
}

#[test]
fn seeded_ids_are_uniform() {
    use picsou::scheduler::assign_ids;
    let (n, seeds) = (4usize, 10_000u64);
    let mut counts = vec![vec![0u64; n]; n];
    for seed in 0..seeds {
        let ids = assign_ids(&RsmConfig::equal(1, n, 1, 1).with_seed(seed));
        for phys in 0..n as u32 {
            counts[phys as usize][ids.logical(phys) as usize] += 1;
        }
    }
    let expected = seeds as f64 / n as f64;
    let chi2: f64 = counts
        .iter()
        .flatten()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // (n - 1)^2 = 9 degrees of freedom; 27.88 is the 0.999 quantile.
    assert!(chi2 < 27.88, "chi-square {chi2:.2} over {counts:?}");
}
