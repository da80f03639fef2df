//! Copy accounting for the comparison protocols. These need no acknowledgment
//! machinery, so each message's fate is computed directly.

use crate::error::{Error, Result};
use crate::sim::scenario::{Behavior, Protocol, Resolved, Scenario};
use crate::types::{MetricRecord, StreamPos};

/// Whether a replica with this behavior fails to handle cross-RSM traffic for `pos`.
fn blocks(b: &Behavior, pos: StreamPos) -> bool {
    match b {
        Behavior::CrashAt(_) => true,
        Behavior::OmitForeign(sel) => sel.matches(pos),
        _ => false,
    }
}

pub fn run_baseline(scenario: &Scenario) -> Result<MetricRecord> {
    let resolved = scenario.resolve()?;
    baseline_with(scenario, &resolved)
}

pub(crate) fn baseline_with(scenario: &Scenario, res: &Resolved) -> Result<MetricRecord> {
    let protocol = scenario.protocol;
    if protocol == Protocol::Picsou {
        return Err(Error::config("protocol", "PICSOU is not a baseline"));
    }
    let [s_beh, r_beh] = &res.behaviors;
    let (n_s, n_r) = (s_beh.len(), r_beh.len());
    let u_s = res.configs[0].u;
    let u_r = res.configs[1].u as usize;
    let latency = scenario.links.latency;
    let timeout = 4 * latency;
    let batch = scenario.commit_batch.unwrap_or(n_s) as u64;
    let mut rec = MetricRecord::new(protocol.name(), scenario.messages);
    let mut leader = 0usize;

    for (k, m) in rec.per_message.iter_mut().enumerate() {
        let pos = k as StreamPos;
        let sent_at = 1 + (pos / batch) * scenario.send_period;
        let ok_r = |r: usize| !blocks(&r_beh[r], pos);
        let ok_s = |s: usize| !blocks(&s_beh[s], pos);
        match protocol {
            Protocol::Ost => {
                let (s, r) = (k % n_s, k % n_r);
                m.attempts = 1;
                if ok_s(s) {
                    m.copies = 1;
                    if ok_r(r) {
                        m.first_delivery = Some(sent_at + latency);
                    }
                }
            }
            Protocol::Ata => {
                m.attempts = 1;
                let live = (0..n_s).filter(|&s| ok_s(s)).count() as u64;
                m.copies = live * n_r as u64;
                if live > 0 && (0..n_r).any(ok_r) {
                    m.first_delivery = Some(sent_at + latency);
                }
            }
            Protocol::Ll => {
                m.attempts = 1;
                if ok_s(0) {
                    m.copies = 1;
                    if ok_r(0) {
                        m.first_delivery = Some(sent_at + latency);
                    }
                }
            }
            Protocol::Otu => {
                let mut at = sent_at;
                for round in 0..=u_s {
                    m.attempts = round as u32 + 1;
                    if ok_s(leader) {
                        let targets: Vec<usize> = (0..=u_r).map(|j| (k + j) % n_r).collect();
                        m.copies += targets.len() as u64;
                        if targets.iter().any(|&r| ok_r(r)) {
                            m.first_delivery = Some(at + latency);
                            break;
                        }
                    }
                    leader = (leader + 1) % n_s;
                    at += timeout;
                }
            }
            Protocol::Picsou => unreachable!(),
        }
    }
    rec.totals.resends = rec
        .per_message
        .iter()
        .map(|m| m.attempts.saturating_sub(1) as u64)
        .sum();
    rec.finalize();
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::{RsmSpec, Side};

    fn scenario(p: Protocol) -> Scenario {
        Scenario {
            protocol: p,
            ..Scenario::new(RsmSpec::equal(4, 1, 1), RsmSpec::equal(4, 1, 1), 100)
        }
    }

    #[test]
    fn failure_free_copies() {
        for (p, copies) in [
            (Protocol::Ata, 16.0),
            (Protocol::Otu, 2.0),
            (Protocol::Ll, 1.0),
            (Protocol::Ost, 1.0),
        ] {
            let rec = run_baseline(&scenario(p)).unwrap();
            assert_eq!(rec.copies_per_message(), copies, "{p:?}");
            assert!(rec.per_message.iter().all(|m| m.first_delivery.is_some()));
        }
    }

    #[test]
    fn otu_rotates_past_crashed_leader() {
        let s = scenario(Protocol::Otu).with_adversary(Side::Sender, 0, Behavior::CrashAt(1));
        let rec = run_baseline(&s).unwrap();
        assert_eq!(rec.per_message[0].attempts, 2);
        assert_eq!(rec.per_message[0].copies, 2);
        assert!(rec.per_message.iter().all(|m| m.first_delivery.is_some()));
        assert_eq!(rec.per_message[1].attempts, 1);
    }

    #[test]
    fn leader_link_has_no_guarantee() {
        let s = scenario(Protocol::Ll).with_adversary(Side::Receiver, 0, Behavior::CrashAt(1));
        let rec = run_baseline(&s).unwrap();
        assert!(rec.per_message.iter().all(|m| m.first_delivery.is_none()));
    }
}
