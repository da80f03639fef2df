//! Receiving side of one replica: certificate-checked delivery, the
//! contiguity buffer behind cumulative acks, φ-lists and the
//! garbage-collection hint rule.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::types::{AckReport, CommittedMessage, LogicalId, PhiList, RsmConfig, StreamPos};

/// What a replica does with its cumulative counter once enough sender
/// replicas vouch that a prefix was received by some correct replica.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GcMode {
    /// Mark the prefix received without the payloads.
    #[default]
    Advance,
    /// Pull the missing payloads from local peers, then advance.
    Fetch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForeignOutcome {
    pub deliver: bool,
    pub broadcast: bool,
}

impl ForeignOutcome {
    const IGNORED: Self = Self {
        deliver: false,
        broadcast: false,
    };
}

/// Received stream positions and the derived cumulative counter.
#[derive(Clone, Debug)]
pub struct AckBuffer {
    /// Received positions at or above `cum`.
    received: BTreeSet<StreamPos>,
    cum: u64,
    phi_cap: usize,
    delivered: BTreeMap<StreamPos, CommittedMessage>,
    delivered_log: Vec<StreamPos>,
    /// Positions counted as received on the strength of a hint quorum.
    advanced_without_payload: u64,
}

impl AckBuffer {
    pub fn new(phi_cap: usize) -> Self {
        Self {
            received: BTreeSet::new(),
            cum: 0,
            phi_cap,
            delivered: BTreeMap::new(),
            delivered_log: Vec::new(),
            advanced_without_payload: 0,
        }
    }

    pub fn cum(&self) -> u64 {
        self.cum
    }

    pub fn phi_cap(&self) -> usize {
        self.phi_cap
    }

    pub fn contains(&self, pos: StreamPos) -> bool {
        pos < self.cum || self.received.contains(&pos)
    }

    /// Positions in delivery order.
    pub fn delivered_log(&self) -> &[StreamPos] {
        &self.delivered_log
    }

    pub fn delivered(&self, pos: StreamPos) -> Option<&CommittedMessage> {
        self.delivered.get(&pos)
    }

    pub fn delivered_messages(&self) -> impl Iterator<Item = &CommittedMessage> {
        self.delivered.values()
    }

    pub fn advanced_without_payload(&self) -> u64 {
        self.advanced_without_payload
    }

    fn insert(&mut self, pos: StreamPos) {
        if pos < self.cum {
            return;
        }
        self.received.insert(pos);
        while self.received.remove(&self.cum) {
            self.cum += 1;
        }
    }

    fn accept(&mut self, msg: &CommittedMessage, sender_rsm: &RsmConfig) -> Option<StreamPos> {
        let pos = msg.k_prime?;
        if self.contains(pos) || !msg.is_valid(sender_rsm) {
            return None;
        }
        self.insert(pos);
        self.delivered.insert(pos, msg.clone());
        self.delivered_log.push(pos);
        Some(pos)
    }

    /// A message arriving straight from the sending RSM. The designated
    /// receiver of an attempt always rebroadcasts what it newly delivers.
    pub fn on_foreign_message(&mut self, msg: &CommittedMessage, sender_rsm: &RsmConfig) -> ForeignOutcome {
        match self.accept(msg, sender_rsm) {
            Some(_) => ForeignOutcome {
                deliver: true,
                broadcast: true,
            },
            None => ForeignOutcome::IGNORED,
        }
    }

    /// A message relayed by a peer of this RSM. Re-validated before delivery.
    pub fn on_local_broadcast(&mut self, msg: &CommittedMessage, sender_rsm: &RsmConfig) -> bool {
        self.accept(msg, sender_rsm).is_some()
    }

    /// Cumulative ack plus a presence bitmap over `cum..cum+phi`.
    pub fn make_ack(&self, from: LogicalId, phi: usize) -> AckReport {
        let phi = phi.min(self.phi_cap);
        let end = self.cum + phi as u64;
        let offsets = self.received.range(self.cum..end).map(|&p| (p - self.cum) as usize);
        AckReport {
            phi_list: PhiList::from_offsets(offsets),
            ..AckReport::new(from, self.cum)
        }
    }

    /// Applies the current hint quorum. Returns whether `cum` moved.
    ///
    /// In [`GcMode::Fetch`] `fetch` is asked for each missing position below
    /// the hinted count; positions it cannot supply are advanced over.
    pub fn apply_gc_hint(
        &mut self,
        hints: &HintTracker,
        sender_rsm: &RsmConfig,
        mode: GcMode,
        mut fetch: impl FnMut(StreamPos) -> Option<CommittedMessage>,
    ) -> bool {
        let Some(target) = hints.quorum_hint() else {
            return false;
        };
        if target <= self.cum {
            return false;
        }
        let before = self.cum;
        let missing: Vec<StreamPos> = (self.cum..target).filter(|p| !self.received.contains(p)).collect();
        for pos in missing {
            if mode == GcMode::Fetch {
                if let Some(msg) = fetch(pos) {
                    if msg.k_prime == Some(pos) && self.accept(&msg, sender_rsm).is_some() {
                        continue;
                    }
                }
            }
            self.advanced_without_payload += 1;
            self.insert(pos);
        }
        self.cum > before
    }
}

/// Highest hint seen from each sender replica.
#[derive(Clone, Debug)]
pub struct HintTracker {
    shares: Vec<u64>,
    threshold: u64,
    hints: Vec<Option<u64>>,
}

impl HintTracker {
    /// `shares` indexed by the sender's logical id; a quorum is `r_s + 1`.
    pub fn new(shares: Vec<u64>, r_s: u64) -> Self {
        let n = shares.len();
        Self {
            shares,
            threshold: r_s + 1,
            hints: vec![None; n],
        }
    }

    /// Records a hint; returns whether the sender's hint grew.
    pub fn record(&mut self, from: LogicalId, hint: u64) -> bool {
        match self.hints.get_mut(from as usize) {
            Some(slot) if slot.is_none_or(|h| h < hint) => {
                *slot = Some(hint);
                true
            }
            _ => false,
        }
    }

    /// Largest `k` such that senders totalling `r_s + 1` share hinted `≥ k`.
    pub fn quorum_hint(&self) -> Option<u64> {
        let mut seen: Vec<(u64, u64)> = self
            .hints
            .iter()
            .zip(&self.shares)
            .filter_map(|(h, &s)| h.map(|h| (h, s)))
            .collect();
        seen.sort_by_key(|s| std::cmp::Reverse(s.0));
        let mut acc = 0;
        for (h, s) in seen {
            acc += s;
            if acc >= self.threshold {
                return Some(h);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RsmConfig {
        RsmConfig::equal(1, 4, 1, 1)
    }

    fn msg(pos: u64) -> CommittedMessage {
        CommittedMessage::committed(&cfg(), format!("m{pos}").into_bytes(), pos, Some(pos))
    }

    #[test]
    fn first_message_delivers_and_broadcasts() {
        let mut b = AckBuffer::new(8);
        let out = b.on_foreign_message(&msg(0), &cfg());
        assert_eq!(
            out,
            ForeignOutcome {
                deliver: true,
                broadcast: true
            }
        );
        assert_eq!(b.cum(), 1);
        assert_eq!(b.on_foreign_message(&msg(0), &cfg()), ForeignOutcome::IGNORED);
    }

    #[test]
    fn gap_holds_counter() {
        let mut b = AckBuffer::new(8);
        for p in 0..4 {
            b.on_foreign_message(&msg(p), &cfg());
        }
        assert!(b.on_foreign_message(&msg(5), &cfg()).deliver);
        assert_eq!(b.cum(), 4);
    }

    #[test]
    fn invalid_certificate_ignored() {
        let mut b = AckBuffer::new(8);
        let mut m = msg(0);
        m.cert.signers.truncate(2);
        assert_eq!(b.on_foreign_message(&m, &cfg()), ForeignOutcome::IGNORED);
        assert_eq!(b.cum(), 0);
        assert!(b.delivered_log().is_empty());
    }

    #[test]
    fn untransmitted_message_ignored() {
        let mut b = AckBuffer::new(8);
        let m = CommittedMessage::committed(&cfg(), b"x".to_vec(), 9, None);
        assert!(!b.on_foreign_message(&m, &cfg()).deliver);
    }

    #[test]
    fn acks_and_phi_lists() {
        let mut b = AckBuffer::new(8);
        assert_eq!(b.make_ack(0, 8), AckReport::new(0, 0));
        for p in 0..4 {
            b.on_foreign_message(&msg(p), &cfg());
        }
        let a = b.make_ack(0, 8);
        assert_eq!((a.cum_ack, a.phi_list.is_empty()), (4, true));
        b.on_foreign_message(&msg(7), &cfg());
        let a = b.make_ack(0, 8);
        assert_eq!(a.cum_ack, 4);
        assert_eq!(
            (0..4).map(|j| a.phi_list.get(j)).collect::<Vec<_>>(),
            vec![false, false, false, true]
        );
        // Out-of-window positions are held but not reported.
        b.on_foreign_message(&msg(20), &cfg());
        assert_eq!(b.make_ack(0, 8).phi_list.offsets().collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn broadcast_fills_gap() {
        let mut b = AckBuffer::new(8);
        b.on_foreign_message(&msg(0), &cfg());
        for p in 1..4 {
            assert!(b.on_local_broadcast(&msg(p), &cfg()));
        }
        assert_eq!(b.cum(), 4);
        assert!(!b.on_local_broadcast(&msg(2), &cfg()));
        assert_eq!(b.delivered_log(), &[0, 1, 2, 3]);
    }

    #[test]
    fn hint_quorum_advances() {
        let mut b = AckBuffer::new(8);
        for p in 0..6 {
            b.on_foreign_message(&msg(p), &cfg());
        }
        let mut hints = HintTracker::new(vec![1; 4], 1);
        hints.record(2, 10);
        assert!(!b.apply_gc_hint(&hints, &cfg(), GcMode::Advance, |_| None));
        assert_eq!(b.cum(), 6);
        hints.record(0, 10);
        assert!(b.apply_gc_hint(&hints, &cfg(), GcMode::Advance, |_| None));
        assert_eq!(b.cum(), 10);
        assert_eq!(b.advanced_without_payload(), 4);
    }

    #[test]
    fn hint_quorum_fetches_from_peer() {
        let mut b = AckBuffer::new(8);
        for p in 0..6 {
            b.on_foreign_message(&msg(p), &cfg());
        }
        let peer: BTreeMap<u64, CommittedMessage> = (6..10).map(|p| (p, msg(p))).collect();
        let mut hints = HintTracker::new(vec![1; 4], 1);
        hints.record(1, 10);
        hints.record(3, 12);
        assert!(b.apply_gc_hint(&hints, &cfg(), GcMode::Fetch, |p| peer.get(&p).cloned()));
        assert_eq!(b.cum(), 10);
        assert_eq!(b.advanced_without_payload(), 0);
        assert_eq!(b.delivered_log(), &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
    }
}
