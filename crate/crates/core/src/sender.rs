//! Sending side of one replica: per-receiver ack tracking, cumulative quorum
//! acknowledgments (QUACKs), duplicate-QUACK rounds that flag lost messages,
//! resend planning and garbage collection.
//!
//! The same machinery tracks local peers' acks for the backup rebroadcast
//! path, with the local RSM's shares and budgets.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use crate::scheduler::PairSchedule;
use crate::types::{AckReport, LogicalId, StreamPos};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum QuackEvent {
    /// The contiguous quacked prefix grew to `level` positions.
    Quacked { level: u64 },
    /// A single position past the prefix became quacked through φ-lists.
    QuackedPosition { pos: StreamPos },
    /// `from` complained again about missing `pos`.
    DuplicateAck { pos: StreamPos, from: LogicalId },
    /// A full duplicate round for `pos` completed; `count` rounds so far.
    DuplicateRound { pos: StreamPos, count: u32 },
}

#[derive(Clone, Debug, Default)]
struct Round {
    members: BTreeSet<LogicalId>,
    share: u64,
    /// Reporters heard from since the previous round closed. A reporter must
    /// be heard once before it can join a later round, so complaints already
    /// in flight when a resend went out do not open another round.
    refreshed: BTreeSet<LogicalId>,
}

/// Ack bookkeeping against one group of reporters.
#[derive(Clone, Debug)]
pub struct QuackState {
    shares: Vec<u64>,
    quack_threshold: u64,
    dup_threshold: u64,
    highest_ack: Vec<Option<u64>>,
    /// Positions above `highest_ack` that the reporter's φ-lists marked received.
    phi_seen: Vec<BTreeSet<StreamPos>>,
    /// Positions each reporter's last report showed missing.
    last_missing: Vec<BTreeSet<StreamPos>>,
    /// Whether each reporter's last report held anything past its cumulative ack.
    last_gapped: Vec<bool>,
    quack_level: u64,
    quacked_extra: BTreeSet<StreamPos>,
    dup_count: BTreeMap<StreamPos, u32>,
    rounds: BTreeMap<StreamPos, Round>,
    gc_horizon: u64,
    stream_len: u64,
    window: u64,
}

impl QuackState {
    /// `shares` indexed by the reporter's logical id. A QUACK needs `u + 1`
    /// share, a duplicate round `r + 1` share of distinct reporters.
    pub fn new(shares: Vec<u64>, u: u64, r: u64) -> Self {
        let n = shares.len();
        Self {
            shares,
            quack_threshold: u + 1,
            dup_threshold: r + 1,
            highest_ack: vec![None; n],
            phi_seen: vec![BTreeSet::new(); n],
            last_missing: vec![BTreeSet::new(); n],
            last_gapped: vec![false; n],
            quack_level: 0,
            quacked_extra: BTreeSet::new(),
            dup_count: BTreeMap::new(),
            rounds: BTreeMap::new(),
            gc_horizon: 0,
            stream_len: u64::MAX,
            window: u64::MAX,
        }
    }

    /// Number of positions committed to the stream so far. Complaints about
    /// positions at or past this are ignored.
    pub fn set_stream_len(&mut self, len: u64) {
        self.stream_len = len;
    }

    /// In-flight window; complaints about positions not yet sendable are ignored.
    pub fn set_window(&mut self, window: u64) {
        self.window = window;
    }

    pub fn quack_level(&self) -> u64 {
        self.quack_level
    }

    pub fn is_quacked(&self, pos: StreamPos) -> bool {
        pos < self.quack_level || self.quacked_extra.contains(&pos)
    }

    pub fn dup_count(&self, pos: StreamPos) -> u32 {
        self.dup_count.get(&pos).copied().unwrap_or(0)
    }

    /// Positions with at least one completed duplicate round.
    pub fn duplicate_rounds(&self) -> impl Iterator<Item = (StreamPos, u32)> + '_ {
        self.dup_count.iter().map(|(&p, &c)| (p, c))
    }

    pub fn highest_ack(&self, from: LogicalId) -> Option<u64> {
        self.highest_ack.get(from as usize).copied().flatten()
    }

    pub fn gc_horizon(&self) -> u64 {
        self.gc_horizon
    }

    fn complaint_limit(&self) -> u64 {
        self.stream_len.min(self.quack_level.saturating_add(self.window))
    }

    /// Folds one acknowledgment into the state.
    pub fn record_ack(&mut self, report: &AckReport) -> Vec<QuackEvent> {
        let from = report.from_replica;
        let idx = from as usize;
        if idx >= self.shares.len() {
            return Vec::new();
        }
        let cum = report.cum_ack;
        let prev = self.highest_ack[idx];
        let prev_missing = std::mem::take(&mut self.last_missing[idx]);
        let gapped = !report.phi_list.is_empty();
        let prev_gapped = std::mem::replace(&mut self.last_gapped[idx], gapped);

        let highest = prev.map_or(cum, |p| p.max(cum));
        self.highest_ack[idx] = Some(highest);
        let seen = &mut self.phi_seen[idx];
        for off in report.phi_list.offsets() {
            seen.insert(cum.saturating_add(off as u64));
        }
        *seen = seen.split_off(&highest);

        let mut events = self.recompute_quacks();

        let mut missing = BTreeSet::new();
        missing.insert(cum);
        if let Some(top) = report.phi_list.highest_offset() {
            for j in 1..top {
                if !report.phi_list.get(j) {
                    missing.insert(cum + j as u64);
                }
            }
        }

        let limit = self.complaint_limit();
        for &pos in &missing {
            if pos >= limit {
                continue;
            }
            // The first report to reveal a hole past `cum` is progress, not a
            // repeat: the earlier one may predate the message's arrival.
            // With nothing quacked yet there is no prefix to repeat, so the
            // stream must be known to have moved past `cum` some other way.
            let moved_past = cum > 0
                || self.quacked_extra.range(cum + 1..).next().is_some()
                || cum.saturating_add(1) >= self.stream_len;
            let repeated = if pos == cum {
                prev == Some(cum) && self.quack_level >= cum && moved_past && (prev_gapped || !gapped)
            } else {
                prev_missing.contains(&pos)
                    && !self.is_quacked(pos)
                    && self.quacked_extra.range(pos + 1..).next().is_some()
            };
            if repeated {
                events.extend(self.complain(pos, from));
            }
        }
        self.last_missing[idx] = missing;
        events
    }

    fn complain(&mut self, pos: StreamPos, from: LogicalId) -> Vec<QuackEvent> {
        let first_round = self.dup_count(pos) == 0;
        let round = self.rounds.entry(pos).or_default();
        if !first_round && round.refreshed.insert(from) {
            return Vec::new();
        }
        let mut events = vec![QuackEvent::DuplicateAck { pos, from }];
        if round.members.insert(from) {
            round.share += self.shares[from as usize];
        }
        if round.share >= self.dup_threshold {
            self.rounds.remove(&pos);
            let count = self.dup_count.entry(pos).or_insert(0);
            *count += 1;
            events.push(QuackEvent::DuplicateRound { pos, count: *count });
        }
        events
    }

    fn covering_share(&self, pos: StreamPos) -> u64 {
        (0..self.shares.len())
            .filter(|&i| self.highest_ack[i].is_some_and(|h| h > pos) || self.phi_seen[i].contains(&pos))
            .map(|i| self.shares[i])
            .sum()
    }

    fn recompute_quacks(&mut self) -> Vec<QuackEvent> {
        let mut events = Vec::new();
        let mut acks: Vec<(u64, u64)> = self
            .highest_ack
            .iter()
            .zip(&self.shares)
            .filter_map(|(h, &s)| h.map(|h| (h, s)))
            .collect();
        acks.sort_by_key(|a| std::cmp::Reverse(a.0));
        let mut acc = 0;
        let mut level = self.quack_level;
        for (h, s) in acks {
            acc += s;
            if acc >= self.quack_threshold {
                level = level.max(h);
                break;
            }
        }

        let candidates: BTreeSet<StreamPos> = self.phi_seen.iter().flat_map(|s| s.range(level..).copied()).collect();
        for pos in candidates {
            if !self.quacked_extra.contains(&pos) && self.covering_share(pos) >= self.quack_threshold {
                self.quacked_extra.insert(pos);
                events.push(QuackEvent::QuackedPosition { pos });
            }
        }
        self.quacked_extra = self.quacked_extra.split_off(&level);
        while self.quacked_extra.remove(&level) {
            level += 1;
        }
        if level > self.quack_level {
            self.quack_level = level;
            self.dup_count = self.dup_count.split_off(&level);
            events.retain(|e| !matches!(e, QuackEvent::QuackedPosition { pos } if *pos < level));
            events.insert(0, QuackEvent::Quacked { level });
        }
        events
    }

    /// Releases every position below the quacked prefix.
    pub fn gc_collect(&mut self) -> Range<StreamPos> {
        let released = self.gc_horizon..self.quack_level.max(self.gc_horizon);
        self.gc_horizon = released.end;
        released
    }
}

/// A retry this replica is responsible for if enough duplicate rounds form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingSend {
    pub pos: StreamPos,
    pub resend_number: u32,
    pub destination: LogicalId,
}

/// Resends due now, keyed by position. Entries below the quacked prefix are
/// dropped; an entry fires once `dup_count ≥ resend_number` and is replaced
/// by this replica's next retry slot for the same position.
pub fn plan_resends(
    st: &QuackState,
    my_id: LogicalId,
    schedule: &PairSchedule,
    pending: &mut BTreeMap<StreamPos, PendingSend>,
) -> Vec<PendingSend> {
    *pending = pending.split_off(&st.quack_level());
    let mut due = Vec::new();
    for (pos, count) in st.duplicate_rounds() {
        let Some(p) = pending.get_mut(&pos) else {
            continue;
        };
        if st.is_quacked(pos) {
            pending.remove(&pos);
            continue;
        }
        if count >= p.resend_number {
            due.push(p.clone());
            match schedule.next_owned_retry(pos, my_id, Some(p.resend_number)) {
                Some(t) => {
                    p.resend_number = t;
                    p.destination = schedule.retry(pos, t).1;
                }
                None => {
                    pending.remove(&pos);
                }
            }
        }
    }
    due
}
