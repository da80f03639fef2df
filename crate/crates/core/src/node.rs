//! One replica's full state machine: transmitting its RSM's stream,
//! receiving the peer RSM's stream, acknowledgments in both directions, and
//! the internal rebroadcast backup path.
//!
//! A node is driven by three entry points, [`PicsouNode::transmit`],
//! [`PicsouNode::receive`] and [`PicsouNode::tick`]. Each returns the
//! outputs it produced; nothing is sent behind the caller's back.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::receiver::{AckBuffer, GcMode, HintTracker};
use crate::scheduler::{IdAssignment, PairSchedule};
use crate::sender::{plan_resends, PendingSend, QuackEvent, QuackState};
use crate::types::{AckReport, CommittedMessage, LogicalId, RsmConfig, StreamPos};

/// When a node emits standalone acknowledgments at its ack slots.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckMode {
    /// Every slot, unless a data message already carried the ack.
    #[default]
    Periodic,
    /// Only after `ack_batch` new deliveries, by any path, since the last ack.
    OnData,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeParams {
    /// φ-list length in positions.
    pub phi: usize,
    /// Positions at or past `quack_level + window` are held back.
    pub window: u64,
    pub ack_mode: AckMode,
    pub ack_batch: u32,
    pub gc_mode: GcMode,
    /// Attach quacked-prefix hints once receivers are seen stuck below it.
    pub gc_hints: bool,
    /// Backup rebroadcast of locally relayed messages.
    pub local_rebroadcast: bool,
}

impl Default for NodeParams {
    fn default() -> Self {
        Self {
            phi: 16,
            window: 64,
            ack_mode: AckMode::Periodic,
            ack_batch: 1,
            gc_mode: GcMode::Advance,
            gc_hints: true,
            local_rebroadcast: true,
        }
    }
}

/// Simulated wire messages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Wire {
    /// Cross-RSM payload with the sender's piggybacked ack.
    Data { msg: CommittedMessage, ack: AckReport },
    /// Cross-RSM standalone ack.
    Ack(AckReport),
    /// Intra-RSM relay of a received payload, with the foreign ack it came with.
    Local {
        msg: CommittedMessage,
        ack: Option<AckReport>,
    },
    /// Intra-RSM receipt report used by the backup rebroadcast path.
    LocalAck(AckReport),
}

impl Wire {
    pub fn ack(&self) -> Option<&AckReport> {
        match self {
            Wire::Data { ack, .. } | Wire::Ack(ack) | Wire::LocalAck(ack) => Some(ack),
            Wire::Local { ack, .. } => ack.as_ref(),
        }
    }

    pub fn ack_mut(&mut self) -> Option<&mut AckReport> {
        match self {
            Wire::Data { ack, .. } | Wire::Ack(ack) | Wire::LocalAck(ack) => Some(ack),
            Wire::Local { ack, .. } => ack.as_mut(),
        }
    }

    pub fn message(&self) -> Option<&CommittedMessage> {
        match self {
            Wire::Data { msg, .. } | Wire::Local { msg, .. } => Some(msg),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeliverPath {
    Foreign,
    Local,
    Fetched,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Output {
    /// Cross-RSM send to the peer replica with logical id `to`.
    Send {
        to: LogicalId,
        wire: Wire,
        resend: Option<u32>,
    },
    /// Intra-RSM send to every other local replica.
    Broadcast {
        wire: Wire,
        backup: bool,
    },
    Deliver {
        pos: StreamPos,
        path: DeliverPath,
    },
    Quack(QuackEvent),
    /// A message whose certificate did not verify.
    Rejected {
        pos: Option<StreamPos>,
    },
    /// The receive counter jumped on a hint quorum.
    Advanced {
        from: u64,
        to: u64,
    },
    /// This node started attaching quacked-prefix hints.
    HintRaised {
        level: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct PendingBroadcast {
    pos: StreamPos,
    slot: u32,
    /// Local duplicate rounds already counted when the message arrived.
    base: u32,
}

fn shares_by_logical(cfg: &RsmConfig, ids: &IdAssignment) -> Vec<u64> {
    (0..cfg.node_count() as u32)
        .map(|l| cfg.shares[ids.physical(l) as usize])
        .collect()
}

#[derive(Clone, Debug)]
pub struct PicsouNode {
    me: LogicalId,
    local: RsmConfig,
    peer: RsmConfig,
    params: NodeParams,
    out_sched: PairSchedule,
    in_sched: PairSchedule,

    store: BTreeMap<StreamPos, CommittedMessage>,
    stream_len: u64,
    quack: QuackState,
    pending_sends: BTreeMap<StreamPos, PendingSend>,
    deferred: BTreeSet<StreamPos>,
    hint: Option<u64>,

    buffer: AckBuffer,
    hints: HintTracker,
    hint_dirty: bool,
    local_quack: QuackState,
    pending_broadcasts: Vec<PendingBroadcast>,

    data_since_tick: bool,
    /// Deliveries and cumulative ack when the last ack left.
    acked_progress: (usize, u64),
    /// Progress last reported to each peer replica, and at the previous tick.
    told: Vec<(usize, u64)>,
    tick_progress: (usize, u64),
    ack_rotation: u32,
}

impl PicsouNode {
    /// `out_sched` assigns this RSM's stream to peer receivers; `in_sched`
    /// assigns the peer's stream to this RSM's replicas.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        me: LogicalId,
        local: RsmConfig,
        local_ids: &IdAssignment,
        peer: RsmConfig,
        peer_ids: &IdAssignment,
        out_sched: PairSchedule,
        in_sched: PairSchedule,
        params: NodeParams,
    ) -> Self {
        let peer_shares = shares_by_logical(&peer, peer_ids);
        let n_peer = in_sched.sender_count();
        let local_shares = shares_by_logical(&local, local_ids);
        let mut quack = QuackState::new(peer_shares.clone(), peer.u, peer.r);
        quack.set_stream_len(0);
        quack.set_window(params.window);
        let mut local_quack = QuackState::new(local_shares, local.u, local.r);
        local_quack.set_window(params.window);
        Self {
            me,
            hints: HintTracker::new(peer_shares, peer.r),
            local,
            peer,
            out_sched,
            in_sched,
            store: BTreeMap::new(),
            stream_len: 0,
            quack,
            pending_sends: BTreeMap::new(),
            deferred: BTreeSet::new(),
            hint: None,
            buffer: AckBuffer::new(params.phi),
            hint_dirty: false,
            local_quack,
            pending_broadcasts: Vec::new(),
            data_since_tick: false,
            acked_progress: (0, 0),
            told: vec![(0, 0); n_peer],
            tick_progress: (0, 0),
            ack_rotation: 0,
            params,
        }
    }

    pub fn id(&self) -> LogicalId {
        self.me
    }

    pub fn params(&self) -> &NodeParams {
        &self.params
    }

    pub fn buffer(&self) -> &AckBuffer {
        &self.buffer
    }

    pub fn quack(&self) -> &QuackState {
        &self.quack
    }

    pub fn stream_len(&self) -> u64 {
        self.stream_len
    }

    pub fn pending_sends(&self) -> impl Iterator<Item = &PendingSend> {
        self.pending_sends.values()
    }

    pub fn hint(&self) -> Option<u64> {
        self.hint
    }

    pub fn deferred(&self) -> usize {
        self.deferred.len()
    }

    /// Positions a hint quorum would currently let this node skip to.
    pub fn gc_target(&self) -> Option<std::ops::Range<StreamPos>> {
        let target = self.hints.quorum_hint()?;
        (target > self.buffer.cum()).then(|| self.buffer.cum()..target)
    }

    /// The ack this node would attach right now.
    pub fn current_ack(&self) -> AckReport {
        let mut ack = self.buffer.make_ack(self.me, self.params.phi);
        ack.highest_quacked_hint = self.hint.map(|h| h.max(self.quack.quack_level()));
        ack
    }

    fn data(&mut self, to: LogicalId, msg: CommittedMessage, resend: Option<u32>) -> Output {
        self.data_since_tick = true;
        self.acked_progress = self.progress();
        if let Some(t) = self.told.get_mut(to as usize) {
            *t = self.acked_progress;
        }
        Output::Send {
            to,
            wire: Wire::Data {
                msg,
                ack: self.current_ack(),
            },
            resend,
        }
    }

    fn progress(&self) -> (usize, u64) {
        (self.buffer.delivered_log().len(), self.buffer.cum())
    }

    fn send_limit(&self) -> u64 {
        self.quack.quack_level().saturating_add(self.params.window)
    }

    /// Hands a message committed by the local RSM to this replica. The
    /// original owner sends it (or holds it until the window allows); other
    /// replicas remember the retry slot they would cover.
    pub fn transmit(&mut self, msg: CommittedMessage) -> Result<Vec<Output>> {
        let Some(pos) = msg.k_prime else {
            return Ok(Vec::new());
        };
        if !msg.is_valid(&self.local) {
            return Err(Error::MissingCertificate(msg.k_prime));
        }
        let mut out = Vec::new();
        self.stream_len = self.stream_len.max(pos + 1);
        self.quack.set_stream_len(self.stream_len);
        if self.quack.is_quacked(pos) {
            return Ok(out);
        }
        let (owner, dest) = self.out_sched.original(pos);
        if owner == self.me {
            if pos < self.send_limit() {
                out.push(self.data(dest, msg.clone(), None));
            } else {
                self.deferred.insert(pos);
            }
        }
        if let Some(t) = self.out_sched.next_owned_retry(pos, self.me, Some(0)) {
            self.pending_sends.insert(
                pos,
                PendingSend {
                    pos,
                    resend_number: t,
                    destination: self.out_sched.retry(pos, t).1,
                },
            );
        }
        self.store.insert(pos, msg);
        Ok(out)
    }

    /// Processes one arriving wire message.
    pub fn receive(&mut self, wire: Wire) -> Vec<Output> {
        let mut out = Vec::new();
        match wire {
            Wire::Data { msg, ack } => {
                self.on_peer_ack(&ack, &mut out);
                if !msg.is_valid(&self.peer) {
                    out.push(Output::Rejected { pos: msg.k_prime });
                    return out;
                }
                let outcome = self.buffer.on_foreign_message(&msg, &self.peer);
                if outcome.deliver {
                    out.push(Output::Deliver {
                        pos: msg.k_prime.expect("delivered messages carry a position"),
                        path: DeliverPath::Foreign,
                    });
                }
                if outcome.broadcast {
                    out.push(Output::Broadcast {
                        wire: Wire::Local { msg, ack: Some(ack) },
                        backup: false,
                    });
                }
            }
            Wire::Ack(ack) => self.on_peer_ack(&ack, &mut out),
            Wire::Local { msg, ack } => {
                if let Some(ack) = &ack {
                    self.on_peer_ack(ack, &mut out);
                }
                if !msg.is_valid(&self.peer) {
                    out.push(Output::Rejected { pos: msg.k_prime });
                    return out;
                }
                if self.buffer.on_local_broadcast(&msg, &self.peer) {
                    let pos = msg.k_prime.expect("delivered messages carry a position");
                    out.push(Output::Deliver {
                        pos,
                        path: DeliverPath::Local,
                    });
                    let slot = self.in_sched.rebroadcast_number(pos, self.me);
                    if self.params.local_rebroadcast && slot > 0 {
                        let base = self.local_quack.dup_count(pos);
                        self.pending_broadcasts.push(PendingBroadcast { pos, slot, base });
                    }
                }
            }
            Wire::LocalAck(ack) => {
                if ack.from_replica != self.me {
                    self.local_quack.record_ack(&ack);
                    self.plan_broadcasts(&mut out);
                }
            }
        }
        out
    }

    fn on_peer_ack(&mut self, ack: &AckReport, out: &mut Vec<Output>) {
        if let Some(h) = ack.highest_quacked_hint {
            if self.hints.record(ack.from_replica, h) {
                self.hint_dirty = true;
            }
        }
        let events = self.quack.record_ack(ack);
        let mut advanced = false;
        for ev in events {
            match ev {
                QuackEvent::Quacked { .. } => advanced = true,
                QuackEvent::DuplicateRound { pos, .. } if self.params.gc_hints && pos < self.quack.quack_level() => {
                    let level = self.quack.quack_level();
                    if self.hint.is_none_or(|h| h < level) {
                        self.hint = Some(level);
                        out.push(Output::HintRaised { level });
                    }
                }
                _ => {}
            }
            out.push(Output::Quack(ev));
        }
        if advanced {
            for pos in self.quack.gc_collect() {
                self.store.remove(&pos);
            }
            self.deferred = self.deferred.split_off(&self.quack.quack_level());
            let limit = self.send_limit();
            let ready: Vec<StreamPos> = self.deferred.range(..limit).copied().collect();
            for pos in ready {
                self.deferred.remove(&pos);
                if let Some(msg) = self.store.get(&pos).cloned() {
                    let dest = self.out_sched.original(pos).1;
                    out.push(self.data(dest, msg, None));
                }
            }
        }
        for p in plan_resends(&self.quack, self.me, &self.out_sched, &mut self.pending_sends) {
            if let Some(msg) = self.store.get(&p.pos).cloned() {
                out.push(self.data(p.destination, msg, Some(p.resend_number)));
            }
        }
    }

    fn plan_broadcasts(&mut self, out: &mut Vec<Output>) {
        let mut due = Vec::new();
        let lq = &self.local_quack;
        self.pending_broadcasts.retain(|p| {
            if lq.is_quacked(p.pos) {
                return false;
            }
            if lq.dup_count(p.pos) >= p.base + p.slot {
                due.push(p.pos);
                return false;
            }
            true
        });
        for pos in due {
            if let Some(msg) = self.buffer.delivered(pos) {
                out.push(Output::Broadcast {
                    wire: Wire::Local {
                        msg: msg.clone(),
                        ack: None,
                    },
                    backup: true,
                });
            }
        }
    }

    /// Applies any new hint quorum. `fetch` supplies payloads from local
    /// peers in [`GcMode::Fetch`].
    pub fn apply_gc_hints(&mut self, fetch: impl FnMut(StreamPos) -> Option<CommittedMessage>) -> Vec<Output> {
        if !std::mem::take(&mut self.hint_dirty) {
            return Vec::new();
        }
        let from = self.buffer.cum();
        let logged = self.buffer.delivered_log().len();
        if !self
            .buffer
            .apply_gc_hint(&self.hints, &self.peer, self.params.gc_mode, fetch)
        {
            return Vec::new();
        }
        let mut out: Vec<Output> = self.buffer.delivered_log()[logged..]
            .iter()
            .map(|&pos| Output::Deliver {
                pos,
                path: DeliverPath::Fetched,
            })
            .collect();
        out.push(Output::Advanced {
            from,
            to: self.buffer.cum(),
        });
        out
    }

    /// Ack slot. Emits a standalone ack to the next peer replica in rotation
    /// when one is owed, plus a local receipt report for the backup path.
    pub fn tick(&mut self) -> Vec<Output> {
        let mut out = Vec::new();
        let piggybacked = std::mem::take(&mut self.data_since_tick);
        let n_peer = self.in_sched.sender_count() as u32;
        let now = self.progress();
        let next = (self.me + self.ack_rotation) % n_peer;
        let to = match self.params.ack_mode {
            AckMode::Periodic => (!piggybacked).then_some(next),
            // Ack once a batch of deliveries is in, or once idle, then keep
            // going round until every peer has the latest state.
            AckMode::OnData => {
                let batch = now.0 - self.acked_progress.0 >= self.params.ack_batch.max(1) as usize;
                let idle = now == self.tick_progress;
                (0..n_peer)
                    .map(|i| (next + i) % n_peer)
                    .find(|&p| self.told[p as usize] != now)
                    .filter(|_| !piggybacked && (batch || idle))
            }
        };
        self.tick_progress = now;
        if let Some(to) = to {
            self.ack_rotation = (to + n_peer - self.me % n_peer) % n_peer + 1;
            self.acked_progress = now;
            self.told[to as usize] = now;
            out.push(Output::Send {
                to,
                wire: Wire::Ack(self.current_ack()),
                resend: None,
            });
        }
        let active = self.buffer.cum() > 0 || !self.buffer.delivered_log().is_empty();
        if self.params.local_rebroadcast && active {
            out.push(Output::Broadcast {
                wire: Wire::LocalAck(self.buffer.make_ack(self.me, self.params.phi)),
                backup: false,
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::PhiList;

    fn cfg(id: u8) -> RsmConfig {
        RsmConfig::equal(id, 4, 1, 1)
    }

    fn node(me: u32, params: NodeParams) -> PicsouNode {
        let ids = IdAssignment::identity(4);
        let sched = PairSchedule::Equal { n_s: 4, n_r: 4 };
        PicsouNode::new(me, cfg(1), &ids, cfg(2), &ids, sched.clone(), sched, params)
    }

    fn msg(rsm: u8, pos: u64) -> CommittedMessage {
        CommittedMessage::committed(&cfg(rsm), format!("m{pos}").into_bytes(), pos, Some(pos))
    }

    fn sends(out: &[Output]) -> Vec<(LogicalId, Option<u32>)> {
        out.iter()
            .filter_map(|o| match o {
                Output::Send {
                    to,
                    wire: Wire::Data { .. },
                    resend,
                } => Some((*to, *resend)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn owner_sends_original() {
        let mut n = node(0, NodeParams::default());
        let out = n.transmit(msg(1, 0)).unwrap();
        assert_eq!(sends(&out), vec![(0, None)]);
    }

    #[test]
    fn non_owner_enqueues_its_retry() {
        let mut n = node(2, NodeParams::default());
        assert!(n.transmit(msg(1, 0)).unwrap().is_empty());
        assert_eq!(
            n.pending_sends().collect::<Vec<_>>(),
            vec![&PendingSend {
                pos: 0,
                resend_number: 2,
                destination: 2
            }]
        );
    }

    #[test]
    fn untransmittable_is_noop() {
        let mut n = node(0, NodeParams::default());
        let m = CommittedMessage::committed(&cfg(1), b"x".to_vec(), 0, None);
        assert!(n.transmit(m).unwrap().is_empty());
        assert_eq!(n.pending_sends().count(), 0);
    }

    #[test]
    fn missing_certificate_rejected() {
        let mut n = node(0, NodeParams::default());
        let mut m = msg(1, 0);
        m.cert.signers.clear();
        assert!(matches!(n.transmit(m), Err(Error::MissingCertificate(Some(0)))));
    }

    #[test]
    fn window_defers_until_quack() {
        let mut n = node(
            0,
            NodeParams {
                window: 4,
                ..NodeParams::default()
            },
        );
        for p in 0..8 {
            n.transmit(msg(1, p)).unwrap();
        }
        assert_eq!(n.deferred(), 1);
        let mut out = n.receive(Wire::Ack(AckReport::new(0, 1)));
        out.extend(n.receive(Wire::Ack(AckReport::new(1, 1))));
        assert_eq!(sends(&out), vec![(1, None)]);
        assert_eq!(n.deferred(), 0);
    }

    #[test]
    fn foreign_receipt_delivers_and_relays() {
        let mut r = node(0, NodeParams::default());
        let out = r.receive(Wire::Data {
            msg: msg(2, 0),
            ack: AckReport::new(0, 0),
        });
        assert!(out.contains(&Output::Deliver {
            pos: 0,
            path: DeliverPath::Foreign
        }));
        assert!(out.iter().any(|o| matches!(o, Output::Broadcast { backup: false, .. })));
        let again = r.receive(Wire::Data {
            msg: msg(2, 0),
            ack: AckReport::new(0, 0),
        });
        assert!(!again.iter().any(|o| matches!(o, Output::Deliver { .. })));
    }

    #[test]
    fn forged_certificate_rejected() {
        let mut r = node(0, NodeParams::default());
        let mut m = msg(2, 0);
        m.cert.threshold = 1;
        m.cert.signers.truncate(1);
        let out = r.receive(Wire::Data {
            msg: m,
            ack: AckReport::new(0, 0),
        });
        assert_eq!(out, vec![Output::Rejected { pos: Some(0) }]);
        assert_eq!(r.buffer().cum(), 0);
    }

    #[test]
    fn periodic_acks_every_slot_without_traffic() {
        let mut r = node(0, NodeParams::default());
        let tos: Vec<_> = (0..5)
            .flat_map(|_| r.tick())
            .filter_map(|o| match o {
                Output::Send {
                    to, wire: Wire::Ack(_), ..
                } => Some(to),
                _ => None,
            })
            .collect();
        assert_eq!(tos, vec![0, 1, 2, 3, 0]);
    }

    #[test]
    fn duplex_traffic_piggybacks_acks() {
        let mut n = node(0, NodeParams::default());
        for p in 0..3 {
            n.transmit(msg(1, 4 * p)).unwrap();
            assert!(!n.tick().iter().any(|o| matches!(o, Output::Send { .. })));
        }
    }

    #[test]
    fn on_data_mode_acks_each_peer_once_per_change() {
        let params = NodeParams {
            ack_mode: AckMode::OnData,
            ..NodeParams::default()
        };
        let mut r = node(1, params);
        assert!(r.tick().is_empty());
        r.receive(Wire::Data {
            msg: msg(2, 0),
            ack: AckReport::new(0, 0),
        });
        // Every peer hears about the delivery once, then the node goes quiet.
        let mut tos = Vec::new();
        for _ in 0..6 {
            for o in r.tick() {
                if let Output::Send {
                    to, wire: Wire::Ack(_), ..
                } = o
                {
                    tos.push(to);
                }
            }
        }
        tos.sort_unstable();
        assert_eq!(tos, vec![0, 1, 2, 3]);
    }

    /// Ack from a replica missing `cum` but holding `cum + 1`.
    fn gapped(from: u32, cum: u64) -> AckReport {
        AckReport {
            phi_list: PhiList::from_offsets([1]),
            ..AckReport::new(from, cum)
        }
    }

    #[test]
    fn duplicate_rounds_trigger_owned_resend() {
        // Position 4 was sent 0 -> 1 and lost; node 1 owns retry 1 to receiver 2.
        let mut s = node(1, NodeParams::default());
        for p in 0..8 {
            s.transmit(msg(1, p)).unwrap();
        }
        let mut out = Vec::new();
        for (from, cum) in [(0, 4), (1, 4), (0, 4), (1, 4)] {
            out.extend(s.receive(Wire::Ack(gapped(from, cum))));
        }
        assert_eq!(sends(&out), vec![(2, Some(1))]);
    }

    #[test]
    fn stuck_receivers_raise_hint() {
        let mut s = node(0, NodeParams::default());
        for p in 0..8 {
            s.transmit(msg(1, p)).unwrap();
        }
        let mut out = Vec::new();
        for (from, cum) in [(2, 8), (3, 8), (0, 1), (1, 1), (0, 1), (1, 1)] {
            out.extend(s.receive(Wire::Ack(gapped(from, cum))));
        }
        assert!(out.contains(&Output::HintRaised { level: 8 }));
        assert_eq!(s.current_ack().highest_quacked_hint, Some(8));

        let mut off = node(
            0,
            NodeParams {
                gc_hints: false,
                ..NodeParams::default()
            },
        );
        for p in 0..8 {
            off.transmit(msg(1, p)).unwrap();
        }
        for (from, cum) in [(2, 8), (3, 8), (0, 1), (1, 1), (0, 1), (1, 1)] {
            off.receive(Wire::Ack(gapped(from, cum)));
        }
        assert_eq!(off.hint(), None);
    }

    #[test]
    fn hint_quorum_advances_receiver() {
        let mut r = node(1, NodeParams::default());
        let hinted = |from, h| AckReport {
            highest_quacked_hint: Some(h),
            ..AckReport::new(from, 0)
        };
        r.receive(Wire::Ack(hinted(0, 6)));
        assert!(r.apply_gc_hints(|_| None).is_empty());
        r.receive(Wire::Ack(hinted(3, 6)));
        let out = r.apply_gc_hints(|_| None);
        assert_eq!(out, vec![Output::Advanced { from: 0, to: 6 }]);
        assert_eq!(r.buffer().cum(), 6);
    }

    #[test]
    fn backup_rebroadcast_after_local_duplicates() {
        // Receiver 2 holds backup slot 1 for position 1 (original receiver 1).
        let mut r = node(2, NodeParams::default());
        let out = r.receive(Wire::Local {
            msg: msg(2, 1),
            ack: None,
        });
        assert!(out.contains(&Output::Deliver {
            pos: 1,
            path: DeliverPath::Local
        }));
        let mut out = Vec::new();
        for from in [0, 3, 0, 3] {
            out.extend(r.receive(Wire::LocalAck(gapped(from, 1))));
        }
        assert_eq!(
            out.iter()
                .filter(|o| matches!(o, Output::Broadcast { backup: true, .. }))
                .count(),
            1
        );
    }

    #[test]
    fn node_is_send() {
        fn assert_send<T: Send + Sync>() {}
        assert_send::<PicsouNode>();
    }
}
