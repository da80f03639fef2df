//! Deterministic discrete-event simulator hosting a sending and a receiving
//! RSM, adversarial replicas and metric collection.
//!
//! Time advances in integer ticks. Within tick `t`:
//! 1. on a commit slot (`(t-1) % send_period == 0`) each RSM commits its next
//!    batch and hands it to every live replica;
//! 2. wire messages due at `t` are delivered in the order they were sent;
//! 3. on an ack slot (`t % ack_period == 0`) every live replica runs its ack hook.
//!
//! Anything a replica emits arrives `latency` ticks later. The run stops as
//! soon as every correct receiver holds the whole stream and every correct
//! sender has it quacked, or at the tick cap.

pub mod baseline;
pub mod canned;
pub mod scenario;
pub mod trace;

use std::collections::BTreeMap;
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::node::{DeliverPath, Output, PicsouNode, Wire};
use crate::scheduler::PairSchedule;
use crate::sender::QuackEvent;
use crate::types::{AckReport, CommittedMessage, MetricRecord, PhiList, StreamPos};
use scenario::{Behavior, LieMode, Protocol, Resolved, Scenario, Side};
use trace::Trace;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    LivenessTimeout,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Completed => "COMPLETED",
            Outcome::LivenessTimeout => "LIVENESS_TIMEOUT",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub outcome: Outcome,
    /// Last tick simulated.
    pub ticks: u64,
    /// Accounting for the sending RSM's stream.
    pub metrics: MetricRecord,
    pub trace_hash: String,
    pub trace: Option<Vec<String>>,
    /// Attempt number (1 = original) of the first copy a correct receiver
    /// delivered straight from the sending RSM.
    pub delivering_attempt: Vec<Option<u32>>,
    /// Deliveries at correct receivers that differ from what was committed.
    pub invalid_deliveries: u64,
    pub forged_sent: u64,
    /// Delivery order at each correct receiver, by physical index.
    pub receiver_logs: Vec<(u32, Vec<StreamPos>)>,
    /// Positions correct receivers skipped on a hint quorum without the payload.
    pub advanced_without_payload: u64,
    /// Largest acknowledgment on the wire including any hint.
    pub max_wire_ack_bytes: usize,
}

#[derive(Clone, Debug)]
struct Event {
    side: Side,
    to: u32,
    wire: Wire,
    resend: Option<u32>,
}

/// Runs a scenario, dispatching baselines to their direct accounting.
pub fn run(scenario: &Scenario, keep_trace: bool) -> Result<SimResult> {
    let resolved = scenario.resolve()?;
    if scenario.protocol != Protocol::Picsou {
        let metrics = baseline::baseline_with(scenario, &resolved)?;
        let all = metrics.per_message.iter().all(|m| m.first_delivery.is_some());
        let t = Trace::new(keep_trace);
        return Ok(SimResult {
            outcome: if all {
                Outcome::Completed
            } else {
                Outcome::LivenessTimeout
            },
            ticks: metrics
                .per_message
                .iter()
                .filter_map(|m| m.first_delivery)
                .max()
                .unwrap_or(0),
            delivering_attempt: metrics
                .per_message
                .iter()
                .map(|m| m.first_delivery.map(|_| m.attempts))
                .collect(),
            metrics,
            trace_hash: t.hash(),
            trace: t.into_lines(),
            invalid_deliveries: 0,
            forged_sent: 0,
            receiver_logs: Vec::new(),
            advanced_without_payload: 0,
            max_wire_ack_bytes: 0,
        });
    }
    Ok(Simulation::new(scenario.clone(), resolved, keep_trace).run())
}

pub struct Simulation {
    scenario: Scenario,
    res: Resolved,
    nodes: [Vec<PicsouNode>; 2],
    streams: [Vec<CommittedMessage>; 2],
    committed: [usize; 2],
    queue: BTreeMap<u64, Vec<Event>>,
    tick: u64,
    trace: Trace,
    metrics: MetricRecord,
    delivering_attempt: Vec<Option<u32>>,
    invalid_deliveries: u64,
    forged_sent: u64,
    quack_cursor: u64,
    max_wire_ack_bytes: usize,
}

fn genuine_stream(
    scenario: &Scenario,
    cfg: &crate::types::RsmConfig,
    side: Side,
    count: usize,
) -> Vec<CommittedMessage> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ ((side.index() as u64 + 1) << 56));
    (0..count as u64)
        .map(|k| {
            let mut payload = vec![0u8; scenario.message_size];
            rng.fill_bytes(&mut payload);
            CommittedMessage::committed(cfg, payload, k, Some(k))
        })
        .collect()
}

fn lie(ack: &mut AckReport, mode: LieMode, phi: usize) {
    ack.cum_ack = match mode {
        LieMode::Inf => u64::MAX >> 1,
        LieMode::Zero => 0,
        LieMode::DelayPhi => ack.cum_ack.saturating_sub(phi as u64),
    };
    ack.phi_list = PhiList::default();
}

impl Simulation {
    pub fn new(scenario: Scenario, res: Resolved, keep_trace: bool) -> Self {
        let [cfg_s, cfg_r] = res.configs.clone();
        let [ids_s, ids_r] = res.ids.clone();
        let forward = PairSchedule::for_configs(&cfg_s, &ids_s, &cfg_r, &ids_r, scenario.quantum);
        let backward = PairSchedule::for_configs(&cfg_r, &ids_r, &cfg_s, &ids_s, scenario.quantum);
        let build = |side: Side| -> Vec<PicsouNode> {
            let (local, local_ids, peer, peer_ids, out_s, in_s) = match side {
                Side::Sender => (&cfg_s, &ids_s, &cfg_r, &ids_r, &forward, &backward),
                Side::Receiver => (&cfg_r, &ids_r, &cfg_s, &ids_s, &backward, &forward),
            };
            (0..local.node_count() as u32)
                .map(|phys| {
                    PicsouNode::new(
                        local_ids.logical(phys),
                        local.clone(),
                        local_ids,
                        peer.clone(),
                        peer_ids,
                        out_s.clone(),
                        in_s.clone(),
                        res.params.clone(),
                    )
                })
                .collect()
        };
        let nodes = [build(Side::Sender), build(Side::Receiver)];
        let streams = [
            genuine_stream(&scenario, &cfg_s, Side::Sender, scenario.messages),
            genuine_stream(&scenario, &cfg_r, Side::Receiver, scenario.reverse_messages),
        ];
        let protocol = scenario.protocol.name();
        Self {
            metrics: MetricRecord::new(protocol, scenario.messages),
            delivering_attempt: vec![None; scenario.messages],
            scenario,
            res,
            nodes,
            streams,
            committed: [0, 0],
            queue: BTreeMap::new(),
            tick: 0,
            trace: Trace::new(keep_trace),
            invalid_deliveries: 0,
            forged_sent: 0,
            quack_cursor: 0,
            max_wire_ack_bytes: 0,
        }
    }

    fn behavior(&self, side: Side, phys: u32) -> &Behavior {
        &self.res.behaviors[side.index()][phys as usize]
    }

    fn is_correct(&self, side: Side, phys: u32) -> bool {
        !self.behavior(side, phys).is_faulty()
    }

    fn alive(&self, side: Side, phys: u32) -> bool {
        match self.behavior(side, phys) {
            Behavior::CrashAt(t) => self.tick < *t,
            Behavior::GcStall { stop_at, .. } => self.tick < *stop_at,
            _ => true,
        }
    }

    fn rsm(side: Side) -> u8 {
        side.rsm_id()
    }

    fn record(&mut self, event: &str, side: Side, phys: u32, pos: Option<u64>, detail: &str) {
        self.trace.record(self.tick, event, phys, Self::rsm(side), pos, detail);
    }

    fn push(&mut self, at: u64, ev: Event) {
        self.queue.entry(at).or_default().push(ev);
    }

    fn dropped_by_link(&self, side: Side, phys: u32) -> bool {
        self.scenario
            .links
            .drops
            .iter()
            .any(|d| d.side == side && d.replica == phys && (d.from_tick..d.to_tick).contains(&self.tick))
    }

    fn note_ack(&mut self, ack: Option<&AckReport>) {
        if let Some(a) = ack {
            self.metrics.totals.max_ack_bytes = self.metrics.totals.max_ack_bytes.max(a.ack_len());
            self.max_wire_ack_bytes = self.max_wire_ack_bytes.max(a.encoded_len());
        }
    }

    fn handle(&mut self, side: Side, phys: u32, outs: Vec<Output>, via: Option<u32>) {
        for out in outs {
            match out {
                Output::Send { to, mut wire, resend } => self.send(side, phys, to, &mut wire, resend),
                Output::Broadcast { wire, backup } => self.broadcast(side, phys, wire, backup),
                Output::Deliver { pos, path } => self.deliver(side, phys, pos, path, via),
                Output::Quack(ev) => self.quack(side, phys, ev),
                Output::Rejected { pos } => {
                    if self.is_correct(side, phys) {
                        self.metrics.totals.rejected_invalid += 1;
                    }
                    self.record("REJECT", side, phys, pos, "");
                }
                Output::Advanced { from, to } => {
                    self.record("ADVANCE", side, phys, Some(from), &format!("to={to}"));
                }
                Output::HintRaised { level } => {
                    self.record("HINT", side, phys, None, &format!("level={level}"));
                }
            }
        }
    }

    fn send(&mut self, side: Side, phys: u32, to: u32, wire: &mut Wire, resend: Option<u32>) {
        let peer = side.other();
        let dest = self.res.ids[peer.index()].physical(to);
        let phi = self.res.params.phi;
        let pos = wire.message().and_then(|m| m.k_prime);
        let mut dropped = self.dropped_by_link(side, phys);
        match self.behavior(side, phys).clone() {
            Behavior::OmitForeign(sel) => {
                dropped |= match pos {
                    Some(p) => sel.matches(p),
                    None => matches!(sel, scenario::Selector::All(_)),
                };
            }
            Behavior::LieAck(mode) => {
                if let Some(a) = wire.ack_mut() {
                    lie(a, mode, phi);
                }
            }
            _ => {}
        }
        if let (Side::Sender, Some(p)) = (side, pos) {
            let m = &mut self.metrics.per_message[p as usize];
            m.attempts = m.attempts.max(resend.unwrap_or(0) + 1);
            if !dropped {
                m.copies += 1;
            }
            if resend.is_some() {
                self.metrics.totals.resends += 1;
            }
        }
        if matches!(wire, Wire::Ack(_)) {
            self.metrics.totals.standalone_acks += 1;
        }
        self.note_ack(wire.ack());
        let (event, detail) = match (&*wire, resend) {
            (Wire::Ack(a), _) => ("ACK", format!("to={dest} {a}")),
            (_, None) => ("SEND", format!("to={dest}")),
            (_, Some(t)) => ("RESEND", format!("to={dest} retry={t}")),
        };
        let detail = if dropped { format!("{detail} dropped") } else { detail };
        self.record(event, side, phys, pos, &detail);
        if !dropped {
            let at = self.tick + self.scenario.links.latency;
            self.push(
                at,
                Event {
                    side: peer,
                    to: dest,
                    wire: wire.clone(),
                    resend,
                },
            );
        }
    }

    fn broadcast(&mut self, side: Side, phys: u32, wire: Wire, backup: bool) {
        let pos = wire.message().and_then(|m| m.k_prime);
        let n = self.nodes[side.index()].len() as u32;
        let mut targets: Vec<u32> = (0..n).filter(|&p| p != phys).collect();
        match self.behavior(side, phys) {
            Behavior::OmitBroadcast if pos.is_some() => targets.clear(),
            Behavior::GcStall { position, partner, .. } if pos == Some(*position) => targets = vec![*partner],
            _ => {}
        }
        self.note_ack(wire.ack());
        if let Some(p) = pos {
            let event = if backup { "BACKUP" } else { "RELAY" };
            let detail = targets.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ");
            self.record(event, side, phys, Some(p), &format!("to={detail}"));
        }
        let at = self.tick + self.scenario.links.broadcast_latency;
        for to in targets {
            self.push(
                at,
                Event {
                    side,
                    to,
                    wire: wire.clone(),
                    resend: None,
                },
            );
        }
    }

    fn deliver(&mut self, side: Side, phys: u32, pos: StreamPos, path: DeliverPath, via: Option<u32>) {
        let path_name = match path {
            DeliverPath::Foreign => "foreign",
            DeliverPath::Local => "local",
            DeliverPath::Fetched => "fetched",
        };
        self.record("DELIVER", side, phys, Some(pos), path_name);
        if side != Side::Receiver || !self.is_correct(side, phys) {
            return;
        }
        let genuine = self.streams[0].get(pos as usize);
        let got = self.nodes[side.index()][phys as usize].buffer().delivered(pos);
        if genuine.is_none() || got != genuine {
            self.invalid_deliveries += 1;
            return;
        }
        let m = &mut self.metrics.per_message[pos as usize];
        if m.first_delivery.is_none() {
            m.first_delivery = Some(self.tick);
        }
        if path == DeliverPath::Foreign && self.delivering_attempt[pos as usize].is_none() {
            self.delivering_attempt[pos as usize] = Some(via.unwrap_or(0) + 1);
        }
    }

    fn mark_quacked(&mut self, pos: StreamPos) {
        let Some(m) = self.metrics.per_message.get_mut(pos as usize) else {
            return;
        };
        if m.quacked_at.is_none() {
            m.quacked_at = Some(self.tick);
            if m.first_delivery.is_none() {
                self.metrics.totals.false_quacks += 1;
            }
        }
    }

    fn quack(&mut self, side: Side, phys: u32, ev: QuackEvent) {
        let peer_ids = &self.res.ids[side.other().index()];
        match ev {
            QuackEvent::Quacked { level } => {
                self.record("QUACK", side, phys, Some(level - 1), &format!("level={level}"));
                if side == Side::Sender && self.is_correct(side, phys) && level > self.quack_cursor {
                    for p in self.quack_cursor..level.min(self.scenario.messages as u64) {
                        self.mark_quacked(p);
                    }
                    self.quack_cursor = level;
                }
            }
            QuackEvent::QuackedPosition { pos } => {
                self.record("QUACKPOS", side, phys, Some(pos), "");
                if side == Side::Sender && self.is_correct(side, phys) {
                    self.mark_quacked(pos);
                }
            }
            QuackEvent::DuplicateAck { pos, from } => {
                let from = peer_ids.physical(from);
                self.record("DUPACK", side, phys, Some(pos), &format!("from={from}"));
            }
            QuackEvent::DuplicateRound { pos, count } => {
                self.record("DUPROUND", side, phys, Some(pos), &format!("count={count}"));
            }
        }
    }

    fn inject_forgeries(&mut self, phys: u32, pos: StreamPos) {
        let genuine = self.streams[0][pos as usize].clone();
        let n_r = self.nodes[1].len() as u64;
        let (forged, kind) = match pos % 3 {
            0 => {
                let mut m = genuine;
                m.payload = b"forged".to_vec();
                (m, "digest")
            }
            1 => {
                let mut m = genuine;
                m.cert.signers.truncate(1);
                (m, "signers")
            }
            _ => (
                CommittedMessage::committed(&self.res.configs[1], b"forged".to_vec(), pos, Some(pos)),
                "foreign-rsm",
            ),
        };
        let dest = (pos % n_r) as u32;
        let ack = self.nodes[0][phys as usize].current_ack();
        self.forged_sent += 1;
        self.record(
            "FORGE",
            Side::Sender,
            phys,
            Some(pos),
            &format!("to={dest} kind={kind}"),
        );
        let at = self.tick + self.scenario.links.latency;
        self.push(
            at,
            Event {
                side: Side::Receiver,
                to: dest,
                wire: Wire::Data { msg: forged, ack },
                resend: None,
            },
        );
    }

    fn commit_slot(&mut self) {
        for side in [Side::Sender, Side::Receiver] {
            let i = side.index();
            let batch = self.scenario.commit_batch.unwrap_or(self.nodes[i].len());
            let end = (self.committed[i] + batch).min(self.streams[i].len());
            for pos in self.committed[i]..end {
                let msg = self.streams[i][pos].clone();
                for phys in 0..self.nodes[i].len() as u32 {
                    if !self.alive(side, phys) {
                        continue;
                    }
                    let outs = self.nodes[i][phys as usize]
                        .transmit(msg.clone())
                        .expect("genuine messages carry valid certificates");
                    self.handle(side, phys, outs, None);
                    if side == Side::Sender && *self.behavior(side, phys) == Behavior::ForgeCerts {
                        self.inject_forgeries(phys, pos as StreamPos);
                    }
                }
            }
            self.committed[i] = end;
        }
    }

    fn dispatch(&mut self, ev: Event) {
        let Event { side, to, wire, resend } = ev;
        if !self.alive(side, to) {
            return;
        }
        let cross = matches!(wire, Wire::Data { .. } | Wire::Ack(_));
        if cross {
            if let Behavior::OmitForeign(sel) = self.behavior(side, to) {
                let drop = match wire.message().and_then(|m| m.k_prime) {
                    Some(p) => sel.matches(p),
                    None => matches!(sel, scenario::Selector::All(_)),
                };
                if drop {
                    return;
                }
            }
        }
        let outs = self.nodes[side.index()][to as usize].receive(wire);
        self.handle(side, to, outs, resend);
        self.apply_hints(side, to);
    }

    fn apply_hints(&mut self, side: Side, phys: u32) {
        let i = side.index();
        let Some(range) = self.nodes[i][phys as usize].gc_target() else {
            return;
        };
        let mut supply = BTreeMap::new();
        for (p, peer) in self.nodes[i].iter().enumerate() {
            let p = p as u32;
            if p == phys || !self.is_correct(side, p) || !self.alive(side, p) {
                continue;
            }
            for pos in range.clone() {
                if let (std::collections::btree_map::Entry::Vacant(e), Some(m)) =
                    (supply.entry(pos), peer.buffer().delivered(pos))
                {
                    e.insert(m.clone());
                }
            }
        }
        let outs = self.nodes[i][phys as usize].apply_gc_hints(|p| supply.get(&p).cloned());
        self.handle(side, phys, outs, None);
    }

    fn ack_slot(&mut self) {
        for side in [Side::Sender, Side::Receiver] {
            for phys in 0..self.nodes[side.index()].len() as u32 {
                if self.alive(side, phys) {
                    let outs = self.nodes[side.index()][phys as usize].tick();
                    self.handle(side, phys, outs, None);
                }
            }
        }
    }

    fn stream_done(&self, from: Side) -> bool {
        let len = self.streams[from.index()].len() as u64;
        let to = from.other();
        let received = (0..self.nodes[to.index()].len() as u32)
            .filter(|&p| self.is_correct(to, p))
            .all(|p| self.nodes[to.index()][p as usize].buffer().cum() >= len);
        let quacked = (0..self.nodes[from.index()].len() as u32)
            .filter(|&p| self.is_correct(from, p))
            .all(|p| self.nodes[from.index()][p as usize].quack().quack_level() >= len);
        received && quacked
    }

    fn complete(&self) -> bool {
        self.stream_done(Side::Sender) && self.stream_done(Side::Receiver)
    }

    fn quiescent(&self) -> bool {
        self.queue.is_empty()
            && self.committed[0] == self.streams[0].len()
            && self.committed[1] == self.streams[1].len()
            && self.nodes.iter().flatten().all(|n| n.deferred() == 0)
    }

    pub fn run(mut self) -> SimResult {
        let cap = self.res.tick_cap;
        let mut outcome = Outcome::LivenessTimeout;
        for t in 1..=cap {
            self.tick = t;
            for side in [Side::Sender, Side::Receiver] {
                for phys in 0..self.nodes[side.index()].len() as u32 {
                    let crash_tick = match self.behavior(side, phys) {
                        Behavior::CrashAt(c) => Some(*c),
                        Behavior::GcStall { stop_at, .. } => Some(*stop_at),
                        _ => None,
                    };
                    if crash_tick == Some(t) {
                        self.record("CRASH", side, phys, None, "");
                    }
                }
            }
            if (t - 1) % self.scenario.send_period == 0 {
                self.commit_slot();
            }
            if let Some(events) = self.queue.remove(&t) {
                for ev in events {
                    self.dispatch(ev);
                }
            }
            if t % self.scenario.ack_period == 0 {
                self.ack_slot();
            }
            if self.complete() {
                outcome = Outcome::Completed;
                break;
            }
            if self.scenario.ack_mode == crate::node::AckMode::OnData && self.quiescent() {
                break;
            }
        }
        self.finish(outcome)
    }

    fn finish(mut self, outcome: Outcome) -> SimResult {
        self.metrics.finalize();
        let recv = Side::Receiver;
        let receiver_logs = (0..self.nodes[1].len() as u32)
            .filter(|&p| self.is_correct(recv, p))
            .map(|p| (p, self.nodes[1][p as usize].buffer().delivered_log().to_vec()))
            .collect();
        let advanced_without_payload = (0..self.nodes[1].len() as u32)
            .filter(|&p| self.is_correct(recv, p))
            .map(|p| self.nodes[1][p as usize].buffer().advanced_without_payload())
            .sum();
        let trace_hash = self.trace.hash();
        SimResult {
            outcome,
            ticks: self.tick,
            metrics: self.metrics,
            trace_hash,
            trace: self.trace.into_lines(),
            delivering_attempt: self.delivering_attempt,
            invalid_deliveries: self.invalid_deliveries,
            forged_sent: self.forged_sent,
            receiver_logs,
            advanced_without_payload,
            max_wire_ack_bytes: self.max_wire_ack_bytes,
        }
    }
}
