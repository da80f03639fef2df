//! Scripted scenarios reproducing the protocol's worked examples.

use crate::node::AckMode;
use crate::receiver::GcMode;
use crate::sim::scenario::{Behavior, LieMode, RsmSpec, Scenario, Selector, Side};

fn four_by_four(messages: usize) -> Scenario {
    Scenario::new(RsmSpec::equal(4, 1, 1), RsmSpec::equal(4, 1, 1), messages)
}

/// Four replicas per side, one message per sender every other tick, acks
/// every other tick. Sender 0 quacks `m1` at tick 5.
pub fn timeline() -> Scenario {
    Scenario {
        send_period: 2,
        ack_period: 2,
        ack_mode: AckMode::Periodic,
        tick_cap: Some(200),
        ..four_by_four(8)
    }
}

/// The timeline with sender 0 crashed after its first send, so `m5` and
/// `m9` never leave the sending RSM until the duplicate acks trigger
/// resends.
pub fn crash_m5() -> Scenario {
    Scenario {
        tick_cap: Some(400),
        ..timeline()
    }
    .with_adversary(Side::Sender, 0, Behavior::CrashAt(2))
    .with_messages(12)
}

/// Stream position relayed only to one correct replica by the faulty
/// receiver 1, which crashes right after. Backup rebroadcast is off so the
/// remaining correct receivers can only move on through hints.
pub fn gc_stall(mode: GcMode, hints: bool) -> Scenario {
    Scenario {
        window: Some(8),
        gc_mode: mode,
        gc_hints: hints,
        local_rebroadcast: false,
        tick_cap: Some(600),
        ..four_by_four(40)
    }
    .with_adversary(
        Side::Receiver,
        1,
        Behavior::GcStall {
            position: 1,
            partner: 2,
            stop_at: 6,
        },
    )
}

/// Failure-free run with one receiver lying in its acknowledgments.
pub fn byzantine_ack(mode: LieMode, messages: usize) -> Scenario {
    four_by_four(messages).with_adversary(Side::Receiver, 3, Behavior::LieAck(mode))
}

/// A sender forging certificates next to a receiver that drops all cross-RSM
/// traffic, with seeded ids.
pub fn integrity(messages: usize, seed: u64) -> Scenario {
    let mut s = four_by_four(messages)
        .with_adversary(Side::Sender, 2, Behavior::ForgeCerts)
        .with_adversary(Side::Receiver, 0, Behavior::OmitForeign(Selector::all()));
    s.seed = seed;
    s.rsm_s.id_seed = Some(seed);
    s.rsm_r.id_seed = Some(seed.wrapping_add(1));
    s
}

impl Scenario {
    pub fn with_messages(mut self, messages: usize) -> Self {
        self.messages = messages;
        self
    }
}
