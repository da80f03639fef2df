//! Assignment math: identifier permutation, sender/receiver rotation,
//! retransmitter election, apportionment of share-weighted quanta and
//! LCM share scaling.
//!
//! Everything here is a pure function of its inputs, so every correct replica
//! computes the same answer without exchanging messages.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{LogicalId, RsmConfig, StreamPos};

/// Bijection between physical replica indices and logical protocol ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdAssignment {
    to_logical: Vec<LogicalId>,
    to_physical: Vec<u32>,
}

impl IdAssignment {
    /// Explicit permutation, `perm[physical] = logical`. Used for worst-case
    /// placements and for replaying the worked examples with identity ids.
    pub fn adversarial(perm: Vec<LogicalId>) -> Result<Self> {
        let n = perm.len();
        let mut to_physical = vec![u32::MAX; n];
        for (phys, &l) in perm.iter().enumerate() {
            match to_physical.get_mut(l as usize) {
                Some(slot) if *slot == u32::MAX => *slot = phys as u32,
                _ => return Err(Error::InvalidPermutation(n)),
            }
        }
        Ok(Self {
            to_logical: perm,
            to_physical,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::adversarial((0..n as u32).collect()).expect("identity is a bijection")
    }

    pub fn logical(&self, physical: u32) -> LogicalId {
        self.to_logical[physical as usize]
    }

    pub fn physical(&self, logical: LogicalId) -> u32 {
        self.to_physical[logical as usize]
    }

    pub fn len(&self) -> usize {
        self.to_logical.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_logical.is_empty()
    }

    pub fn as_slice(&self) -> &[LogicalId] {
        &self.to_logical
    }
}

/// Seeded pseudorandom permutation standing in for a verifiable random source.
pub fn assign_ids(config: &RsmConfig) -> IdAssignment {
    let mut perm: Vec<LogicalId> = (0..config.node_count() as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.id_seed);
    perm.shuffle(&mut rng);
    IdAssignment::adversarial(perm).expect("shuffle preserves bijection")
}

/// Logical sender of stream position `seq`: `seq mod n_s`.
pub fn assign_sender(seq: StreamPos, n_s: usize) -> LogicalId {
    (seq % n_s as u64) as LogicalId
}

/// Logical receiver of stream position `seq`. Sender `l`'s first send goes
/// to receiver `l`, and each later send by that sender moves one receiver on.
pub fn assign_receiver(seq: StreamPos, n_s: usize, n_r: usize) -> LogicalId {
    let n_s = n_s as u64;
    ((seq % n_s + seq / n_s) % n_r as u64) as LogicalId
}

/// Pair responsible for retry number `retry` (0 is the original send).
pub fn retransmit_pair(
    orig_sender: LogicalId,
    orig_receiver: LogicalId,
    retry: u32,
    n_s: usize,
    n_r: usize,
) -> (LogicalId, LogicalId) {
    let t = retry as u64;
    (
        ((orig_sender as u64 + t) % n_s as u64) as LogicalId,
        ((orig_receiver as u64 + t) % n_r as u64) as LogicalId,
    )
}

/// Hamilton (largest remainder) apportionment of `q` slots over `shares`.
///
/// Quotas are computed exactly in integers: the standard quota of replica
/// `l` is `σ_l·q/Δ`, its lower quota the floor, and its penalty ratio the
/// remainder `σ_l·q mod Δ`. Leftover slots go one each in decreasing
/// remainder order, lowest id first on ties.
pub fn hamilton_apportion(shares: &[u64], q: u64) -> Vec<u64> {
    let total: u128 = shares.iter().map(|&s| s as u128).sum();
    if q == 0 || total == 0 {
        return vec![0; shares.len()];
    }
    let mut quotas = Vec::with_capacity(shares.len());
    let mut remainders = Vec::with_capacity(shares.len());
    for (l, &s) in shares.iter().enumerate() {
        let scaled = s as u128 * q as u128;
        quotas.push((scaled / total) as u64);
        remainders.push((scaled % total, l));
    }
    let assigned: u64 = quotas.iter().sum();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, l) in remainders.iter().take((q - assigned) as usize) {
        quotas[l] += 1;
    }
    quotas
}

/// Spreads each id `quota_l` times over one quantum using smooth weighted
/// rotation: every slot adds each id's quota to its running credit, picks
/// the largest credit (lowest id on ties) and charges it the quantum size.
pub fn smooth_schedule(quotas: &[u64]) -> Vec<LogicalId> {
    let q: u64 = quotas.iter().sum();
    let mut credit = vec![0i128; quotas.len()];
    let mut out = Vec::with_capacity(q as usize);
    for _ in 0..q {
        for (c, &w) in credit.iter_mut().zip(quotas) {
            *c += w as i128;
        }
        let (pick, _) =
            credit
                .iter()
                .enumerate()
                .filter(|(l, _)| quotas[*l] > 0)
                .fold(
                    (usize::MAX, i128::MIN),
                    |best, (l, &c)| {
                        if c > best.1 {
                            (l, c)
                        } else {
                            best
                        }
                    },
                );
        credit[pick] -= q as i128;
        out.push(pick as LogicalId);
    }
    out
}

/// One apportioned quantum of `q` message slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Quantum {
    pub q: u64,
    pub quotas: Vec<u64>,
    pub schedule: Vec<LogicalId>,
}

impl Quantum {
    /// `shares` must be indexed by logical id.
    pub fn new(shares: &[u64], q: u64) -> Self {
        let quotas = hamilton_apportion(shares, q);
        let schedule = smooth_schedule(&quotas);
        Self { q, quotas, schedule }
    }
}

/// Sender and receiver for `seq` under share-weighted scheduling.
///
/// The sender is the slot `seq mod q` of the sender quantum. The receiver
/// slot advances by one for every completed quantum, mirroring the
/// equal-share rotation; with unit shares and `q = n_s = n_r` this is exactly
/// [`assign_sender`]/[`assign_receiver`].
pub fn dss_pair(seq: StreamPos, sender: &Quantum, receiver: &Quantum) -> Result<(LogicalId, LogicalId)> {
    if sender.q != receiver.q {
        return Err(Error::QuantumMismatch {
            sender: sender.q,
            receiver: receiver.q,
        });
    }
    let q = sender.q;
    let slot = seq % q;
    let r_slot = (slot + seq / q) % q;
    Ok((sender.schedule[slot as usize], receiver.schedule[r_slot as usize]))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Multiplicative factors `(ψ_s, ψ_r)` that scale both RSMs to `lcm(Δ_s, Δ_r)`.
pub fn lcm_scale(delta_s: u64, delta_r: u64) -> (u64, u64) {
    let l = delta_s / gcd(delta_s, delta_r) * delta_r;
    (l / delta_s, l / delta_r)
}

/// Sender/receiver assignment for one direction of a stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PairSchedule {
    Equal { n_s: usize, n_r: usize },
    Weighted { sender: Quantum, receiver: Quantum },
}

impl PairSchedule {
    /// Equal-share RSMs use the modular rotation; otherwise both sides are
    /// apportioned over a quantum of `quantum` slots (default `max(n_s, n_r)`).
    /// Shares are re-indexed by logical id through the given assignments.
    pub fn for_configs(
        sender: &RsmConfig,
        sender_ids: &IdAssignment,
        receiver: &RsmConfig,
        receiver_ids: &IdAssignment,
        quantum: Option<u64>,
    ) -> Self {
        let (n_s, n_r) = (sender.node_count(), receiver.node_count());
        if quantum.is_none() && sender.is_equal_share() && receiver.is_equal_share() {
            return PairSchedule::Equal { n_s, n_r };
        }
        let q = quantum.unwrap_or(n_s.max(n_r) as u64).max(1);
        let by_logical = |cfg: &RsmConfig, ids: &IdAssignment| -> Vec<u64> {
            (0..cfg.node_count() as u32)
                .map(|l| cfg.shares[ids.physical(l) as usize])
                .collect()
        };
        PairSchedule::Weighted {
            sender: Quantum::new(&by_logical(sender, sender_ids), q),
            receiver: Quantum::new(&by_logical(receiver, receiver_ids), q),
        }
    }

    pub fn sender_count(&self) -> usize {
        match self {
            PairSchedule::Equal { n_s, .. } => *n_s,
            PairSchedule::Weighted { sender, .. } => sender.quotas.len(),
        }
    }

    pub fn receiver_count(&self) -> usize {
        match self {
            PairSchedule::Equal { n_r, .. } => *n_r,
            PairSchedule::Weighted { receiver, .. } => receiver.quotas.len(),
        }
    }

    /// Number of retries after which the sender walk repeats.
    pub fn sender_cycle(&self) -> u32 {
        match self {
            PairSchedule::Equal { n_s, .. } => *n_s as u32,
            PairSchedule::Weighted { sender, .. } => sender.q as u32,
        }
    }

    pub fn original(&self, seq: StreamPos) -> (LogicalId, LogicalId) {
        self.retry(seq, 0)
    }

    /// Pair for retry `t`. In the weighted case the walk moves one share slot
    /// per retry on both sides.
    pub fn retry(&self, seq: StreamPos, t: u32) -> (LogicalId, LogicalId) {
        match self {
            PairSchedule::Equal { n_s, n_r } => retransmit_pair(
                assign_sender(seq, *n_s),
                assign_receiver(seq, *n_s, *n_r),
                t,
                *n_s,
                *n_r,
            ),
            PairSchedule::Weighted { sender, receiver } => {
                let q = sender.q;
                let slot = seq % q;
                let r_slot = (slot + seq / q) % q;
                let t = t as u64;
                (
                    sender.schedule[((slot + t) % q) as usize],
                    receiver.schedule[((r_slot + t) % q) as usize],
                )
            }
        }
    }

    /// Smallest retry number greater than `after` that `me` is responsible for.
    pub fn next_owned_retry(&self, seq: StreamPos, me: LogicalId, after: Option<u32>) -> Option<u32> {
        let start = after.map_or(0, |a| a + 1);
        (start..start + self.sender_cycle()).find(|&t| self.retry(seq, t).0 == me)
    }

    /// Backup rebroadcast slot of receiver `me` for `seq`: its distance from
    /// the original receiver in the rotation.
    pub fn rebroadcast_number(&self, seq: StreamPos, me: LogicalId) -> u32 {
        let n_r = self.receiver_count() as u32;
        let orig = self.original(seq).1;
        (me + n_r - orig) % n_r
    }
}

/// Attempts after which the retry chain of `seq` must have reached a correct
/// pair, charging ψ-scaled share.
///
/// Each attempt that visits a sender and a receiver both unseen so far adds
/// the smaller of their scaled shares; an adversary that makes every attempt
/// fail pays at least that much of its `ψ_s·u_s + ψ_r·u_r` budget. Returns
/// `None` if the walk cycles before the budget is exceeded.
pub fn retry_budget(
    schedule: &PairSchedule,
    sender_shares: &[u64],
    sender_u: u64,
    receiver_shares: &[u64],
    receiver_u: u64,
    seq: StreamPos,
) -> Option<u32> {
    let (psi_s, psi_r) = lcm_scale(sender_shares.iter().sum(), receiver_shares.iter().sum());
    let budget = psi_s as u128 * sender_u as u128 + psi_r as u128 * receiver_u as u128;
    let mut seen_s = BTreeSet::new();
    let mut seen_r = BTreeSet::new();
    let mut acc: u128 = 0;
    let horizon = schedule.sender_cycle() as u64 * schedule.receiver_count() as u64 * 2 + 2;
    for t in 0..horizon as u32 {
        let (s, r) = schedule.retry(seq, t);
        let new_s = seen_s.insert(s);
        let new_r = seen_r.insert(r);
        if new_s && new_r {
            let ws = psi_s as u128 * sender_shares[s as usize] as u128;
            let wr = psi_r as u128 * receiver_shares[r as usize] as u128;
            acc += ws.min(wr);
        }
        if acc > budget {
            return Some(t + 1);
        }
    }
    None
}
