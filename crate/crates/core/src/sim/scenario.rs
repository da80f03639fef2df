//! Scenario description loaded from JSON, with validation of fault budgets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::node::{AckMode, NodeParams};
use crate::receiver::GcMode;
use crate::scheduler::{assign_ids, IdAssignment};
use crate::types::{RsmConfig, StreamPos};

pub const SENDER_RSM_ID: u8 = 1;
pub const RECEIVER_RSM_ID: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "s")]
    Sender,
    #[serde(rename = "r")]
    Receiver,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Sender => Side::Receiver,
            Side::Receiver => Side::Sender,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::Sender => 0,
            Side::Receiver => 1,
        }
    }

    pub fn rsm_id(self) -> u8 {
        match self {
            Side::Sender => SENDER_RSM_ID,
            Side::Receiver => RECEIVER_RSM_ID,
        }
    }

    fn key(self) -> &'static str {
        match self {
            Side::Sender => "rsm_s",
            Side::Receiver => "rsm_r",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Protocol {
    Picsou,
    /// One shot: a single sender to a single receiver.
    Ost,
    /// All-to-all.
    Ata,
    /// Leader to leader.
    Ll,
    /// Leader to `u_r + 1` receivers, rotating the leader on timeout.
    Otu,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Picsou => "PICSOU",
            Protocol::Ost => "OST",
            Protocol::Ata => "ATA",
            Protocol::Ll => "LL",
            Protocol::Otu => "OTU",
        }
    }
}

/// One RSM in a scenario. Give `nodes` for equal shares or `shares` for a
/// weighted RSM. Ids are the identity unless `ids` (explicit permutation,
/// `ids[physical] = logical`) or `id_seed` (seeded shuffle) is given.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsmSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shares: Option<Vec<u64>>,
    pub u: u64,
    pub r: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<u32>>,
}

impl RsmSpec {
    pub fn equal(nodes: usize, u: u64, r: u64) -> Self {
        Self {
            nodes: Some(nodes),
            shares: None,
            u,
            r,
            id_seed: None,
            ids: None,
        }
    }

    pub fn weighted(shares: Vec<u64>, u: u64, r: u64) -> Self {
        Self {
            shares: Some(shares),
            nodes: None,
            ..Self::equal(0, u, r)
        }
    }

    fn config(&self, side: Side) -> Result<RsmConfig> {
        let shares = match (&self.shares, self.nodes) {
            (Some(s), Some(n)) if s.len() != n => {
                return Err(Error::config(
                    format!("{}.shares", side.key()),
                    format!("{} shares given for {n} nodes", s.len()),
                ))
            }
            (Some(s), _) => s.clone(),
            (None, Some(n)) => vec![1; n],
            (None, None) => {
                return Err(Error::config(
                    format!("{}.nodes", side.key()),
                    "nodes or shares required",
                ))
            }
        };
        let cfg = RsmConfig {
            rsm_id: side.rsm_id(),
            shares,
            u: self.u,
            r: self.r,
            id_seed: self.id_seed.unwrap_or(0),
        };
        cfg.validate().map_err(|e| match e {
            Error::Config { field, reason } => Error::Config {
                field: field.replace(&format!("rsm[{}]", side.rsm_id()), side.key()),
                reason,
            },
            other => other,
        })?;
        Ok(cfg)
    }

    fn assignment(&self, cfg: &RsmConfig, side: Side) -> Result<IdAssignment> {
        match (&self.ids, self.id_seed) {
            (Some(ids), _) => {
                if ids.len() != cfg.node_count() {
                    return Err(Error::config(format!("{}.ids", side.key()), "one id per node required"));
                }
                IdAssignment::adversarial(ids.clone())
                    .map_err(|e| Error::config(format!("{}.ids", side.key()), e.to_string()))
            }
            (None, Some(_)) => Ok(assign_ids(cfg)),
            (None, None) => Ok(IdAssignment::identity(cfg.node_count())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllPositions {
    All,
}

/// Which stream positions an omission fault drops.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Selector {
    All(AllPositions),
    Positions(Vec<StreamPos>),
}

impl Selector {
    pub fn all() -> Self {
        Selector::All(AllPositions::All)
    }

    pub fn matches(&self, pos: StreamPos) -> bool {
        match self {
            Selector::All(_) => true,
            Selector::Positions(p) => p.contains(&pos),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LieMode {
    /// Claim far more than received.
    Inf,
    /// Always report nothing received.
    Zero,
    /// Report `φ` positions less than received.
    DelayPhi,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Behavior {
    Correct,
    /// Stops sending and receiving from this tick on.
    CrashAt(u64),
    /// Drops cross-RSM traffic: data for the selected positions, and for
    /// `all` every cross-RSM message in both directions.
    OmitForeign(Selector),
    /// Never relays received messages to local peers.
    OmitBroadcast,
    /// Rewrites its outgoing acknowledgments.
    LieAck(LieMode),
    /// Relays `position` only to local replica `partner`, then crashes at `stop_at`.
    GcStall {
        position: StreamPos,
        partner: u32,
        stop_at: u64,
    },
    /// Injects forged copies of every committed message it sees.
    ForgeCerts,
}

impl Behavior {
    pub fn is_faulty(&self) -> bool {
        !matches!(self, Behavior::Correct)
    }

    /// Deviations beyond omission.
    pub fn is_commission(&self) -> bool {
        matches!(
            self,
            Behavior::LieAck(_) | Behavior::GcStall { .. } | Behavior::ForgeCerts
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryEntry {
    pub side: Side,
    /// Physical replica index.
    pub replica: u32,
    pub behavior: Behavior,
}

/// Drops cross-RSM messages sent by one replica during `[from_tick, to_tick)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropRule {
    pub side: Side,
    pub replica: u32,
    pub from_tick: u64,
    pub to_tick: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Links {
    pub latency: u64,
    pub broadcast_latency: u64,
    pub drops: Vec<DropRule>,
}

impl Default for Links {
    fn default() -> Self {
        Self {
            latency: 1,
            broadcast_latency: 1,
            drops: Vec::new(),
        }
    }
}

fn default_messages() -> usize {
    100
}

fn default_message_size() -> usize {
    16
}

fn one() -> u64 {
    1
}

/// A complete experiment. Only `rsm_s` and `rsm_r` are required.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub rsm_s: RsmSpec,
    pub rsm_r: RsmSpec,
    #[serde(default = "Scenario::default_protocol")]
    pub protocol: Protocol,
    /// Messages the sending RSM transmits.
    #[serde(default = "default_messages")]
    pub messages: usize,
    /// Messages the receiving RSM transmits back.
    #[serde(default)]
    pub reverse_messages: usize,
    #[serde(default = "default_message_size")]
    pub message_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<u64>,
    /// Apportionment quantum; forces the weighted scheduler when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantum: Option<u64>,
    #[serde(default)]
    pub adversary: Vec<AdversaryEntry>,
    #[serde(default)]
    pub links: Links,
    #[serde(default)]
    pub seed: u64,

    /// Ticks between commit slots.
    #[serde(default = "one")]
    pub send_period: u64,
    /// Messages committed per slot; defaults to the RSM's node count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commit_batch: Option<usize>,
    /// Ticks between ack slots.
    #[serde(default = "one")]
    pub ack_period: u64,
    #[serde(default)]
    pub ack_mode: AckMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ack_batch: Option<u32>,
    #[serde(default)]
    pub gc_mode: GcMode,
    #[serde(default = "Scenario::default_true")]
    pub gc_hints: bool,
    #[serde(default = "Scenario::default_true")]
    pub local_rebroadcast: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick_cap: Option<u64>,
}

/// Validated, ready-to-run form of a [`Scenario`].
#[derive(Clone, Debug)]
pub struct Resolved {
    pub configs: [RsmConfig; 2],
    pub ids: [IdAssignment; 2],
    /// Behavior per physical replica, per side.
    pub behaviors: [Vec<Behavior>; 2],
    pub params: NodeParams,
    pub tick_cap: u64,
}

impl Scenario {
    fn default_protocol() -> Protocol {
        Protocol::Picsou
    }

    fn default_true() -> bool {
        true
    }

    pub fn new(rsm_s: RsmSpec, rsm_r: RsmSpec, messages: usize) -> Self {
        Self {
            rsm_s,
            rsm_r,
            protocol: Protocol::Picsou,
            messages,
            reverse_messages: 0,
            message_size: default_message_size(),
            phi: None,
            window: None,
            quantum: None,
            adversary: Vec::new(),
            links: Links::default(),
            seed: 0,
            send_period: 1,
            commit_batch: None,
            ack_period: 1,
            ack_mode: AckMode::default(),
            ack_batch: None,
            gc_mode: GcMode::default(),
            gc_hints: true,
            local_rebroadcast: true,
            tick_cap: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn with_adversary(mut self, side: Side, replica: u32, behavior: Behavior) -> Self {
        self.adversary.push(AdversaryEntry {
            side,
            replica,
            behavior,
        });
        self
    }

    pub fn spec(&self, side: Side) -> &RsmSpec {
        match side {
            Side::Sender => &self.rsm_s,
            Side::Receiver => &self.rsm_r,
        }
    }

    pub fn params(&self) -> NodeParams {
        let d = NodeParams::default();
        NodeParams {
            phi: self.phi.unwrap_or(d.phi),
            window: self.window.unwrap_or(d.window),
            ack_mode: self.ack_mode,
            ack_batch: self.ack_batch.unwrap_or(d.ack_batch),
            gc_mode: self.gc_mode,
            gc_hints: self.gc_hints,
            local_rebroadcast: self.local_rebroadcast,
        }
    }

    /// Checks every field and fault budget, naming the offending field on error.
    pub fn resolve(&self) -> Result<Resolved> {
        let configs = [self.rsm_s.config(Side::Sender)?, self.rsm_r.config(Side::Receiver)?];
        let ids = [
            self.rsm_s.assignment(&configs[0], Side::Sender)?,
            self.rsm_r.assignment(&configs[1], Side::Receiver)?,
        ];
        if self.phi == Some(0) {
            return Err(Error::config("phi", "must be >= 1"));
        }
        if self.window == Some(0) {
            return Err(Error::config("window", "must be >= 1"));
        }
        if self.quantum == Some(0) {
            return Err(Error::config("quantum", "must be >= 1"));
        }
        if self.send_period == 0 {
            return Err(Error::config("send_period", "must be >= 1"));
        }
        if self.ack_period == 0 {
            return Err(Error::config("ack_period", "must be >= 1"));
        }
        if self.commit_batch == Some(0) {
            return Err(Error::config("commit_batch", "must be >= 1"));
        }
        if self.links.latency == 0 || self.links.broadcast_latency == 0 {
            return Err(Error::config("links.latency", "latencies must be >= 1 tick"));
        }

        let mut behaviors = [
            vec![Behavior::Correct; configs[0].node_count()],
            vec![Behavior::Correct; configs[1].node_count()],
        ];
        for (i, entry) in self.adversary.iter().enumerate() {
            let field = format!("adversary[{i}]");
            let slot = behaviors[entry.side.index()]
                .get_mut(entry.replica as usize)
                .ok_or_else(|| Error::config(format!("{field}.replica"), "no such replica"))?;
            if slot.is_faulty() {
                return Err(Error::config(format!("{field}.replica"), "replica listed twice"));
            }
            if let Behavior::GcStall { partner, .. } = entry.behavior {
                if partner == entry.replica || partner as usize >= configs[entry.side.index()].node_count() {
                    return Err(Error::config(
                        format!("{field}.behavior.partner"),
                        "must name another replica",
                    ));
                }
            }
            *slot = entry.behavior.clone();
        }
        for side in [Side::Sender, Side::Receiver] {
            let cfg = &configs[side.index()];
            let faulty: u64 = behaviors[side.index()]
                .iter()
                .zip(&cfg.shares)
                .filter(|(b, _)| b.is_faulty())
                .map(|(_, s)| s)
                .sum();
            let commission: u64 = behaviors[side.index()]
                .iter()
                .zip(&cfg.shares)
                .filter(|(b, _)| b.is_commission())
                .map(|(_, s)| s)
                .sum();
            if faulty > cfg.u {
                return Err(Error::config(
                    "adversary",
                    format!("faulty share {faulty} in {} exceeds u={}", side.key(), cfg.u),
                ));
            }
            if commission > cfg.r {
                return Err(Error::config(
                    "adversary",
                    format!(
                        "commission-faulty share {commission} in {} exceeds r={}",
                        side.key(),
                        cfg.r
                    ),
                ));
            }
        }
        let tick_cap = self
            .tick_cap
            .unwrap_or(2_000 + 20 * (self.messages + self.reverse_messages) as u64 * self.send_period);
        Ok(Resolved {
            configs,
            ids,
            behaviors,
            params: self.params(),
            tick_cap,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json() {
        let s = Scenario::from_json(r#"{"rsm_s":{"nodes":4,"u":1,"r":1},"rsm_r":{"nodes":4,"u":1,"r":1}}"#).unwrap();
        assert_eq!(s.protocol, Protocol::Picsou);
        let r = s.resolve().unwrap();
        assert_eq!(r.configs[1].rsm_id, RECEIVER_RSM_ID);
        assert_eq!(r.ids[0], IdAssignment::identity(4));
    }

    #[test]
    fn adversary_json() {
        let s = Scenario::from_json(
            r#"{"rsm_s":{"nodes":4,"u":1,"r":1},"rsm_r":{"nodes":4,"u":1,"r":1},
                "adversary":[{"side":"s","replica":0,"behavior":{"crash_at":2}},
                             {"side":"r","replica":3,"behavior":{"lie_ack":"delay_phi"}},
                             {"side":"r","replica":3,"behavior":{"omit_foreign":"all"}}]}"#,
        )
        .unwrap();
        assert_eq!(s.adversary[1].behavior, Behavior::LieAck(LieMode::DelayPhi));
        assert_eq!(s.adversary[2].behavior, Behavior::OmitForeign(Selector::all()));
        assert!(matches!(s.resolve(), Err(Error::Config { field, .. }) if field == "adversary[2].replica"));
    }

    #[test]
    fn budget_violation_names_field() {
        let s = Scenario::new(RsmSpec::equal(4, 1, 1), RsmSpec::equal(4, 1, 1), 4)
            .with_adversary(Side::Receiver, 0, Behavior::CrashAt(1))
            .with_adversary(Side::Receiver, 1, Behavior::CrashAt(1));
        assert!(matches!(s.resolve(), Err(Error::Config { field, .. }) if field == "adversary"));
    }

    #[test]
    fn oversized_u_rejected() {
        let s = Scenario::new(RsmSpec::equal(4, 2, 0), RsmSpec::equal(4, 1, 1), 4);
        assert!(matches!(s.resolve(), Err(Error::Config { field, .. }) if field == "rsm_s.u"));
    }

    #[test]
    fn unknown_key_rejected() {
        let e = Scenario::from_json(r#"{"rsm_s":{"nodes":4,"u":1,"r":1},"rsm_r":{"nodes":4,"u":1,"r":1},"phii":3}"#)
            .unwrap_err();
        assert!(e.to_string().contains("phii"));
    }
}
