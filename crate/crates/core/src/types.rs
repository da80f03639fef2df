//! Value types shared by every layer of the protocol: RSM membership,
//! commit certificates, committed messages, acknowledgments and metrics.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Physical index of a replica inside its RSM.
pub type ReplicaIndex = u32;
/// Identifier a replica holds in the sender/receiver rotation.
pub type LogicalId = u32;
/// 0-based position of a message in the transmitted stream (`k'`).
pub type StreamPos = u64;

/// Membership, share vector and fault budgets of one replicated state machine.
///
/// `u` bounds the total share of replicas that may fail in any way (liveness),
/// `r` bounds the share that may act maliciously (safety). Both are in share
/// units, so with unit shares they count replicas.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsmConfig {
    pub rsm_id: u8,
    pub shares: Vec<u64>,
    pub u: u64,
    pub r: u64,
    #[serde(default)]
    pub id_seed: u64,
}

impl RsmConfig {
    /// Equal-share RSM with `n` replicas.
    pub fn equal(rsm_id: u8, n: usize, u: u64, r: u64) -> Self {
        Self {
            rsm_id,
            shares: vec![1; n],
            u,
            r,
            id_seed: 0,
        }
    }

    pub fn weighted(rsm_id: u8, shares: Vec<u64>, u: u64, r: u64) -> Self {
        Self {
            rsm_id,
            shares,
            u,
            r,
            id_seed: 0,
        }
    }

    pub fn with_seed(mut self, id_seed: u64) -> Self {
        self.id_seed = id_seed;
        self
    }

    pub fn node_count(&self) -> usize {
        self.shares.len()
    }

    /// Total share `Δ`.
    pub fn total_share(&self) -> u64 {
        self.shares.iter().sum()
    }

    pub fn is_equal_share(&self) -> bool {
        self.shares.windows(2).all(|w| w[0] == w[1])
    }

    /// Share needed to commit a request: `u + r + 1`.
    pub fn commit_quorum(&self) -> u64 {
        self.u + self.r + 1
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("rsm[{}].{name}", self.rsm_id);
        if self.shares.is_empty() {
            return Err(Error::config(field("shares"), "at least one replica required"));
        }
        if self.shares.contains(&0) {
            return Err(Error::config(field("shares"), "every share must be >= 1"));
        }
        if self.r > self.u {
            return Err(Error::config(field("r"), format!("r={} exceeds u={}", self.r, self.u)));
        }
        let need = 2 * self.u + self.r + 1;
        if self.total_share() < need {
            return Err(Error::config(
                field("u"),
                format!("total share {} is below 2u+r+1 = {need}", self.total_share()),
            ));
        }
        Ok(())
    }
}

/// Digest binding a payload to its commit and stream sequence numbers.
pub fn message_digest(payload: &[u8], k: u64, k_prime: Option<StreamPos>) -> u64 {
    let mut h = Sha256::new();
    h.update(payload);
    h.update(k.to_le_bytes());
    h.update(k_prime.map_or(u64::MAX, |p| p).to_le_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}

/// Simulated quorum certificate: a signer set with claimed weights and a
/// threshold. There is no cryptography; validity is the verification predicate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Certificate {
    pub rsm_id: u8,
    pub k: u64,
    pub digest: u64,
    pub signers: Vec<(ReplicaIndex, u64)>,
    pub threshold: u64,
}

impl Certificate {
    /// Certificate signed by every member of `cfg`.
    pub fn unanimous(cfg: &RsmConfig, k: u64, digest: u64) -> Self {
        Self {
            rsm_id: cfg.rsm_id,
            k,
            digest,
            signers: cfg
                .shares
                .iter()
                .enumerate()
                .map(|(i, &s)| (i as ReplicaIndex, s))
                .collect(),
            threshold: cfg.commit_quorum(),
        }
    }

    pub fn signed_weight(&self) -> u64 {
        self.signers.iter().map(|&(_, w)| w).sum()
    }
}

/// True iff the signers are distinct members of `expected`, their claimed
/// weights match the membership, the threshold is at least the commit quorum
/// and the signed weight reaches the threshold.
pub fn verify_certificate(cert: &Certificate, expected: &RsmConfig) -> bool {
    if cert.rsm_id != expected.rsm_id || cert.threshold < expected.commit_quorum() {
        return false;
    }
    let mut seen = BTreeSet::new();
    for &(idx, weight) in &cert.signers {
        match expected.shares.get(idx as usize) {
            Some(&share) if share == weight && seen.insert(idx) => {}
            _ => return false,
        }
    }
    cert.signed_weight() >= cert.threshold
}

/// A request committed by the sending RSM, `⟨m, k, k'⟩` plus its certificate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CommittedMessage {
    pub payload: Vec<u8>,
    pub k: u64,
    /// Stream position; `None` means the message is not transmitted.
    pub k_prime: Option<StreamPos>,
    pub cert: Certificate,
}

impl CommittedMessage {
    /// Builds a message certified by every member of `cfg`.
    pub fn committed(cfg: &RsmConfig, payload: Vec<u8>, k: u64, k_prime: Option<StreamPos>) -> Self {
        let digest = message_digest(&payload, k, k_prime);
        Self {
            cert: Certificate::unanimous(cfg, k, digest),
            payload,
            k,
            k_prime,
        }
    }

    /// Certificate check plus binding of the certificate to this payload.
    pub fn is_valid(&self, sender: &RsmConfig) -> bool {
        self.cert.k == self.k
            && self.cert.digest == message_digest(&self.payload, self.k, self.k_prime)
            && verify_certificate(&self.cert, sender)
    }
}

/// Presence bitmap for stream positions `p, p+1, …` past a cumulative ack.
/// Bit `j` lives in byte `j / 8`, least significant bit first.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhiList(Vec<u8>);

impl PhiList {
    pub fn from_bytes(mut bytes: Vec<u8>) -> Self {
        while bytes.last() == Some(&0) {
            bytes.pop();
        }
        Self(bytes)
    }

    /// Builds a bitmap from offsets relative to the cumulative ack.
    pub fn from_offsets(offsets: impl IntoIterator<Item = usize>) -> Self {
        let mut bytes = Vec::new();
        for j in offsets {
            if bytes.len() <= j / 8 {
                bytes.resize(j / 8 + 1, 0);
            }
            bytes[j / 8] |= 1 << (j % 8);
        }
        Self::from_bytes(bytes)
    }

    pub fn get(&self, j: usize) -> bool {
        self.0.get(j / 8).is_some_and(|b| b & (1 << (j % 8)) != 0)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    /// Offsets of set bits, ascending.
    pub fn offsets(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.0.len() * 8).filter(|&j| self.get(j))
    }

    pub fn highest_offset(&self) -> Option<usize> {
        self.offsets().last()
    }
}

const HINT_FLAG: u32 = 1 << 31;

/// A replica's cumulative acknowledgment: `cum_ack = p` means positions
/// `0..p` have all been received.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AckReport {
    pub from_replica: LogicalId,
    pub view: u32,
    pub cum_ack: u64,
    pub phi_list: PhiList,
    /// Highest quacked position count, sent only while garbage collection
    /// needs to unstick the receiving side.
    pub highest_quacked_hint: Option<u64>,
}

impl AckReport {
    pub fn new(from_replica: LogicalId, cum_ack: u64) -> Self {
        Self {
            from_replica,
            view: 0,
            cum_ack,
            phi_list: PhiList::default(),
            highest_quacked_hint: None,
        }
    }

    /// Fixed header size in bytes.
    pub const HEADER_LEN: usize = 16;

    /// Wire form: `from_replica: u32 | view: u32 | cum_ack: u64` little
    /// endian, then the bitmap bytes. A hint sets the top bit of `view` and
    /// is appended as a trailing `u64`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.from_replica.to_le_bytes());
        let view = self.view & !HINT_FLAG
            | if self.highest_quacked_hint.is_some() {
                HINT_FLAG
            } else {
                0
            };
        out.extend_from_slice(&view.to_le_bytes());
        out.extend_from_slice(&self.cum_ack.to_le_bytes());
        out.extend_from_slice(self.phi_list.as_bytes());
        if let Some(h) = self.highest_quacked_hint {
            out.extend_from_slice(&h.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < Self::HEADER_LEN {
            return None;
        }
        let from_replica = u32::from_le_bytes(bytes[0..4].try_into().ok()?);
        let raw_view = u32::from_le_bytes(bytes[4..8].try_into().ok()?);
        let cum_ack = u64::from_le_bytes(bytes[8..16].try_into().ok()?);
        let mut rest = &bytes[16..];
        let hint = if raw_view & HINT_FLAG != 0 {
            if rest.len() < 8 {
                return None;
            }
            let (bitmap, tail) = rest.split_at(rest.len() - 8);
            rest = bitmap;
            Some(u64::from_le_bytes(tail.try_into().ok()?))
        } else {
            None
        };
        Some(Self {
            from_replica,
            view: raw_view & !HINT_FLAG,
            cum_ack,
            phi_list: PhiList::from_bytes(rest.to_vec()),
            highest_quacked_hint: hint,
        })
    }

    pub fn encoded_len(&self) -> usize {
        Self::HEADER_LEN + self.phi_list.as_bytes().len() + self.highest_quacked_hint.map_or(0, |_| 8)
    }

    /// Size of the acknowledgment proper, excluding the garbage-collection hint.
    pub fn ack_len(&self) -> usize {
        Self::HEADER_LEN + self.phi_list.as_bytes().len()
    }
}

impl fmt::Display for AckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ack({})", self.cum_ack)?;
        if !self.phi_list.is_empty() {
            write!(f, "+phi[")?;
            for (i, off) in self.phi_list.offsets().enumerate() {
                if i > 0 {
                    write!(f, " ")?;
                }
                write!(f, "{}", self.cum_ack + off as u64)?;
            }
            write!(f, "]")?;
        }
        if let Some(h) = self.highest_quacked_hint {
            write!(f, "+hint{h}")?;
        }
        Ok(())
    }
}

/// Per-message accounting collected by the simulator.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MessageMetrics {
    /// Cross-RSM copies of the payload put on the wire.
    pub copies: u64,
    /// Transmission attempts: 1 for the original plus one per resend round.
    pub attempts: u32,
    /// First tick a correct receiver delivered the message.
    pub first_delivery: Option<u64>,
    /// First tick a correct sender saw the message quacked.
    pub quacked_at: Option<u64>,
}

/// Aggregate numbers for one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricTotals {
    pub messages: u64,
    pub copies: u64,
    pub resends: u64,
    pub max_attempts: u32,
    pub standalone_acks: u64,
    pub rejected_invalid: u64,
    pub max_ack_bytes: usize,
    pub false_quacks: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricRecord {
    pub protocol: String,
    pub per_message: Vec<MessageMetrics>,
    pub totals: MetricTotals,
}

impl MetricRecord {
    pub fn new(protocol: impl Into<String>, messages: usize) -> Self {
        Self {
            protocol: protocol.into(),
            per_message: vec![MessageMetrics::default(); messages],
            totals: MetricTotals {
                messages: messages as u64,
                ..Default::default()
            },
        }
    }

    pub fn copies_per_message(&self) -> f64 {
        if self.totals.messages == 0 {
            0.0
        } else {
            self.totals.copies as f64 / self.totals.messages as f64
        }
    }

    /// Recomputes the copy and attempt totals from the per-message rows.
    pub fn finalize(&mut self) {
        self.totals.copies = self.per_message.iter().map(|m| m.copies).sum();
        self.totals.max_attempts = self.per_message.iter().map(|m| m.attempts).max().unwrap_or(0);
    }

    /// One row per message followed by a totals footer.
    pub fn to_csv(&self, outcome: &str) -> String {
        let mut s = String::from("position,copies,attempts,first_delivery,quacked_at\n");
        let opt = |v: Option<u64>| v.map_or(String::new(), |t| t.to_string());
        for (pos, m) in self.per_message.iter().enumerate() {
            s.push_str(&format!(
                "{pos},{},{},{},{}\n",
                m.copies,
                m.attempts,
                opt(m.first_delivery),
                opt(m.quacked_at)
            ));
        }
        let t = &self.totals;
        s.push_str(&format!(
            "totals,protocol={},messages={},copies={},copies_per_message={},max_attempts={},resends={},standalone_acks={},rejected_invalid={},max_ack_bytes={},false_quacks={},outcome={outcome}\n",
            self.protocol,
            t.messages,
            t.copies,
            fmt_ratio(self.copies_per_message()),
            t.max_attempts,
            t.resends,
            t.standalone_acks,
            t.rejected_invalid,
            t.max_ack_bytes,
            t.false_quacks,
        ));
        s
    }
}

fn fmt_ratio(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as u64)
    } else {
        format!("{v:.4}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cert_with(cfg: &RsmConfig, signers: &[u32]) -> Certificate {
        Certificate {
            rsm_id: cfg.rsm_id,
            k: 0,
            digest: 0,
            signers: signers.iter().map(|&i| (i, cfg.shares[i as usize])).collect(),
            threshold: 3,
        }
    }

    #[test]
    fn classic_sizing() {
        for f in 0..5u64 {
            let bft = RsmConfig::equal(1, (3 * f + 1) as usize, f, f);
            assert!(bft.validate().is_ok());
            assert_eq!(bft.total_share(), 2 * bft.u + bft.r + 1);
            let cft = RsmConfig::equal(1, (2 * f + 1) as usize, f, 0);
            assert!(cft.validate().is_ok());
            assert_eq!(cft.total_share(), 2 * cft.u + 1);
        }
    }

    #[test]
    fn validate_rejects_bad_budgets() {
        assert!(RsmConfig::equal(1, 3, 1, 1).validate().is_err());
        assert!(RsmConfig::equal(1, 7, 1, 2).validate().is_err());
        assert!(RsmConfig::weighted(1, vec![1, 0, 1], 0, 0).validate().is_err());
        assert!(RsmConfig::weighted(1, vec![], 0, 0).validate().is_err());
    }

    #[test]
    fn three_of_four_meets_threshold() {
        let cfg = RsmConfig::equal(1, 4, 1, 1);
        assert!(verify_certificate(&cert_with(&cfg, &[0, 1, 2]), &cfg));
        assert!(!verify_certificate(&cert_with(&cfg, &[0, 1]), &cfg));
    }

    #[test]
    fn wrong_rsm_rejected() {
        let cfg = RsmConfig::equal(1, 4, 1, 1);
        let mut c = cert_with(&cfg, &[0, 1, 2, 3]);
        c.rsm_id = 2;
        assert!(!verify_certificate(&c, &cfg));
    }

    #[test]
    fn lowered_threshold_or_inflated_weight_rejected() {
        let cfg = RsmConfig::equal(1, 4, 1, 1);
        let mut c = cert_with(&cfg, &[0]);
        c.threshold = 1;
        assert!(!verify_certificate(&c, &cfg));
        let mut c = cert_with(&cfg, &[0]);
        c.signers[0].1 = 3;
        assert!(!verify_certificate(&c, &cfg));
        let c = cert_with(&cfg, &[0, 0, 0]);
        assert!(!verify_certificate(&c, &cfg));
    }

    #[test]
    fn message_binding() {
        let cfg = RsmConfig::equal(1, 4, 1, 1);
        let m = CommittedMessage::committed(&cfg, b"x".to_vec(), 3, Some(1));
        assert!(m.is_valid(&cfg));
        let mut forged = m.clone();
        forged.payload = b"y".to_vec();
        assert!(!forged.is_valid(&cfg));
        let mut moved = m;
        moved.k_prime = Some(2);
        assert!(!moved.is_valid(&cfg));
    }

    #[test]
    fn ack_header_is_sixteen_bytes() {
        let a = AckReport::new(3, 4);
        assert_eq!(a.encode().len(), 16);
        let mut b = a.clone();
        b.phi_list = PhiList::from_offsets([3]);
        assert_eq!(b.encode().len(), 17);
        assert_eq!(b.to_string(), "Ack(4)+phi[7]");
    }

    #[test]
    fn phi_list_truncates_trailing_zeros() {
        let p = PhiList::from_bytes(vec![0b1000, 0, 0]);
        assert_eq!(p.as_bytes(), &[0b1000]);
        assert_eq!(p.offsets().collect::<Vec<_>>(), vec![3]);
        assert_eq!(p.highest_offset(), Some(3));
    }
}
