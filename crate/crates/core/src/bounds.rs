//! Retransmission bounds: the faulty-pair fraction, the number of retries
//! that drives the failure probability below a target, exhaustive
//! worst-case search over faulty placements and a Monte-Carlo retry-chain
//! experiment.

use std::fmt::Write as _;

use itertools::Itertools;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Pow, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scheduler::{assign_ids, PairSchedule};
use crate::sim::scenario::{Behavior, RsmSpec, Scenario, Selector, Side};
use crate::sim::{self, Outcome};
use crate::types::{RsmConfig, StreamPos};

/// Upper bound on the fraction of sender/receiver pairs with a faulty end
/// when `n = α·u + 1`: `(α_s + α_r − 1) / (α_s·α_r)`.
pub fn faulty_pair_fraction(alpha_s: f64, alpha_r: f64) -> f64 {
    (alpha_r + alpha_s - 1.0) / (alpha_s * alpha_r)
}

pub fn faulty_pair_fraction_exact(alpha_s: &BigRational, alpha_r: &BigRational) -> BigRational {
    (alpha_r + alpha_s - BigRational::one()) / (alpha_s * alpha_r)
}

/// Parses `"3/4"`, `"0.25"`, `"1e-11"` or `"2.5E3"` into an exact rational.
pub fn parse_rational(text: &str) -> Result<BigRational> {
    let bad = || Error::config("value", format!("not a number: {text:?}"));
    let t = text.trim();
    if let Some((n, d)) = t.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| bad())?;
        let d: BigInt = d.trim().parse().map_err(|_| bad())?;
        if d.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(n, d));
    }
    let (mantissa, exp) = match t.find(['e', 'E']) {
        Some(i) => (&t[..i], t[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (t, 0),
    };
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    let mut value = BigRational::from_integer(digits.parse::<BigInt>().map_err(|_| bad())?);
    let shift = exp - frac.len() as i32;
    let ten = BigRational::from_integer(BigInt::from(10));
    if shift >= 0 {
        value *= Pow::pow(&ten, shift as u32);
    } else {
        value /= Pow::pow(&ten, shift.unsigned_abs());
    }
    Ok(value)
}

/// Smallest `q` with `base^q ≤ p_fail`.
///
/// A floating-point logarithm gives the starting guess; exact rational
/// powers settle the ceiling.
pub fn min_retries(p_fail: &BigRational, base: &BigRational) -> Result<u32> {
    let one = BigRational::one();
    if !(p_fail > &BigRational::zero() && p_fail <= &one) {
        return Err(Error::config("pfail", "must lie in (0, 1]"));
    }
    if !(base > &BigRational::zero() && base < &one) {
        return Err(Error::config("base", "must lie in (0, 1)"));
    }
    let ln = |r: &BigRational| {
        let (n, d) = (
            r.numer().to_f64().unwrap_or(f64::MAX),
            r.denom().to_f64().unwrap_or(f64::MAX),
        );
        n.ln() - d.ln()
    };
    let guess = (ln(p_fail) / ln(base)).ceil().max(0.0) as u32;
    let pow = |q: u32| -> BigRational { Pow::pow(base, q) };
    let mut q = guess;
    while pow(q) > *p_fail {
        q += 1;
    }
    while q > 0 && pow(q - 1) <= *p_fail {
        q -= 1;
    }
    Ok(q)
}

/// Parameters of a retry-chain experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundConfig {
    pub alpha_s: f64,
    pub alpha_r: f64,
    pub n_s: usize,
    pub n_r: usize,
    pub u_s: usize,
    pub u_r: usize,
    pub trials: u64,
    pub seed: u64,
}

impl BoundConfig {
    /// `n = 3f + 1` replicas on both sides with `f` faulty.
    pub fn three_f_plus_one(f: usize, trials: u64, seed: u64) -> Self {
        Self {
            alpha_s: 3.0,
            alpha_r: 3.0,
            n_s: 3 * f + 1,
            n_r: 3 * f + 1,
            u_s: f,
            u_r: f,
            trials,
            seed,
        }
    }
}

/// Attempts per message, `counts[a]` messages needing exactly `a` attempts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Histogram {
    pub counts: Vec<u64>,
    pub trials: u64,
}

impl Histogram {
    fn add(&mut self, attempts: usize) {
        if self.counts.len() <= attempts {
            self.counts.resize(attempts + 1, 0);
        }
        self.counts[attempts] += 1;
        self.trials += 1;
    }

    fn merge(mut self, other: Histogram) -> Histogram {
        if self.counts.len() < other.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, c) in other.counts.into_iter().enumerate() {
            self.counts[a] += c;
        }
        self.trials += other.trials;
        self
    }

    pub fn max_attempts(&self) -> usize {
        self.counts.iter().rposition(|&c| c > 0).unwrap_or(0)
    }

    /// Empirical `P(attempts > q)`.
    pub fn tail(&self, q: usize) -> f64 {
        if self.trials == 0 {
            return 0.0;
        }
        let over: u64 = self.counts.iter().skip(q + 1).sum();
        over as f64 / self.trials as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("attempts,count,fraction\n");
        for (a, &c) in self.counts.iter().enumerate().skip(1) {
            let _ = writeln!(s, "{a},{c},{:.6}", c as f64 / self.trials.max(1) as f64);
        }
        s
    }
}

/// Attempts until the retry chain of `seq` reaches a pair with both ends
/// correct; `None` if every pair the walk visits is faulty.
pub fn chain_attempts(
    schedule: &PairSchedule,
    seq: StreamPos,
    sender_faulty: impl Fn(u32) -> bool,
    receiver_faulty: impl Fn(u32) -> bool,
) -> Option<u32> {
    let horizon = (schedule.sender_count() * schedule.receiver_count()) as u32;
    (0..horizon)
        .find(|&t| {
            let (s, r) = schedule.retry(seq, t);
            !sender_faulty(s) && !receiver_faulty(r)
        })
        .map(|t| t + 1)
}

fn derived_seed(seed: u64, trial: u64) -> u64 {
    seed ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
}

/// Retry-chain walk under random faulty placement. Physical replicas
/// `0..u` are faulty on each side; each trial draws fresh seeded ids and a
/// random stream position.
pub fn monte_carlo_tail(cfg: &BoundConfig) -> Histogram {
    let schedule = PairSchedule::Equal {
        n_s: cfg.n_s,
        n_r: cfg.n_r,
    };
    (0..cfg.trials)
        .into_par_iter()
        .fold(Histogram::default, |mut h, trial| {
            let seed = derived_seed(cfg.seed, trial);
            let ids_s = assign_ids(&RsmConfig::equal(1, cfg.n_s, 0, 0).with_seed(seed));
            let ids_r = assign_ids(&RsmConfig::equal(2, cfg.n_r, 0, 0).with_seed(seed.rotate_left(32)));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let seq = rng.gen_range(0..(cfg.n_s * cfg.n_r) as u64);
            let attempts = chain_attempts(
                &schedule,
                seq,
                |l| (ids_s.physical(l) as usize) < cfg.u_s,
                |l| (ids_r.physical(l) as usize) < cfg.u_r,
            )
            .expect("faulty share below half leaves a correct pair on every chain");
            h.add(attempts as usize);
            h
        })
        .reduce(Histogram::default, Histogram::merge)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorstCase {
    pub max_attempts: u32,
    pub placements: u64,
    /// A placement and position achieving the maximum.
    pub witness: (Vec<u32>, Vec<u32>, StreamPos),
}

/// Maximum attempts over every faulty placement of `u_s` senders and `u_r`
/// receivers (logical ids) and every stream position in one rotation period.
pub fn exhaustive_worst_case(n_s: usize, u_s: usize, n_r: usize, u_r: usize) -> WorstCase {
    let schedule = PairSchedule::Equal { n_s, n_r };
    let mut best = WorstCase {
        max_attempts: 0,
        placements: 0,
        witness: (Vec::new(), Vec::new(), 0),
    };
    for fs in (0..n_s as u32).combinations(u_s) {
        for fr in (0..n_r as u32).combinations(u_r) {
            best.placements += 1;
            for seq in 0..(n_s * n_r) as u64 {
                let a = chain_attempts(&schedule, seq, |s| fs.contains(&s), |r| fr.contains(&r)).unwrap_or(u32::MAX);
                if a > best.max_attempts {
                    best.max_attempts = a;
                    best.witness = (fs.clone(), fr.clone(), seq);
                }
            }
        }
    }
    best
}

/// Faulty sets that make the chain of `seq` fail `u_s + u_r` times: the
/// `u_s` senders starting at its original sender, then the `u_r` receivers
/// the walk reaches after them.
pub fn contiguous_placement(n_s: usize, u_s: usize, n_r: usize, u_r: usize, seq: StreamPos) -> (Vec<u32>, Vec<u32>) {
    let (s0, r0) = PairSchedule::Equal { n_s, n_r }.original(seq);
    let senders = (0..u_s as u32).map(|i| (s0 + i) % n_s as u32).collect();
    let receivers = (0..u_r as u32).map(|i| (r0 + u_s as u32 + i) % n_r as u32).collect();
    (senders, receivers)
}

/// Outcome of driving the full simulator on sampled placements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrossCheck {
    pub messages: u64,
    /// Messages whose first correct delivery came from the attempt the pure
    /// walk predicts.
    pub agreeing: u64,
    /// Largest delivering attempt observed in the simulator.
    pub max_attempt: u32,
    pub completed: bool,
}

/// Runs `samples` simulations, each with a random placement of `u` replicas
/// per side that drop all cross-RSM traffic, and compares the attempt that
/// first reached a correct receiver with [`chain_attempts`].
pub fn cross_check(n: usize, u: usize, messages: usize, samples: u64, seed: u64) -> Result<CrossCheck> {
    let mut out = CrossCheck {
        messages: 0,
        agreeing: 0,
        max_attempt: 0,
        completed: true,
    };
    let schedule = PairSchedule::Equal { n_s: n, n_r: n };
    for sample in 0..samples {
        let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, sample));
        let pick = |rng: &mut ChaCha8Rng| -> Vec<u32> {
            let mut all: Vec<u32> = (0..n as u32).collect();
            for i in 0..u {
                let j = rng.gen_range(i..n);
                all.swap(i, j);
            }
            all.truncate(u);
            all
        };
        let fs = pick(&mut rng);
        let fr = pick(&mut rng);
        let mut sc = Scenario::new(RsmSpec::equal(n, u as u64, 0), RsmSpec::equal(n, u as u64, 0), messages);
        sc.local_rebroadcast = false;
        sc.seed = sample;
        for &s in &fs {
            sc = sc.with_adversary(Side::Sender, s, Behavior::OmitForeign(Selector::all()));
        }
        for &r in &fr {
            sc = sc.with_adversary(Side::Receiver, r, Behavior::OmitForeign(Selector::all()));
        }
        let res = sim::run(&sc, false)?;
        out.completed &= res.outcome == Outcome::Completed;
        for (pos, got) in res.delivering_attempt.iter().enumerate() {
            let predicted = chain_attempts(&schedule, pos as u64, |s| fs.contains(&s), |r| fr.contains(&r));
            out.messages += 1;
            if *got == predicted {
                out.agreeing += 1;
            }
            out.max_attempt = out.max_attempt.max(got.unwrap_or(0));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> BigRational {
        parse_rational(s).unwrap()
    }

    #[test]
    fn pair_fraction_examples() {
        assert_eq!(faulty_pair_fraction(2.0, 2.0), 0.75);
        assert_eq!(faulty_pair_fraction_exact(&q("3"), &q("3")), q("5/9"));
        assert!((faulty_pair_fraction(10.0, 10.0) - 0.19).abs() < 1e-12);
    }

    #[test]
    fn parses_decimal_forms() {
        assert_eq!(q("1e-11"), BigRational::new(1.into(), BigInt::from(10).pow(11u32)));
        assert_eq!(q("0.25"), q("1/4"));
        assert_eq!(q("2.5E3"), q("2500"));
        assert!(parse_rational("abc").is_err());
    }

    #[test]
    fn retries_for_certain_success_is_zero() {
        assert_eq!(min_retries(&q("1"), &q("3/4")).unwrap(), 0);
    }

    #[test]
    fn retries_exact_ceiling() {
        assert_eq!(min_retries(&q("1/4"), &q("1/2")).unwrap(), 2);
        assert_eq!(min_retries(&q("0.3"), &q("1/2")).unwrap(), 2);
        assert!(min_retries(&q("0"), &q("1/2")).is_err());
        assert!(min_retries(&q("1/2"), &q("1")).is_err());
    }

    #[test]
    fn no_faults_single_attempt() {
        let cfg = BoundConfig {
            u_s: 0,
            u_r: 0,
            ..BoundConfig::three_f_plus_one(3, 500, 1)
        };
        let h = monte_carlo_tail(&cfg);
        assert_eq!(h.counts, vec![0, 500]);
    }

    #[test]
    fn contiguous_placement_hits_bound() {
        for seq in 0..16 {
            let (fs, fr) = contiguous_placement(4, 1, 4, 1, seq);
            let a = chain_attempts(
                &PairSchedule::Equal { n_s: 4, n_r: 4 },
                seq,
                |s| fs.contains(&s),
                |r| fr.contains(&r),
            );
            assert_eq!(a, Some(3));
        }
    }

    #[test]
    fn histogram_csv() {
        let mut h = Histogram::default();
        h.add(1);
        h.add(1);
        h.add(3);
        assert_eq!(
            h.to_csv(),
            "attempts,count,fraction\n1,2,0.666667\n2,0,0.000000\n3,1,0.333333\n"
        );
        assert!((h.tail(1) - 1.0 / 3.0).abs() < 1e-12);
    }
}
