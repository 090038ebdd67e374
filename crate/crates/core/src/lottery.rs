//! Slot clock and the idealized PoW / PoS block-production lotteries.
//!
//! Randomness is counter based: every draw is a pure function of
//! `(seed, slot, stream)`, so any slot can be re-sampled in isolation and two
//! runs with the same parameters see bit-identical lottery outcomes.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{BlockId, BlockStore, Commitment, EquivocationProof};

/// Independent random streams drawn per slot.
pub mod stream {
    pub const HONEST_COUNT: u64 = 0;
    pub const ADVERSARY_COUNT: u64 = 1;
    pub const HONEST_ASSIGN: u64 = 2;
    pub const SPV_COUNT: u64 = 3;
    pub const TX: u64 = 4;
}

/// Words of keystream reserved for one `(slot, stream)` cell.
const WORDS_PER_SLOT: u128 = 1 << 10;

#[derive(Debug, Error, PartialEq)]
pub enum LotteryError {
    #[error("BPO {0:?} was already used to produce a block")]
    ReusedBpo(BpoId),
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
}

/// Model and analysis parameters of one execution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Number of honest nodes.
    pub n_nodes: u32,
    /// Adversary fraction of block-production mass.
    pub beta: f64,
    /// Expected BPOs per slot (honest plus adversary).
    pub rho: f64,
    /// Seconds per slot.
    pub tau: f64,
    /// Header delay bound in seconds.
    pub delta_h: f64,
    /// Per-node processing capacity in blocks per second.
    pub capacity: f64,
    /// Slots a good slot must be followed by without BPOs.
    pub nu: u64,
    /// Blocks a node can process in the `(nu+1)*tau - delta_h` window.
    pub c_tilde: f64,
    pub horizon_slots: u64,
    pub seed: u64,
}

impl SimParams {
    /// Builds parameters from rates, deriving `nu` from `c_tilde` via
    /// `(nu+1)*tau = delta_h + c_tilde/capacity` (rounded up to whole slots).
    #[allow(clippy::too_many_arguments)]
    pub fn from_rates(
        n_nodes: u32,
        lambda_hon: f64,
        lambda_adv: f64,
        tau: f64,
        delta_h: f64,
        capacity: f64,
        c_tilde: f64,
        horizon_slots: u64,
        seed: u64,
    ) -> Result<Self, LotteryError> {
        let lambda = lambda_hon + lambda_adv;
        let beta = if lambda > 0.0 { lambda_adv / lambda } else { 0.0 };
        let nu = nu_for(tau, delta_h, capacity, c_tilde);
        let p = SimParams {
            n_nodes,
            beta,
            rho: lambda * tau,
            tau,
            delta_h,
            capacity,
            nu,
            c_tilde,
            horizon_slots,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    /// Total block production rate in blocks per second.
    pub fn lambda(&self) -> f64 {
        self.rho / self.tau
    }

    pub fn lambda_hon(&self) -> f64 {
        (1.0 - self.beta) * self.lambda()
    }

    pub fn lambda_adv(&self) -> f64 {
        self.beta * self.lambda()
    }

    /// Header delay bound in whole slots.
    pub fn delta_slots(&self) -> u64 {
        slots_ceil(self.delta_h, self.tau)
    }

    /// Capacity per slot in blocks.
    pub fn budget_per_slot(&self) -> f64 {
        self.capacity * self.tau
    }

    pub fn validate(&self) -> Result<(), LotteryError> {
        let bad = |m: &str| Err(LotteryError::InvalidParams(m.to_string()));
        if self.n_nodes == 0 {
            return bad("n_nodes must be positive");
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad("rho must be finite and non-negative");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if !(self.capacity > 0.0) {
            return bad("capacity must be positive");
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad("beta must lie in [0, 1)");
        }
        if !(self.delta_h >= 0.0) {
            return bad("delta_h must be non-negative");
        }
        if !(self.c_tilde >= 0.0) {
            return bad("c_tilde must be non-negative");
        }
        let lhs = (self.nu as f64 + 1.0) * self.tau;
        let rhs = self.delta_h + self.c_tilde / self.capacity;
        if (lhs - rhs).abs() > self.tau * (1.0 + 1e-9) {
            return bad("(nu+1)*tau must equal delta_h + c_tilde/capacity within one slot");
        }
        Ok(())
    }
}

/// Smallest `nu` with `(nu+1)*tau >= delta_h + c_tilde/capacity`.
pub fn nu_for(tau: f64, delta_h: f64, capacity: f64, c_tilde: f64) -> u64 {
    let window = delta_h + c_tilde / capacity;
    slots_ceil(window, tau).max(1) - 1
}

/// `ceil(x/tau)` with a small tolerance against floating-point noise.
pub fn slots_ceil(x: f64, tau: f64) -> u64 {
    let r = x / tau;
    let f = r.floor();
    if r - f < 1e-9 {
        f as u64
    } else {
        f as u64 + 1
    }
}

/// A block production opportunity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BpoId {
    pub slot: u64,
    pub node: u32,
    pub honest: bool,
    /// Position among the BPOs of this slot (ordered by node index).
    pub seq: u32,
}

impl BpoId {
    /// Placeholder BPO of the genesis block (slot 0, before any real slot).
    pub fn genesis() -> Self {
        BpoId { slot: 0, node: u32::MAX, honest: true, seq: 0 }
    }
}

/// Lottery outcome of one slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub slot: u64,
    pub h_count: u32,
    pub a_count: u32,
    pub bpos: Vec<BpoId>,
}

/// Keyed source of per-slot random streams.
#[derive(Clone, Debug)]
pub struct SlotRng {
    base: ChaCha8Rng,
}

impl SlotRng {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&crate::block::mix64(seed).to_le_bytes());
        SlotRng { base: ChaCha8Rng::from_seed(key) }
    }

    /// Generator positioned at the start of the `(slot, stream)` cell.
    pub fn cell(&self, slot: u64, stream: u64) -> ChaCha8Rng {
        let mut r = self.base.clone();
        r.set_stream(stream);
        r.set_word_pos(slot as u128 * WORDS_PER_SLOT);
        r
    }
}

/// Poisson draw by inversion of the CDF from one uniform.
pub fn poisson_inversion<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0u32;
    while u > cdf && k < 10_000 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
        if p == 0.0 && cdf < u {
            break;
        }
    }
    k
}

/// Node id used for the adversary coalition's BPOs.
pub fn adversary_node(params: &SimParams) -> u32 {
    params.n_nodes
}

/// Node id used for SPV miners' BPOs.
pub fn spv_node(params: &SimParams) -> u32 {
    params.n_nodes + 1
}

/// Samples the BPOs of `slot`: `Poisson((1-beta)*rho)` honest and
/// `Poisson(beta*rho)` adversary BPOs, honest ones assigned to uniformly
/// random honest nodes.
pub fn sample_slot(rng: &SlotRng, params: &SimParams, slot: u64) -> SlotOutcome {
    let h_count = poisson_inversion(&mut rng.cell(slot, stream::HONEST_COUNT), (1.0 - params.beta) * params.rho);
    let a_count = poisson_inversion(&mut rng.cell(slot, stream::ADVERSARY_COUNT), params.beta * params.rho);
    let mut bpos = Vec::with_capacity((h_count + a_count) as usize);
    if h_count > 0 {
        let mut assign = rng.cell(slot, stream::HONEST_ASSIGN);
        for _ in 0..h_count {
            let node = assign.random_range(0..params.n_nodes);
            bpos.push(BpoId { slot, node, honest: true, seq: 0 });
        }
    }
    let adv = adversary_node(params);
    for _ in 0..a_count {
        bpos.push(BpoId { slot, node: adv, honest: false, seq: 0 });
    }
    bpos.sort_by_key(|b| b.node);
    for (i, b) in bpos.iter_mut().enumerate() {
        b.seq = i as u32;
    }
    SlotOutcome { slot, h_count, a_count, bpos }
}

/// PoW production oracle: each BPO yields at most one header.
#[derive(Clone, Debug, Default)]
pub struct PowLottery {
    used: HashSet<BpoId>,
}

impl PowLottery {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pow_extend(
        &mut self,
        store: &mut BlockStore,
        bpo: BpoId,
        parent: BlockId,
        commitment: Commitment,
    ) -> Result<BlockId, LotteryError> {
        if !self.used.insert(bpo) {
            return Err(LotteryError::ReusedBpo(bpo));
        }
        Ok(store.push(parent, bpo, commitment, Vec::new()))
    }
}

/// PoS production oracle: a BPO may be reused for any number of headers.
#[derive(Clone, Debug, Default)]
pub struct PosLottery {
    issued: HashMap<(BpoId, BlockId, Commitment), BlockId>,
    by_bpo: HashMap<BpoId, Vec<BlockId>>,
}

impl PosLottery {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the header for `(bpo, parent, commitment)`, creating it on first use.
    pub fn pos_extend(
        &mut self,
        store: &mut BlockStore,
        bpo: BpoId,
        parent: BlockId,
        commitment: Commitment,
        proofs: Vec<EquivocationProof>,
    ) -> BlockId {
        if let Some(&id) = self.issued.get(&(bpo, parent, commitment)) {
            return id;
        }
        let id = store.push(parent, bpo, commitment, proofs);
        self.issued.insert((bpo, parent, commitment), id);
        self.by_bpo.entry(bpo).or_default().push(id);
        id
    }

    /// All headers produced from `bpo`, in creation order.
    pub fn headers_of(&self, bpo: &BpoId) -> &[BlockId] {
        self.by_bpo.get(bpo).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// True if `bpo` has produced two or more distinct headers.
    pub fn is_equivocated(&self, bpo: &BpoId) -> bool {
        self.headers_of(bpo).len() >= 2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::GENESIS;

    fn params(beta: f64, rho: f64) -> SimParams {
        SimParams {
            n_nodes: 10,
            beta,
            rho,
            tau: 1.0,
            delta_h: 0.0,
            capacity: 1.0,
            nu: 0,
            c_tilde: 1.0,
            horizon_slots: 100,
            seed: 7,
        }
    }

    #[test]
    fn zero_rate_has_no_bpos() {
        let p = params(0.3, 0.0);
        let rng = SlotRng::new(p.seed);
        for t in 1..1000 {
            let o = sample_slot(&rng, &p, t);
            assert_eq!(o.h_count + o.a_count, 0);
        }
    }

    #[test]
    fn no_adversary_mass_means_no_adversary_bpos() {
        let p = params(0.0, 0.5);
        let rng = SlotRng::new(p.seed);
        for t in 1..5000 {
            assert_eq!(sample_slot(&rng, &p, t).a_count, 0);
        }
    }

    #[test]
    fn outcome_is_consistent_and_deterministic() {
        let p = params(0.4, 2.0);
        let a = SlotRng::new(p.seed);
        let b = SlotRng::new(p.seed);
        for t in 1..2000 {
            let o = sample_slot(&a, &p, t);
            assert_eq!(o, sample_slot(&b, &p, t));
            assert_eq!((o.h_count + o.a_count) as usize, o.bpos.len());
            assert!(o.bpos.iter().all(|x| x.slot == t));
            assert_eq!(o.bpos.iter().filter(|x| x.honest).count() as u32, o.h_count);
            assert!(o.bpos.windows(2).all(|w| w[0].node <= w[1].node && w[0].seq < w[1].seq));
        }
    }

    #[test]
    fn honest_mean_within_three_standard_errors() {
        let p = params(0.25, 0.1);
        let rng = SlotRng::new(12345);
        let n = 1_000_000u64;
        let (mut s, mut s2) = (0f64, 0f64);
        for t in 1..=n {
            let h = sample_slot(&rng, &p, t).h_count as f64;
            s += h;
            s2 += h * h;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((mean - 0.075).abs() < 3.0 * se, "mean {mean} se {se}");
        // Poisson: variance equals the mean.
        let var_se = (0.075 * (1.0 + 2.0 * 0.075) / n as f64).sqrt();
        assert!((var - 0.075).abs() < 3.0 * var_se, "var {var}");
    }

    #[test]
    fn pow_binding() {
        let mut store = BlockStore::new();
        let mut pow = PowLottery::new();
        let b1 = BpoId { slot: 1, node: 0, honest: true, seq: 0 };
        let b2 = BpoId { slot: 1, node: 1, honest: true, seq: 1 };
        let h = pow.pow_extend(&mut store, b1, GENESIS, 11).unwrap();
        assert_eq!(store.height(h), 1);
        assert_eq!(pow.pow_extend(&mut store, b1, GENESIS, 12), Err(LotteryError::ReusedBpo(b1)));
        let s = pow.pow_extend(&mut store, b2, GENESIS, 13).unwrap();
        assert_eq!(store.parent(s), store.parent(h));
        assert_ne!(s, h);
    }

    #[test]
    fn pos_reuse_and_idempotence() {
        let mut store = BlockStore::new();
        let mut pos = PosLottery::new();
        let b = BpoId { slot: 3, node: 10, honest: false, seq: 0 };
        let a = pos.pos_extend(&mut store, b, GENESIS, 1, vec![]);
        let c = pos.pos_extend(&mut store, b, a, 1, vec![]);
        assert_ne!(a, c);
        assert!(pos.is_equivocated(&b));
        assert_eq!(pos.pos_extend(&mut store, b, GENESIS, 1, vec![]), a);
        assert_eq!(pos.headers_of(&b).len(), 2);
    }

    #[test]
    fn nu_link() {
        assert_eq!(nu_for(0.1, 0.0, 2.0, 20.0), 99);
        assert_eq!(nu_for(1.0, 0.0, 20.0, 20.0), 0);
        let p = SimParams::from_rates(20, 1.0, 0.0, 0.1, 0.0, 2.0, 20.0, 10, 1).unwrap();
        assert_eq!(p.nu, 99);
        assert!((p.rho - 0.1).abs() < 1e-12);
        let mut q = p.clone();
        q.nu = 50;
        assert!(q.validate().is_err());
    }
}
