//! Safety-adjusted PoS overlay: equivocation proofs with an inclusion
//! deadline, blanking of equivocated content, and the predictable-validity
//! helpers for transactions.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{BlockId, BlockStore, Content, EquivocationProof, Tx, GENESIS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaposParams {
    pub k_cp: u64,
    pub k_conf: u64,
    pub k_epf: u64,
}

impl SaposParams {
    pub fn from_k_cp(k_cp: u64) -> Self {
        SaposParams { k_cp, k_conf: 6 * k_cp + 1, k_epf: 4 * k_cp }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SaposError {
    #[error("proof in block {carrier} targets block {target} at depth {depth} > k_epf")]
    ProofTooDeep { carrier: BlockId, target: BlockId, depth: u32 },
    #[error("proof in block {carrier} is malformed")]
    MalformedProof { carrier: BlockId },
    #[error("confirmed block {0} was never processed and carries no proof")]
    MissingContent(BlockId),
}

/// Headers strictly between `target` and the carrying block.
pub fn proof_depth(store: &BlockStore, carrier: BlockId, target: BlockId) -> u32 {
    (store.height(carrier) - store.height(target)).saturating_sub(1)
}

/// Checks every proof carried by `carrier`: both headers share a BPO and
/// differ, the target lies on the carrier's prefix, and its depth is at
/// most `k_epf`.
pub fn validate_proof_deadline(store: &BlockStore, carrier: BlockId, k_epf: u64) -> Result<(), SaposError> {
    let h = store.get(carrier);
    for p in &h.proofs {
        let (Some(a), Some(b)) = (store.try_get(p.first), store.try_get(p.second)) else {
            return Err(SaposError::MalformedProof { carrier });
        };
        if p.first == p.second || a.bpo != b.bpo || p.first == GENESIS {
            return Err(SaposError::MalformedProof { carrier });
        }
        let Some(parent) = h.parent else {
            return Err(SaposError::MalformedProof { carrier });
        };
        if !store.is_ancestor(p.first, parent) {
            return Err(SaposError::MalformedProof { carrier });
        }
        let depth = proof_depth(store, carrier, p.first);
        if depth as u64 > k_epf {
            return Err(SaposError::ProofTooDeep { carrier, target: p.first, depth });
        }
    }
    Ok(())
}

/// Proof carriers indexed by target block.
#[derive(Clone, Debug, Default)]
pub struct ProofIndex {
    carriers: HashMap<BlockId, Vec<BlockId>>,
}

impl ProofIndex {
    pub fn record(&mut self, store: &BlockStore, carrier: BlockId) {
        for p in &store.get(carrier).proofs {
            self.carriers.entry(p.first).or_default().push(carrier);
        }
    }

    /// True if a proof against `target` lies on the chain ending at `tip`.
    pub fn proven_on(&self, store: &BlockStore, target: BlockId, tip: BlockId) -> bool {
        self.carriers
            .get(&target)
            .is_some_and(|cs| cs.iter().any(|&c| store.is_ancestor(c, tip)))
    }

    pub fn is_empty(&self) -> bool {
        self.carriers.is_empty()
    }
}

/// Proofs a producer extending `parent` must include: one per prefix block
/// within `k_epf` of the new block for which `equivocation` names a
/// conflicting header and no proof is on chain yet.
pub fn attach_proofs(
    store: &BlockStore,
    proofs: &ProofIndex,
    parent: BlockId,
    k_epf: u64,
    equivocation: impl Fn(BlockId) -> Option<BlockId>,
) -> Vec<EquivocationProof> {
    let hp = store.height(parent);
    let lowest = (hp as u64).saturating_sub(k_epf).max(1) as u32;
    let mut out = Vec::new();
    let mut cur = parent;
    while store.height(cur) >= lowest && cur != GENESIS {
        if let Some(other) = equivocation(cur) {
            if !proofs.proven_on(store, cur, parent) {
                out.push(EquivocationProof { first: cur, second: other });
            }
        }
        cur = store.parent(cur).unwrap_or(GENESIS);
    }
    out.reverse();
    out
}

/// One confirmed ledger position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub block: BlockId,
    pub blank: bool,
}

/// The `k_conf`-deep prefix of the chain ending at `tip`, with every block
/// proven equivocated on that chain blanked. `pretended` reports blocks the
/// node only processed as empty; such a block must be blanked on chain.
pub fn sapos_ledger(
    store: &BlockStore,
    proofs: &ProofIndex,
    tip: BlockId,
    k_conf: u64,
    pretended: impl Fn(BlockId) -> bool,
) -> Result<Vec<LedgerEntry>, SaposError> {
    let h = store.height(tip) as u64;
    if h <= k_conf {
        return Ok(Vec::new());
    }
    let last = store.ancestor_at(tip, (h - k_conf) as u32).unwrap_or(GENESIS);
    let mut out = Vec::new();
    for b in store.chain(last).into_iter().skip(1) {
        let blank = proofs.proven_on(store, b, tip);
        if !blank && pretended(b) {
            return Err(SaposError::MissingContent(b));
        }
        out.push(LedgerEntry { block: b, blank });
    }
    Ok(out)
}

/// Keeps transactions whose keys are disjoint from every key touched in
/// `recent`, the contents of the last `k_epf` blocks.
pub fn predictable_tx_filter(pending: &[Tx], recent: &[&Content]) -> Vec<Tx> {
    let used: HashSet<u64> = recent.iter().flat_map(|c| c.txs.iter().flat_map(|t| t.keys.iter().copied())).collect();
    pending.iter().filter(|t| t.keys.iter().all(|k| !used.contains(k))).cloned().collect()
}

/// Gas-account activity of one block in the abstract state model.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GasBlock {
    pub deposits: Vec<(u64, u64)>,
    pub withdrawals: Vec<(u64, u64)>,
    pub txs: Vec<Tx>,
}

/// Balance usable for new transactions: deposits count once they are more
/// than `k_epf` blocks deep, withdrawals and included max-gas count at once.
pub fn usable_balance(account: u64, chain: &[GasBlock], k_epf: u64) -> i128 {
    let n = chain.len();
    let mut bal: i128 = 0;
    for (i, b) in chain.iter().enumerate() {
        let depth = (n - 1 - i) as u64;
        if depth >= k_epf {
            bal += b.deposits.iter().filter(|d| d.0 == account).map(|d| d.1 as i128).sum::<i128>();
        }
        bal -= b.withdrawals.iter().filter(|d| d.0 == account).map(|d| d.1 as i128).sum::<i128>();
        bal -= b.txs.iter().filter(|t| t.account == Some(account)).map(|t| t.max_gas as i128).sum::<i128>();
    }
    bal
}

/// True if `tx` can be funded on top of `chain` (last element = tip).
pub fn gas_deposit_check(tx: &Tx, chain: &[GasBlock], k_epf: u64) -> bool {
    match tx.account {
        Some(a) => usable_balance(a, chain, k_epf) >= tx.max_gas as i128,
        None => false,
    }
}

/// Positions where two ledgers disagree, over their common length.
pub fn ledger_conflicts(a: &[LedgerEntry], b: &[LedgerEntry]) -> Vec<usize> {
    a.iter().zip(b).enumerate().filter(|(_, (x, y))| x != y).map(|(i, _)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lottery::BpoId;

    fn bpo(slot: u64, node: u32, honest: bool) -> BpoId {
        BpoId { slot, node, honest, seq: 0 }
    }

    /// Linear chain of `n` blocks plus an equivocating sibling of block `eq`.
    fn chain_with_equivocation(n: u64, eq: u64) -> (BlockStore, Vec<BlockId>, BlockId) {
        let mut s = BlockStore::new();
        let mut ids = vec![GENESIS];
        for i in 1..=n {
            let p = *ids.last().unwrap();
            ids.push(s.push(p, bpo(i, 9, false), i, vec![]));
        }
        let other = s.push(ids[eq as usize - 1], s.get(ids[eq as usize]).bpo, 1000, vec![]);
        (s, ids, other)
    }

    #[test]
    fn k_conf_and_k_epf_from_k_cp() {
        let p = SaposParams::from_k_cp(3);
        assert_eq!((p.k_conf, p.k_epf), (19, 12));
    }

    #[test]
    fn deadline_boundary_is_inclusive() {
        let k_epf = 3u64;
        let (mut s, ids, other) = chain_with_equivocation(6, 2);
        let target = ids[2];
        // Carrier at height 2 + k_epf + 1 has exactly k_epf headers in between.
        let ok_parent = ids[2 + k_epf as usize];
        let ok = s.push(ok_parent, bpo(50, 1, true), 0, vec![EquivocationProof { first: target, second: other }]);
        assert_eq!(proof_depth(&s, ok, target), 3);
        assert_eq!(validate_proof_deadline(&s, ok, k_epf), Ok(()));
        let late_parent = ids[3 + k_epf as usize];
        let late = s.push(late_parent, bpo(51, 1, true), 0, vec![EquivocationProof { first: target, second: other }]);
        assert!(matches!(validate_proof_deadline(&s, late, k_epf), Err(SaposError::ProofTooDeep { depth: 4, .. })));
        let plain = s.push(late_parent, bpo(52, 1, true), 0, vec![]);
        assert_eq!(validate_proof_deadline(&s, plain, k_epf), Ok(()));
    }

    #[test]
    fn malformed_proofs_rejected() {
        let (mut s, ids, _) = chain_with_equivocation(4, 2);
        let bad = s.push(ids[4], bpo(60, 1, true), 0, vec![EquivocationProof { first: ids[2], second: ids[3] }]);
        assert!(matches!(validate_proof_deadline(&s, bad, 10), Err(SaposError::MalformedProof { .. })));
    }

    #[test]
    fn attach_respects_window_and_existing_proofs() {
        let (mut s, ids, other) = chain_with_equivocation(6, 4);
        let eq = |b: BlockId| (b == ids[4]).then_some(other);
        let mut idx = ProofIndex::default();
        // Block 4 is 2 deep under a new child of block 6.
        assert_eq!(attach_proofs(&s, &idx, ids[6], 10, eq).len(), 1);
        // Too deep for k_epf = 1.
        assert!(attach_proofs(&s, &idx, ids[6], 1, eq).is_empty());
        let c = s.push(ids[6], bpo(70, 1, true), 0, vec![EquivocationProof { first: ids[4], second: other }]);
        idx.record(&s, c);
        assert!(attach_proofs(&s, &idx, c, 10, eq).is_empty());
    }

    #[test]
    fn ledger_blanks_proven_blocks_only() {
        let (mut s, ids, other) = chain_with_equivocation(6, 2);
        let mut idx = ProofIndex::default();
        let c = s.push(ids[6], bpo(70, 1, true), 0, vec![EquivocationProof { first: ids[2], second: other }]);
        idx.record(&s, c);
        let led = sapos_ledger(&s, &idx, c, 2, |_| false).unwrap();
        assert_eq!(led.len(), 5);
        assert!(led[1].blank);
        assert!(led.iter().enumerate().all(|(i, e)| e.blank == (i == 1)));
        // Pretended-empty block without a proof on chain is an error.
        let err = sapos_ledger(&s, &ProofIndex::default(), c, 2, |b| b == ids[2]);
        assert_eq!(err, Err(SaposError::MissingContent(ids[2])));
        assert!(sapos_ledger(&s, &idx, ids[2], 5, |_| false).unwrap().is_empty());
    }

    fn tx(id: u64, keys: &[u64]) -> Tx {
        Tx { id, keys: keys.to_vec(), account: None, max_gas: 0 }
    }

    #[test]
    fn predictable_filter() {
        let recent = Content { nonce: 0, txs: vec![tx(1, &[5, 6])] };
        let out = predictable_tx_filter(&[tx(2, &[7]), tx(3, &[6, 8])], &[&recent]);
        assert_eq!(out.iter().map(|t| t.id).collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn predictable_window_matches_brute_force() {
        let k_epf = 10usize;
        // Chain of 15 blocks, block i touches key i.
        let contents: Vec<Content> = (0..15).map(|i| Content { nonce: i, txs: vec![tx(i, &[i])] }).collect();
        for key in 0..15u64 {
            let recent: Vec<&Content> = contents[15 - k_epf..].iter().collect();
            let admitted = !predictable_tx_filter(&[tx(99, &[key])], &recent).is_empty();
            let depth_from_tip = 14 - key as usize;
            assert_eq!(admitted, depth_from_tip >= k_epf, "key {key}");
        }
    }

    fn gtx(account: u64, max_gas: u64) -> Tx {
        Tx { id: 0, keys: vec![], account: Some(account), max_gas }
    }

    #[test]
    fn gas_examples() {
        let k = 3;
        let mut chain = vec![GasBlock::default(); 5];
        chain[0].deposits.push((1, 10));
        chain[3].txs.push(gtx(1, 7));
        assert!(gas_deposit_check(&gtx(1, 3), &chain, k));
        assert!(!gas_deposit_check(&gtx(1, 4), &chain, k));
        // Fresh deposit one block ago is not counted yet.
        let mut fresh = vec![GasBlock::default(); 5];
        fresh[4].deposits.push((2, 100));
        assert!(!gas_deposit_check(&gtx(2, 1), &fresh, k));
        fresh[4].withdrawals.push((2, 1));
        assert_eq!(usable_balance(2, &fresh, k), -1);
    }

    #[test]
    fn fundable_survives_any_blanking() {
        let k = 3usize;
        let mut chain = vec![GasBlock::default(); 6];
        chain[0].deposits.push((1, 20));
        chain[1].txs.push(gtx(1, 4));
        chain[3].deposits.push((1, 50));
        chain[4].txs.push(gtx(1, 5));
        chain[4].withdrawals.push((1, 2));
        chain[5].txs.push(gtx(1, 3));
        let t = gtx(1, 6);
        assert!(gas_deposit_check(&t, &chain, k as u64));
        let n = chain.len();
        for mask in 0u32..(1 << k) {
            let mut b = chain.clone();
            for j in 0..k {
                if mask >> j & 1 == 1 {
                    b[n - 1 - j] = GasBlock::default();
                }
            }
            assert!(usable_balance(1, &b, k as u64) >= t.max_gas as i128, "mask {mask}");
        }
    }
}
