//! Block headers, contents and the execution-wide header arena.
//!
//! Every header ever created in a run lives in one [`BlockStore`], indexed by a
//! dense [`BlockId`]. Nodes keep their own views as per-id status vectors.

use serde::{Deserialize, Serialize};

use crate::lottery::BpoId;

/// Dense index of a header in the [`BlockStore`].
pub type BlockId = u32;

/// Content commitment carried by a header (stands in for a hash).
pub type Commitment = u64;

/// The genesis block always has id 0.
pub const GENESIS: BlockId = 0;

/// A transaction with an abstract state footprint.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tx {
    pub id: u64,
    /// Read/write keys touched by the transaction.
    pub keys: Vec<u64>,
    /// Gas deposit account paying for the transaction, if any.
    pub account: Option<u64>,
    pub max_gas: u64,
}

impl Tx {
    pub fn simple(id: u64) -> Self {
        Tx { id, keys: Vec::new(), account: None, max_gas: 0 }
    }
}

/// Block content. `nonce` distinguishes otherwise identical contents, so that
/// equivocating blocks can carry distinct commitments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Content {
    pub nonce: u64,
    pub txs: Vec<Tx>,
}

impl Content {
    pub fn empty(nonce: u64) -> Self {
        Content { nonce, txs: Vec::new() }
    }

    /// Deterministic commitment over the nonce and transaction ids.
    pub fn commitment(&self) -> Commitment {
        let mut h = mix64(self.nonce ^ 0x9e37_79b9_7f4a_7c15);
        for tx in &self.txs {
            h = mix64(h ^ tx.id.wrapping_mul(0xbf58_476d_1ce4_e5b9));
            for &k in &tx.keys {
                h = mix64(h ^ k);
            }
            h = mix64(h ^ tx.account.unwrap_or(u64::MAX) ^ tx.max_gas.rotate_left(17));
        }
        h
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Two distinct headers produced from one BPO.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EquivocationProof {
    pub first: BlockId,
    pub second: BlockId,
}

/// A block header: parent link, BPO, height and content commitment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub id: BlockId,
    pub parent: Option<BlockId>,
    pub bpo: BpoId,
    pub height: u32,
    pub commitment: Commitment,
    /// Equivocation proofs carried by this header (SaPoS only).
    pub proofs: Vec<EquivocationProof>,
}

/// Arena of all headers created during one execution.
///
/// Each header also stores a skip pointer so ancestor queries take
/// logarithmic time in the chain height.
#[derive(Clone, Debug)]
pub struct BlockStore {
    headers: Vec<BlockHeader>,
    skip: Vec<BlockId>,
}

fn invert_lowest_one(n: u32) -> u32 {
    n & n.wrapping_sub(1)
}

fn skip_height(h: u32) -> u32 {
    if h < 2 {
        0
    } else if h & 1 == 1 {
        invert_lowest_one(invert_lowest_one(h - 1)) + 1
    } else {
        invert_lowest_one(h)
    }
}

impl Default for BlockStore {
    fn default() -> Self {
        Self::new()
    }
}

impl BlockStore {
    pub fn new() -> Self {
        let genesis = BlockHeader {
            id: GENESIS,
            parent: None,
            bpo: BpoId::genesis(),
            height: 0,
            commitment: Content::empty(0).commitment(),
            proofs: Vec::new(),
        };
        BlockStore { headers: vec![genesis], skip: vec![GENESIS] }
    }

    pub fn len(&self) -> usize {
        self.headers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.headers.is_empty()
    }

    pub fn get(&self, id: BlockId) -> &BlockHeader {
        &self.headers[id as usize]
    }

    pub fn try_get(&self, id: BlockId) -> Option<&BlockHeader> {
        self.headers.get(id as usize)
    }

    /// Appends a header extending `parent`; height is derived from the parent.
    pub fn push(
        &mut self,
        parent: BlockId,
        bpo: BpoId,
        commitment: Commitment,
        proofs: Vec<EquivocationProof>,
    ) -> BlockId {
        let id = self.headers.len() as BlockId;
        let height = self.get(parent).height + 1;
        let skip = self.ancestor_at(parent, skip_height(height)).unwrap_or(GENESIS);
        self.headers.push(BlockHeader { id, parent: Some(parent), bpo, height, commitment, proofs });
        self.skip.push(skip);
        id
    }

    pub fn parent(&self, id: BlockId) -> Option<BlockId> {
        self.get(id).parent
    }

    pub fn height(&self, id: BlockId) -> u32 {
        self.get(id).height
    }

    /// Ancestor of `id` at height `h` (or `None` if `h` exceeds the height of `id`).
    pub fn ancestor_at(&self, mut id: BlockId, h: u32) -> Option<BlockId> {
        let mut walk = self.height(id);
        if walk < h {
            return None;
        }
        while walk > h {
            let hs = skip_height(walk);
            let hs_prev = skip_height(walk - 1);
            if hs == h || (hs > h && !(hs_prev + 2 < hs && hs_prev >= h)) {
                id = self.skip[id as usize];
                walk = hs;
            } else {
                id = self.get(id).parent?;
                walk -= 1;
            }
        }
        Some(id)
    }

    /// True if `anc` lies on the chain ending at `id` (a block is its own ancestor).
    pub fn is_ancestor(&self, anc: BlockId, id: BlockId) -> bool {
        self.ancestor_at(id, self.height(anc)) == Some(anc)
    }

    /// Chain from genesis to `tip`, inclusive.
    pub fn chain(&self, tip: BlockId) -> Vec<BlockId> {
        let mut out = Vec::with_capacity(self.height(tip) as usize + 1);
        let mut cur = Some(tip);
        while let Some(id) = cur {
            out.push(id);
            cur = self.get(id).parent;
        }
        out.reverse();
        out
    }

    /// Deepest common ancestor of two blocks.
    pub fn common_ancestor(&self, a: BlockId, b: BlockId) -> BlockId {
        let h = self.height(a).min(self.height(b));
        let mut x = self.ancestor_at(a, h).unwrap_or(GENESIS);
        let mut y = self.ancestor_at(b, h).unwrap_or(GENESIS);
        while x != y {
            x = self.get(x).parent.unwrap_or(GENESIS);
            y = self.get(y).parent.unwrap_or(GENESIS);
        }
        x
    }

    pub fn iter(&self) -> impl Iterator<Item = &BlockHeader> {
        self.headers.iter()
    }
}
