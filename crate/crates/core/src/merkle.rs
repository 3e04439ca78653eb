//! Input Merkle tree.
//!
//! Leaf: `SHA-256(0x00 || len64be(leaf) || leaf)`.
//! Node: `SHA-256(0x01 || len64be(left) || left || len64be(right) || right)`.
//!
//! An unpaired node at the end of a level is promoted to the next level
//! unchanged; it is never hashed with itself.

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::digest::Digest32;
use crate::manifest::InputManifest;

const LEAF_PREFIX: u8 = 0x00;
const NODE_PREFIX: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MerkleError {
    #[error("cannot build a Merkle tree with no leaves")]
    EmptyManifest,
    #[error("leaf index {index} out of range for {leaf_count} leaves")]
    IndexOutOfRange { index: usize, leaf_count: usize },
}

pub fn hash_leaf(leaf: &[u8]) -> Digest32 {
    let mut h = Sha256::new();
    h.update([LEAF_PREFIX]);
    h.update((leaf.len() as u64).to_be_bytes());
    h.update(leaf);
    Digest32(h.finalize().into())
}

pub fn hash_node(left: &Digest32, right: &Digest32) -> Digest32 {
    let mut h = Sha256::new();
    h.update([NODE_PREFIX]);
    h.update((Digest32::LEN as u64).to_be_bytes());
    h.update(left.0);
    h.update((Digest32::LEN as u64).to_be_bytes());
    h.update(right.0);
    Digest32(h.finalize().into())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleTree {
    /// `levels[0]` holds the leaf digests; the last level holds only the root.
    levels: Vec<Vec<Digest32>>,
}

impl MerkleTree {
    pub fn from_leaves<I, B>(leaves: I) -> Result<Self, MerkleError>
    where
        I: IntoIterator<Item = B>,
        B: AsRef<[u8]>,
    {
        let base: Vec<Digest32> = leaves.into_iter().map(|l| hash_leaf(l.as_ref())).collect();
        if base.is_empty() {
            return Err(MerkleError::EmptyManifest);
        }
        let mut levels = vec![base];
        while levels.last().is_some_and(|l| l.len() > 1) {
            let prev = levels.last().unwrap();
            let next = prev
                .chunks(2)
                .map(|pair| match pair {
                    [l, r] => hash_node(l, r),
                    [single] => *single,
                    _ => unreachable!(),
                })
                .collect();
            levels.push(next);
        }
        Ok(MerkleTree { levels })
    }

    pub fn root(&self) -> Digest32 {
        self.levels.last().expect("tree has at least one level")[0]
    }

    pub fn leaf_count(&self) -> usize {
        self.levels[0].len()
    }

    pub fn levels(&self) -> &[Vec<Digest32>] {
        &self.levels
    }

    /// Number of node-hashing levels above the leaves.
    pub fn height(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn prove(&self, leaf_index: usize) -> Result<InclusionProof, MerkleError> {
        if leaf_index >= self.leaf_count() {
            return Err(MerkleError::IndexOutOfRange {
                index: leaf_index,
                leaf_count: self.leaf_count(),
            });
        }
        let mut siblings = Vec::with_capacity(self.height());
        let mut idx = leaf_index;
        for level in &self.levels[..self.height()] {
            let sibling = idx ^ 1;
            if sibling < level.len() {
                let side = if sibling < idx { Side::Left } else { Side::Right };
                siblings.push(Sibling {
                    digest: level[sibling],
                    side,
                });
            }
            idx /= 2;
        }
        Ok(InclusionProof {
            leaf_index,
            leaf_digest: self.levels[0][leaf_index],
            siblings,
        })
    }
}

/// Build the tree over the manifest's leaves and record the root in it.
pub fn build_tree(manifest: &mut InputManifest) -> Result<MerkleTree, MerkleError> {
    let tree = MerkleTree::from_leaves(manifest.ordered_leaves.iter().map(|l| &l.bytes))?;
    manifest.merkle_root = Some(tree.root());
    Ok(tree)
}

pub fn prove_inclusion(tree: &MerkleTree, leaf_index: usize) -> Result<InclusionProof, MerkleError> {
    tree.prove(leaf_index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sibling {
    #[serde(rename = "digest_hex")]
    pub digest: Digest32,
    pub side: Side,
}

/// Path from one leaf to the root. Levels where the node was promoted carry
/// no sibling, so `siblings.len()` can be less than the tree height.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InclusionProof {
    pub leaf_index: usize,
    #[serde(rename = "leaf_digest_hex")]
    pub leaf_digest: Digest32,
    pub siblings: Vec<Sibling>,
}

impl InclusionProof {
    pub fn computed_root(&self) -> Digest32 {
        self.siblings.iter().fold(self.leaf_digest, |acc, s| match s.side {
            Side::Left => hash_node(&s.digest, &acc),
            Side::Right => hash_node(&acc, &s.digest),
        })
    }
}

pub fn verify_inclusion(root: &Digest32, proof: &InclusionProof) -> bool {
    proof.computed_root() == *root
}
