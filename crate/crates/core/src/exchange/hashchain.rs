//! Payword chains with per-link payments.
//!
//! `h^0 = H(h^1)` and `h^z = H(h^{z+1} ‖ p^z)` for `1 <= z <= n`, with a random
//! tail `h^{n+1}`. Finishing task `z` earns `h^{z+1}`; a claim for `N` tasks
//! submits `(h^{N+1}, N)` and is checked by folding back to the root.

use std::collections::BTreeSet;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::crypto::{keccak256, random_bytes, Digest};

/// Payments enter the hash as 8-byte big-endian integers.
fn link(next: &Digest, payment: u64) -> Digest {
    keccak256(&[&next.0, &payment.to_be_bytes()])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashChain {
    /// `h^0 ..= h^{n+1}`.
    elements: Vec<Digest>,
    payments: Vec<u64>,
}

impl HashChain {
    pub fn from_tail(tail: Digest, payments: Vec<u64>) -> Self {
        let n = payments.len();
        let mut elements = vec![tail; n + 2];
        for z in (1..=n).rev() {
            elements[z] = link(&elements[z + 1], payments[z - 1]);
        }
        elements[0] = keccak256(&[&elements[1].0]);
        HashChain { elements, payments }
    }

    pub fn generate(payments: Vec<u64>, rng: &mut impl RngCore) -> Self {
        Self::from_tail(Digest(random_bytes(rng)), payments)
    }

    pub fn root(&self) -> Digest {
        self.elements[0]
    }

    /// Number of elements, `n + 2`.
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payments.is_empty()
    }

    pub fn task_count(&self) -> usize {
        self.payments.len()
    }

    pub fn payments(&self) -> &[u64] {
        &self.payments
    }

    /// `h^z` for any `0 <= z <= n + 1`.
    pub fn element(&self, z: usize) -> Option<Digest> {
        self.elements.get(z).copied()
    }

    /// Payword earned by finishing the `l`-th task (1-based): `h^{l+1}`.
    pub fn payword_for_task(&self, l: usize) -> Option<Digest> {
        (1..=self.task_count()).contains(&l).then(|| self.elements[l + 1])
    }
}

/// Folds `h^{N+1}` down through `p^N .. p^1` and returns the implied root.
/// `None` when `count` exceeds the payment vector.
pub fn fold_to_root(payword: &Digest, count: usize, payments: &[u64]) -> Option<Digest> {
    if count > payments.len() {
        return None;
    }
    let mut h = *payword;
    for z in (1..=count).rev() {
        h = link(&h, payments[z - 1]);
    }
    Some(keccak256(&[&h.0]))
}

pub fn verify_claim(root: &Digest, payword: &Digest, count: usize, payments: &[u64]) -> bool {
    fold_to_root(payword, count, payments).as_ref() == Some(root)
}

/// `Σ_{l<=N} p^l - Σ_{k ∈ failed, k <= N} p^k`, with 1-based task positions.
pub fn due_payment(payments: &[u64], count: usize, failed: &BTreeSet<usize>) -> u64 {
    payments
        .iter()
        .take(count)
        .enumerate()
        .filter(|(i, _)| !failed.contains(&(i + 1)))
        .map(|(_, p)| *p)
        .sum()
}
