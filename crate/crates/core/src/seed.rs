//! Deterministic seed derivation.
//!
//! Every seeded operation in the crate derives its own seed as
//! `derive_seed(parent, component, item)` so that results are stable under
//! reordering and parallel execution: the seed of any unit of work depends
//! only on what the work is, never on when it runs.

use sha2::{Digest, Sha256};

/// Derives a child seed from a parent seed, a component name, and an item id.
pub fn derive_seed(parent: u64, component: &str, item: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update([0xff]);
    hasher.update(component.as_bytes());
    hasher.update([0xff]);
    hasher.update(item.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}

/// Derivation over a path of items, for nested work units
/// (e.g. question -> side -> turn -> sample index).
pub fn derive_seed_path(parent: u64, component: &str, items: &[&str]) -> u64 {
    let joined = items.join("\u{1f}");
    derive_seed(parent, component, &joined)
}
