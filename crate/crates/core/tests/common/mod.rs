#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use veil_core::overlap::OverlapGraph;
use veil_core::{BucketSet, SlotRef};

/// Effective content of every bucket as sets of physical slot identities.
pub fn effective_sets(bs: &BucketSet) -> Vec<BTreeSet<SlotRef>> {
    bs.buckets.iter().map(|b| b.effective_refs().collect()).collect()
}

/// Brute-force check of equal sizes, pairwise overlap and empty 3-wise
/// intersections. Returns the first violation found.
pub fn check_well_formed(bs: &BucketSet, graph: &OverlapGraph, overlap: usize) -> Result<(), String> {
    let sets = effective_sets(bs);
    let cap = bs.bucket_size();
    for (p, s) in sets.iter().enumerate() {
        if s.len() != cap || bs.buckets[p].effective_len() != cap {
            return Err(format!("bucket {p} exposes {} slots, expected {cap}", s.len()));
        }
    }
    let n = sets.len();
    for p in 0..n {
        for q in p + 1..n {
            let shared = sets[p].intersection(&sets[q]).count();
            let adjacent = graph.functions.index_of(p, q).is_some();
            let want = if adjacent { overlap } else { 0 };
            if shared != want {
                return Err(format!("buckets {p},{q} share {shared}, expected {want}"));
            }
        }
    }
    for p in 0..n {
        for q in p + 1..n {
            let pq: BTreeSet<_> = sets[p].intersection(&sets[q]).copied().collect();
            if pq.is_empty() {
                continue;
            }
            for (r, s) in sets.iter().enumerate().skip(q + 1) {
                if pq.intersection(s).next().is_some() {
                    return Err(format!("buckets {p},{q},{r} share a record"));
                }
            }
        }
    }
    Ok(())
}

/// Number of index entries referencing an already-counted slot.
pub fn duplicated_refs(bs: &BucketSet) -> usize {
    let mut seen: HashMap<SlotRef, usize> = HashMap::new();
    for b in &bs.buckets {
        for r in b.effective_refs() {
            *seen.entry(r).or_default() += 1;
        }
    }
    seen.values().map(|c| c - 1).sum()
}
