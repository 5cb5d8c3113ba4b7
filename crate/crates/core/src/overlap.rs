//! Overlapping padding: buckets borrow records from their neighbours in a
//! circulant d-regular graph instead of padding only with fakes.
//!
//! The pipeline is graph creation, maximum overlap determination, edge
//! direction determination, fake addition, label creation and finalization.
//! Every pair of neighbours ends up sharing exactly δ records, and no record
//! is shared by more than two buckets.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::bucketizer::BucketSet;
use crate::error::{Error, Result};
use crate::model::{Bucket, Record, SlotRef};

/// Ordered neighbour functions F_1..F_d, each a fixed offset modulo n.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborFunctions {
    n: usize,
    offsets: Vec<usize>,
}

impl NeighborFunctions {
    /// F_i(p) = p + i and F_{d-i+1}(p) = p - i for 1 ≤ i ≤ ⌊d/2⌋, plus
    /// F_{(d+1)/2}(p) = p + n/2 when d is odd.
    pub fn circulant(n: usize, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParams("graph degree must be >= 1".into()));
        }
        if d >= n {
            return Err(Error::DegreeTooLarge { degree: d, buckets: n });
        }
        if d % 2 == 1 && n % 2 == 1 {
            return Err(Error::ParityError { degree: d, buckets: n });
        }
        let mut offsets = vec![0; d];
        for i in 1..=d / 2 {
            offsets[i - 1] = i % n;
            offsets[d - i] = (n - i) % n;
        }
        if d % 2 == 1 {
            offsets[d.div_ceil(2) - 1] = n / 2;
        }
        Ok(NeighborFunctions { n, offsets })
    }

    /// Custom ordering of signed offsets. The offset set must be closed under
    /// negation so that the neighbour relation is symmetric.
    pub fn from_offsets(n: usize, offsets: &[isize]) -> Result<Self> {
        let offsets: Vec<usize> = offsets.iter().map(|&o| o.rem_euclid(n as isize) as usize).collect();
        let bad = |why: &str| Err(Error::InvalidParams(format!("neighbour offsets: {why}")));
        if offsets.is_empty() {
            return bad("empty");
        }
        if offsets.contains(&0) {
            return bad("self loop");
        }
        for (i, o) in offsets.iter().enumerate() {
            if offsets[..i].contains(o) {
                return bad("duplicate offset");
            }
            if !offsets.contains(&((n - o) % n)) {
                return bad("not closed under negation");
            }
        }
        Ok(NeighborFunctions { n, offsets })
    }

    pub fn bucket_count(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.offsets.len()
    }

    /// F_j(p), with `j` counted from 1.
    pub fn apply(&self, j: usize, p: usize) -> usize {
        (p + self.offsets[j - 1]) % self.n
    }

    /// Neighbours of `p` in F order.
    pub fn neighbors(&self, p: usize) -> impl Iterator<Item = usize> + '_ {
        self.offsets.iter().map(move |o| (p + o) % self.n)
    }

    /// The `k` (from 1) with F_k(p) = q.
    pub fn index_of(&self, p: usize, q: usize) -> Option<usize> {
        let diff = (q + self.n - p) % self.n;
        self.offsets.iter().position(|&o| o == diff).map(|i| i + 1)
    }

    pub fn adjacency(&self) -> Adjacency {
        Adjacency {
            lists: (0..self.n).map(|p| self.neighbors(p).collect()).collect(),
        }
    }
}

/// Undirected neighbour structure as adjacency lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    lists: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn neighbors(&self, p: usize) -> &[usize] {
        &self.lists[p]
    }

    pub fn contains(&self, p: usize, q: usize) -> bool {
        self.lists[p].contains(&q)
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn to_matrix(&self) -> Vec<Vec<bool>> {
        let n = self.lists.len();
        let mut m = vec![vec![false; n]; n];
        for (p, l) in self.lists.iter().enumerate() {
            for &q in l {
                m[p][q] = true;
            }
        }
        m
    }
}

/// Builds the circulant d-regular graph over `n` buckets.
pub fn graph_create(n: usize, d: usize) -> Result<(Adjacency, NeighborFunctions)> {
    let f = NeighborFunctions::circulant(n, d)?;
    Ok((f.adjacency(), f))
}

/// The three bounds on the overlap size and their minimum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OverlapBounds {
    /// min over full buckets of ℓ_b minus the size of their largest neighbour;
    /// `None` when no bucket is full.
    pub full_bucket: Option<usize>,
    /// ⌊ℓ_b / d⌋
    pub degree: usize,
    /// ⌊(ℓ_b − L_min) / d⌋
    pub smallest_bucket: usize,
}

impl OverlapBounds {
    pub fn value(&self) -> usize {
        self.full_bucket
            .unwrap_or(usize::MAX)
            .min(self.degree)
            .min(self.smallest_bucket)
    }
}

pub fn max_overlap(bs: &BucketSet, graph: &NeighborFunctions) -> OverlapBounds {
    let cap = bs.bucket_size();
    let d = graph.degree();
    let sizes = bs.sizes();
    let full_bucket = sizes
        .iter()
        .enumerate()
        .filter(|&(_, &s)| s >= cap)
        .map(|(p, _)| {
            let largest = graph.neighbors(p).map(|q| sizes[q]).max().unwrap_or(0);
            cap.saturating_sub(largest)
        })
        .min();
    let l_min = sizes.iter().copied().min().unwrap_or(0);
    OverlapBounds {
        full_bucket,
        degree: cap / d,
        smallest_bucket: cap.saturating_sub(l_min) / d,
    }
}

/// Directed neighbour graph: which endpoint of every edge lends, and the
/// overlap size δ shared along every edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OverlapGraph {
    pub functions: NeighborFunctions,
    /// `lends[p][k-1]` is true when bucket p lends to F_k(p).
    lends: Vec<Vec<bool>>,
    pub delta: usize,
}

impl OverlapGraph {
    pub fn bucket_count(&self) -> usize {
        self.functions.bucket_count()
    }

    pub fn degree(&self) -> usize {
        self.functions.degree()
    }

    pub fn lends_to(&self, p: usize, q: usize) -> bool {
        self.functions.index_of(p, q).is_some_and(|k| self.lends[p][k - 1])
    }

    /// Borrowers of `q` with their neighbour index k (F_k(q) = borrower).
    pub fn borrowers_of(&self, q: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.lends[q]
            .iter()
            .enumerate()
            .filter(|(_, &l)| l)
            .map(move |(i, _)| (i + 1, self.functions.apply(i + 1, q)))
    }

    pub fn lenders_of(&self, p: usize) -> impl Iterator<Item = usize> + '_ {
        self.functions
            .neighbors(p)
            .enumerate()
            .filter(move |&(i, _)| !self.lends[p][i])
            .map(|(_, q)| q)
    }

    /// Number of incoming (borrowing) edges of `p`.
    pub fn incoming(&self, p: usize) -> usize {
        self.lends[p].iter().filter(|&&l| !l).count()
    }

    pub fn edge_count(&self) -> usize {
        self.lends.iter().map(|l| l.len()).sum::<usize>() / 2
    }

    /// Dense directed matrix, `m[p][q]` true when p lends to q.
    pub fn directed_matrix(&self) -> Vec<Vec<bool>> {
        let n = self.bucket_count();
        let mut m = vec![vec![false; n]; n];
        for (q, row) in m.iter_mut().enumerate() {
            for (_, p) in self.borrowers_of(q) {
                row[p] = true;
            }
        }
        m
    }

    fn with_delta(&self, delta: usize) -> Self {
        OverlapGraph { delta, ..self.clone() }
    }
}

/// Assigns a direction to every edge, starting from δ_max and lowering δ
/// (restarting from scratch each time) until the assignment neither
/// overflows a bucket nor asks a lender for more slots than it owns.
pub fn edge_directions(bs: &BucketSet, functions: &NeighborFunctions, delta_max: usize) -> OverlapGraph {
    let cap = bs.bucket_size();
    let sizes = bs.sizes();
    let mut delta = delta_max.min(cap);
    loop {
        if let Some(lends) = try_directions(&sizes, cap, functions, delta) {
            let graph = OverlapGraph {
                functions: functions.clone(),
                lends,
                delta,
            };
            if labels_fit(&graph, cap) {
                return graph;
            }
        }
        // δ = 0 always succeeds
        delta -= 1;
    }
}

fn try_directions(sizes: &[usize], cap: usize, f: &NeighborFunctions, delta: usize) -> Option<Vec<Vec<bool>>> {
    let n = sizes.len();
    let d = f.degree();
    let mut decided = vec![vec![None::<bool>; d]; n];
    let mut projected = sizes.to_vec();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&p| sizes[p]);
    for j in order {
        let mut nbrs: Vec<(usize, usize)> = (1..=d).map(|k| (k, f.apply(k, j))).collect();
        nbrs.sort_by(|a, b| sizes[b.1].cmp(&sizes[a.1]));
        for (k, p) in nbrs {
            if decided[j][k - 1].is_some() {
                continue;
            }
            let back = f.index_of(p, j).expect("symmetric neighbour functions");
            if projected[j] + delta <= cap {
                // j borrows from p
                decided[j][k - 1] = Some(false);
                decided[p][back - 1] = Some(true);
                projected[j] += delta;
            } else {
                decided[j][k - 1] = Some(true);
                decided[p][back - 1] = Some(false);
                projected[p] += delta;
                if projected[p] > cap {
                    return None;
                }
            }
        }
    }
    Some(
        decided
            .into_iter()
            .map(|row| row.into_iter().map(|v| v.expect("every edge decided")).collect())
            .collect(),
    )
}

fn labels_fit(graph: &OverlapGraph, cap: usize) -> bool {
    (0..graph.bucket_count()).all(|q| {
        let own = cap - graph.delta * graph.incoming(q);
        graph.borrowers_of(q).all(|(k, _)| k * graph.delta <= own)
    })
}

/// Pads each bucket with ℓ_b − (home + δ·incoming) fakes.
pub fn add_fakes(mut bs: BucketSet, graph: &OverlapGraph) -> Result<BucketSet> {
    let cap = bs.bucket_size();
    for b in &mut bs.buckets {
        let used = b.slots.len() + graph.delta * graph.incoming(b.id);
        if used > cap {
            return Err(Error::NegativeFakeCount { bucket: b.id });
        }
        b.slots.extend(std::iter::repeat_with(Record::fake).take(cap - used));
    }
    Ok(bs)
}

/// Slot ranges shared along each directed edge, keyed by (lender, borrower).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Labels {
    ranges: BTreeMap<(usize, usize), Range<usize>>,
}

impl Labels {
    /// Label of the edge between `p` and `q`, in either orientation, as a
    /// range over the lender's own slots.
    pub fn get(&self, p: usize, q: usize) -> Option<(usize, Range<usize>)> {
        if let Some(r) = self.ranges.get(&(p, q)) {
            return Some((p, r.clone()));
        }
        self.ranges.get(&(q, p)).map(|r| (q, r.clone()))
    }

    pub fn slots(&self, p: usize, q: usize) -> Vec<SlotRef> {
        self.get(p, q)
            .map(|(lender, r)| r.map(|index| SlotRef { bucket: lender, index }).collect())
            .unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Range<usize>)> + '_ {
        self.ranges.iter().map(|(&(l, b), r)| (l, b, r.clone()))
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

/// When p borrows from q and p = F_k(q), p receives q's own slots
/// (k−1)δ+1 ..= kδ (1-based). Ranges from one lender are disjoint.
pub fn create_labels(padded: &BucketSet, graph: &OverlapGraph) -> Result<Labels> {
    let mut labels = Labels::default();
    if graph.delta == 0 {
        return Ok(labels);
    }
    for q in 0..graph.bucket_count() {
        let available = padded.buckets[q].slots.len();
        for (k, p) in graph.borrowers_of(q) {
            let range = (k - 1) * graph.delta..k * graph.delta;
            if range.end > available {
                return Err(Error::LenderTooSmall {
                    lender: q,
                    borrower: p,
                    needed: range.end,
                    available,
                });
            }
            labels.ranges.insert((q, p), range);
        }
    }
    Ok(labels)
}

/// Attaches every label to its borrower.
pub fn finalize_overlap(mut padded: BucketSet, labels: &Labels) -> BucketSet {
    for b in &mut padded.buckets {
        b.borrowed.clear();
    }
    for (lender, borrower, range) in labels.iter() {
        padded.buckets[borrower]
            .borrowed
            .extend(range.map(|index| SlotRef { bucket: lender, index }));
    }
    padded
}

/// Result of the overlapping padding pipeline.
#[derive(Clone, Debug)]
pub struct OverlapOutcome {
    pub buckets: BucketSet,
    pub graph: OverlapGraph,
    pub labels: Labels,
    pub bounds: OverlapBounds,
    /// An empty bucket was appended because degree and bucket count were both odd.
    pub parity_repaired: bool,
}

/// Runs the full overlapping padding on unpadded buckets.
pub fn pad_overlapping(mut bs: BucketSet, degree: usize) -> Result<OverlapOutcome> {
    let mut parity_repaired = false;
    if degree % 2 == 1 && bs.buckets.len() % 2 == 1 {
        let id = bs.buckets.len();
        bs.buckets.push(Bucket::new(id));
        parity_repaired = true;
    }
    let functions = NeighborFunctions::circulant(bs.buckets.len(), degree)?;
    let bounds = max_overlap(&bs, &functions);
    let graph = edge_directions(&bs, &functions, bounds.value());
    let padded = add_fakes(bs, &graph)?;
    let labels = create_labels(&padded, &graph)?;
    let buckets = finalize_overlap(padded, &labels);
    Ok(OverlapOutcome {
        buckets,
        graph,
        labels,
        bounds,
        parity_repaired,
    })
}

/// Forces the overlap between every pair of neighbours to `desired`,
/// independent of the data. A shrinking overlap is filled with fakes; a
/// growing one first replaces the borrower's fakes and then moves its real
/// records (last placed first) to the stash.
pub fn apply_desired_overlap(outcome: OverlapOutcome, desired: usize) -> Result<OverlapOutcome> {
    let OverlapOutcome {
        mut buckets,
        graph,
        bounds,
        parity_repaired,
        ..
    } = outcome;
    let cap = buckets.bucket_size();
    let d = graph.degree();
    if desired * d > cap {
        return Err(Error::OverlapInfeasible {
            desired,
            reason: format!("{d} neighbours x {desired} exceeds bucket size {cap}"),
        });
    }
    let graph = graph.with_delta(desired);
    for b in &mut buckets.buckets {
        b.borrowed.clear();
        b.slots.retain(|r| !r.is_fake());
        let target = cap - desired * graph.incoming(b.id);
        if b.slots.len() > target {
            let spilled = b.slots.split_off(target);
            buckets.stash.entries.extend(spilled);
        }
        let missing = target - b.slots.len();
        b.slots.extend(std::iter::repeat_with(Record::fake).take(missing));
    }
    let labels = create_labels(&buckets, &graph).map_err(|e| match e {
        Error::LenderTooSmall {
            lender,
            borrower,
            needed,
            available,
        } => Error::OverlapInfeasible {
            desired,
            reason: format!("lender {lender} owns {available} slots but borrower {borrower} needs up to slot {needed}"),
        },
        other => other,
    })?;
    let buckets = finalize_overlap(buckets, &labels);
    Ok(OverlapOutcome {
        buckets,
        graph,
        labels,
        bounds,
        parity_repaired,
    })
}
