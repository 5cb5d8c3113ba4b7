//! Metrics, leakage profiles, the first-fit-decreasing inference attack and
//! a permutation test for indistinguishability of bucket assignments.

use std::collections::HashSet;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::bucketizer::shuffle;
use crate::error::Result;
use crate::exec::Execution;
use crate::mapper::{map_key, HashAlgorithm, MapConfig};
use crate::model::{Dataset, Metrics, Params, Ratio};
use crate::outsource::{ClientState, OutsourcedBundle, RECORD_HEADER_LEN};
use crate::pipeline::{draw_salt, pad};

/// Per-stream RNG so Monte Carlo trials are independent of scheduling.
fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Bytes of `records.bin` plus `index.bin`.
pub fn server_bytes(bundle: &OutsourcedBundle) -> usize {
    bundle.record_count() * (RECORD_HEADER_LEN + bundle.meta.ciphertext_len)
        + bundle.bucket_count() * 8
        + bundle.index_entry_count() * 8
}

/// Bytes the dataset would occupy as encrypted `records.bin` entries.
pub fn encrypted_dataset_bytes(dataset_len: usize, bundle: &OutsourcedBundle) -> usize {
    dataset_len * (RECORD_HEADER_LEN + bundle.meta.ciphertext_len)
}

pub fn compute_metrics(dataset: &Dataset, bundle: &OutsourcedBundle, client: &ClientState) -> Metrics {
    let d = dataset.len() as f64;
    let base = encrypted_dataset_bytes(dataset.len(), bundle) as f64;
    let client_bytes = client.client_json().len() + client.stash_tsv().len();
    Metrics {
        qa_actual: (client.fanout * client.bucket_size) as f64 / dataset.l_max() as f64,
        sa_actual: bundle.record_count() as f64 / d,
        sr: client.stash.len() as f64 / d,
        csa: client_bytes as f64 / base,
        ssa: server_bytes(bundle) as f64 / base,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LeakageProfile {
    /// `qeq[i][j]` is true when queries i and j ask for the same key.
    pub qeq: Vec<Vec<bool>>,
    /// Response length of every query.
    pub rlen: Vec<usize>,
    /// Maximum response length, L_max.
    pub mrlen: usize,
    /// Dataset size.
    pub dsize: usize,
}

pub fn leakage(dataset: &Dataset, queries: &[&[u8]]) -> LeakageProfile {
    LeakageProfile {
        qeq: queries
            .iter()
            .map(|a| queries.iter().map(|b| a == b).collect())
            .collect(),
        rlen: queries.iter().map(|q| dataset.count(q)).collect(),
        mrlen: dataset.l_max(),
        dsize: dataset.len(),
    }
}

/// First-fit decreasing: keys sorted by volume (descending, stable), each
/// placed whole into the first bucket with room. Returns indices into
/// `volumes` per bucket.
pub fn ffd_buckets(volumes: &[usize], bucket_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..volumes.len()).collect();
    order.sort_by(|&a, &b| volumes[b].cmp(&volumes[a]));
    let mut buckets: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in order {
        match buckets.iter_mut().find(|(used, _)| used + volumes[i] <= bucket_size) {
            Some((used, keys)) => {
                *used += volumes[i];
                keys.push(i);
            }
            None => buckets.push((volumes[i], vec![i])),
        }
    }
    buckets.into_iter().map(|(_, k)| k).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FfdAttackReport {
    /// Keys per FFD bucket.
    pub buckets: Vec<Vec<String>>,
    /// Keys the adversary cannot rule out for each query.
    pub per_query_candidates: Vec<Vec<String>>,
    /// Probability of naming the right key by guessing among the candidates.
    pub per_query_accuracy: Vec<f64>,
    pub accuracy: f64,
}

/// An adversary that knows the key histogram re-runs FFD with bucket size
/// L_max, so the bucket a query fetches narrows the key down to that bucket's
/// occupants.
pub fn ffd_attack_demo(dataset: &Dataset, queries: &[&[u8]]) -> FfdAttackReport {
    let keys: Vec<&Vec<u8>> = dataset.counts().keys().collect();
    let volumes: Vec<usize> = dataset.counts().values().copied().collect();
    let buckets = ffd_buckets(&volumes, dataset.l_max());
    let name = |i: usize| String::from_utf8_lossy(keys[i]).into_owned();

    let mut per_query_candidates = Vec::with_capacity(queries.len());
    let mut per_query_accuracy = Vec::with_capacity(queries.len());
    for q in queries {
        let bucket = keys
            .iter()
            .position(|k| k.as_slice() == *q)
            .and_then(|ki| buckets.iter().find(|b| b.contains(&ki)));
        match bucket {
            Some(b) => {
                per_query_candidates.push(b.iter().map(|&i| name(i)).collect());
                per_query_accuracy.push(1.0 / b.len() as f64);
            }
            // absent keys return nothing and fetch nothing under FFD
            None => {
                per_query_candidates.push(Vec::new());
                per_query_accuracy.push(0.0);
            }
        }
    }
    let accuracy = if queries.is_empty() {
        0.0
    } else {
        per_query_accuracy.iter().sum::<f64>() / queries.len() as f64
    };
    FfdAttackReport {
        buckets: buckets.iter().map(|b| b.iter().map(|&i| name(i)).collect()).collect(),
        per_query_candidates,
        per_query_accuracy,
        accuracy,
    }
}

/// Monte Carlo setup for the attack against randomized buckets.
#[derive(Clone, Debug)]
pub struct VeilAttackConfig {
    /// Volume classes; each class holds `copies` keys of that volume.
    pub volumes: Vec<usize>,
    pub copies: usize,
    pub qa: Ratio,
    pub sa: Ratio,
    pub fanout: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VeilAttackReport {
    pub accuracy: f64,
    pub chance: f64,
    pub guesses: usize,
}

/// Within every volume class keys are paired; per pair one key is queried
/// and the adversary, seeing only the fetched bucket ids, names the pair
/// member whose buckets under its own replay of MAP (with a salt of its
/// choosing, the real one being secret) overlap the observation most,
/// breaking ties at random. Chance level is 1/2.
pub fn veil_attack(cfg: &VeilAttackConfig, exec: Execution) -> Result<VeilAttackReport> {
    let mut pairs = Vec::new();
    let mut records = Vec::new();
    for (c, &v) in cfg.volumes.iter().enumerate() {
        for i in 0..cfg.copies {
            for j in 0..v {
                records.push((format!("v{c}_{i}"), j.to_string()));
            }
        }
        for i in (0..cfg.copies.saturating_sub(1)).step_by(2) {
            pairs.push((format!("v{c}_{i}"), format!("v{c}_{}", i + 1)));
        }
    }
    let dataset = Dataset::from_pairs(records)?;
    let results = exec.try_map(cfg.trials, |t| {
        let mut rng = stream_rng(cfg.seed, t as u64);
        let params = Params {
            qa: cfg.qa,
            sa: cfg.sa,
            fanout: cfg.fanout,
            seed: rng.gen(),
            ..Params::default()
        };
        let mut setup_rng = ChaCha20Rng::seed_from_u64(params.seed);
        let padded = pad(&dataset, &params, &mut setup_rng)?;
        let guess_map = MapConfig {
            salt: draw_salt(&mut rng),
            ..padded.map.clone()
        };
        let mut correct = 0usize;
        for (a, b) in &pairs {
            let target = if rng.gen::<bool>() { a } else { b };
            let seen: HashSet<usize> = map_key(target.as_bytes(), &padded.map)?.into_iter().collect();
            let score = |k: &str| -> Result<usize> {
                Ok(map_key(k.as_bytes(), &guess_map)?
                    .into_iter()
                    .filter(|id| seen.contains(id))
                    .count())
            };
            let (sa, sb) = (score(a)?, score(b)?);
            let pick = match sa.cmp(&sb) {
                std::cmp::Ordering::Greater => a,
                std::cmp::Ordering::Less => b,
                std::cmp::Ordering::Equal if rng.gen::<bool>() => a,
                std::cmp::Ordering::Equal => b,
            };
            correct += usize::from(pick == target);
        }
        Ok(correct)
    })?;
    let guesses = cfg.trials * pairs.len();
    Ok(VeilAttackReport {
        accuracy: results.iter().sum::<usize>() as f64 / guesses.max(1) as f64,
        chance: 0.5,
        guesses,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VsrReport {
    pub p_value: f64,
    pub trials: usize,
    pub permutations: usize,
    pub statistic: f64,
}

/// Σ (c1 − c2)² / (c1 + c2) over bucket-id histograms of the two groups.
fn histogram_statistic(obs: &[&[usize]], group_one: &[bool], bins: usize) -> f64 {
    let mut c = vec![[0u32; 2]; bins];
    for (o, &g) in obs.iter().zip(group_one) {
        for &id in *o {
            c[id][usize::from(!g)] += 1;
        }
    }
    c.iter()
        .filter(|[a, b]| a + b > 0)
        .map(|[a, b]| {
            let d = *a as f64 - *b as f64;
            d * d / (*a + *b) as f64
        })
        .sum()
}

/// Runs `trials` independent setups through `setup_fn(trial_seed, key)`,
/// which returns the bucket ids `key` touches in that setup, and tests
/// whether the ids of `k1` and `k2` come from the same distribution.
/// p = (1 + #{permuted statistic ≥ observed}) / (1 + permutations).
pub fn vsr_permutation_test<F>(
    setup_fn: F,
    k1: &[u8],
    k2: &[u8],
    trials: usize,
    permutations: usize,
    seed: u64,
    exec: Execution,
) -> VsrReport
where
    F: Fn(u64, &[u8]) -> Vec<usize> + Sync + Send,
{
    let runs = exec.map(trials, |t| {
        let trial_seed = stream_rng(seed, t as u64).next_u64();
        (setup_fn(trial_seed, k1), setup_fn(trial_seed, k2))
    });
    let obs: Vec<&[usize]> = runs
        .iter()
        .map(|(a, _)| a.as_slice())
        .chain(runs.iter().map(|(_, b)| b.as_slice()))
        .collect();
    let bins = obs.iter().flat_map(|o| o.iter()).max().map_or(0, |m| m + 1);
    let labels: Vec<bool> = (0..2 * trials).map(|i| i < trials).collect();
    let observed = histogram_statistic(&obs, &labels, bins);

    let perm_seed = stream_rng(seed, u64::MAX).next_u64();
    let exceed = exec
        .map(permutations, |p| {
            let mut rng = stream_rng(perm_seed, p as u64);
            let mut l = labels.clone();
            shuffle(&mut l, &mut rng);
            // tolerance absorbs summation-order differences on exact ties
            histogram_statistic(&obs, &l, bins) >= observed - 1e-9
        })
        .into_iter()
        .filter(|&b| b)
        .count();
    VsrReport {
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        trials,
        permutations,
        statistic: observed,
    }
}

/// Bucket ids a key touches in a fresh setup over `n` buckets: the salt is
/// drawn exactly as a full setup seeded with `trial_seed` would draw it.
pub fn fresh_setup_buckets(trial_seed: u64, key: &[u8], n: usize, fanout: usize, hash: HashAlgorithm) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(trial_seed);
    let cfg = MapConfig::new(hash, n, fanout).with_salt(draw_salt(&mut rng));
    map_key(key, &cfg).expect("fanout checked by caller")
}

#[derive(Clone, Debug, Serialize)]
pub struct AttackSection {
    pub per_query_candidates: Vec<Vec<String>>,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VsrSection {
    pub p_value: f64,
    pub trials: usize,
}

/// Report emitted by `veil analyze`.
#[derive(Clone, Debug, Serialize)]
pub struct AnalysisReport {
    pub metrics: Metrics,
    pub leakage: LeakageProfile,
    pub attack: AttackSection,
    pub vsr: VsrSection,
}
