//! Hamming-ranking retrieval metrics: MAP@R, Top-N precision and a
//! precision-recall curve swept over Hamming radius.
//!
//! Conventions:
//! * AP@R divides by the number of relevant items inside the top R.
//! * Ranking ties are broken by the lexicographic order of database ids, so
//!   results do not depend on how the database file is ordered.
//! * Queries without any relevant database item are left out of MAP and of
//!   the recall denominators; they are counted in `excluded_queries`.
//! * The PR curve is micro-averaged: retrieved and relevant counts are summed
//!   over queries before dividing. Precision at a radius where nothing is
//!   retrieved is reported as 0.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_file, CodeSet, LabelSet};
use crate::error::{Error, Result};

pub const DEFAULT_R: usize = 5000;
pub const DEFAULT_TOPN_MAX: usize = 1000;
pub const DEFAULT_TOPN_STEP: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub r_cutoff: usize,
    pub topn_max: usize,
    /// Spacing of the Top-N grid `step, 2*step, ..., topn_max`.
    pub topn_step: usize,
    /// Relevance is "share at least one label"; with single labels this is label equality.
    pub multi_label: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { r_cutoff: DEFAULT_R, topn_max: DEFAULT_TOPN_MAX, topn_step: DEFAULT_TOPN_STEP, multi_label: true }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_cutoff == 0 || self.topn_max == 0 || self.topn_step == 0 {
            return Err(Error::Validation("r_cutoff, topn_max and topn_step must be at least 1".into()));
        }
        Ok(())
    }

    /// Top-N grid, clipped to the database size.
    pub fn topn_grid(&self, db_len: usize) -> Vec<usize> {
        let mut grid: Vec<usize> = (1..)
            .map(|k| k * self.topn_step)
            .take_while(|&n| n <= self.topn_max)
            .collect();
        if grid.last() != Some(&self.topn_max) {
            grid.push(self.topn_max);
        }
        grid.retain(|&n| n <= db_len);
        if grid.is_empty() {
            grid.push(db_len);
        }
        grid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopNPoint {
    pub n: usize,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub radius: usize,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub r_cutoff: usize,
    pub topn_curve: Vec<TopNPoint>,
    pub pr_curve: Vec<PrPoint>,
    /// Queries that entered MAP (at least one relevant database item).
    pub num_queries: usize,
    pub excluded_queries: usize,
}

impl EvalReport {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        write_file(path.as_ref(), text.as_bytes())
    }

    pub fn save_topn_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("N,precision\n");
        for p in &self.topn_curve {
            out.push_str(&format!("{},{}\n", p.n, p.precision));
        }
        write_file(path.as_ref(), out.as_bytes())
    }

    pub fn save_pr_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("radius,recall,precision\n");
        for p in &self.pr_curve {
            out.push_str(&format!("{},{},{}\n", p.radius, p.recall, p.precision));
        }
        write_file(path.as_ref(), out.as_bytes())
    }
}

/// True when the two label sets intersect. Both must be sorted and non-empty.
///
/// `_multi_label` is accepted for symmetry with the configuration: single-label
/// ground truth is the same predicate on singleton sets.
pub fn ground_truth_relevant(q_labels: &[u32], r_labels: &[u32], _multi_label: bool) -> Result<bool> {
    if q_labels.is_empty() || r_labels.is_empty() {
        return Err(Error::Domain("relevance needs non-empty label sets".into()));
    }
    let (mut a, mut b) = (0, 0);
    while a < q_labels.len() && b < r_labels.len() {
        match q_labels[a].cmp(&r_labels[b]) {
            std::cmp::Ordering::Less => a += 1,
            std::cmp::Ordering::Greater => b += 1,
            std::cmp::Ordering::Equal => return Ok(true),
        }
    }
    Ok(false)
}

/// Number of differing bits over the first `code_len` bits.
pub fn hamming_distance(a: &[u8], b: &[u8], code_len: usize) -> Result<u32> {
    let bytes = code_len.div_ceil(8);
    if a.len() != bytes || b.len() != bytes {
        return Err(Error::Domain(format!(
            "code byte lengths {} and {} do not match {code_len} bits",
            a.len(),
            b.len()
        )));
    }
    Ok(hamming_unchecked(a, b, code_len))
}

fn hamming_unchecked(a: &[u8], b: &[u8], code_len: usize) -> u32 {
    let full = code_len / 8;
    let mut dist = 0;
    let (a_full, b_full) = (&a[..full], &b[..full]);
    let mut chunks_a = a_full.chunks_exact(8);
    let mut chunks_b = b_full.chunks_exact(8);
    for (x, y) in chunks_a.by_ref().zip(chunks_b.by_ref()) {
        let x = u64::from_le_bytes(x.try_into().unwrap());
        let y = u64::from_le_bytes(y.try_into().unwrap());
        dist += (x ^ y).count_ones();
    }
    for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        dist += (x ^ y).count_ones();
    }
    if code_len % 8 != 0 {
        let mask = !((1u8 << (8 - code_len % 8)) - 1);
        dist += ((a[full] ^ b[full]) & mask).count_ones();
    }
    dist
}

/// Database indices by ascending Hamming distance, ties by ascending index.
pub fn rank_by_hamming(query: &[u8], database: &CodeSet) -> Result<Vec<usize>> {
    let keys: Vec<usize> = (0..database.len()).collect();
    rank_with_tie_keys(query, database, &keys)
}

/// Like [`rank_by_hamming`], but ties are broken by `tie_keys[index]`.
pub fn rank_with_tie_keys(query: &[u8], database: &CodeSet, tie_keys: &[usize]) -> Result<Vec<usize>> {
    let l = database.code_len();
    let dists = (0..database.len())
        .map(|i| hamming_distance(query, database.code(i), l))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..database.len()).collect();
    order.sort_unstable_by_key(|&i| (dists[i], tie_keys[i]));
    Ok(order)
}

/// AP over the top `min(r_cutoff, len)` positions, normalized by the relevant
/// items found there; 0 when none are.
pub fn average_precision(relevance: &[bool], r_cutoff: usize) -> f64 {
    let top = &relevance[..r_cutoff.min(relevance.len())];
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in top.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

struct QueryOutcome {
    total_relevant: usize,
    ap: f64,
    topn_hits: Vec<usize>,
    /// Cumulative (retrieved, relevant retrieved) per radius 0..=L.
    by_radius: Vec<(usize, usize)>,
}

pub fn evaluate(
    query_codes: &CodeSet,
    db_codes: &CodeSet,
    query_labels: &LabelSet,
    db_labels: &LabelSet,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let l = query_codes.code_len();
    if db_codes.code_len() != l {
        return Err(Error::Validation(format!(
            "query codes have {l} bits, database codes {}",
            db_codes.code_len()
        )));
    }
    let q_labels = query_labels.align_to(query_codes.ids())?;
    let d_labels = db_labels.align_to(db_codes.ids())?;
    let n_db = db_codes.len();

    // storage-order independent tie keys: lexicographic rank of each id
    let mut by_id: Vec<usize> = (0..n_db).collect();
    by_id.sort_by(|&a, &b| db_codes.ids()[a].cmp(&db_codes.ids()[b]));
    let grid = config.topn_grid(n_db);

    let outcomes: Vec<QueryOutcome> = (0..query_codes.len())
        .into_par_iter()
        .map(|q| {
            let code = query_codes.code(q);
            // bucket by distance; iterating `by_id` keeps each bucket in tie-key order
            let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); l + 1];
            for &i in &by_id {
                buckets[hamming_unchecked(code, db_codes.code(i), l) as usize].push(i);
            }
            let relevant = |i: usize| {
                ground_truth_relevant(q_labels.labels(q), d_labels.labels(i), config.multi_label)
                    .expect("label sets are validated non-empty")
            };
            let mut ranked_rel = Vec::with_capacity(n_db);
            let mut by_radius = Vec::with_capacity(l + 1);
            let (mut ret, mut rel_ret) = (0, 0);
            for bucket in &buckets {
                for &i in bucket {
                    let rel = relevant(i);
                    ranked_rel.push(rel);
                    ret += 1;
                    rel_ret += usize::from(rel);
                }
                by_radius.push((ret, rel_ret));
            }
            let mut prefix = 0;
            let mut topn_hits = Vec::with_capacity(grid.len());
            let mut next = 0;
            for (k, &rel) in ranked_rel.iter().enumerate() {
                prefix += usize::from(rel);
                while next < grid.len() && grid[next] == k + 1 {
                    topn_hits.push(prefix);
                    next += 1;
                }
            }
            QueryOutcome {
                total_relevant: rel_ret,
                ap: average_precision(&ranked_rel, config.r_cutoff),
                topn_hits,
                by_radius,
            }
        })
        .collect();

    let counted: Vec<&QueryOutcome> = outcomes.iter().filter(|o| o.total_relevant > 0).collect();
    let num_queries = counted.len();
    let map = if num_queries == 0 {
        0.0
    } else {
        counted.iter().map(|o| o.ap).sum::<f64>() / num_queries as f64
    };

    let n_q = outcomes.len().max(1) as f64;
    let topn_curve = grid
        .iter()
        .enumerate()
        .map(|(g, &n)| TopNPoint {
            n,
            precision: outcomes.iter().map(|o| o.topn_hits[g] as f64 / n as f64).sum::<f64>() / n_q,
        })
        .collect();

    let total_relevant: usize = counted.iter().map(|o| o.total_relevant).sum();
    let pr_curve = (0..=l)
        .map(|radius| {
            let retrieved: usize = outcomes.iter().map(|o| o.by_radius[radius].0).sum();
            let hits: usize = outcomes.iter().map(|o| o.by_radius[radius].1).sum();
            PrPoint {
                radius,
                recall: if total_relevant == 0 { 0.0 } else { hits as f64 / total_relevant as f64 },
                precision: if retrieved == 0 { 0.0 } else { hits as f64 / retrieved as f64 },
            }
        })
        .collect();

    Ok(EvalReport {
        map,
        r_cutoff: config.r_cutoff,
        topn_curve,
        pr_curve,
        num_queries,
        excluded_queries: outcomes.len() - num_queries,
    })
}
