//! Set partitions of `{0, .., n-1}` and Mobius inversion on their lattice.

use std::collections::HashMap;

/// A set partition with blocks sorted internally and ordered by smallest element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SetPartition {
    blocks: Vec<Vec<usize>>,
}

impl SetPartition {
    /// Builds a partition from arbitrary blocks; returns `None` unless the
    /// blocks are nonempty, disjoint and cover `0..n` for some `n`.
    pub fn new(mut blocks: Vec<Vec<usize>>) -> Option<Self> {
        let n: usize = blocks.iter().map(Vec::len).sum();
        let mut seen = vec![false; n];
        for b in &mut blocks {
            if b.is_empty() {
                return None;
            }
            b.sort_unstable();
            for &i in b.iter() {
                if i >= n || seen[i] {
                    return None;
                }
                seen[i] = true;
            }
        }
        blocks.sort_by_key(|b| b[0]);
        Some(SetPartition { blocks })
    }

    pub fn singletons(n: usize) -> Self {
        SetPartition {
            blocks: (0..n).map(|i| vec![i]).collect(),
        }
    }

    /// Partition from a restricted growth string (`labels[i]` is the block of `i`).
    fn from_labels(labels: &[usize]) -> Self {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut blocks = vec![Vec::new(); k];
        for (i, &b) in labels.iter().enumerate() {
            blocks[b].push(i);
        }
        SetPartition { blocks }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn ground_size(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    /// Block index of every element.
    pub fn labels(&self) -> Vec<usize> {
        let mut out = vec![0; self.ground_size()];
        for (b, block) in self.blocks.iter().enumerate() {
            for &i in block {
                out[i] = b;
            }
        }
        out
    }

    /// True when every block of `self` lies inside a block of `other`.
    pub fn refines(&self, other: &SetPartition) -> bool {
        let lab = other.labels();
        self.blocks
            .iter()
            .all(|b| b.iter().all(|&i| lab[i] == lab[b[0]]))
    }
}

/// All set partitions of an `n`-element set, in restricted-growth order.
pub fn set_partitions(n: usize) -> Vec<SetPartition> {
    let mut out = Vec::new();
    if n == 0 {
        out.push(SetPartition { blocks: Vec::new() });
        return out;
    }
    let mut labels = vec![0usize; n];
    let mut maxes = vec![0usize; n]; // maxes[i] = max(labels[..i])
    loop {
        out.push(SetPartition::from_labels(&labels));
        // increment the restricted growth string
        let mut i = n - 1;
        loop {
            if i == 0 {
                return out;
            }
            if labels[i] <= maxes[i] {
                labels[i] += 1;
                for j in i + 1..n {
                    labels[j] = 0;
                    maxes[j] = maxes[j - 1].max(labels[j - 1]);
                }
                break;
            }
            i -= 1;
        }
    }
}

/// `mu(0, pi)` for every partition `pi` of an `n`-set, from the defining
/// recursion `sum_{sigma <= pi} mu(0, sigma) = [pi = 0]`.
pub fn mobius_from_bottom(n: usize) -> Vec<(SetPartition, i64)> {
    let mut parts = set_partitions(n);
    // finer partitions have more blocks; process them first
    parts.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    let mut mu: HashMap<SetPartition, i64> = HashMap::with_capacity(parts.len());
    let mut out = Vec::with_capacity(parts.len());
    for pi in &parts {
        let value = if pi.len() == n {
            1
        } else {
            -parts
                .iter()
                .filter(|s| s.len() > pi.len() && s.refines(pi))
                .map(|s| mu[s])
                .sum::<i64>()
        };
        mu.insert(pi.clone(), value);
        out.push((pi.clone(), value));
    }
    out
}
