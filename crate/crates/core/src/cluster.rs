//! Noisy prefix clustering: each read goes to the design whose first `L`
//! symbols equal the read's first `L` symbols.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq::{parse_sequence, DnaSequence};

pub const DEFAULT_MARGIN: usize = 4;

/// `ceil(log4 n) + margin`.
pub fn choose_prefix_length(n: usize, margin: usize) -> usize {
    assert!(n >= 1, "need at least one cluster");
    let mut digits = 0;
    let mut capacity: u128 = 1;
    while capacity < n as u128 {
        capacity *= 4;
        digits += 1;
    }
    digits + margin
}

/// Packs up to 32 symbols into a `u64`, 2 bits each. All keys of one index
/// have the same length, so packing is injective.
fn pack(prefix: &[u8]) -> u64 {
    prefix.iter().fold(0u64, |acc, &c| (acc << 2) | c as u64)
}

#[derive(Clone, Debug)]
enum Table {
    Packed(HashMap<u64, usize>),
    Bytes(HashMap<Vec<u8>, usize>),
}

#[derive(Clone, Debug)]
pub struct PrefixIndex {
    prefix_len: usize,
    table: Table,
    n: usize,
    /// Also accept reads whose prefix is one substitution away from a
    /// unique design prefix.
    pub hamming1_fallback: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assignment {
    Assigned(usize),
    Unassigned,
}

impl PrefixIndex {
    pub fn build(designs: &[DnaSequence], prefix_len: usize) -> Result<Self> {
        let mut table = if prefix_len <= 32 {
            Table::Packed(HashMap::with_capacity(designs.len()))
        } else {
            Table::Bytes(HashMap::with_capacity(designs.len()))
        };
        for (i, d) in designs.iter().enumerate() {
            if d.len() < prefix_len {
                return Err(Error::DesignTooShort { index: i, prefix_len });
            }
            let prefix = &d.codes()[..prefix_len];
            let previous = match &mut table {
                Table::Packed(t) => t.insert(pack(prefix), i),
                Table::Bytes(t) => t.insert(prefix.to_vec(), i),
            };
            if let Some(first) = previous {
                return Err(Error::DuplicatePrefix { first, second: i });
            }
        }
        Ok(Self {
            prefix_len,
            table,
            n: designs.len(),
            hamming1_fallback: false,
        })
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn lookup(&self, prefix: &[u8]) -> Option<usize> {
        match &self.table {
            Table::Packed(t) => t.get(&pack(prefix)).copied(),
            Table::Bytes(t) => t.get(prefix).copied(),
        }
    }

    pub fn assign(&self, read: &DnaSequence) -> Assignment {
        if read.len() < self.prefix_len {
            return Assignment::Unassigned;
        }
        let prefix = &read.codes()[..self.prefix_len];
        if let Some(id) = self.lookup(prefix) {
            return Assignment::Assigned(id);
        }
        if self.hamming1_fallback {
            let mut probe = prefix.to_vec();
            let mut hit = None;
            for i in 0..probe.len() {
                let orig = probe[i];
                for c in (0..4).filter(|&c| c != orig) {
                    probe[i] = c;
                    if let Some(id) = self.lookup(&probe) {
                        if hit.is_some_and(|h| h != id) {
                            return Assignment::Unassigned;
                        }
                        hit = Some(id);
                    }
                }
                probe[i] = orig;
            }
            if let Some(id) = hit {
                return Assignment::Assigned(id);
            }
        }
        Assignment::Unassigned
    }
}

pub fn build_prefix_index(designs: &[DnaSequence], prefix_len: usize) -> Result<PrefixIndex> {
    PrefixIndex::build(designs, prefix_len)
}

pub fn assign_read(index: &PrefixIndex, read: &DnaSequence) -> Assignment {
    index.assign(read)
}

/// Summary of one pseudo-clustering run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub reads: usize,
    pub assigned: usize,
    pub unassigned: usize,
    /// Assigned to a cluster other than the true source; only known with
    /// ground truth.
    pub misassigned: Option<usize>,
    pub clusters: usize,
    pub empty_clusters: usize,
    pub prefix_len: usize,
}

#[derive(Clone, Debug)]
pub struct Clustering {
    /// `members[c]` holds the indices of the reads assigned to cluster `c`,
    /// in read order.
    pub members: Vec<Vec<usize>>,
    pub assignments: Vec<Assignment>,
    pub stats: ClusterStats,
}

impl Clustering {
    pub fn cluster_reads<'a>(
        &'a self,
        reads: &'a [DnaSequence],
        cluster: usize,
    ) -> impl Iterator<Item = &'a DnaSequence> + 'a {
        self.members[cluster].iter().map(move |&r| &reads[r])
    }
}

pub fn pseudo_cluster(index: &PrefixIndex, reads: &[DnaSequence], truth: Option<&[usize]>) -> Clustering {
    let assignments: Vec<Assignment> = reads.par_iter().map(|r| index.assign(r)).collect();
    let mut members = vec![Vec::new(); index.len()];
    let mut assigned = 0;
    let mut misassigned = truth.map(|_| 0usize);
    for (r, a) in assignments.iter().enumerate() {
        if let Assignment::Assigned(c) = *a {
            members[c].push(r);
            assigned += 1;
            if let (Some(truth), Some(m)) = (truth, misassigned.as_mut()) {
                if truth[r] != c {
                    *m += 1;
                }
            }
        }
    }
    let stats = ClusterStats {
        reads: reads.len(),
        assigned,
        unassigned: reads.len() - assigned,
        misassigned,
        clusters: index.len(),
        empty_clusters: members.iter().filter(|m| m.is_empty()).count(),
        prefix_len: index.prefix_len(),
    };
    Clustering {
        members,
        assignments,
        stats,
    }
}

pub const CLUSTERS_FILE: &str = "clusters.tsv";
pub const UNASSIGNED_FILE: &str = "unassigned.txt";
pub const STATS_FILE: &str = "cluster_stats.json";

/// Writes `cluster_id \t read` rows (clusters in id order, reads in input
/// order) and the unassigned reads, one per line.
pub fn write_clusters(dir: &Path, clustering: &Clustering, reads: &[DnaSequence]) -> Result<()> {
    let path = dir.join(CLUSTERS_FILE);
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for (c, m) in clustering.members.iter().enumerate() {
        for &r in m {
            writeln!(w, "{c}\t{}", reads[r]).map_err(|e| Error::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let unassigned: Vec<&DnaSequence> = clustering
        .assignments
        .iter()
        .zip(reads)
        .filter(|(a, _)| **a == Assignment::Unassigned)
        .map(|(_, r)| r)
        .collect();
    crate::seq::write_sequences(&dir.join(UNASSIGNED_FILE), unassigned)
}

/// Reads a clusters TSV into per-cluster read lists for `n_clusters`
/// clusters.
pub fn read_clusters(path: &Path, n_clusters: usize) -> Result<Vec<Vec<DnaSequence>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut clusters = vec![Vec::new(); n_clusters];
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Parse {
            what: format!("{}:{}", path.display(), lineno + 1),
            reason,
        };
        let (id, read) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected cluster_id<TAB>read".into()))?;
        let id: usize = id.parse().map_err(|_| bad(format!("bad cluster id {id:?}")))?;
        if id >= n_clusters {
            return Err(Error::UnknownClusterId(id));
        }
        clusters[id].push(parse_sequence(read).map_err(|e| bad(e.to_string()))?);
    }
    Ok(clusters)
}
