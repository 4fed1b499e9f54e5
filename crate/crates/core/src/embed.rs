//! Cluster embedding: length filter, one-hot, trailing zero padding and an
//! element-wise sum over copies. The result is a per-position vote count
//! matrix, deliberately left unnormalized.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq::DnaSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub label_length: usize,
    /// Length slack: copies within `label_length ± deviation` are kept and
    /// all copies are padded to `label_length + deviation`.
    pub deviation: usize,
    pub max_copies: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            label_length: 120,
            deviation: 8,
            max_copies: 32,
        }
    }
}

impl EmbedConfig {
    pub fn input_len(&self) -> usize {
        self.label_length + self.deviation
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_copies == 0 {
            return Err(Error::InvalidConfig("max_copies must be >= 1".into()));
        }
        if self.label_length == 0 {
            return Err(Error::InvalidConfig("label_length must be >= 1".into()));
        }
        Ok(())
    }

    fn accepts(&self, len: usize) -> bool {
        len + self.deviation >= self.label_length && len <= self.input_len()
    }
}

/// Keeps copies with length in `[L - D, L + D]`, at most `max_copies` of
/// them, in input order.
pub fn filter_copies<'a, I>(copies: I, cfg: &EmbedConfig) -> Vec<&'a DnaSequence>
where
    I: IntoIterator<Item = &'a DnaSequence>,
{
    copies
        .into_iter()
        .filter(|c| cfg.accepts(c.len()))
        .take(cfg.max_copies)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmbeddedCluster {
    /// `label_length + deviation` rows of per-letter counts.
    pub counts: Vec<[u32; 4]>,
    pub t_used: usize,
}

impl EmbeddedCluster {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("position,A,C,G,T\n");
        for (i, r) in self.counts.iter().enumerate() {
            out.push_str(&format!("{i},{},{},{},{}\n", r[0], r[1], r[2], r[3]));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Sums the one-hot encodings of already filtered copies. Copies longer
/// than the padded length are an error.
pub fn embed_cluster<'a, I>(copies: I, cfg: &EmbedConfig) -> Result<EmbeddedCluster>
where
    I: IntoIterator<Item = &'a DnaSequence>,
{
    let rows = cfg.input_len();
    let mut counts = vec![[0u32; 4]; rows];
    let mut t_used = 0;
    for copy in copies {
        if copy.len() > rows {
            return Err(Error::TooLong {
                len: copy.len(),
                capacity: rows,
            });
        }
        for (row, &c) in counts.iter_mut().zip(copy.codes()) {
            row[c as usize] += 1;
        }
        t_used += 1;
    }
    Ok(EmbeddedCluster { counts, t_used })
}

/// Filters and embeds one raw read list.
pub fn embed_reads<'a, I>(reads: I, cfg: &EmbedConfig) -> EmbeddedCluster
where
    I: IntoIterator<Item = &'a DnaSequence>,
{
    embed_cluster(filter_copies(reads, cfg), cfg).expect("filtered copies fit the padded length")
}

/// Stacked embedded clusters, row-major `batch × rows × 4`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedBatch {
    pub batch: usize,
    pub rows: usize,
    pub counts: Vec<f32>,
    pub t_used: Vec<usize>,
}

impl EmbeddedBatch {
    pub fn from_clusters(clusters: &[EmbeddedCluster], rows: usize) -> Self {
        let mut counts = Vec::with_capacity(clusters.len() * rows * 4);
        for c in clusters {
            assert_eq!(c.counts.len(), rows, "embedded cluster has wrong row count");
            counts.extend(c.counts.iter().flatten().map(|&v| v as f32));
        }
        Self {
            batch: clusters.len(),
            rows,
            counts,
            t_used: clusters.iter().map(|c| c.t_used).collect(),
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.batch, self.rows, 4]
    }

    pub fn cluster(&self, b: usize) -> &[f32] {
        &self.counts[b * self.rows * 4..(b + 1) * self.rows * 4]
    }
}

/// Embeds each filtered copy list and stacks the results in order.
pub fn embed_batch(clusters: &[Vec<&DnaSequence>], cfg: &EmbedConfig) -> Result<EmbeddedBatch> {
    let embedded = clusters
        .iter()
        .map(|c| embed_cluster(c.iter().copied(), cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(EmbeddedBatch::from_clusters(&embedded, cfg.input_len()))
}
