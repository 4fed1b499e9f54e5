//! Synthetic data generator: an i.i.d. insertion/deletion/substitution
//! channel with per-cluster rate deviation, cluster and batch sampling, and
//! maximum-likelihood fitting of the channel from aligned (design, read)
//! pairs.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::seq::{self, align, DnaSequence, EditOp};

/// Channel statistics and population laws for one synthesis/sequencing
/// process. Field names are the on-disk JSON schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorModel {
    /// `sub_matrix[i][j]` (i != j): probability that a surviving symbol `i`
    /// is read as `j`. Diagonal entries are ignored.
    pub sub_matrix: [[f64; 4]; 4],
    pub del_rate: f64,
    /// Probability of an insertion at each gap, both ends included.
    pub ins_rate: f64,
    pub ins_dist: [f64; 4],
    pub deviation_range: [f64; 2],
    pub copies_min: usize,
    pub copies_max: usize,
    /// Mean number of false copies per cluster.
    pub false_copy_rate: f64,
    pub label_length: usize,
}

impl ErrorModel {
    /// Uniform substitutions (`p_sub / 3` to each other letter), uniform
    /// inserted letters, deviation `[0.5, 1.5]`, 1..=32 copies, no false copies.
    pub fn uniform(p_sub: f64, p_del: f64, p_ins: f64, label_length: usize) -> Self {
        let off = p_sub / 3.0;
        let mut sub_matrix = [[off; 4]; 4];
        for (i, row) in sub_matrix.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        Self {
            sub_matrix,
            del_rate: p_del,
            ins_rate: p_ins,
            ins_dist: [0.25; 4],
            deviation_range: [0.5, 1.5],
            copies_min: 1,
            copies_max: 32,
            false_copy_rate: 0.0,
            label_length,
        }
    }

    pub fn noiseless(label_length: usize) -> Self {
        Self::uniform(0.0, 0.0, 0.0, label_length)
    }

    /// Total substitution probability of a surviving symbol, averaged over
    /// the four letters.
    pub fn mean_sub_rate(&self) -> f64 {
        (0..4).map(|i| off_diagonal_sum(&self.sub_matrix[i], i)).sum::<f64>() / 4.0
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |field: &str, v: f64| {
            if v.is_finite() && (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::schema(field, "out of [0,1]"))
            }
        };
        for (i, row) in self.sub_matrix.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if i != j {
                    unit("sub_matrix", v)?;
                }
            }
            if off_diagonal_sum(row, i) > 1.0 + 1e-12 {
                return Err(Error::schema(
                    "sub_matrix",
                    format!("row {i} off-diagonal sum exceeds 1"),
                ));
            }
        }
        unit("del_rate", self.del_rate)?;
        unit("ins_rate", self.ins_rate)?;
        for &v in &self.ins_dist {
            unit("ins_dist", v)?;
        }
        let total: f64 = self.ins_dist.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::schema("ins_dist", format!("sums to {total}, not 1")));
        }
        let [lo, hi] = self.deviation_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
            return Err(Error::schema("deviation_range", "need 0 < lo <= hi"));
        }
        if self.copies_min < 1 || self.copies_min > self.copies_max {
            return Err(Error::schema("copies_min", "need 1 <= copies_min <= copies_max"));
        }
        if !(self.false_copy_rate.is_finite() && self.false_copy_rate >= 0.0) {
            return Err(Error::schema("false_copy_rate", "must be >= 0"));
        }
        if self.label_length == 0 {
            return Err(Error::schema("label_length", "must be >= 1"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ErrorModel = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "error model".into(),
            reason: e.to_string(),
        })?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("error model serializes")
    }
}

fn off_diagonal_sum(row: &[f64; 4], i: usize) -> f64 {
    row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum()
}

pub fn load_error_model(path: &Path) -> Result<ErrorModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ErrorModel::from_json(&text)
}

/// Channel rates for one cluster after the deviation factor is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveRates {
    pub sub_matrix: [[f64; 4]; 4],
    pub del_rate: f64,
    pub ins_rate: f64,
    pub ins_dist: [f64; 4],
}

impl EffectiveRates {
    /// Scales every error rate by `factor` and clamps to `[0, 1]`. A
    /// substitution row whose scaled sum exceeds 1 is rescaled to sum to 1.
    pub fn scaled(model: &ErrorModel, factor: f64) -> Self {
        let mut sub_matrix = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    sub_matrix[i][j] = (model.sub_matrix[i][j] * factor).clamp(0.0, 1.0);
                }
            }
            let total = off_diagonal_sum(&sub_matrix[i], i);
            if total > 1.0 {
                for v in sub_matrix[i].iter_mut() {
                    *v /= total;
                }
            }
        }
        Self {
            sub_matrix,
            del_rate: (model.del_rate * factor).clamp(0.0, 1.0),
            ins_rate: (model.ins_rate * factor).clamp(0.0, 1.0),
            ins_dist: model.ins_dist,
        }
    }
}

pub fn perturb_rates<R: Rng + ?Sized>(model: &ErrorModel, rng: &mut R) -> EffectiveRates {
    let [lo, hi] = model.deviation_range;
    let factor = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    EffectiveRates::scaled(model, factor)
}

pub fn draw_random_sequence<R: Rng + ?Sized>(rng: &mut R, length: usize) -> DnaSequence {
    DnaSequence::from_codes((0..length).map(|_| rng.random_range(0..4u8)).collect())
}

/// Inner error-correcting code applied to a payload before it enters the
/// channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EccScheme {
    #[default]
    Identity,
    /// Appends the last `k` symbols twice more.
    Repeat3Tail(usize),
}

impl EccScheme {
    pub fn overhead(&self) -> usize {
        match *self {
            EccScheme::Identity => 0,
            EccScheme::Repeat3Tail(k) => 2 * k,
        }
    }

    /// Payload length that encodes to exactly `encoded_len` symbols.
    pub fn payload_len(&self, encoded_len: usize) -> Result<usize> {
        let payload = encoded_len
            .checked_sub(self.overhead())
            .ok_or_else(|| Error::EccPrecondition {
                scheme: self.to_string(),
                len: encoded_len,
            })?;
        if let EccScheme::Repeat3Tail(k) = *self {
            if k > payload {
                return Err(Error::EccPrecondition {
                    scheme: self.to_string(),
                    len: encoded_len,
                });
            }
        }
        Ok(payload)
    }
}

impl fmt::Display for EccScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EccScheme::Identity => f.write_str("identity"),
            EccScheme::Repeat3Tail(k) => write!(f, "repeat3-tail({k})"),
        }
    }
}

impl FromStr for EccScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "identity" {
            return Ok(EccScheme::Identity);
        }
        s.strip_prefix("repeat3-tail(")
            .and_then(|rest| rest.strip_suffix(')'))
            .and_then(|k| k.trim().parse().ok())
            .map(EccScheme::Repeat3Tail)
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

impl TryFrom<String> for EccScheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EccScheme> for String {
    fn from(s: EccScheme) -> String {
        s.to_string()
    }
}

pub fn encode_ecc(seq: &DnaSequence, scheme: EccScheme) -> Result<DnaSequence> {
    match scheme {
        EccScheme::Identity => Ok(seq.clone()),
        EccScheme::Repeat3Tail(k) => {
            if k > seq.len() {
                return Err(Error::EccPrecondition {
                    scheme: scheme.to_string(),
                    len: seq.len(),
                });
            }
            let tail = &seq.codes()[seq.len() - k..];
            let mut codes = seq.codes().to_vec();
            codes.extend_from_slice(tail);
            codes.extend_from_slice(tail);
            Ok(DnaSequence::from_codes(codes))
        }
    }
}

/// Errors injected into one copy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTally {
    pub substitutions: u32,
    pub deletions: u32,
    pub insertions: u32,
}

impl ErrorTally {
    pub fn has_indel(&self) -> bool {
        self.deletions > 0 || self.insertions > 0
    }
}

fn pick<R: Rng + ?Sized>(rng: &mut R, weights: &[f64; 4]) -> u8 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return j as u8;
        }
    }
    // Rounding left a sliver above the cumulative sum; take the last
    // letter with positive weight.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(3) as u8
}

/// Single left-to-right pass over `seq`. Before every symbol and after the
/// last one an insertion happens with probability `ins_rate`; each symbol
/// is then deleted with probability `del_rate`, otherwise substituted
/// according to its `sub_matrix` row, otherwise copied.
pub fn inject_errors_traced<R: Rng + ?Sized>(
    seq: &DnaSequence,
    rates: &EffectiveRates,
    rng: &mut R,
) -> (DnaSequence, ErrorTally) {
    let mut out = DnaSequence::new();
    let mut tally = ErrorTally::default();
    let codes = seq.codes();
    for gap in 0..=codes.len() {
        if rates.ins_rate > 0.0 && rng.random::<f64>() < rates.ins_rate {
            out.push(pick(rng, &rates.ins_dist));
            tally.insertions += 1;
        }
        let Some(&c) = codes.get(gap) else { break };
        if rates.del_rate > 0.0 && rng.random::<f64>() < rates.del_rate {
            tally.deletions += 1;
            continue;
        }
        let row = &rates.sub_matrix[c as usize];
        let mut u: f64 = rng.random();
        let mut emitted = c;
        for (j, &p) in row.iter().enumerate() {
            if j == c as usize {
                continue;
            }
            if u < p {
                emitted = j as u8;
                tally.substitutions += 1;
                break;
            }
            u -= p;
        }
        out.push(emitted);
    }
    (out, tally)
}

pub fn inject_errors<R: Rng + ?Sized>(seq: &DnaSequence, rates: &EffectiveRates, rng: &mut R) -> DnaSequence {
    inject_errors_traced(seq, rates, rng).0
}

/// One designed strand with its noisy copies. False copies are noisy
/// copies of other strands that ended up in this cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub design: DnaSequence,
    pub copies: Vec<DnaSequence>,
    pub false_copies: Vec<DnaSequence>,
}

impl Cluster {
    /// True and false copies in a random order, as a clustering step would
    /// deliver them.
    pub fn shuffled_reads<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<DnaSequence> {
        let mut reads: Vec<DnaSequence> = self.copies.iter().chain(&self.false_copies).cloned().collect();
        reads.shuffle(rng);
        reads
    }
}

/// Cluster generator: channel model, optional inner code and optional pool
/// of designs to draw labels and false copies from.
#[derive(Clone, Copy, Debug)]
pub struct Sdg<'a> {
    pub model: &'a ErrorModel,
    pub ecc: EccScheme,
    pub design_pool: Option<&'a [DnaSequence]>,
}

impl<'a> Sdg<'a> {
    pub fn new(model: &'a ErrorModel) -> Self {
        Self {
            model,
            ecc: EccScheme::Identity,
            design_pool: None,
        }
    }

    fn fresh_design<R: Rng + ?Sized>(&self, rng: &mut R) -> DnaSequence {
        let payload_len = self
            .ecc
            .payload_len(self.model.label_length)
            .expect("ECC scheme checked against label length");
        let payload = draw_random_sequence(rng, payload_len);
        encode_ecc(&payload, self.ecc).expect("payload long enough for ECC")
    }

    pub fn cluster<R: Rng + ?Sized>(&self, rng: &mut R) -> Cluster {
        let (design, design_index) = match self.design_pool {
            Some(pool) if !pool.is_empty() => {
                let i = rng.random_range(0..pool.len());
                (pool[i].clone(), Some(i))
            }
            _ => (self.fresh_design(rng), None),
        };
        let model = self.model;
        let rates = perturb_rates(model, rng);
        let t = rng.random_range(model.copies_min..=model.copies_max);
        let copies = (0..t).map(|_| inject_errors(&design, &rates, rng)).collect();

        let n_false = if model.false_copy_rate > 0.0 {
            Poisson::new(model.false_copy_rate).expect("validated rate").sample(rng) as usize
        } else {
            0
        };
        let mut false_copies = Vec::with_capacity(n_false);
        for _ in 0..n_false {
            let source = match (self.design_pool, design_index) {
                (Some(pool), Some(own)) if pool.len() >= 2 => {
                    // Uniform over the other pool entries.
                    let mut j = rng.random_range(0..pool.len() - 1);
                    if j >= own {
                        j += 1;
                    }
                    pool[j].clone()
                }
                _ => self.fresh_design(rng),
            };
            false_copies.push(inject_errors(&source, &rates, rng));
        }
        Cluster {
            design,
            copies,
            false_copies,
        }
    }

    /// `size` independent clusters. Cluster `i` draws from its own stream
    /// derived from one seed taken from `rng`, so generation parallelizes
    /// without changing the output.
    pub fn batch<R: Rng + ?Sized>(&self, rng: &mut R, size: usize) -> Vec<Cluster> {
        let batch_seed: u64 = rng.random();
        (0..size)
            .into_par_iter()
            .map(|i| self.cluster(&mut rng::stream(batch_seed, "cluster", i as u64)))
            .collect()
    }
}

pub fn generate_cluster<R: Rng + ?Sized>(
    model: &ErrorModel,
    design_pool: Option<&[DnaSequence]>,
    rng: &mut R,
) -> Cluster {
    Sdg {
        design_pool,
        ..Sdg::new(model)
    }
    .cluster(rng)
}

pub fn generate_batch<R: Rng + ?Sized>(model: &ErrorModel, rng: &mut R, batch_size: usize) -> Vec<Cluster> {
    Sdg::new(model).batch(rng, batch_size)
}

/// Alignment counts accumulated over (design, read) pairs. Counts merge
/// by addition, so fitting is an order-independent map-reduce.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FitCounts {
    /// Design symbols by letter.
    pub symbols: [u64; 4],
    pub substitutions: [[u64; 4]; 4],
    pub deletions: [u64; 4],
    pub insertions: [u64; 4],
    /// Insertion opportunities: design length + 1 per pair.
    pub gaps: u64,
}

impl FitCounts {
    pub fn add_pair(&mut self, design: &DnaSequence, read: &DnaSequence) {
        self.gaps += design.len() as u64 + 1;
        for &c in design.codes() {
            self.symbols[c as usize] += 1;
        }
        for op in align(design, read) {
            match op {
                EditOp::Match(_) => {}
                EditOp::Substitution { from, to } => self.substitutions[from as usize][to as usize] += 1,
                EditOp::Deletion(c) => self.deletions[c as usize] += 1,
                EditOp::Insertion(c) => self.insertions[c as usize] += 1,
            }
        }
    }

    pub fn merge(mut self, other: &FitCounts) -> FitCounts {
        for i in 0..4 {
            self.symbols[i] += other.symbols[i];
            self.deletions[i] += other.deletions[i];
            self.insertions[i] += other.insertions[i];
            for j in 0..4 {
                self.substitutions[i][j] += other.substitutions[i][j];
            }
        }
        self.gaps += other.gaps;
        self
    }

    /// Maximum-likelihood rates. Population fields (copies, false copies,
    /// deviation) come from `population`.
    pub fn to_model(&self, population: &ErrorModel) -> ErrorModel {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let mut sub_matrix = [[0.0; 4]; 4];
        for i in 0..4 {
            let survived = self.symbols[i] - self.deletions[i];
            for j in 0..4 {
                if i != j {
                    sub_matrix[i][j] = ratio(self.substitutions[i][j], survived);
                }
            }
        }
        let n_ins: u64 = self.insertions.iter().sum();
        let ins_dist = if n_ins == 0 {
            [0.25; 4]
        } else {
            self.insertions.map(|c| c as f64 / n_ins as f64)
        };
        ErrorModel {
            sub_matrix,
            del_rate: ratio(self.deletions.iter().sum(), self.symbols.iter().sum()),
            ins_rate: ratio(n_ins, self.gaps),
            ins_dist,
            ..population.clone()
        }
    }
}

/// Fits channel rates to (design, read) pairs. The population laws of the
/// result are copied from `population`.
pub fn fit_error_model(pairs: &[(DnaSequence, DnaSequence)], population: &ErrorModel) -> Result<ErrorModel> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no (design, read) pairs to fit"));
    }
    let counts = pairs
        .par_iter()
        .fold(FitCounts::default, |mut acc, (design, read)| {
            acc.add_pair(design, read);
            acc
        })
        .reduce(FitCounts::default, |a, b| a.merge(&b));
    Ok(counts.to_model(population))
}

/// A generated sequencing corpus: designs, shuffled reads and the true
/// source of every read.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub designs: Vec<DnaSequence>,
    pub reads: Vec<DnaSequence>,
    /// `truth[r]` is the design index read `r` was copied from.
    pub truth: Vec<usize>,
    /// Errors injected into each read (same order as `reads`).
    pub tallies: Vec<ErrorTally>,
}

impl Corpus {
    /// Number of reads copied from each design.
    pub fn reads_per_design(&self) -> Vec<usize> {
        let mut counts = vec![0; self.designs.len()];
        for &c in &self.truth {
            counts[c] += 1;
        }
        counts
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        seq::write_sequences(&dir.join(DESIGNS_FILE), &self.designs)?;
        seq::write_sequences(&dir.join(READS_FILE), &self.reads)?;
        write_truth(&dir.join(TRUTH_FILE), &self.truth)
    }
}

pub const DESIGNS_FILE: &str = "designs.txt";
pub const READS_FILE: &str = "reads.txt";
pub const TRUTH_FILE: &str = "truth.tsv";

/// Writes `read_index \t true_cluster_index` rows.
pub fn write_truth(path: &Path, truth: &[usize]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (r, c) in truth.iter().enumerate() {
        writeln!(w, "{r}\t{c}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_truth(path: &Path) -> Result<Vec<usize>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut truth = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = |reason: &str| Error::Parse {
            what: format!("{}:{}", path.display(), lineno + 1),
            reason: reason.to_string(),
        };
        let (r, c) = line.split_once('\t').ok_or_else(|| bad("expected two columns"))?;
        let r: usize = r.parse().map_err(|_| bad("bad read index"))?;
        let c: usize = c.trim_end().parse().map_err(|_| bad("bad cluster index"))?;
        if r != truth.len() {
            return Err(bad("read indices must be consecutive from 0"));
        }
        truth.push(c);
    }
    Ok(truth)
}

/// Draws `n_designs` random designs of `model.label_length` symbols. With
/// `unique_prefix`, designs whose first `L` symbols repeat an earlier
/// design are redrawn so the set is addressable by prefix.
pub fn draw_designs<R: Rng + ?Sized>(
    rng: &mut R,
    n_designs: usize,
    length: usize,
    unique_prefix: Option<usize>,
) -> Result<Vec<DnaSequence>> {
    let mut designs = Vec::with_capacity(n_designs);
    let Some(prefix_len) = unique_prefix else {
        designs.extend((0..n_designs).map(|_| draw_random_sequence(rng, length)));
        return Ok(designs);
    };
    if prefix_len > length {
        return Err(Error::InvalidConfig(format!(
            "prefix length {prefix_len} exceeds design length {length}"
        )));
    }
    if (prefix_len as u32) < 32 && (n_designs as u128) > 4u128.pow(prefix_len as u32) {
        return Err(Error::InvalidConfig(format!(
            "{n_designs} designs cannot have distinct prefixes of length {prefix_len}"
        )));
    }
    let mut seen = std::collections::HashSet::with_capacity(n_designs);
    while designs.len() < n_designs {
        let d = draw_random_sequence(rng, length);
        if seen.insert(d.prefix(prefix_len).to_vec()) {
            designs.push(d);
        }
    }
    Ok(designs)
}

/// Generates a corpus from the channel: designs (distinct prefixes of
/// `prefix_len` symbols when given), then `Uniform{copies_min..copies_max}`
/// true copies of each design, then one shuffle of all reads. False copies
/// are not produced here; misplaced reads arise from pseudo-clustering.
pub fn generate_corpus(model: &ErrorModel, n_designs: usize, prefix_len: Option<usize>, seed: u64) -> Result<Corpus> {
    model.validate()?;
    let designs = draw_designs(
        &mut rng::stream(seed, "designs", 0),
        n_designs,
        model.label_length,
        prefix_len,
    )?;
    let per_design: Vec<Vec<(DnaSequence, ErrorTally)>> = designs
        .par_iter()
        .enumerate()
        .map(|(i, design)| {
            let mut rng = rng::stream(seed, "copies", i as u64);
            let rates = perturb_rates(model, &mut rng);
            let t = rng.random_range(model.copies_min..=model.copies_max);
            (0..t).map(|_| inject_errors_traced(design, &rates, &mut rng)).collect()
        })
        .collect();

    let mut order: Vec<(usize, DnaSequence, ErrorTally)> = per_design
        .into_iter()
        .enumerate()
        .flat_map(|(i, copies)| copies.into_iter().map(move |(s, t)| (i, s, t)))
        .collect();
    order.shuffle(&mut rng::stream(seed, "shuffle", 0));

    let mut corpus = Corpus {
        designs,
        reads: Vec::with_capacity(order.len()),
        truth: Vec::with_capacity(order.len()),
        tallies: Vec::with_capacity(order.len()),
    };
    for (i, s, t) in order {
        corpus.truth.push(i);
        corpus.reads.push(s);
        corpus.tallies.push(t);
    }
    Ok(corpus)
}
