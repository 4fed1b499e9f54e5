//! Reconstruction accounting: plurality-vote baseline, success rates with
//! missing/empty/wrong breakdown, distance histograms and the split-half
//! fitting protocol.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{fit_error_model, Corpus, ErrorModel};
use crate::embed::EmbeddedCluster;
use crate::error::{Error, Result};
use crate::seq::{argmax4, edit_distance, hamming_distance, DnaSequence};

/// Per-position argmax of the vote counts over the first `label_length`
/// rows; ties (including all-zero rows) go to the lowest letter.
pub fn plurality_vote(embedded: &EmbeddedCluster, label_length: usize) -> DnaSequence {
    let mut codes: Vec<u8> = embedded.counts.iter().take(label_length).map(argmax4).collect();
    codes.resize(label_length, 0);
    DnaSequence::from_codes(codes)
}

/// What happened to one design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// No read was ever produced for the design.
    Missing,
    /// Reads existed, but none reached the reconstructor (lost by
    /// clustering or by the length filter).
    Empty,
    Wrong,
    Correct,
}

/// Inputs for one design: its reconstruction (if any), how many reads the
/// truth says were sampled, and how many copies were actually used.
#[derive(Clone, Debug)]
pub struct ClusterResult {
    pub cluster: usize,
    pub prediction: DnaSequence,
    pub copies_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tested_clusters: usize,
    pub missing_clusters: usize,
    pub empty_clusters_wrong_pseudo: usize,
    pub wrong_predictions: usize,
    pub correct_predictions: usize,
    /// `correct / (tested - missing)`.
    pub success_rate_existing: f64,
    /// `correct / tested`.
    pub total_success_rate: f64,
    /// `1 - success_rate_existing`.
    pub failure_rate: f64,
}

/// Full evaluation: report, per-design outcome and the wrong
/// (prediction, design) pairs for the distance histograms.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub outcomes: Vec<Outcome>,
    pub wrong_pairs: Vec<(DnaSequence, DnaSequence)>,
}

/// Scores predictions against `designs`. `reads_per_design[i]` is the
/// number of reads truly sampled from design `i`. A design with reads but
/// no usable copies (or no prediction) counts as empty.
pub fn evaluate(results: &[ClusterResult], designs: &[DnaSequence], reads_per_design: &[usize]) -> Result<Evaluation> {
    if designs.is_empty() {
        return Err(Error::NoClustersTested);
    }
    if reads_per_design.len() != designs.len() {
        return Err(Error::LengthMismatch {
            left: reads_per_design.len(),
            right: designs.len(),
        });
    }
    let mut by_cluster: Vec<Option<&ClusterResult>> = vec![None; designs.len()];
    for r in results {
        *by_cluster
            .get_mut(r.cluster)
            .ok_or(Error::UnknownClusterId(r.cluster))? = Some(r);
    }
    let outcomes: Vec<Outcome> = by_cluster
        .iter()
        .enumerate()
        .map(|(i, r)| match r {
            _ if reads_per_design[i] == 0 => Outcome::Missing,
            Some(r) if r.copies_used > 0 => {
                if r.prediction == designs[i] {
                    Outcome::Correct
                } else {
                    Outcome::Wrong
                }
            }
            _ => Outcome::Empty,
        })
        .collect();
    let count = |o: Outcome| outcomes.iter().filter(|&&x| x == o).count();
    let tested = designs.len();
    let missing = count(Outcome::Missing);
    let correct = count(Outcome::Correct);
    let existing = tested - missing;
    let success_rate_existing = if existing == 0 {
        0.0
    } else {
        correct as f64 / existing as f64
    };
    let wrong_pairs = outcomes
        .iter()
        .enumerate()
        .filter(|(_, &o)| o == Outcome::Wrong)
        .map(|(i, _)| (by_cluster[i].unwrap().prediction.clone(), designs[i].clone()))
        .collect();
    Ok(Evaluation {
        report: EvalReport {
            tested_clusters: tested,
            missing_clusters: missing,
            empty_clusters_wrong_pseudo: count(Outcome::Empty),
            wrong_predictions: count(Outcome::Wrong),
            correct_predictions: correct,
            success_rate_existing,
            total_success_rate: correct as f64 / tested as f64,
            failure_rate: 1.0 - success_rate_existing,
        },
        outcomes,
        wrong_pairs,
    })
}

/// Distances of one wrong prediction against its design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairDistance {
    /// `None` when the lengths differ.
    pub hamming: Option<usize>,
    pub edit: usize,
    /// `hamming - edit`, never negative.
    pub diff: Option<usize>,
}

impl PairDistance {
    pub fn length_mismatch(&self) -> bool {
        self.hamming.is_none()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DistanceHistogram {
    pub pairs: Vec<PairDistance>,
    /// Unit-width bins indexed by distance.
    pub hamming_count: Vec<usize>,
    pub edit_count: Vec<usize>,
    pub diff_count: Vec<usize>,
}

impl DistanceHistogram {
    pub fn length_mismatches(&self) -> usize {
        self.pairs.iter().filter(|p| p.length_mismatch()).count()
    }

    /// Equal-length pairs whose edit distance exceeds the Hamming distance.
    /// Always zero; exposed so reports can assert it.
    pub fn invariant_violations(&self) -> usize {
        self.pairs
            .iter()
            .filter(|p| p.hamming.is_some_and(|h| p.edit > h))
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("distance,hamming_count,edit_count,diff_count,hamming_cum,edit_cum\n");
        let bins = self
            .hamming_count
            .len()
            .max(self.edit_count.len())
            .max(self.diff_count.len());
        let at = |v: &[usize], i: usize| v.get(i).copied().unwrap_or(0);
        let (mut hc, mut ec) = (0, 0);
        for i in 0..bins {
            let (h, e, d) = (
                at(&self.hamming_count, i),
                at(&self.edit_count, i),
                at(&self.diff_count, i),
            );
            hc += h;
            ec += e;
            writeln!(out, "{i},{h},{e},{d},{hc},{ec}").unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn bump(bins: &mut Vec<usize>, i: usize) {
    if bins.len() <= i {
        bins.resize(i + 1, 0);
    }
    bins[i] += 1;
}

pub fn distance_histograms(wrong_pairs: &[(DnaSequence, DnaSequence)]) -> DistanceHistogram {
    let pairs: Vec<PairDistance> = wrong_pairs
        .par_iter()
        .map(|(pred, design)| {
            let edit = edit_distance(pred, design);
            let hamming = hamming_distance(pred, design).ok();
            let diff = hamming.map(|h| {
                assert!(h >= edit, "edit distance exceeds Hamming distance");
                h - edit
            });
            PairDistance { hamming, edit, diff }
        })
        .collect();
    let mut h = DistanceHistogram::default();
    for p in &pairs {
        if let Some(x) = p.hamming {
            bump(&mut h.hamming_count, x);
        }
        bump(&mut h.edit_count, p.edit);
        if let Some(x) = p.diff {
            bump(&mut h.diff_count, x);
        }
    }
    h.pairs = pairs;
    h
}

/// Half of a corpus with reads and truth renumbered to the kept designs.
#[derive(Clone, Debug, PartialEq)]
pub struct SubCorpus {
    pub designs: Vec<DnaSequence>,
    pub reads: Vec<DnaSequence>,
    pub truth: Vec<usize>,
    /// Index of each kept design in the original corpus.
    pub original_index: Vec<usize>,
}

impl SubCorpus {
    pub fn reads_per_design(&self) -> Vec<usize> {
        let mut counts = vec![0; self.designs.len()];
        for &c in &self.truth {
            counts[c] += 1;
        }
        counts
    }
}

fn sub_corpus(corpus: &Corpus, keep: &[usize]) -> SubCorpus {
    let mut new_index = vec![usize::MAX; corpus.designs.len()];
    for (k, &i) in keep.iter().enumerate() {
        new_index[i] = k;
    }
    let mut reads = Vec::new();
    let mut truth = Vec::new();
    for (r, &c) in corpus.reads.iter().zip(&corpus.truth) {
        if new_index[c] != usize::MAX {
            reads.push(r.clone());
            truth.push(new_index[c]);
        }
    }
    SubCorpus {
        designs: keep.iter().map(|&i| corpus.designs[i].clone()).collect(),
        reads,
        truth,
        original_index: keep.to_vec(),
    }
}

/// Randomly splits the designs in half, fits the channel on half A's
/// (design, read) pairs and returns the model with untouched half B.
///
/// Copy-count bounds of the fitted model are the observed per-design read
/// count range of half A; other population fields come from `population`.
pub fn split_half_protocol<R: Rng + ?Sized>(
    corpus: &Corpus,
    population: &ErrorModel,
    rng: &mut R,
) -> Result<(ErrorModel, SubCorpus)> {
    if corpus.designs.is_empty() {
        return Err(Error::EmptyInput("corpus has no designs"));
    }
    let mut order: Vec<usize> = (0..corpus.designs.len()).collect();
    order.shuffle(rng);
    let half = order.len().div_ceil(2);
    let (mut a, mut b) = (order[..half].to_vec(), order[half..].to_vec());
    a.sort_unstable();
    b.sort_unstable();
    let half_a = sub_corpus(corpus, &a);
    let pairs: Vec<(DnaSequence, DnaSequence)> = half_a
        .reads
        .iter()
        .zip(&half_a.truth)
        .map(|(r, &c)| (half_a.designs[c].clone(), r.clone()))
        .collect();
    let counts = half_a.reads_per_design();
    let mut pop = population.clone();
    pop.copies_min = counts.iter().copied().min().unwrap_or(0);
    pop.copies_max = counts.iter().copied().max().unwrap_or(0).max(pop.copies_min);
    pop.label_length = corpus.designs[0].len();
    let model = fit_error_model(&pairs, &pop)?;
    Ok((model, sub_corpus(corpus, &b)))
}

/// Model and baseline reports side by side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub model: Option<EvalReport>,
    pub baseline: Option<EvalReport>,
    pub length_mismatches: usize,
    pub hamming_edit_violations: usize,
}
