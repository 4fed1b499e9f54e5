//! Nucleotide sequences, one-hot encoding and the two distance metrics used
//! for evaluation.
//!
//! Symbols are stored as codes `0..4` in the fixed column order
//! `A=0, C=1, G=2, T=3`; the same order is used by one-hot rows, embedded
//! count matrices and model outputs.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const ALPHABET: [u8; 4] = *b"ACGT";

#[inline]
pub fn code_of(byte: u8) -> Option<u8> {
    match byte {
        b'A' | b'a' => Some(0),
        b'C' | b'c' => Some(1),
        b'G' | b'g' => Some(2),
        b'T' | b't' => Some(3),
        _ => None,
    }
}

#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DnaSequence(Vec<u8>);

impl DnaSequence {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    /// Builds a sequence from symbol codes. Panics if a code is not in `0..4`.
    pub fn from_codes(codes: Vec<u8>) -> Self {
        assert!(codes.iter().all(|&c| c < 4), "symbol code out of range");
        Self(codes)
    }

    pub fn codes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, code: u8) {
        debug_assert!(code < 4);
        self.0.push(code);
    }

    pub fn prefix(&self, len: usize) -> &[u8] {
        &self.0[..len.min(self.0.len())]
    }

    pub fn to_letters(&self) -> Vec<u8> {
        self.0.iter().map(|&c| ALPHABET[c as usize]).collect()
    }
}

impl fmt::Display for DnaSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Letters are ASCII by construction.
        f.write_str(std::str::from_utf8(&self.to_letters()).unwrap())
    }
}

impl fmt::Debug for DnaSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DnaSequence({self})")
    }
}

impl std::str::FromStr for DnaSequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_sequence(s)
    }
}

/// Parses letters (either case) into a sequence. A single trailing newline
/// (`\n` or `\r\n`) is ignored.
pub fn parse_sequence(text: &str) -> Result<DnaSequence> {
    let text = text
        .strip_suffix('\n')
        .map(|t| t.strip_suffix('\r').unwrap_or(t))
        .unwrap_or(text);
    let mut codes = Vec::with_capacity(text.len());
    for (position, character) in text.chars().enumerate() {
        let code = u8::try_from(character)
            .ok()
            .and_then(code_of)
            .ok_or(Error::InvalidSymbol { position, character })?;
        codes.push(code);
    }
    Ok(DnaSequence(codes))
}

/// `rows[i]` is the one-hot vector of symbol `i`, or all zeros past the end
/// of the sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OneHotMatrix {
    pub rows: Vec<[u32; 4]>,
}

impl OneHotMatrix {
    /// Per-row argmax over the first `len` rows, ties toward the lower column.
    pub fn argmax(&self, len: usize) -> DnaSequence {
        DnaSequence(self.rows[..len].iter().map(argmax4).collect())
    }
}

pub(crate) fn argmax4<T: PartialOrd + Copy>(row: &[T; 4]) -> u8 {
    let mut best = 0;
    for j in 1..4 {
        if row[j] > row[best] {
            best = j;
        }
    }
    best as u8
}

pub fn one_hot(seq: &DnaSequence, padded_len: usize) -> Result<OneHotMatrix> {
    if seq.len() > padded_len {
        return Err(Error::TooLong {
            len: seq.len(),
            capacity: padded_len,
        });
    }
    let mut rows = vec![[0u32; 4]; padded_len];
    for (row, &c) in rows.iter_mut().zip(seq.codes()) {
        row[c as usize] = 1;
    }
    Ok(OneHotMatrix { rows })
}

pub fn hamming_distance(a: &DnaSequence, b: &DnaSequence) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.codes().iter().zip(b.codes()).filter(|(x, y)| x != y).count())
}

/// Unit-cost Levenshtein distance.
pub fn edit_distance(a: &DnaSequence, b: &DnaSequence) -> usize {
    let (a, b) = (a.codes(), b.codes());
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// One column of an alignment of a reference (design) against a read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EditOp {
    Match(u8),
    Substitution {
        from: u8,
        to: u8,
    },
    /// Reference symbol missing from the read.
    Deletion(u8),
    /// Extra read symbol.
    Insertion(u8),
}

/// Minimal-cost alignment of `reference` against `read`, in left-to-right
/// order. On the backtrace a diagonal step is preferred over a deletion,
/// and a deletion over an insertion.
pub fn align(reference: &DnaSequence, read: &DnaSequence) -> Vec<EditOp> {
    let (r, q) = (reference.codes(), read.codes());
    let (n, m) = (r.len(), q.len());
    let w = m + 1;
    let mut dp = vec![0u32; (n + 1) * w];
    for j in 0..=m {
        dp[j] = j as u32;
    }
    for i in 1..=n {
        dp[i * w] = i as u32;
        for j in 1..=m {
            let diag = dp[(i - 1) * w + j - 1] + u32::from(r[i - 1] != q[j - 1]);
            let up = dp[(i - 1) * w + j] + 1;
            let left = dp[i * w + j - 1] + 1;
            dp[i * w + j] = diag.min(up).min(left);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let same = r[i - 1] == q[j - 1];
            if dp[(i - 1) * w + j - 1] + u32::from(!same) == here {
                ops.push(if same {
                    EditOp::Match(r[i - 1])
                } else {
                    EditOp::Substitution {
                        from: r[i - 1],
                        to: q[j - 1],
                    }
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[(i - 1) * w + j] + 1 == here {
            ops.push(EditOp::Deletion(r[i - 1]));
            i -= 1;
        } else {
            ops.push(EditOp::Insertion(q[j - 1]));
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

/// Reads one sequence per line. Empty lines are empty sequences.
pub fn read_sequences(path: &Path) -> Result<Vec<DnaSequence>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let seq = parse_sequence(line.trim_end_matches('\r')).map_err(|e| Error::Parse {
            what: format!("{}:{}", path.display(), lineno + 1),
            reason: e.to_string(),
        })?;
        out.push(seq);
    }
    Ok(out)
}

pub fn write_sequences<'a>(path: &Path, seqs: impl IntoIterator<Item = &'a DnaSequence>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in seqs {
        w.write_all(&s.to_letters())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
