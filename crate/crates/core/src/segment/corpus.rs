use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{encode_text, CandidateSequence};
use crate::error::{contract, Error, Result};
use crate::TokenId;

/// One line of a segmentation corpus. Offsets are byte offsets into `text`;
/// `candidate_offsets` lists C_0..C_n and `gold_cuts` the accepted internal
/// candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationExample {
    pub text: String,
    pub candidate_offsets: Vec<usize>,
    pub gold_cuts: Vec<usize>,
    #[serde(default)]
    pub category: String,
}

impl SegmentationExample {
    pub fn candidate_sequence(&self, cut_token: TokenId) -> Result<CandidateSequence> {
        CandidateSequence::from_offsets(encode_text(&self.text), self.candidate_offsets.clone(), cut_token, 0)
    }

    /// Gold label per internal candidate.
    pub fn labels(&self) -> Result<Vec<bool>> {
        let n = self.candidate_offsets.len();
        if n < 2 {
            return Err(contract("an example needs at least C_0 and C_n"));
        }
        let internal = &self.candidate_offsets[1..n - 1];
        if let Some(g) = self.gold_cuts.iter().find(|g| internal.binary_search(g).is_err()) {
            return Err(contract(format!("gold cut {g} is not an internal candidate")));
        }
        Ok(internal.iter().map(|o| self.gold_cuts.contains(o)).collect())
    }

    /// Gold cuts ÷ internal candidates.
    pub fn cut_rate(&self) -> Result<f64> {
        let labels = self.labels()?;
        if labels.is_empty() {
            return Err(contract("cut rate undefined without internal candidates"));
        }
        Ok(labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64)
    }
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<SegmentationExample>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: SegmentationExample =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?;
        ex.labels()?;
        out.push(ex);
    }
    Ok(out)
}

pub fn save_jsonl(path: impl AsRef<Path>, corpus: &[SegmentationExample]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ex in corpus {
        serde_json::to_writer(&mut w, ex).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Boundary match counts, summed across examples for micro-averaged F1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BoundaryCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl BoundaryCounts {
    pub fn add(&mut self, other: BoundaryCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// 1.0 when there is nothing to predict and nothing was predicted.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

pub fn boundary_counts(predicted: &[usize], gold: &[usize]) -> BoundaryCounts {
    let tp = predicted.iter().filter(|p| gold.contains(p)).count();
    BoundaryCounts {
        tp,
        fp: predicted.len() - tp,
        fn_: gold.len() - tp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(internal: usize, gold: usize) -> SegmentationExample {
        let offsets: Vec<usize> = (0..internal + 2).collect();
        SegmentationExample {
            text: "x".repeat(internal + 1),
            gold_cuts: (1..=gold).collect(),
            candidate_offsets: offsets,
            category: String::new(),
        }
    }

    #[test]
    fn cut_rate_examples() {
        assert_eq!(ex(10, 0).cut_rate().unwrap(), 0.0);
        assert_eq!(ex(1000, 926).cut_rate().unwrap(), 0.926);
        assert_eq!(ex(7, 7).cut_rate().unwrap(), 1.0);
        assert!(ex(0, 0).cut_rate().is_err());
    }

    #[test]
    fn bad_gold_rejected() {
        let mut e = ex(3, 1);
        e.gold_cuts.push(0);
        assert!(e.labels().is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let corpus = vec![ex(3, 1), ex(5, 2)];
        save_jsonl(&path, &corpus).unwrap();
        assert_eq!(load_jsonl(&path).unwrap(), corpus);
    }

    #[test]
    fn f1_counts() {
        let c = boundary_counts(&[2, 5, 9], &[5, 9, 12]);
        assert_eq!(c, BoundaryCounts { tp: 2, fp: 1, fn_: 1 });
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(BoundaryCounts::default().f1(), 1.0);
    }
}
