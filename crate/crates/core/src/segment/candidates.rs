use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionRule {
    Newline,
    Space,
    /// `.`, `!` or `?`
    SentencePunctuation,
}

impl InsertionRule {
    pub fn matches(self, token: TokenId) -> bool {
        match self {
            Self::Newline => token == TokenId::from(b'\n'),
            Self::Space => token == TokenId::from(b' '),
            Self::SentencePunctuation => [b'.', b'!', b'?'].iter().any(|&b| token == TokenId::from(b)),
        }
    }

    /// Text offsets directly after each match, excluding the text end.
    pub fn boundaries(self, text: &[TokenId]) -> Vec<usize> {
        text.iter()
            .enumerate()
            .filter(|&(i, &t)| self.matches(t) && i + 1 < text.len())
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "newline" => Some(Self::Newline),
            "space" => Some(Self::Space),
            "sentence_punctuation" | "punctuation" => Some(Self::SentencePunctuation),
            _ => None,
        }
    }
}

/// Text with candidate cut tokens C_0..C_n.
///
/// Candidates are kept as text offsets: C_i sits just before text token
/// `offsets[i]`. `offsets[0] == 0` and `offsets[n] == text.len()`, so C_0
/// precedes and C_n follows all text. `base` is the offset of this text inside
/// the document it was cut from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSequence {
    text: Vec<TokenId>,
    offsets: Vec<usize>,
    cut_token: TokenId,
    base: usize,
}

/// Insert a candidate after every rule match plus the forced C_0 and C_n.
pub fn insert_candidates(text: &[TokenId], rule: InsertionRule, cut_token: TokenId) -> Result<CandidateSequence> {
    let mut offsets = vec![0];
    offsets.extend(rule.boundaries(text));
    offsets.push(text.len());
    CandidateSequence::from_offsets(text.to_vec(), offsets, cut_token, 0)
}

impl CandidateSequence {
    pub fn from_offsets(text: Vec<TokenId>, offsets: Vec<usize>, cut_token: TokenId, base: usize) -> Result<Self> {
        if text.is_empty() {
            return Err(contract("cannot insert candidates into empty text"));
        }
        if text.contains(&cut_token) {
            return Err(contract("text already contains the cut token id"));
        }
        if offsets.first() != Some(&0) || offsets.last() != Some(&text.len()) {
            return Err(contract("candidate offsets must start at 0 and end at the text length"));
        }
        if offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(contract("candidate offsets must be strictly increasing"));
        }
        Ok(Self {
            text,
            offsets,
            cut_token,
            base,
        })
    }

    pub fn text(&self) -> &[TokenId] {
        &self.text
    }

    /// Offsets of C_0..C_n in the text.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn cut_token(&self) -> TokenId {
        self.cut_token
    }

    pub fn num_candidates(&self) -> usize {
        self.offsets.len()
    }

    /// Candidates that are scored: C_1..C_{n-1}.
    pub fn num_internal(&self) -> usize {
        self.offsets.len() - 2
    }

    pub fn internal_offsets(&self) -> &[usize] {
        &self.offsets[1..self.offsets.len() - 1]
    }

    /// Index of C_i in [`Self::tokens`].
    pub fn token_position(&self, i: usize) -> usize {
        self.offsets[i] + i
    }

    /// Text with the cut token interleaved; C_n is the literal last token.
    pub fn tokens(&self) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(self.text.len() + self.offsets.len());
        let mut next = 0;
        for (i, &t) in self.text.iter().enumerate() {
            if self.offsets[next] == i {
                out.push(self.cut_token);
                next += 1;
            }
            out.push(t);
        }
        out.push(self.cut_token);
        out
    }

    /// Drop every cut token.
    pub fn strip(tokens: &[TokenId], cut_token: TokenId) -> Vec<TokenId> {
        tokens.iter().copied().filter(|&t| t != cut_token).collect()
    }

    /// The part of this sequence covering text range `start..end`, which must
    /// begin and end on candidates.
    pub fn sub(&self, start: usize, end: usize) -> Result<CandidateSequence> {
        let (Ok(a), Ok(b)) = (self.offsets.binary_search(&start), self.offsets.binary_search(&end)) else {
            return Err(contract(format!("range {start}..{end} does not align with candidates")));
        };
        let offsets = self.offsets[a..=b].iter().map(|o| o - start).collect();
        Self::from_offsets(self.text[start..end].to_vec(), offsets, self.cut_token, self.base + start)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::encode_text;

    const CUT: TokenId = 257;

    #[test]
    fn newline_rule_example() {
        let s = insert_candidates(&encode_text("a\nb\nc"), InsertionRule::Newline, CUT).unwrap();
        assert_eq!(s.offsets(), &[0, 2, 4, 5]);
        assert_eq!(s.num_internal(), 2);
        let toks = s.tokens();
        assert_eq!(toks.len(), 9);
        for i in 0..s.num_candidates() {
            assert_eq!(toks[s.token_position(i)], CUT);
        }
        assert_eq!(*toks.last().unwrap(), CUT);
    }

    #[test]
    fn no_matches_gives_two_candidates() {
        let s = insert_candidates(&encode_text("abc"), InsertionRule::Newline, CUT).unwrap();
        assert_eq!(s.offsets(), &[0, 3]);
        assert_eq!(s.num_internal(), 0);
    }

    #[test]
    fn trailing_match_not_duplicated() {
        let s = insert_candidates(&encode_text("ab.cd."), InsertionRule::SentencePunctuation, CUT).unwrap();
        assert_eq!(s.offsets(), &[0, 3, 6]);
    }

    #[test]
    fn empty_text_rejected() {
        assert!(insert_candidates(&[], InsertionRule::Space, CUT).is_err());
    }

    #[test]
    fn sub_sequence() {
        let s = insert_candidates(&encode_text("a b c d"), InsertionRule::Space, CUT).unwrap();
        let sub = s.sub(2, 6).unwrap();
        assert_eq!(sub.text(), &encode_text("b c ")[..]);
        assert_eq!(sub.offsets(), &[0, 2, 4]);
        assert_eq!(sub.base(), 2);
        assert!(s.sub(1, 6).is_err());
    }
}
