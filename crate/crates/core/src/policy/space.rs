use crate::error::{Result, SpinError};

/// Default upper bound on the number of answers enumerated per prompt.
pub const DEFAULT_ENUM_CAP: usize = 20_000;

/// Environment variable overriding [`DEFAULT_ENUM_CAP`].
pub const ENUM_CAP_ENV: &str = "SPINLAB_ENUM_CAP";

/// Enumeration cap in effect: `SPINLAB_ENUM_CAP` if set and valid, else the default.
pub fn enumeration_cap() -> usize {
    std::env::var(ENUM_CAP_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(DEFAULT_ENUM_CAP)
}

pub type PromptId = usize;
pub type AnswerId = usize;
pub type PrefixId = usize;

/// Token alphabet plus the distinguished end-of-sequence marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    terminator: String,
}

impl Vocab {
    pub fn new(tokens: Vec<String>, terminator: impl Into<String>) -> Result<Self> {
        let terminator = terminator.into();
        if tokens.len() < 2 {
            return Err(SpinError::Argument(format!(
                "vocab needs at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(SpinError::Argument(format!("invalid token {tok:?}")));
            }
            if tokens[..i].contains(tok) {
                return Err(SpinError::Argument(format!("duplicate token {tok:?}")));
            }
        }
        if terminator.is_empty() || terminator.chars().any(char::is_whitespace) {
            return Err(SpinError::Argument(format!("invalid terminator {terminator:?}")));
        }
        if tokens.contains(&terminator) {
            return Err(SpinError::Argument(format!(
                "terminator {terminator:?} is also an ordinary token"
            )));
        }
        Ok(Vocab { tokens, terminator })
    }

    /// `size` tokens named `a`, `b`, ... (or `t0`, `t1`, ... beyond 26) with terminator `<eos>`.
    pub fn with_size(size: usize) -> Result<Self> {
        let tokens = (0..size)
            .map(|i| {
                if size <= 26 {
                    ((b'a' + i as u8) as char).to_string()
                } else {
                    format!("t{i}")
                }
            })
            .collect();
        Vocab::new(tokens, "<eos>")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn terminator(&self) -> &str {
        &self.terminator
    }
}

/// All token strings of length `1..=max_len`, terminator implied.
///
/// Answers and prefixes share one numbering. Prefixes are ordered by length,
/// then lexicographically by token index, so the empty prefix is id 0 and the
/// answer with the same tokens as prefix `p` is `p - 1`. For `V = 2, L = 2`
/// the answers are `a, b, aa, ab, ba, bb`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerSpace {
    vocab: Vocab,
    max_len: usize,
    /// `offsets[k]` is the prefix id of the first length-`k` prefix; `offsets[L+1]` is the prefix count.
    offsets: Vec<usize>,
}

impl AnswerSpace {
    pub fn new(vocab: Vocab, max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(SpinError::Argument("max_len must be positive".into()));
        }
        let v = vocab.len();
        let mut offsets = Vec::with_capacity(max_len + 2);
        let mut start = 0usize;
        let mut level = 1usize;
        for _ in 0..=max_len {
            offsets.push(start);
            start = start
                .checked_add(level)
                .ok_or_else(|| SpinError::Argument("answer space size overflows".into()))?;
            level = level.saturating_mul(v);
        }
        offsets.push(start);
        Ok(AnswerSpace {
            vocab,
            max_len,
            offsets,
        })
    }

    /// Space with `size` single-token answers; convenient for plain categorical policies.
    pub fn flat(size: usize) -> Result<Self> {
        AnswerSpace::new(Vocab::with_size(size)?, 1)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// `V + V^2 + ... + V^L`.
    pub fn num_answers(&self) -> usize {
        self.num_prefixes() - 1
    }

    pub fn num_prefixes(&self) -> usize {
        self.offsets[self.max_len + 1]
    }

    /// Next-token slots per prefix: `V` tokens followed by the terminator.
    pub fn num_actions(&self) -> usize {
        self.vocab.len() + 1
    }

    pub fn terminator_action(&self) -> usize {
        self.vocab.len()
    }

    pub fn check_enumerable(&self, cap: usize) -> Result<()> {
        if self.num_answers() > cap {
            return Err(SpinError::Capacity {
                size: self.num_answers(),
                cap,
            });
        }
        Ok(())
    }

    pub fn check_answer(&self, y: AnswerId) -> Result<()> {
        if y >= self.num_answers() {
            return Err(SpinError::Domain(format!(
                "answer id {y} out of range (space has {} answers)",
                self.num_answers()
            )));
        }
        Ok(())
    }

    pub fn prefix_len(&self, p: PrefixId) -> usize {
        debug_assert!(p < self.num_prefixes());
        // offsets is short (L + 2 entries).
        self.offsets.iter().rposition(|&o| o <= p).unwrap()
    }

    pub fn answer_prefix(&self, y: AnswerId) -> PrefixId {
        y + 1
    }

    pub fn prefix_answer(&self, p: PrefixId) -> Option<AnswerId> {
        p.checked_sub(1)
    }

    pub fn answer_len(&self, y: AnswerId) -> usize {
        self.prefix_len(y + 1)
    }

    /// Prefix reached by appending `token` to `p`, or `None` at full length.
    pub fn child(&self, p: PrefixId, token: usize) -> Option<PrefixId> {
        let len = self.prefix_len(p);
        if len >= self.max_len {
            return None;
        }
        let rank = p - self.offsets[len];
        Some(self.offsets[len + 1] + rank * self.vocab.len() + token)
    }

    /// Parent prefix and the token that leads from it to `p`.
    pub fn parent(&self, p: PrefixId) -> Option<(PrefixId, usize)> {
        let len = self.prefix_len(p);
        if len == 0 {
            return None;
        }
        let v = self.vocab.len();
        let rank = p - self.offsets[len];
        Some((self.offsets[len - 1] + rank / v, rank % v))
    }

    /// Whether `action` may follow prefix `p`: tokens need room, the
    /// terminator needs a nonempty prefix.
    pub fn is_legal(&self, p: PrefixId, action: usize) -> bool {
        let len = self.prefix_len(p);
        if action == self.terminator_action() {
            len >= 1
        } else {
            action < self.vocab.len() && len < self.max_len
        }
    }

    /// Token indices of prefix `p`.
    pub fn prefix_tokens(&self, p: PrefixId) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.max_len);
        let mut cur = p;
        while let Some((parent, tok)) = self.parent(cur) {
            out.push(tok);
            cur = parent;
        }
        out.reverse();
        out
    }

    pub fn answer_tokens(&self, y: AnswerId) -> Vec<usize> {
        self.prefix_tokens(y + 1)
    }

    pub fn answer_from_tokens(&self, tokens: &[usize]) -> Result<AnswerId> {
        if tokens.is_empty() || tokens.len() > self.max_len {
            return Err(SpinError::Domain(format!(
                "answer length {} outside 1..={}",
                tokens.len(),
                self.max_len
            )));
        }
        let mut p = 0;
        for &t in tokens {
            if t >= self.vocab.len() {
                return Err(SpinError::Domain(format!("token index {t} out of range")));
            }
            p = self.child(p, t).expect("length checked");
        }
        Ok(p - 1)
    }

    /// Prefix ids along the generation path of `y`: empty prefix first, `y`'s own prefix last.
    pub fn path(&self, y: AnswerId) -> Vec<PrefixId> {
        let mut out = Vec::with_capacity(self.max_len + 1);
        let mut cur = y + 1;
        out.push(cur);
        while let Some((parent, _)) = self.parent(cur) {
            out.push(parent);
            cur = parent;
        }
        out.reverse();
        out
    }

    /// Concatenated token names of `y`.
    pub fn render(&self, y: AnswerId) -> String {
        let toks = self.vocab.tokens();
        let parts: Vec<&str> = self.answer_tokens(y).into_iter().map(|t| toks[t].as_str()).collect();
        if parts.iter().all(|s| s.chars().count() == 1) {
            parts.concat()
        } else {
            parts.join(" ")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(v: usize, l: usize) -> AnswerSpace {
        AnswerSpace::new(Vocab::with_size(v).unwrap(), l).unwrap()
    }

    #[test]
    fn sizes() {
        assert_eq!(space(2, 2).num_answers(), 6);
        assert_eq!(space(4, 3).num_answers(), 84);
        assert_eq!(space(3, 3).num_answers(), 39);
        assert_eq!(space(6, 1).num_answers(), 6);
    }

    #[test]
    fn ordering_v2_l2() {
        let s = space(2, 2);
        let names: Vec<String> = (0..6).map(|y| s.render(y)).collect();
        assert_eq!(names, ["a", "b", "aa", "ab", "ba", "bb"]);
    }

    #[test]
    fn tokens_round_trip() {
        let s = space(3, 3);
        for y in 0..s.num_answers() {
            let toks = s.answer_tokens(y);
            assert_eq!(s.answer_from_tokens(&toks).unwrap(), y);
            let path = s.path(y);
            assert_eq!(path.len(), toks.len() + 1);
            assert_eq!(path[0], 0);
            assert_eq!(*path.last().unwrap(), s.answer_prefix(y));
        }
    }

    #[test]
    fn legality() {
        let s = space(2, 2);
        let term = s.terminator_action();
        assert!(!s.is_legal(0, term));
        assert!(s.is_legal(0, 0));
        let full = s.answer_prefix(s.answer_from_tokens(&[1, 1]).unwrap());
        assert!(s.is_legal(full, term));
        assert!(!s.is_legal(full, 0));
        assert!(s.child(full, 0).is_none());
    }

    #[test]
    fn vocab_validation() {
        assert!(Vocab::new(vec!["a".into()], "$").is_err());
        assert!(Vocab::new(vec!["a".into(), "a".into()], "$").is_err());
        assert!(Vocab::new(vec!["a".into(), "b".into()], "a").is_err());
        assert!(Vocab::new(vec!["a b".into(), "c".into()], "$").is_err());
        assert!(AnswerSpace::new(Vocab::with_size(2).unwrap(), 0).is_err());
    }

    #[test]
    fn capacity() {
        let s = space(4, 3);
        assert!(s.check_enumerable(84).is_ok());
        assert!(matches!(
            s.check_enumerable(83),
            Err(SpinError::Capacity { size: 84, cap: 83 })
        ));
        assert!(s.check_answer(84).is_err());
    }
}
