//! Versioned textual checkpoint format shared by every logit or value table.
//!
//! ```text
//! spinlab-checkpoint 1
//! kind tabular
//! vocab a b c d
//! terminator <eos>
//! max_len 3
//! prompts 8
//! values 672
//! -1.2345678901234567e0
//! ...
//! extra 0
//! ```
//!
//! Each value is written with 17 significant digits, which round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::space::{AnswerSpace, Vocab};
use super::tabular::TabularPolicy;
use super::token::TokenPolicy;
use crate::error::{Result, SpinError};
use crate::fsutil::atomic_write;

pub const CHECKPOINT_MAGIC: &str = "spinlab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    /// `[prompt][answer]` logits of a [`TabularPolicy`].
    Tabular,
    /// `[prompt][prefix][action]` logits of a [`TokenPolicy`].
    Token,
    /// Token logits plus one root log-flow per prompt in `extra`.
    GFlowNet,
    /// `[prompt][answer]` reward values.
    Reward,
}

impl CheckpointKind {
    fn as_str(self) -> &'static str {
        match self {
            CheckpointKind::Tabular => "tabular",
            CheckpointKind::Token => "token",
            CheckpointKind::GFlowNet => "gflownet",
            CheckpointKind::Reward => "reward",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "tabular" => CheckpointKind::Tabular,
            "token" => CheckpointKind::Token,
            "gflownet" => CheckpointKind::GFlowNet,
            "reward" => CheckpointKind::Reward,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub space: AnswerSpace,
    pub num_prompts: usize,
    pub values: Vec<f64>,
    pub extra: Vec<f64>,
}

fn push_value(out: &mut String, v: f64) {
    writeln!(out, "{v:.16e}").unwrap();
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(32 * (self.values.len() + self.extra.len()) + 128);
        writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}").unwrap();
        writeln!(out, "kind {}", self.kind.as_str()).unwrap();
        writeln!(out, "vocab {}", self.space.vocab().tokens().join(" ")).unwrap();
        writeln!(out, "terminator {}", self.space.vocab().terminator()).unwrap();
        writeln!(out, "max_len {}", self.space.max_len()).unwrap();
        writeln!(out, "prompts {}", self.num_prompts).unwrap();
        writeln!(out, "values {}", self.values.len()).unwrap();
        for &v in &self.values {
            push_value(&mut out, v);
        }
        writeln!(out, "extra {}", self.extra.len()).unwrap();
        for &v in &self.extra {
            push_value(&mut out, v);
        }
        out
    }

    /// Parses checkpoint text; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |msg: String| SpinError::parse(origin, msg);
        let mut lines = text.lines().enumerate();
        let mut header = |key: &str| -> Result<String> {
            let (no, line) = lines.next().ok_or_else(|| err(format!("missing `{key}` line")))?;
            let rest = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some("") } else { None }))
                .ok_or_else(|| err(format!("line {}: expected `{key}`", no + 1)))?;
            Ok(rest.to_string())
        };

        let version = header(CHECKPOINT_MAGIC)?;
        if version.trim() != CHECKPOINT_VERSION.to_string() {
            return Err(err(format!("unsupported format version {version:?}")));
        }
        let kind_s = header("kind")?;
        let kind = CheckpointKind::parse(kind_s.trim()).ok_or_else(|| err(format!("unknown kind {kind_s:?}")))?;
        let tokens: Vec<String> = header("vocab")?.split_whitespace().map(String::from).collect();
        let terminator = header("terminator")?.trim().to_string();
        let parse_usize = |key: &str, s: String| -> Result<usize> {
            s.trim()
                .parse::<usize>()
                .map_err(|e| err(format!("bad `{key}` value {s:?}: {e}")))
        };
        let max_len = parse_usize("max_len", header("max_len")?)?;
        let num_prompts = parse_usize("prompts", header("prompts")?)?;
        let n_values = parse_usize("values", header("values")?)?;
        let vocab = Vocab::new(tokens, terminator).map_err(|e| err(e.to_string()))?;
        let space = AnswerSpace::new(vocab, max_len).map_err(|e| err(e.to_string()))?;

        let read_block = |n: usize, lines: &mut dyn Iterator<Item = (usize, &str)>| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let (no, line) = lines.next().ok_or_else(|| err("truncated value block".to_string()))?;
                let v = line
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| err(format!("line {}: {e}", no + 1)))?;
                out.push(v);
            }
            Ok(out)
        };
        let values = read_block(n_values, &mut lines)?;
        let (no, line) = lines.next().ok_or_else(|| err("missing `extra` line".to_string()))?;
        let n_extra = line
            .strip_prefix("extra ")
            .ok_or_else(|| err(format!("line {}: expected `extra`", no + 1)))
            .and_then(|s| parse_usize("extra", s.to_string()))?;
        let extra = read_block(n_extra, &mut lines)?;
        if let Some((no, line)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(err(format!("line {}: trailing content {line:?}", no + 1)));
        }

        let expected = match kind {
            CheckpointKind::Tabular | CheckpointKind::Reward => num_prompts * space.num_answers(),
            CheckpointKind::Token | CheckpointKind::GFlowNet => {
                num_prompts * space.num_prefixes() * space.num_actions()
            }
        };
        if values.len() != expected {
            return Err(err(format!(
                "{} values, expected {expected} for this shape",
                values.len()
            )));
        }
        let expected_extra = if kind == CheckpointKind::GFlowNet {
            num_prompts
        } else {
            0
        };
        if extra.len() != expected_extra {
            return Err(err(format!("{} extra values, expected {expected_extra}", extra.len())));
        }
        Ok(Checkpoint {
            kind,
            space,
            num_prompts,
            values,
            extra,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SpinError::io(path, e))?;
        Checkpoint::parse(&text, path)
    }

    fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(SpinError::Argument(format!(
                "checkpoint holds a {} table, not {}",
                self.kind.as_str(),
                kind.as_str()
            )));
        }
        Ok(())
    }

    pub fn into_tabular(self) -> Result<TabularPolicy> {
        self.expect_kind(CheckpointKind::Tabular)?;
        TabularPolicy::from_logits(self.space, self.num_prompts, self.values)
    }

    pub fn into_token(self) -> Result<TokenPolicy> {
        self.expect_kind(CheckpointKind::Token)?;
        TokenPolicy::from_logits(self.space, self.num_prompts, self.values)
    }
}

impl From<&TabularPolicy> for Checkpoint {
    fn from(p: &TabularPolicy) -> Self {
        use super::Policy;
        Checkpoint {
            kind: CheckpointKind::Tabular,
            space: p.space().clone(),
            num_prompts: p.num_prompts(),
            values: p.logits().to_vec(),
            extra: Vec::new(),
        }
    }
}

impl From<&TokenPolicy> for Checkpoint {
    fn from(p: &TokenPolicy) -> Self {
        use super::Policy;
        Checkpoint {
            kind: CheckpointKind::Token,
            space: p.space().clone(),
            num_prompts: p.num_prompts(),
            values: p.logits().to_vec(),
            extra: Vec::new(),
        }
    }
}
