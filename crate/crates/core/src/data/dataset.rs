// SPDX-License-Identifier: MIT OR Apache-2.0

//! Line-delimited JSON dataset files: one header line, then one line per
//! example carrying token ids next to their surface text.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::example::{check_tiling, Example, ExampleKind, Span};
use super::vocab::{Vocab, VocabSpec};
use crate::error::{Error, Result};
use crate::io::write_atomic;

const FORMAT: &str = "logitflow-dataset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub seed: u64,
    /// Generator parameters, verbatim.
    pub params: serde_json::Value,
    pub vocab: VocabSpec,
    pub vocab_sha256: String,
    pub split: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    kind: ExampleKind,
    prompt: String,
    answer: String,
    prompt_ids: Vec<usize>,
    answer_ids: Vec<usize>,
    spans: Vec<Span>,
    metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(seed: u64, params: impl Serialize, vocab: &Vocab, split: &str, examples: Vec<Example>) -> Result<Self> {
        for e in &examples {
            check_tiling(&e.spans, e.prompt_ids.len())?;
        }
        Ok(Self {
            header: DatasetHeader {
                format: FORMAT.into(),
                seed,
                params: serde_json::to_value(params)?,
                vocab: vocab.spec(),
                vocab_sha256: vocab.hash(),
                split: split.into(),
                count: examples.len(),
            },
            examples,
        })
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.header.vocab)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let vocab = self.vocab();
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for e in &self.examples {
            let rec = Record {
                kind: e.kind,
                prompt: vocab.detokenize(&e.prompt_ids)?,
                answer: vocab.detokenize(&e.answer_ids)?,
                prompt_ids: e.prompt_ids.clone(),
                answer_ids: e.answer_ids.clone(),
                spans: e.spans.clone(),
                metadata: e.metadata.clone(),
            };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| Error::format(origin, "empty dataset file"))?;
        let header: DatasetHeader = serde_json::from_str(first)?;
        if header.format != FORMAT {
            return Err(Error::format(origin, format!("unsupported format `{}`", header.format)));
        }
        let vocab = Vocab::new(header.vocab);
        if vocab.hash() != header.vocab_sha256 {
            return Err(Error::format(origin, "vocabulary hash mismatch"));
        }
        let mut examples = Vec::with_capacity(header.count);
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line)?;
            if vocab.detokenize(&rec.prompt_ids)? != rec.prompt || vocab.detokenize(&rec.answer_ids)? != rec.answer {
                return Err(Error::format(origin, format!("line {}: text disagrees with token ids", n + 1)));
            }
            check_tiling(&rec.spans, rec.prompt_ids.len())?;
            examples.push(Example {
                kind: rec.kind,
                prompt_ids: rec.prompt_ids,
                answer_ids: rec.answer_ids,
                spans: rec.spans,
                metadata: rec.metadata,
            });
        }
        if examples.len() != header.count {
            return Err(Error::format(
                origin,
                format!("header announces {} examples, found {}", header.count, examples.len()),
            ));
        }
        Ok(Self { header, examples })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, path)
    }

    pub fn count_by_kind(&self) -> BTreeMap<ExampleKind, usize> {
        let mut out = BTreeMap::new();
        for e in &self.examples {
            *out.entry(e.kind).or_default() += 1;
        }
        out
    }
}
