use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A prompt/answer pair. Labels cover prompt tokens only.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingExample {
    pub prompt: Vec<u32>,
    pub answer: Vec<u32>,
}

impl TrainingExample {
    pub fn new(prompt: Vec<u32>, answer: Vec<u32>) -> Result<Self> {
        let ex = TrainingExample { prompt, answer };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt.is_empty() || self.answer.is_empty() {
            return Err(Error::data(format!(
                "example needs non-empty prompt and answer (got {} and {})",
                self.prompt.len(),
                self.answer.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.prompt.len() + self.answer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops prompt tokens from the front until the pair fits in `cap`.
    pub fn truncated(&self, cap: usize) -> Result<Self> {
        if self.len() <= cap {
            return Ok(self.clone());
        }
        if self.answer.len() >= cap {
            return Err(Error::data(format!(
                "answer of {} tokens does not fit sequence cap {cap}",
                self.answer.len()
            )));
        }
        let keep = cap - self.answer.len();
        Ok(TrainingExample {
            prompt: self.prompt[self.prompt.len() - keep..].to_vec(),
            answer: self.answer.clone(),
        })
    }
}

/// Prepends the last `min(lq, n_q)` prompt tokens to the prompt.
///
/// The prompt tail holds the question in every generator here, so this puts
/// the query in front of the context the way a query-aware prefill sees it.
pub fn make_locretq_example(ex: &TrainingExample, lq: usize) -> TrainingExample {
    let take = lq.min(ex.prompt.len());
    let mut prompt = ex.prompt[ex.prompt.len() - take..].to_vec();
    prompt.extend_from_slice(&ex.prompt);
    TrainingExample {
        prompt,
        answer: ex.answer.clone(),
    }
}

pub fn write_jsonl(path: impl AsRef<Path>, examples: &[TrainingExample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<TrainingExample>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: TrainingExample = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("dataset line {}: {e}", i + 1)))?;
        ex.validate()
            .map_err(|e| Error::data(format!("dataset line {}: {e}", i + 1)))?;
        out.push(ex);
    }
    if out.is_empty() {
        return Err(Error::data("dataset is empty"));
    }
    Ok(out)
}
