// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::lens::LogitLens;
use crate::data::{check_tiling, Span};
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, Transformer};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpanReduce {
    /// Value at the span's last token.
    #[default]
    Last,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitDiffCurve {
    pub answer: usize,
    pub conflict: usize,
    pub labels: Vec<String>,
    pub reduce: SpanReduce,
    /// `layers × spans`: lens logit of `answer` minus that of `conflict`,
    /// read from each layer's output.
    pub values: Tensor,
}

impl LogitDiffCurve {
    pub fn column(&self, label: &str) -> Option<Vec<f64>> {
        let j = self.labels.iter().position(|l| l == label)?;
        Some((0..self.values.rows()).map(|l| self.values.get2(l, j)).collect())
    }

    /// Mean over the upper half of the layers (the top layer alone for one layer).
    pub fn deep_mean(&self, label: &str) -> Option<f64> {
        let col = self.column(label)?;
        let from = col.len() / 2;
        let deep = &col[from..];
        Some(deep.iter().sum::<f64>() / deep.len() as f64)
    }
}

pub fn logit_difference_curve(
    model: &Transformer,
    trace: &ForwardTrace,
    answer: usize,
    conflict: usize,
    spans: &[Span],
    reduce: SpanReduce,
) -> Result<LogitDiffCurve> {
    if answer == conflict {
        return Err(Error::Contract("answer and conflict tokens must differ".into()));
    }
    for tok in [answer, conflict] {
        if tok >= model.config.vocab_size {
            return Err(Error::Index {
                what: "token",
                index: tok,
                limit: model.config.vocab_size,
            });
        }
    }
    check_tiling(spans, trace.len())?;
    let lens = LogitLens::new(model);
    let layers = trace.num_layers();
    let mut values = Tensor::zeros(&[layers, spans.len()]);
    for l in 0..layers {
        let out = &trace.layer(l).output;
        let diff = |p: usize| {
            let z = lens.logits(out.row(p));
            z[answer] - z[conflict]
        };
        for (j, s) in spans.iter().enumerate() {
            values.data_mut()[l * spans.len() + j] = match reduce {
                SpanReduce::Last => diff(s.end - 1),
                SpanReduce::Mean => s.range().map(diff).sum::<f64>() / s.range().len() as f64,
            };
        }
    }
    Ok(LogitDiffCurve {
        answer,
        conflict,
        labels: spans.iter().map(|s| s.label.clone()).collect(),
        reduce,
        values,
    })
}
