// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end experiment drivers: arithmetic model comparison, back
//! attention fine-tuning, and the knowledge-graph analyses, each usable at a
//! small single-core scale or at full size.

mod arith;
mod claims;
mod kg;

use serde::{Deserialize, Serialize};

pub use arith::{arith_data, run_arith, run_recovery, ArithRun, ArithSetup, ArithVariant, Precision, RecoveryRun};
pub use claims::{
    arith_accuracy, ba_scores, four_stages, layer_sweep, logit_diff, param_ratio, run_claim, twohop_compare,
    write_flow_artifacts, ClaimReport, ClaimStatus, CLAIM_IDS, PAPER_PARAM_RATIO,
};
pub use kg::{build_kg_task, train_kg_model, KgRun, KgSetup, KgTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Reduced sizes that finish in minutes on one core.
    #[default]
    Ci,
    /// Full-size settings; hours to days on a CPU.
    Paper,
}

impl std::str::FromStr for Scale {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "ci" => Ok(Self::Ci),
            "paper" | "full" => Ok(Self::Paper),
            other => Err(crate::Error::Config(format!("unknown scale {other:?}; expected ci or paper"))),
        }
    }
}
