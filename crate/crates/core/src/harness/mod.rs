//! Experiment generators and metrics: passkey retrieval, consistency curves,
//! stabilizer ablation, retention traces and compression accounting.

mod consistency;
mod eval;
mod passkey;
pub mod report;
mod trace;

pub use consistency::{
    consistency_curve, h2o_scores, locret_scores, sirllm_scores, snapkv_scores,
    ConsistencyReport, ScoreGrid, CONSISTENCY_CSV_HEADER,
};
pub use eval::{
    compression_ratio, passkey_eval, passkey_eval_jobs, prefill_passkey, stabilizer_ablation,
    stabilizer_ablation_jobs, AblationReport,
    AblationRow, AblationSummary, PasskeyRow, ABLATION_CSV_HEADER, ABLATION_SUMMARY_HEADER,
    PASSKEY_CSV_HEADER,
};
pub use passkey::{gen_passkey, gen_passkey_set, NeedlePosition, PasskeyInstance, PasskeyTaskConfig};
pub use trace::{trace_retained, TraceMatrix};
