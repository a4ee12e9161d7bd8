//! Retaining heads: small per-layer MLPs that predict how much each cached
//! key will matter to future queries, trained against the frozen backbone.

mod data;
mod head;
mod labels;
mod loss;
mod optim;
mod train;

pub use data::{make_locretq_example, read_jsonl, write_jsonl, TrainingExample};
pub use head::{HeadForward, HeadSet, RetainingHead};
pub use labels::{cis_labels, cis_labels_from_acts};
pub use loss::{grad_head, layer_loss_and_grad, loss, smooth_l1, HeadGrad, LossReduction};
pub use optim::{lr_schedule, AdamState, AdamW};
pub use train::{train, TrainingConfig};
