//! Floating-point and simulated fixed-point execution, datasets and
//! evaluation metrics.

mod dataset;
mod eval;
mod forward;
mod quantsim;

pub use dataset::{load_dataset, save_dataset, Dataset, DatasetManifest, DATASET_VERSION};
pub use eval::{argmax, bit_sweep, evaluate, EvalMode, EvalResult, LayerSqnr, SweepPoint};
pub(crate) use forward::{execute, ExecHooks};
pub use forward::{forward_fp32, forward_trace};
pub use quantsim::{attach_quantization, forward_quantsim, ActRangeSource, QuantSim, QuantSimConfig, ResolvedRange};
