//! Reference semantics: interpreters for models and flat IR, a
//! discrete-event executor for schedules, and trace comparison.

pub(crate) mod exec;
mod interp;
mod kernel;
pub mod kernels;
mod value;

pub use exec::{execute_schedule, execute_schedule_threaded, BusyInterval, Delivery, EventLog};
pub use interp::{interpret, interpret_ir, interpret_model, port_name, Machine, Target};
pub use kernel::Kernel;
pub use value::{compare_traces, Divergence, Trace, TraceDiff, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input trace has no `{port}` at step {step}")]
    MissingInput { step: usize, port: String },
    #[error("block `{block}`: {msg}")]
    Kernel { block: String, msg: String },
    #[error("no kernel for `{0}`")]
    MissingKernel(String),
    #[error("algebraic loop through `{0}`")]
    AlgebraicLoop(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("trace: {0}")]
    Trace(String),
}
