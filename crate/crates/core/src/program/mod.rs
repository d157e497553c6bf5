//! The relaxation as an SDP: variables, test matrices and row compilation.

pub mod builder;
pub mod calibrate;
pub mod qfamily;
pub mod variables;

pub use builder::{
    build_program, CompiledProgram, ConstraintId, Handling, NoiseScale, ProgramOptions, RowKey, RowRef, Sparsity,
    TraceRow,
};
pub use calibrate::{required_constants, RequiredConstants};
pub use qfamily::default_q_family;
pub use variables::ProgramVariables;
