//! Architecture analysis: the skip-connection/projection equivalence check
//! and exact parameter accounting.

pub mod accounting;
pub mod equivalence;

pub use accounting::{
    count_block_params, count_generator_params, enumerated_break_even, closed_form_break_even,
    closed_form_reduction, closed_form_squeeze_kernels, reduction, BlockCount, BlockParamEntry, ParamReport,
};
pub use equivalence::{
    aggregate_concat, aggregate_direct, concat_channel_total, verify_equivalence,
    AggregatedProjection, EquivalenceReport,
};
