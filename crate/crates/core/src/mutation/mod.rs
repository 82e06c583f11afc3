//! Importance scoring, scheme-aware remove/grow primitives and the elastic
//! mutation schedules.

mod apply;
mod ops;
mod schedule;

pub use apply::{mutate_layer, LayerMutation};
pub use ops::{arg_grow_to, arg_remove_to, importance};
pub use schedule::{Action, MutationMode, MutationSchedule, RateBasis};
