//! Run configuration (placeholder while the pipeline is assembled).

pub struct Placeholder;
