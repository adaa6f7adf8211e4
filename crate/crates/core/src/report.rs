//! Reporting (placeholder while the pipeline is assembled).

pub struct Placeholder;
