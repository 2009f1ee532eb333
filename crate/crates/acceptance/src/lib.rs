//! Acceptance criteria for the workspace; see `tests/acceptance.rs`.
