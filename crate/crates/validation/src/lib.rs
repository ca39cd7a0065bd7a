//! Acceptance criteria for the ufo workspace; see `tests/acceptance.rs`.
