//! Acceptance run only; see tests/acceptance.rs.
