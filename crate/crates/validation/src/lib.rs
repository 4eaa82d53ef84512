//! Holds the acceptance test target only; see tests/acceptance.rs.
