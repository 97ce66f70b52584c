//! Holds the workspace acceptance run (`tests/acceptance.rs`). It lives in its
//! own package so that it runs after the unit and property tests of the other
//! crates.
