//! Library half of the `wbms` harness: the battery-passport store.

pub mod store;
