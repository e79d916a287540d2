//! Blockchain-backed malware detection for app stores.
//!
//! Feature extractors write per-app feature chains from APK static analysis
//! and recorded runtime traces, detection engines score each app version on
//! per-app score chains, and a consortium of engines commits verdict blocks
//! under a two-thirds signature quorum. The determinant agent reads the
//! consortium chain to issue the final verdict.

pub mod apk_static;
pub mod consensus;
pub mod dynamic_features;
pub mod engines;
pub mod ledger;
pub mod payload;
pub mod pipeline;
