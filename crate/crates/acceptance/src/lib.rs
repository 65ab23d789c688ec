//! Holds the end-to-end acceptance suite in `tests/acceptance.rs`.
//!
//! Run it alone with `cargo test -p posecodec-acceptance --test acceptance`.
