//! Cross-module tests that exercise the public API.

mod harness;
