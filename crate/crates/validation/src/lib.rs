//! End-to-end validation of `lie-es`.
//!
//! Everything lives under `tests/`: `acceptance` prints one PASS/FAIL line
//! per acceptance criterion, `decoupling` compares multivariable and scalar
//! one-period maps.
