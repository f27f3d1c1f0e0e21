//! Hosts the `acceptance` test target, which runs the full golden suite end to end.
