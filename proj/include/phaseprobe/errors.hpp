#pragma once
#include <stdexcept>
#include <string>

namespace phaseprobe {

// Input bytes/text could not be decoded at all.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input decoded but violates a documented contract (overlapping mass
// windows, asymmetric spot mask, ...).
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A computation cannot proceed: degenerate fit band, too few samples,
// zero reference median, ...
struct AnalysisError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem-level failure (missing input, unwritable output).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// No spectral peak qualified as a lattice fringe; the window is rejected.
struct NoFringeError : AnalysisError {
    using AnalysisError::AnalysisError;
};

} // namespace phaseprobe
