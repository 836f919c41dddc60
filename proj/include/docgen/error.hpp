#pragma once

#include <stdexcept>
#include <string>

namespace docgen {

// Base class for all library errors. The CLI maps subclasses to exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration: invalid category sets, vocab layout, model dims.
struct ConfigError : Error {
  using Error::Error;
};

// A value outside an operation's domain (non-finite coordinate, bin out of
// range, shape mismatch).
struct InvalidInput : Error {
  using Error::Error;
};

// Filesystem and serialization failures.
struct IoError : Error {
  using Error::Error;
};

// Corpus ingestion failures (unknown categories, unresolvable records).
struct IngestError : Error {
  using Error::Error;
};

// Training aborts (non-finite gradients, empty batches).
struct TrainError : Error {
  using Error::Error;
};

// Generation-side failures (bad prompt, context overflow during sampling).
struct GenerateError : Error {
  using Error::Error;
};

// Evaluation failures (corpus pairing mismatches).
struct EvalError : Error {
  using Error::Error;
};

}  // namespace docgen
