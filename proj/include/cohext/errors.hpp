#pragma once

#include <stdexcept>
#include <string>

namespace cohext {

// Input violates a documented precondition or invariant.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed serialized input (JSONL, manifests, config files).
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A run could not continue (non-finite loss, I/O failure mid-run).
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cohext
