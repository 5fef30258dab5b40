#pragma once

#include <stdexcept>
#include <string>

namespace anyctl {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/dimension disagreement between tensors.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid static configuration (sizes, ranges, unknown config keys).
struct ConfigError : Error {
    using Error::Error;
};

// A caller broke an API precondition.
struct ContractError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

// Character or token outside the vocabulary.
struct VocabError : Error {
    using Error::Error;
};

// Out-of-range index (timesteps, labels).
struct IndexError : Error {
    using Error::Error;
};

// Filesystem and format failures; message names the path.
struct IoError : Error {
    using Error::Error;
};

// Sample generator exhausted its rejection budget.
struct GenerationError : Error {
    using Error::Error;
};

}  // namespace anyctl
