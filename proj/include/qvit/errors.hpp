#pragma once

#include <stdexcept>
#include <string>

namespace qvit {

// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Precondition of an operation violated by the caller.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Index or label outside its admissible range.
class RangeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

// Inconsistent or unsupported configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// On-disk artifact that does not agree with its manifest.
class CorruptionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Parameter registry / gradient alignment failure.
class RegistryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace qvit
