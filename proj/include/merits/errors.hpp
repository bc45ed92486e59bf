#pragma once

#include <stdexcept>
#include <string>

namespace merits {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input data could not be parsed (bad JSON, bad file framing).
struct ParseError : Error {
    using Error::Error;
};

// A raw annotation has no mapping in the active label space.
struct MappingError : Error {
    using Error::Error;
};

// Structural violation: duplicate ids, inconsistent dimensions.
struct IntegrityError : Error {
    using Error::Error;
};

// Numeric argument outside its documented domain.
struct DomainError : Error {
    using Error::Error;
};

// Bad user-supplied configuration; maps to CLI exit code 1.
struct ConfigError : Error {
    using Error::Error;
};

// A required earlier-stage artifact is missing; maps to CLI exit code 2.
struct DependencyError : Error {
    using Error::Error;
};

// LLM reply did not contain exactly one sentiment class word.
struct UnparseableResponseError : Error {
    explicit UnparseableResponseError(std::string raw_response)
        : Error("unparseable backend response: \"" + raw_response + "\""),
          raw(std::move(raw_response)) {}
    std::string raw;
};

// Backend could not be reached or returned a malformed payload.
struct TransportError : Error {
    using Error::Error;
};

}  // namespace merits
