#ifndef ALNER_ERROR_HPP
#define ALNER_ERROR_HPP

#include <stdexcept>
#include <string>

namespace alner {

/**
 * Base class for all errors raised by the library.
 * Callers that only care about "something went wrong" can catch this.
 */
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (corpus files, embedding files, configs).
class DataError : public Error {
public:
    using Error::Error;
};

/// Invalid argument combination passed to an algorithm.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// A numerical routine produced a non-finite value.
class NumericError : public Error {
public:
    using Error::Error;
};

}

#endif
