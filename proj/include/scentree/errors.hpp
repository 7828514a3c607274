#pragma once

#include <stdexcept>
#include <string>

namespace scentree {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NonAnticipativityViolation : public Error {
public:
    using Error::Error;
};

class ProbabilityError : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class LeafHasNoSubtree : public Error {
public:
    using Error::Error;
};

class InfeasibleMarginals : public Error {
public:
    using Error::Error;
};

class DegenerateInput : public Error {
public:
    using Error::Error;
};

class SizeLimitExceeded : public Error {
public:
    using Error::Error;
};

class SingularSubCovariance : public Error {
public:
    using Error::Error;
};

class BetaOutOfRange : public Error {
public:
    using Error::Error;
};

class UnknownLipschitz : public Error {
public:
    using Error::Error;
};

class UnknownConditional : public Error {
public:
    using Error::Error;
};

class QuantizerDiverged : public Error {
public:
    using Error::Error;
};

class EmptySubtree : public Error {
public:
    using Error::Error;
};

class Infeasible : public Error {
public:
    using Error::Error;
};

class InvalidParameter : public Error {
public:
    using Error::Error;
};

/// Emits a non-fatal diagnostic. Silenced by set_warnings_enabled(false).
void warn(const std::string& message);
void set_warnings_enabled(bool enabled);

}  // namespace scentree
