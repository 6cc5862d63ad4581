#ifndef RISKRANK_ERRORS_HPP
#define RISKRANK_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace riskrank {

enum class ErrorKind {
    InputShapeError,
    InsufficientObservations,
    SingularDesign,
    DegenerateDistribution,
    DegenerateDownside,
    EmptyCorpus,
    EmptyDocument,
    EmptyOutput,
    InternalInvariantViolation,
    MissingTrace,
    NonFiniteGradient,
    NoValidPairs,
    NoValidTriplets,
    MissingRiskGroup,
    DegenerateRanking,
    DegenerateDifferences,
    PairingError,
    NotFound,
    IoError,
    ConfigError,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace riskrank

#endif
