#include "riskrank/errors.hpp"

namespace riskrank {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InputShapeError: return "InputShapeError";
        case ErrorKind::InsufficientObservations: return "InsufficientObservations";
        case ErrorKind::SingularDesign: return "SingularDesign";
        case ErrorKind::DegenerateDistribution: return "DegenerateDistribution";
        case ErrorKind::DegenerateDownside: return "DegenerateDownside";
        case ErrorKind::EmptyCorpus: return "EmptyCorpus";
        case ErrorKind::EmptyDocument: return "EmptyDocument";
        case ErrorKind::EmptyOutput: return "EmptyOutput";
        case ErrorKind::InternalInvariantViolation: return "InternalInvariantViolation";
        case ErrorKind::MissingTrace: return "MissingTrace";
        case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
        case ErrorKind::NoValidPairs: return "NoValidPairs";
        case ErrorKind::NoValidTriplets: return "NoValidTriplets";
        case ErrorKind::MissingRiskGroup: return "MissingRiskGroup";
        case ErrorKind::DegenerateRanking: return "DegenerateRanking";
        case ErrorKind::DegenerateDifferences: return "DegenerateDifferences";
        case ErrorKind::PairingError: return "PairingError";
        case ErrorKind::NotFound: return "NotFound";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::ConfigError: return "ConfigError";
    }
    return "UnknownError";
}

} // namespace riskrank
