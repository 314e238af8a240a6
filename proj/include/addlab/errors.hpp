#ifndef ADDLAB_ERRORS_HPP
#define ADDLAB_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace addlab {

/// Base class for every domain error raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or violated precondition.
struct ConfigError : Error {
    using Error::Error;
};

/// A persisted file failed validation. The defect kind distinguishes the
/// failure classes so callers and tests can tell them apart.
struct FormatError : Error {
    enum class Defect {
        bad_magic,
        version_mismatch,
        truncated,
        checksum_mismatch,
        schema,
        shape,
    };

    FormatError(Defect d, const std::string& msg) : Error(msg), defect(d) {}

    Defect defect;
};

/// Training produced a non-finite loss.
struct DivergenceError : Error {
    DivergenceError(int epoch_, int batch_, const std::string& msg)
        : Error(msg), epoch(epoch_), batch(batch_) {}

    int epoch;
    int batch;
};

}  // namespace addlab

#endif
