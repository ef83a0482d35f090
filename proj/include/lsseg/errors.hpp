#pragma once

#include <stdexcept>
#include <string>

namespace lsseg {

/// Base of every error raised by the library. The CLI maps subclasses onto
/// exit codes: UsageError -> 2, everything else -> 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or grid dimensions do not fit together.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// API called out of order or with arguments outside its contract.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Input data violates an invariant (bad label, empty mask, ...).
class DataError : public Error {
public:
    using Error::Error;
};

/// File content could not be decoded.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value or combination.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Optimization produced non-finite values.
class TrainingError : public Error {
public:
    using Error::Error;
};

/// A cascade stage could not produce its result.
class PipelineError : public Error {
public:
    using Error::Error;
};

/// Filesystem access failed.
class IoError : public Error {
public:
    using Error::Error;
};

/// Runs f(); any library error escaping it is re-raised as the same type with
/// `prefix` prepended to its message.
template <class F>
auto with_error_prefix(const std::string& prefix, F&& f) {
    try {
        return f();
    } catch (const ShapeError& e) {
        throw ShapeError(prefix + e.what());
    } catch (const UsageError& e) {
        throw UsageError(prefix + e.what());
    } catch (const DataError& e) {
        throw DataError(prefix + e.what());
    } catch (const FormatError& e) {
        throw FormatError(prefix + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(prefix + e.what());
    } catch (const TrainingError& e) {
        throw TrainingError(prefix + e.what());
    } catch (const PipelineError& e) {
        throw PipelineError(prefix + e.what());
    } catch (const IoError& e) {
        throw IoError(prefix + e.what());
    } catch (const Error& e) {
        throw Error(prefix + e.what());
    }
}

}  // namespace lsseg
