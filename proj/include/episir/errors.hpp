#pragma once

#include <stdexcept>
#include <string>

namespace episir {

// Error categories map onto CLI exit codes: ConfigError -> 2, DataError -> 3,
// EngineError -> 4. Everything thrown by the library derives from Error.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct EngineError : Error {
  using Error::Error;
};

// spatial graph
struct UnknownAreaId : DataError {
  using DataError::DataError;
};
struct SelfLoop : DataError {
  using DataError::DataError;
};
struct IslandArea : DataError {
  using DataError::DataError;
};
struct IndexOutOfRange : DataError {
  using DataError::DataError;
};

// data pipeline
struct EmptyDateRange : DataError {
  using DataError::DataError;
};
struct NonMonotoneDates : DataError {
  using DataError::DataError;
};
struct TooShortSeries : DataError {
  using DataError::DataError;
};
struct NegativeLambda : DataError {
  using DataError::DataError;
};
struct RateOutOfRange : ConfigError {
  using ConfigError::ConfigError;
};
struct LengthMismatch : DataError {
  using DataError::DataError;
};

// model catalog / evaluation
struct UnknownPreset : ConfigError {
  using ConfigError::ConfigError;
};
struct DepletedSusceptibles : DataError {
  using DataError::DataError;
};
struct NonFiniteLogMean : EngineError {
  using EngineError::EngineError;
};

// inference
struct PseudoPriorUnset : EngineError {
  using EngineError::EngineError;
};
struct NonFiniteLikelihoodAtInit : EngineError {
  using EngineError::EngineError;
};
struct AdaptationDiverged : EngineError {
  using EngineError::EngineError;
};

// diagnostics
struct TooFewDraws : DataError {
  using DataError::DataError;
};
struct ChainTooShort : DataError {
  using DataError::DataError;
};

// simulator
struct ExplosiveTrajectory : EngineError {
  using EngineError::EngineError;
};

// cli
struct MixedDataDigests : DataError {
  using DataError::DataError;
};

}  // namespace episir
