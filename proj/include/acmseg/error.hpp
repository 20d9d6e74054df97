#pragma once

#include <stdexcept>
#include <string>

namespace acm {

enum class Errc {
  ShapeMismatch,
  DtypeMismatch,
  InvalidAxis,
  DivisionByZero,
  NotScalar,
  TapeConsumed,
  NonFiniteOutput,
  NonIntegralOutputSize,
  OddSpatialDim,
  InvalidConfig,
  ChecksumMismatch,
  ConfigMismatch,
  LabelOutOfRange,
  EmptyDataset,
  NonFiniteLoss,
  Io,
  BadMagic,
  BadVersion,
  LengthMismatch,
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& what);

}  // namespace acm
