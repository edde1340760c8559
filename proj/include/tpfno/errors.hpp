// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tpfno {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define TPFNO_DEFINE_ERROR(Name)          \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  };

TPFNO_DEFINE_ERROR(DimensionMismatch)
TPFNO_DEFINE_ERROR(DTypeMismatch)
TPFNO_DEFINE_ERROR(MalformedHeader)
TPFNO_DEFINE_ERROR(TruncatedPayload)
TPFNO_DEFINE_ERROR(UnknownDType)
TPFNO_DEFINE_ERROR(UnknownLabel)
TPFNO_DEFINE_ERROR(ExtentMismatch)
TPFNO_DEFINE_ERROR(InfeasiblePartition)
TPFNO_DEFINE_ERROR(ShapeMismatch)
TPFNO_DEFINE_ERROR(CollectiveMismatch)
TPFNO_DEFINE_ERROR(CommTimeout)
TPFNO_DEFINE_ERROR(CommAborted)
TPFNO_DEFINE_ERROR(TransportError)
TPFNO_DEFINE_ERROR(ConfigError)
TPFNO_DEFINE_ERROR(NonFiniteLoss)
TPFNO_DEFINE_ERROR(ReplicationError)
TPFNO_DEFINE_ERROR(UnknownCallable)
TPFNO_DEFINE_ERROR(StoreWriteError)
TPFNO_DEFINE_ERROR(TaskFailed)
TPFNO_DEFINE_ERROR(FetchTimeout)

#undef TPFNO_DEFINE_ERROR

}  // namespace tpfno
