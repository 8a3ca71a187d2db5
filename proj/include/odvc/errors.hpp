#pragma once

#include <stdexcept>
#include <string>

namespace odvc {

/// Root of every error the codec reports. Shape and argument problems use
/// std::invalid_argument instead.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing or unreadable/unwritable file.
class IoError : public Error {
 public:
  using Error::Error;
};

/// File exists but its content is not a supported format.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Frame dimensions violate the multiple-of-16 contract.
class ResolutionError : public Error {
 public:
  using Error::Error;
};

/// Truncated stream, checksum failure, or malformed container.
class CorruptStreamError : public Error {
 public:
  using Error::Error;
};

/// Bitstream was produced by a different model than the one decoding it.
class ModelMismatchError : public Error {
 public:
  using Error::Error;
};

/// Decoder output disagrees with the encoder-side reconstruction.
class VerificationError : public Error {
 public:
  using Error::Error;
};

/// An external I-frame codec could not be located or failed to run.
class CodecUnavailableError : public Error {
 public:
  using Error::Error;
};

/// Entropy model cannot be turned into a finite coding table.
class DegeneratePriorError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace odvc
