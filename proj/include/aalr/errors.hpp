#pragma once

#include <stdexcept>
#include <string>

namespace aalr {

// Error taxonomy mirrors the CLI exit codes: validation -> 1, I/O -> 2,
// numerical contract violation -> 3.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct validation_error : error {
  using error::error;
};

struct io_error : error {
  using error::error;
};

// Malformed file content (bad magic, truncated payload, ...). Subtype of
// io_error so the CLI maps it to exit code 2.
struct format_error : io_error {
  using io_error::io_error;
};

struct contract_error : error {
  using error::error;
};

}  // namespace aalr
