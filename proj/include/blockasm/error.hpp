#pragma once

#include <stdexcept>
#include <string>

namespace blockasm {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidCell : Error {
  using Error::Error;
};

// A placement whose footprint leaves the grid.
struct OutOfBounds : Error {
  using Error::Error;
};

struct InvalidAction : Error {
  using Error::Error;
};

struct InvalidState : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

}  // namespace blockasm
