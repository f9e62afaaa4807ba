#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecgadv::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/// Bad flags, missing inputs. Exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs one `ecgadv <command> ...` invocation. args excludes the program
/// name. Failures print one line "error: <class>: <message>" to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Machine-readable class for an in-flight exception, e.g.
/// "checkpoint_error.kind_mismatch".
std::string error_class(const std::exception& e);

}  // namespace ecgadv::cli
