#ifndef DISTILLERY_CLI_HPP_
#define DISTILLERY_CLI_HPP_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "distillery/errors.hpp"

namespace distillery::cli {

// 0 ok, 1 usage, 2 config, 3 numeric fault, 4 I/O (including bad files).
int exit_code(ErrorKind kind);

// Seed for one pipeline phase, derived from the user's --seed.
std::uint64_t phase_seed(std::uint64_t seed, std::string_view phase);

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const argv[]);

}  // namespace distillery::cli

#endif  // DISTILLERY_CLI_HPP_
