#pragma once

#include <string>

#include "floq/model.hpp"

namespace floq::modelfile {

// Parse and IO failures, carrying the 1-based line of the offending text
// (0 when no line applies, e.g. an unreadable file).
struct FileError : model::ModelError {
    int line;
    FileError(const std::string& msg, int line_no)
        : model::ModelError(line_no > 0 ? "line " + std::to_string(line_no) +
                                              ": " + msg
                                        : msg),
          line(line_no) {}
};

// Line-oriented model text. '#' starts a comment; sections are
//   dim N
//   period <const expr>
//   delays <const expr>, ...
//   params <name> = <const expr>, ...
//   A0 .. Ah    (inline entry when dim is 1, else dim rows of dim entries)
//   mass        (dim rows of dim constant entries)
//   delta <const expr>
//   discontinuities <const expr>, ...
//   builtin <name> <key> = <value>, ...
// Coefficient entries may use t and the declared parameters; every other
// expression must be constant. `builtin` constructs a packaged system
// (scalar_lambert, mathieu_pid, milling) and admits no other section.
// The result has been validated.
model::PeriodicDelaySystem parse(const std::string& text, std::string name);

/// parse() on the file's content; the system is named by the path's stem.
model::PeriodicDelaySystem load(const std::string& path);

}  // namespace floq::modelfile
