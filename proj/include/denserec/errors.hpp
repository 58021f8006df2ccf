#pragma once

#include <stdexcept>
#include <string>

namespace denserec {

// Error taxonomy, mapped onto CLI exit codes by the tool:
//   config_error -> 2, data_error -> 3, numeric_error -> 4.
// shape_error / contract_error indicate misuse of a library contract and
// surface as generic failures (exit 1) if they escape to the CLI.

struct shape_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct contract_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace denserec
