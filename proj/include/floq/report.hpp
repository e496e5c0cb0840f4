#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "floq/solve.hpp"

namespace floq::report {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Meta = std::vector<std::pair<std::string, std::string>>;

// One multiplier row as written to disk.
struct PairRow {
    double re = 0.0;
    double im = 0.0;
    double modulus = 0.0;
    double residual = 0.0;
    std::string stage;
};

// Named-column numeric table: convergence sweeps, optimization traces.
struct Table {
    std::string kind;
    Meta meta;
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

/// 17-significant-digit decimal text; reading it back yields the identical
/// double, which is what makes every writer here round-trip bit-exactly.
std::string g17(double x);

// Spectrum documents. CSV carries metadata in leading '# key = value'
// comment lines and the fixed column header re,im,modulus,residual,stage;
// JSON uses the same records-plus-metadata envelope as tables.
std::string spectrum_csv(const solve::SpectrumReport& rep,
                         const Meta& extra = {});
std::string spectrum_json(const solve::SpectrumReport& rep,
                          const Meta& extra = {});
std::vector<PairRow> read_spectrum_csv(const std::string& text);
std::vector<PairRow> read_spectrum_json(const std::string& text);

std::string table_csv(const Table& t);
std::string table_json(const Table& t);
Table read_table_csv(const std::string& text);
Table read_table_json(const std::string& text);

}  // namespace floq::report
