#include "floq/report.hpp"

#include <charconv>
#include <cstdio>

#include <json.hpp>

namespace floq::report {
namespace {

using nlohmann::json;

const char* stage_name(solve::Stage s) {
    return s == solve::Stage::collocation ? "collocation" : "corrected";
}

const char* scheme_name(charfun::Scheme s) {
    return s == charfun::Scheme::rk4 ? "rk4" : "trap";
}

Meta spectrum_meta(const solve::SpectrumReport& rep, const Meta& extra) {
    Meta m;
    m.emplace_back("M", std::to_string(rep.M));
    m.emplace_back("delta", g17(rep.delta));
    m.emplace_back("scheme", scheme_name(rep.scheme));
    m.emplace_back("discarded", std::to_string(rep.discarded));
    m.emplace_back("stage1_seconds", g17(rep.stage1_seconds));
    m.emplace_back("stage2_seconds", g17(rep.stage2_seconds));
    m.insert(m.end(), extra.begin(), extra.end());
    return m;
}

double parse_double(std::string_view field, int line_no) {
    double out = 0.0;
    const char* first = field.data();
    const char* last = first + field.size();
    auto [p, ec] = std::from_chars(first, last, out);
    if (ec != std::errc{} || p != last)
        throw ParseError("line " + std::to_string(line_no) +
                         ": not a number: '" + std::string(field) + "'");
    return out;
}

// Splits one CSV line; no quoting, fields here never contain commas.
std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

// Hands non-comment, non-empty lines to `row`, 1-based numbering.
template <typename F>
void for_data_lines(const std::string& text, F&& row) {
    std::size_t start = 0;
    int line_no = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        std::string_view line(text.data() + start, end - start);
        ++line_no;
        start = end + 1;
        if (line.empty() || line.front() == '#') continue;
        row(line, line_no);
    }
}

json meta_object(const Meta& meta) {
    json m = json::object();
    for (const auto& [k, v] : meta) m[k] = v;
    return m;
}

Meta meta_pairs(const json& doc) {
    Meta m;
    if (!doc.contains("meta")) return m;
    for (const auto& [k, v] : doc.at("meta").items())
        m.emplace_back(k, v.get<std::string>());
    return m;
}

}  // namespace

std::string g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string spectrum_csv(const solve::SpectrumReport& rep, const Meta& extra) {
    std::string out;
    for (const auto& [k, v] : spectrum_meta(rep, extra))
        out += "# " + k + " = " + v + "\n";
    out += "re,im,modulus,residual,stage\n";
    for (const auto& p : rep.pairs) {
        out += g17(p.mu.real()) + "," + g17(p.mu.imag()) + "," +
               g17(std::abs(p.mu)) + "," + g17(p.residual_right) + "," +
               stage_name(p.stage) + "\n";
    }
    return out;
}

std::string spectrum_json(const solve::SpectrumReport& rep, const Meta& extra) {
    json doc;
    doc["kind"] = "spectrum";
    doc["meta"] = meta_object(spectrum_meta(rep, extra));
    doc["columns"] = {"re", "im", "modulus", "residual", "stage"};
    json rows = json::array();
    for (const auto& p : rep.pairs)
        rows.push_back({p.mu.real(), p.mu.imag(), std::abs(p.mu),
                        p.residual_right, stage_name(p.stage)});
    doc["rows"] = std::move(rows);
    return doc.dump(2) + "\n";
}

std::vector<PairRow> read_spectrum_csv(const std::string& text) {
    std::vector<PairRow> out;
    bool header_seen = false;
    for_data_lines(text, [&](std::string_view line, int line_no) {
        if (!header_seen) {
            if (line != "re,im,modulus,residual,stage")
                throw ParseError("line " + std::to_string(line_no) +
                                 ": unexpected spectrum header");
            header_seen = true;
            return;
        }
        auto f = split_fields(line);
        if (f.size() != 5)
            throw ParseError("line " + std::to_string(line_no) +
                             ": expected 5 fields, got " +
                             std::to_string(f.size()));
        PairRow r;
        r.re = parse_double(f[0], line_no);
        r.im = parse_double(f[1], line_no);
        r.modulus = parse_double(f[2], line_no);
        r.residual = parse_double(f[3], line_no);
        r.stage = std::string(f[4]);
        out.push_back(std::move(r));
    });
    if (!header_seen) throw ParseError("no spectrum header found");
    return out;
}

std::vector<PairRow> read_spectrum_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(e.what());
    }
    if (doc.value("kind", "") != "spectrum")
        throw ParseError("document kind is not 'spectrum'");
    std::vector<PairRow> out;
    for (const auto& row : doc.at("rows")) {
        if (row.size() != 5) throw ParseError("spectrum row needs 5 entries");
        PairRow r;
        r.re = row[0].get<double>();
        r.im = row[1].get<double>();
        r.modulus = row[2].get<double>();
        r.residual = row[3].get<double>();
        r.stage = row[4].get<std::string>();
        out.push_back(std::move(r));
    }
    return out;
}

std::string table_csv(const Table& t) {
    std::string out = "# kind = " + t.kind + "\n";
    for (const auto& [k, v] : t.meta) out += "# " + k + " = " + v + "\n";
    for (std::size_t c = 0; c < t.columns.size(); ++c)
        out += (c ? "," : "") + t.columns[c];
    out += "\n";
    for (const auto& row : t.rows) {
        for (std::size_t c = 0; c < row.size(); ++c)
            out += (c ? "," : "") + g17(row[c]);
        out += "\n";
    }
    return out;
}

std::string table_json(const Table& t) {
    json doc;
    doc["kind"] = t.kind;
    doc["meta"] = meta_object(t.meta);
    doc["columns"] = t.columns;
    doc["rows"] = t.rows;
    return doc.dump(2) + "\n";
}

Table read_table_csv(const std::string& text) {
    Table t;
    // comment lines carry the metadata, so scrape them before the data pass
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        std::string_view line(text.data() + start, end - start);
        start = end + 1;
        if (line.empty()) continue;
        if (line.front() != '#') break;
        line.remove_prefix(1);
        std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) continue;
        auto trim = [](std::string_view s) {
            while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
            while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
            return std::string(s);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key == "kind")
            t.kind = val;
        else
            t.meta.emplace_back(std::move(key), std::move(val));
    }
    bool header_seen = false;
    for_data_lines(text, [&](std::string_view line, int line_no) {
        if (!header_seen) {
            for (auto f : split_fields(line)) t.columns.emplace_back(f);
            header_seen = true;
            return;
        }
        auto f = split_fields(line);
        if (f.size() != t.columns.size())
            throw ParseError("line " + std::to_string(line_no) +
                             ": expected " + std::to_string(t.columns.size()) +
                             " fields, got " + std::to_string(f.size()));
        std::vector<double> row;
        row.reserve(f.size());
        for (auto field : f) row.push_back(parse_double(field, line_no));
        t.rows.push_back(std::move(row));
    });
    if (!header_seen) throw ParseError("no table header found");
    return t;
}

Table read_table_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(e.what());
    }
    Table t;
    t.kind = doc.value("kind", "");
    t.meta = meta_pairs(doc);
    for (const auto& c : doc.at("columns")) t.columns.push_back(c.get<std::string>());
    for (const auto& row : doc.at("rows")) {
        std::vector<double> r;
        for (const auto& x : row) r.push_back(x.get<double>());
        if (r.size() != t.columns.size())
            throw ParseError("table row width does not match columns");
        t.rows.push_back(std::move(r));
    }
    return t;
}

}  // namespace floq::report
