#include "floq/modelfile.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "floq/expr.hpp"

namespace floq::modelfile {
namespace {

struct Line {
    std::string text;
    int no;
};

struct Section {
    std::string head;
    std::string rest;        // text after the keyword on the header line
    std::vector<Line> body;  // matrix rows
    int no;
};

std::string trim(std::string_view s) {
    while (!s.empty() && std::isspace((unsigned char)s.front())) s.remove_prefix(1);
    while (!s.empty() && std::isspace((unsigned char)s.back())) s.remove_suffix(1);
    return std::string(s);
}

// comma split outside parentheses, trimmed
std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    int depth = 0;
    std::size_t start = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '(') ++depth;
        if (s[i] == ')') --depth;
        if (s[i] == ',' && depth == 0) {
            out.push_back(trim(std::string_view(s).substr(start, i - start)));
            start = i + 1;
        }
    }
    out.push_back(trim(std::string_view(s).substr(start)));
    return out;
}

std::vector<Line> data_lines(const std::string& text) {
    std::vector<Line> out;
    std::istringstream in(text);
    std::string raw;
    int no = 0;
    while (std::getline(in, raw)) {
        ++no;
        if (auto hash = raw.find('#'); hash != std::string::npos)
            raw.erase(hash);
        std::string t = trim(raw);
        if (!t.empty()) out.push_back({std::move(t), no});
    }
    return out;
}

bool is_keyword(const std::string& word) {
    if (word == "dim" || word == "period" || word == "delays" ||
        word == "params" || word == "mass" || word == "delta" ||
        word == "discontinuities" || word == "builtin")
        return true;
    if (word.size() < 2 || word[0] != 'A') return false;
    for (std::size_t i = 1; i < word.size(); ++i)
        if (!std::isdigit((unsigned char)word[i])) return false;
    return true;
}

double const_expr(const std::string& text, int line) {
    if (text.empty()) throw FileError("empty expression", line);
    try {
        auto e = expr::Expr::parse(text, {});
        if (e.depends_on_t())
            throw FileError("'" + text + "' must be constant", line);
        return e.eval(0.0, {});
    } catch (const expr::ExprError& ex) {
        throw FileError(std::string(ex.what()) + " in '" + text + "'", line);
    }
}

// "name = value" with an identifier on the left
std::pair<std::string, std::string> key_value(const std::string& item, int line) {
    std::size_t eq = item.find('=');
    if (eq == std::string::npos)
        throw FileError("expected '<name> = <value>' in '" + item + "'", line);
    std::string key = trim(std::string_view(item).substr(0, eq));
    std::string val = trim(std::string_view(item).substr(eq + 1));
    if (key.empty() || (!std::isalpha((unsigned char)key[0]) && key[0] != '_'))
        throw FileError("bad name '" + key + "'", line);
    for (char c : key)
        if (!std::isalnum((unsigned char)c) && c != '_')
            throw FileError("bad name '" + key + "'", line);
    if (val.empty()) throw FileError("missing value for '" + key + "'", line);
    return {std::move(key), std::move(val)};
}

model::PeriodicDelaySystem from_builtin(const Section& sec) {
    std::istringstream head(sec.rest);
    std::string name;
    head >> name;
    std::string rest = trim(sec.rest.substr(
        std::min(sec.rest.size(), sec.rest.find(name) + name.size())));

    std::map<std::string, std::string> kv;
    if (!rest.empty())
        for (const auto& item : split_list(rest)) {
            auto [k, v] = key_value(item, sec.no);
            if (!kv.emplace(k, v).second)
                throw FileError("duplicate option '" + k + "'", sec.no);
        }
    auto take = [&](const char* key,
                    std::optional<double> fallback) -> double {
        auto it = kv.find(key);
        if (it == kv.end()) {
            if (!fallback)
                throw FileError(std::string("builtin ") + name +
                                    " needs option '" + key + "'",
                                sec.no);
            return *fallback;
        }
        double v = const_expr(it->second, sec.no);
        kv.erase(it);
        return v;
    };

    model::PeriodicDelaySystem sys;
    if (name == "scalar_lambert") {
        sys = model::make_scalar_lambert(take("K", std::nullopt));
    } else if (name == "mathieu_pid") {
        auto it = kv.find("controller");
        if (it == kv.end())
            throw FileError("builtin mathieu_pid needs option 'controller'",
                            sec.no);
        model::Controller ctl;
        if (it->second == "pi")
            ctl = model::Controller::PI;
        else if (it->second == "pd")
            ctl = model::Controller::PD;
        else if (it->second == "pid")
            ctl = model::Controller::PID;
        else
            throw FileError("controller must be pi, pd, or pid", sec.no);
        kv.erase(it);
        sys = model::make_mathieu_pid(
            ctl, take("nu", 4.0), take("eps", 2.0),
            take("tau", 3.0 * M_PI / 4.0), take("ki", 0.0), take("kp", 0.0),
            take("kd", 0.0));
    } else if (name == "milling") {
        double n = take("n", std::nullopt);
        if (n != std::floor(n) || n < 1)
            throw FileError("milling option 'n' must be a positive integer",
                            sec.no);
        sys = model::make_milling(static_cast<int>(n), take("K", 0.0));
    } else {
        throw FileError("unknown builtin '" + name +
                            "' (scalar_lambert, mathieu_pid, milling)",
                        sec.no);
    }
    if (!kv.empty())
        throw FileError("builtin " + name + " does not take option '" +
                            kv.begin()->first + "'",
                        sec.no);
    return sys;
}

}  // namespace

model::PeriodicDelaySystem parse(const std::string& text, std::string name) {
    auto lines = data_lines(text);

    // chunk into sections; matrix bodies are consumed by row count, so dim
    // must be known before the first A/mass section
    std::map<std::string, Section> sections;
    int dim = 0;
    std::size_t i = 0;
    while (i < lines.size()) {
        std::istringstream head(lines[i].text);
        std::string word;
        head >> word;
        if (!is_keyword(word))
            throw FileError("unknown section '" + word + "'", lines[i].no);
        Section sec;
        sec.head = word;
        sec.no = lines[i].no;
        sec.rest = trim(lines[i].text.substr(word.size()));
        ++i;
        if (word == "dim") {
            double dv = const_expr(sec.rest, sec.no);
            if (dv != std::floor(dv) || dv < 1)
                throw FileError("dim must be a positive integer", sec.no);
            dim = (int)dv;
        }
        const bool matrix = word == "mass" || word[0] == 'A';
        if (matrix && sec.rest.empty()) {
            if (dim == 0)
                throw FileError("dim must come before '" + word + "'", sec.no);
            for (int r = 0; r < dim; ++r, ++i) {
                if (i >= lines.size())
                    throw FileError(word + " needs " + std::to_string(dim) +
                                        " rows",
                                    sec.no);
                sec.body.push_back(lines[i]);
            }
        } else if (matrix && dim != 1) {
            throw FileError("inline " + word + " entry needs dim 1", sec.no);
        }
        const int sec_no = sec.no;
        if (!sections.emplace(word, std::move(sec)).second)
            throw FileError("duplicate section '" + word + "'", sec_no);
    }

    auto section = [&](const char* key) -> const Section* {
        auto it = sections.find(key);
        return it == sections.end() ? nullptr : &it->second;
    };

    if (const Section* b = section("builtin")) {
        if (sections.size() > 1)
            throw FileError("builtin admits no other section", b->no);
        auto sys = from_builtin(*b);
        sys.validate();
        return sys;
    }

    for (const char* req : {"dim", "period", "delays"})
        if (!section(req))
            throw FileError(std::string("missing section '") + req + "'", 0);

    model::PeriodicDelaySystem sys;
    sys.name = std::move(name);
    sys.d = dim;
    if (sys.d < 1) throw FileError("dim must be positive", section("dim")->no);
    sys.T = const_expr(section("period")->rest, section("period")->no);

    for (const auto& d : split_list(section("delays")->rest))
        sys.delays.push_back(const_expr(d, section("delays")->no));

    if (const Section* p = section("params")) {
        std::vector<double> defaults;
        for (const auto& item : split_list(p->rest)) {
            auto [key, val] = key_value(item, p->no);
            for (const auto& seen : sys.param_names)
                if (seen == key)
                    throw FileError("duplicate parameter '" + key + "'", p->no);
            sys.param_names.push_back(key);
            defaults.push_back(const_expr(val, p->no));
        }
        sys.param_defaults = Eigen::Map<const Eigen::VectorXd>(
            defaults.data(), (long)defaults.size());
    }

    for (std::size_t j = 0; j < sys.delays.size(); ++j) {
        const std::string key = "A" + std::to_string(j);
        const Section* a = section(key.c_str());
        if (!a) throw FileError("missing section '" + key + "'", 0);
        std::vector<expr::Expr> entries;
        auto parse_entry = [&](const std::string& s, int line) {
            if (s.empty()) throw FileError("empty entry", line);
            try {
                entries.push_back(expr::Expr::parse(s, sys.param_names));
            } catch (const expr::ExprError& ex) {
                throw FileError(std::string(ex.what()) + " in '" + s + "'",
                                line);
            }
        };
        if (!a->rest.empty()) {
            parse_entry(a->rest, a->no);
        } else {
            for (const auto& row : a->body) {
                auto items = split_list(row.text);
                if ((int)items.size() != sys.d)
                    throw FileError(key + " row needs " +
                                        std::to_string(sys.d) + " entries",
                                    row.no);
                for (const auto& item : items) parse_entry(item, row.no);
            }
        }
        sys.coeffs.push_back(model::Coeff::from_entries(sys.d, entries, sys.T));
    }
    for (const auto& [key, sec] : sections)
        if (key[0] == 'A' && (key.size() > 6 ||
                              std::stoul(key.substr(1)) >= sys.delays.size()))
            throw FileError("section '" + key + "' has no matching delay",
                            sec.no);

    if (const Section* m = section("mass")) {
        Eigen::MatrixXd mass(sys.d, sys.d);
        std::string entry = m->rest;  // dim-1 inline form
        for (int r = 0; r < sys.d; ++r) {
            const Line& row = m->body.empty() ? Line{entry, m->no} : m->body[r];
            auto items = split_list(row.text);
            if ((int)items.size() != sys.d)
                throw FileError("mass row needs " + std::to_string(sys.d) +
                                    " entries",
                                row.no);
            for (int c = 0; c < sys.d; ++c)
                mass(r, c) = const_expr(items[c], row.no);
        }
        sys.mass = mass.sparseView();
    }

    if (const Section* d = section("delta"))
        sys.delta_hint = const_expr(d->rest, d->no);

    if (const Section* d = section("discontinuities"))
        for (const auto& item : split_list(d->rest))
            sys.discontinuities.push_back(const_expr(item, d->no));

    sys.validate();
    return sys;
}

model::PeriodicDelaySystem load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileError("cannot open '" + path + "'", 0);
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string stem = path;
    if (auto slash = stem.find_last_of('/'); slash != std::string::npos)
        stem.erase(0, slash + 1);
    if (auto dot = stem.find_last_of('.'); dot != std::string::npos)
        stem.erase(dot);
    return parse(buf.str(), std::move(stem));
}

}  // namespace floq::modelfile
