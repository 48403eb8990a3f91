#pragma once

// Experiment configuration: flat key=value text with [section] headers.
// Every key is declared in one table; unknown keys and sections are errors.

#include "coarsegrain.hpp"
#include "fem.hpp"
#include "field.hpp"
#include "linalg.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace hcg {

struct ExperimentConfig {
    // [run]
    std::vector<std::uint64_t> seeds{1};
    int threads = 1;
    std::string out = "out";
    std::int64_t budget = 20000;
    std::string snapshots;  // directory of field_<seed>.cgf1 files; empty: generate inline

    // [ensemble]
    EnsembleSpec ensemble;

    // [geometry]
    bool adapted = false;
    int k0 = 4;

    // [solver]
    SolveConfig solver;
    int refine = 1;

    // [scales]
    int m = 3;
    int m_min = 1;
    double s_exponent = 0.25;
    double gamma = 0.25;

    // [homogenized]
    std::string hom_source = "auto";  // auto | closed_form | estimate | given
    std::vector<double> s_bar;
    std::vector<double> k_bar;
    int estimate_m = -1;  // -1: use m

    // [harness]
    int k = 1;
    std::string boundary = "affine";  // affine | polynomial | random
    std::vector<double> direction;    // default e_1
    std::vector<double> monomials;    // triples i, j, coefficient
    double random_length = 0.0;       // 0: 3^m / 3
    std::string approx_direction = "forward";
    double expect = std::numeric_limits<double>::quiet_NaN();
    double tolerance = 1e-6;
    double max_ratio = 0.0;  // 0: no bound
    std::vector<double> radii;
    double r_max = 0.0;  // 0: largest ball inside the level-m cube
    double min_gap = 1e3;
    double residual_tol = 1e-8;
    double x_hat = 1.0;
    double theta_hat = 1.0;
    int dims_level = 3;

    void validate() const;
};

namespace detail {

inline std::string trim(const std::string& s)
{
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) {
        return {};
    }
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& v)
{
    double x = 0.0;
    const char* first = v.data();
    const char* last = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(first, last, x);
    if (ec != std::errc() || ptr != last) {
        throw ValidationError("config: '" + key + "' expects a number, got '" + v + "'");
    }
    return x;
}

inline std::int64_t parse_int(const std::string& key, const std::string& v)
{
    std::int64_t x = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ValidationError("config: '" + key + "' expects an integer, got '" + v + "'");
    }
    return x;
}

inline bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "1" || v == "yes") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no") {
        return false;
    }
    throw ValidationError("config: '" + key + "' expects true/false, got '" + v + "'");
}

inline std::vector<std::string> split(const std::string& v, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(v);
    while (std::getline(is, cur, sep)) {
        cur = trim(cur);
        if (!cur.empty()) {
            out.push_back(cur);
        }
    }
    return out;
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v)
{
    std::vector<double> out;
    for (const auto& t : split(v, ',')) {
        out.push_back(parse_double(key, t));
    }
    return out;
}

/// "1,2,5" or "1-20" or a mix ("1-3,7").
inline std::vector<std::uint64_t> parse_seeds(const std::string& key, const std::string& v)
{
    std::vector<std::uint64_t> out;
    for (const auto& t : split(v, ',')) {
        const auto dash = t.find('-');
        if (dash == std::string::npos) {
            out.push_back(static_cast<std::uint64_t>(parse_int(key, t)));
            continue;
        }
        const auto a = parse_int(key, trim(t.substr(0, dash)));
        const auto b = parse_int(key, trim(t.substr(dash + 1)));
        if (a < 0 || b < a) {
            throw ValidationError("config: bad seed range '" + t + "'");
        }
        for (auto s = a; s <= b; ++s) {
            out.push_back(static_cast<std::uint64_t>(s));
        }
    }
    return out;
}

inline std::string fmt_double(double x)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

inline std::string fmt_list(const std::vector<double>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        s += (i ? "," : "") + fmt_double(v[i]);
    }
    return s;
}

inline std::string fmt_seeds(const std::vector<std::uint64_t>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        s += (i ? "," : "") + std::to_string(v[i]);
    }
    return s;
}

struct KeyDef {
    std::string name;  // section.key
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::vector<KeyDef>& key_table()
{
    using C = ExperimentConfig;
    static const std::vector<KeyDef> table = [] {
        std::vector<KeyDef> t;
        auto num = [&t](const std::string& name, auto member) {
            t.push_back({name, [name, member](C& c, const std::string& v) { c.*member = parse_double(name, v); },
                         [member](const C& c) { return fmt_double(c.*member); }});
        };
        auto integer = [&t](const std::string& name, auto member) {
            t.push_back({name,
                         [name, member](C& c, const std::string& v) {
                             c.*member = static_cast<std::remove_reference_t<decltype(c.*member)>>(parse_int(name, v));
                         },
                         [member](const C& c) { return std::to_string(c.*member); }});
        };
        auto text = [&t](const std::string& name, auto member) {
            t.push_back({name, [member](C& c, const std::string& v) { c.*member = v; },
                         [member](const C& c) { return c.*member; }});
        };
        auto list = [&t](const std::string& name, auto member) {
            t.push_back({name, [name, member](C& c, const std::string& v) { c.*member = parse_list(name, v); },
                         [member](const C& c) { return fmt_list(c.*member); }});
        };
        auto ens_num = [&t](const std::string& name, auto member) {
            t.push_back({name,
                         [name, member](C& c, const std::string& v) { c.ensemble.*member = parse_double(name, v); },
                         [member](const C& c) { return fmt_double(c.ensemble.*member); }});
        };

        t.push_back({"run.seeds", [](C& c, const std::string& v) { c.seeds = parse_seeds("run.seeds", v); },
                     [](const C& c) { return fmt_seeds(c.seeds); }});
        integer("run.threads", &C::threads);
        text("run.out", &C::out);
        integer("run.budget", &C::budget);
        text("run.snapshots", &C::snapshots);

        t.push_back({"ensemble.generator", [](C& c, const std::string& v) { c.ensemble.generator = v; },
                     [](const C& c) { return c.ensemble.generator; }});
        t.push_back({"ensemble.d",
                     [](C& c, const std::string& v) { c.ensemble.d = static_cast<int>(parse_int("ensemble.d", v)); },
                     [](const C& c) { return std::to_string(c.ensemble.d); }});
        t.push_back({"ensemble.L", [](C& c, const std::string& v) { c.ensemble.L = parse_int("ensemble.L", v); },
                     [](const C& c) { return std::to_string(c.ensemble.L); }});
        ens_num("ensemble.sigma1", &EnsembleSpec::sigma1);
        ens_num("ensemble.sigma2", &EnsembleSpec::sigma2);
        ens_num("ensemble.p", &EnsembleSpec::p);
        t.push_back({"ensemble.axis",
                     [](C& c, const std::string& v) {
                         c.ensemble.axis = static_cast<int>(parse_int("ensemble.axis", v));
                     },
                     [](const C& c) { return std::to_string(c.ensemble.axis); }});
        ens_num("ensemble.intensity", &EnsembleSpec::intensity);
        ens_num("ensemble.radius", &EnsembleSpec::radius);
        ens_num("ensemble.sigma_bg", &EnsembleSpec::sigma_bg);
        ens_num("ensemble.sigma_inc", &EnsembleSpec::sigma_inc);
        ens_num("ensemble.correlation", &EnsembleSpec::correlation);
        ens_num("ensemble.amplitude", &EnsembleSpec::amplitude);
        t.push_back({"ensemble.s", [](C& c, const std::string& v) { c.ensemble.s_const = parse_list("ensemble.s", v); },
                     [](const C& c) { return fmt_list(c.ensemble.s_const); }});
        t.push_back({"ensemble.k", [](C& c, const std::string& v) { c.ensemble.k_const = parse_list("ensemble.k", v); },
                     [](const C& c) { return fmt_list(c.ensemble.k_const); }});

        t.push_back({"geometry.adapted",
                     [](C& c, const std::string& v) { c.adapted = parse_bool("geometry.adapted", v); },
                     [](const C& c) { return std::string(c.adapted ? "true" : "false"); }});
        integer("geometry.k0", &C::k0);

        t.push_back({"solver.tol_rel",
                     [](C& c, const std::string& v) { c.solver.tol_rel = parse_double("solver.tol_rel", v); },
                     [](const C& c) { return fmt_double(c.solver.tol_rel); }});
        t.push_back({"solver.max_iter",
                     [](C& c, const std::string& v) {
                         c.solver.max_iter = static_cast<int>(parse_int("solver.max_iter", v));
                     },
                     [](const C& c) { return std::to_string(c.solver.max_iter); }});
        t.push_back({"solver.kind", [](C& c, const std::string& v) { c.solver.solver_kind = v; },
                     [](const C& c) { return c.solver.solver_kind; }});
        integer("solver.refine", &C::refine);

        integer("scales.m", &C::m);
        integer("scales.m_min", &C::m_min);
        num("scales.s_exponent", &C::s_exponent);
        num("scales.gamma", &C::gamma);

        text("homogenized.source", &C::hom_source);
        list("homogenized.s_bar", &C::s_bar);
        list("homogenized.k_bar", &C::k_bar);
        integer("homogenized.estimate_m", &C::estimate_m);

        integer("harness.k", &C::k);
        text("harness.boundary", &C::boundary);
        list("harness.direction", &C::direction);
        list("harness.monomials", &C::monomials);
        num("harness.random_length", &C::random_length);
        text("harness.approx_direction", &C::approx_direction);
        num("harness.expect", &C::expect);
        num("harness.tolerance", &C::tolerance);
        num("harness.max_ratio", &C::max_ratio);
        list("harness.radii", &C::radii);
        num("harness.r_max", &C::r_max);
        num("harness.min_gap", &C::min_gap);
        num("harness.residual_tol", &C::residual_tol);
        num("harness.x_hat", &C::x_hat);
        num("harness.theta_hat", &C::theta_hat);
        integer("harness.dims_level", &C::dims_level);
        return t;
    }();
    return table;
}

}  // namespace detail

inline void ExperimentConfig::validate() const
{
    if (seeds.empty()) {
        throw ValidationError("config: run.seeds must not be empty");
    }
    if (threads < 1) {
        throw ValidationError("config: run.threads must be >= 1");
    }
    if (budget < 1) {
        throw ValidationError("config: run.budget must be positive");
    }
    if (ensemble.d != 1 && ensemble.d != 2) {
        throw ValidationError("config: ensemble.d must be 1 or 2");
    }
    solver.validate();
    if (refine < 1) {
        throw ValidationError("config: solver.refine must be >= 1");
    }
    if (m < 0 || m_min < 0 || m_min > m) {
        throw ValidationError("config: need 0 <= scales.m_min <= scales.m");
    }
    if (!(s_exponent > 0.0 && s_exponent < 0.5)) {
        throw ValidationError("config: scales.s_exponent must lie in (0, 1/2)");
    }
    if (!(gamma >= 0.0 && gamma < 2.0 * s_exponent)) {
        throw ValidationError("config: scales.gamma must lie in [0, 2 s_exponent)");
    }
    // Random ensembles have period L = 3^j; scales beyond one period would
    // only repeat the same cells.
    const auto& g = ensemble.generator;
    if (g == "checkerboard" || g == "poisson" || g == "stream" || g == "lognormal") {
        if (!is_power_of_three(ensemble.L)) {
            throw ValidationError("config: ensemble.L must be a power of 3 for random generators");
        }
        const int lmax = log3_exact(ensemble.L);
        if (m > lmax || (estimate_m > lmax)) {
            throw ValidationError("config: scale " + std::to_string(std::max(m, estimate_m)) +
                                  " exceeds log3(L) = " + std::to_string(lmax));
        }
    }
    if (hom_source != "auto" && hom_source != "closed_form" && hom_source != "estimate" && hom_source != "given") {
        throw ValidationError("config: homogenized.source must be auto, closed_form, estimate or given");
    }
    if (hom_source == "given" && s_bar.size() != static_cast<std::size_t>(ensemble.d * ensemble.d)) {
        throw ValidationError("config: homogenized.s_bar needs d*d entries");
    }
    if (k < 0 || k > 6) {
        throw ValidationError("config: harness.k must lie in 0..6");
    }
    if (boundary != "affine" && boundary != "polynomial" && boundary != "random") {
        throw ValidationError("config: harness.boundary must be affine, polynomial or random");
    }
    if (!direction.empty() && direction.size() != static_cast<std::size_t>(ensemble.d)) {
        throw ValidationError("config: harness.direction needs d entries");
    }
    if (monomials.size() % 3 != 0) {
        throw ValidationError("config: harness.monomials is a list of (i, j, coefficient) triples");
    }
    if (approx_direction != "forward" && approx_direction != "reverse") {
        throw ValidationError("config: harness.approx_direction must be forward or reverse");
    }
}

inline ExperimentConfig parse_config(const std::string& text)
{
    ExperimentConfig cfg;
    const auto& table = detail::key_table();
    std::istringstream is(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = detail::trim(line);
        if (line.empty()) {
            continue;
        }
        const std::string where = "config line " + std::to_string(lineno) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ValidationError(where + "malformed section header");
            }
            section = detail::trim(line.substr(1, line.size() - 2));
            bool known = false;
            for (const auto& k : table) {
                known = known || k.name.rfind(section + ".", 0) == 0;
            }
            if (!known) {
                throw ValidationError(where + "unknown section [" + section + "]");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(where + "expected key = value");
        }
        if (section.empty()) {
            throw ValidationError(where + "key outside of any section");
        }
        const std::string key = section + "." + detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        bool found = false;
        for (const auto& k : table) {
            if (k.name == key) {
                k.set(cfg, value);
                found = true;
                break;
            }
        }
        if (!found) {
            throw ValidationError(where + "unknown key '" + key + "'");
        }
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot read config file '" + path + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Every key with its resolved value, in table order.
inline std::vector<std::pair<std::string, std::string>> resolved_entries(const ExperimentConfig& cfg)
{
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& k : detail::key_table()) {
        out.emplace_back(k.name, k.get(cfg));
    }
    return out;
}

/// Canonical text form; parse_config(config_text(c)) reproduces c.
inline std::string config_text(const ExperimentConfig& cfg)
{
    std::string out;
    std::string section;
    for (const auto& [name, value] : resolved_entries(cfg)) {
        const auto dot = name.find('.');
        const std::string sec = name.substr(0, dot);
        if (sec != section) {
            out += (section.empty() ? "" : "\n") + std::string("[") + sec + "]\n";
            section = sec;
        }
        if (!value.empty() && !(value == "nan")) {
            out += name.substr(dot + 1) + " = " + value + "\n";
        }
    }
    return out;
}

}  // namespace hcg
