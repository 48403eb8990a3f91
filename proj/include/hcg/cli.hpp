#pragma once

// Command orchestration for the hcg executable: field snapshots, coarse-grained
// scale reports, verification harnesses and report aggregation. Every command
// writes its outputs under the configured directory and returns the exit code.

#include "coarsegrain.hpp"
#include "config.hpp"
#include "fem.hpp"
#include "field.hpp"
#include "geometry.hpp"
#include "harmonics.hpp"
#include "parallel.hpp"
#include "report.hpp"
#include "verify.hpp"

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace hcg::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kSolver = 2, kPropertyFail = 3 };

struct Options {
    std::string config_path;
    std::string out;        // overrides run.out when non-empty
    int threads = 0;        // overrides run.threads when positive
    std::int64_t seed_offset = 0;
};

struct Context {
    ExperimentConfig cfg;
    std::vector<std::uint64_t> seeds;  // offsets applied
    std::string out;
    int threads = 1;
};

inline Context make_context(const Options& opt)
{
    if (opt.config_path.empty()) {
        throw ValidationError("missing --config");
    }
    Context ctx;
    ctx.cfg = load_config(opt.config_path);
    if (!opt.out.empty()) {
        ctx.cfg.out = opt.out;
    }
    if (opt.threads > 0) {
        ctx.cfg.threads = opt.threads;
    }
    if (opt.seed_offset < 0) {
        throw ValidationError("--seed-offset must be non-negative");
    }
    for (auto& s : ctx.cfg.seeds) {
        s += static_cast<std::uint64_t>(opt.seed_offset);
    }
    ctx.cfg.validate();
    ctx.seeds = ctx.cfg.seeds;
    ctx.out = ctx.cfg.out;
    ctx.threads = ctx.cfg.threads;
    ensure_directory(ctx.out);
    return ctx;
}

/// Resolved configuration grouped by section. The thread budget and output
/// directory are left out so reports compare across budgets and locations.
inline Json config_json(const ExperimentConfig& cfg)
{
    Json j = Json::object();
    for (const auto& [name, value] : resolved_entries(cfg)) {
        if (name == "run.threads" || name == "run.out") {
            continue;
        }
        const auto dot = name.find('.');
        j[name.substr(0, dot)][name.substr(dot + 1)] = value;
    }
    return j;
}

inline std::string snapshot_name(std::uint64_t seed)
{
    return "field_" + std::to_string(seed) + ".cgf1";
}

inline CoefficientField obtain_field(const Context& ctx, std::uint64_t seed)
{
    if (!ctx.cfg.snapshots.empty()) {
        const auto path = (std::filesystem::path(ctx.cfg.snapshots) / snapshot_name(seed)).string();
        CoefficientField f = read_snapshot(path);
        if (f.dim() != ctx.cfg.ensemble.d) {
            throw ValidationError("snapshot '" + path + "' has the wrong dimension");
        }
        return f;
    }
    return ctx.cfg.ensemble.generate(seed, 1);
}

inline SmallMat matrix_from_list(const std::vector<double>& v, int d, const std::string& what)
{
    if (v.size() != static_cast<std::size_t>(d * d)) {
        throw ValidationError(what + " needs d*d entries");
    }
    SmallMat m(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            m(i, j) = v[static_cast<std::size_t>(i * d + j)];
        }
    }
    return m;
}

struct ResolvedRef {
    HomogenizedRef ref;
    std::string source;
    int estimate_level = -1;
};

inline ResolvedRef resolve_reference(const Context& ctx)
{
    const auto& c = ctx.cfg;
    const int d = c.ensemble.d;
    ResolvedRef r;
    if (c.hom_source == "given") {
        r.ref.s_bar = matrix_from_list(c.s_bar, d, "homogenized.s_bar");
        r.ref.k_bar = c.k_bar.empty() ? SmallMat(SmallMat::Zero(d, d)) : matrix_from_list(c.k_bar, d, "homogenized.k_bar");
        r.source = "given";
        return r;
    }
    if (c.hom_source == "auto" || c.hom_source == "closed_form") {
        SmallMat s, k;
        if (c.ensemble.closed_form_sbar(s) && c.ensemble.closed_form_kbar(k)) {
            r.ref.s_bar = s;
            r.ref.k_bar = k;
            r.source = "closed_form";
            return r;
        }
        if (c.hom_source == "closed_form") {
            throw ValidationError("ensemble '" + c.ensemble.generator + "' has no closed-form homogenized matrix");
        }
    }
    r.estimate_level = c.estimate_m >= 0 ? c.estimate_m : c.m;
    const auto est = estimate_homogenized([&](std::uint64_t seed) { return obtain_field(ctx, seed); }, d,
                                          r.estimate_level, ctx.seeds, c.solver, ctx.threads);
    r.ref = est.ref;
    r.source = "estimate";
    return r;
}

inline Json ref_json(const ResolvedRef& r)
{
    Json j;
    j["source"] = r.source;
    if (r.estimate_level >= 0) {
        j["estimate_level"] = r.estimate_level;
    }
    j["s_bar"] = json_matrix(r.ref.s_bar);
    j["k_bar"] = json_matrix(r.ref.k_bar);
    j["lambda_bar"] = json_number(r.ref.lambda_bar());
    j["Lambda_bar"] = json_number(r.ref.Lambda_bar());
    return j;
}

inline AdaptedGeometry make_geometry(const Context& ctx, const HomogenizedRef& ref)
{
    return ctx.cfg.adapted ? make_adapted_geometry(ref.s_bar, ctx.cfg.k0) : identity_geometry(ctx.cfg.ensemble.d);
}

inline Json base_report(const Context& ctx, const std::string& command)
{
    Json j;
    j["tool"] = "hcg";
    j["command"] = command;
    j["config"] = config_json(ctx.cfg);
    Json seeds = Json::array();
    for (auto s : ctx.seeds) {
        seeds.push_back(s);
    }
    j["seeds"] = seeds;
    return j;
}

/// Outcome of one seed: either filled, or a solver failure with its history tail.
struct SeedFailure {
    std::string message;
    std::vector<double> residual_tail;
};

inline Json failure_json(std::uint64_t seed, const SeedFailure& f)
{
    Json j;
    j["seed"] = seed;
    j["error"] = f.message;
    Json tail = Json::array();
    for (double r : f.residual_tail) {
        tail.push_back(json_number(r));
    }
    j["residual_tail"] = tail;
    return j;
}

/// Runs body(i) per seed index on the worker pool; solver failures are
/// captured per seed, every other exception propagates.
template <class Body>
std::vector<std::optional<SeedFailure>> for_each_seed(const Context& ctx, Body&& body)
{
    std::vector<std::optional<SeedFailure>> fails(ctx.seeds.size());
    parallel_for(ctx.seeds.size(), ctx.threads, [&](std::size_t i) {
        try {
            body(i);
        } catch (const SolverError& e) {
            SeedFailure f;
            f.message = e.what();
            const auto& h = e.residual_history;
            const std::size_t from = h.size() > 10 ? h.size() - 10 : 0;
            f.residual_tail.assign(h.begin() + static_cast<std::ptrdiff_t>(from), h.end());
            fails[i] = f;
        }
    });
    return fails;
}

inline std::string join_path(const std::string& dir, const std::string& file)
{
    return (std::filesystem::path(dir) / file).string();
}

// ---------------------------------------------------------------------------
// field

inline int cmd_field(const Context& ctx, std::ostream& log)
{
    const std::size_t n = ctx.seeds.size();
    std::vector<CoefficientField> fields(n);
    std::vector<std::string> bytes(n);
    parallel_for(n, ctx.threads, [&](std::size_t i) {
        fields[i] = ctx.cfg.ensemble.generate(ctx.seeds[i], 1);
        bytes[i] = encode_snapshot(fields[i]);
    });
    Json rep = base_report(ctx, "field");
    Json snaps = Json::array();
    CsvTable phases({"seed", "phase", "s", "fraction"});
    for (std::size_t i = 0; i < n; ++i) {
        const std::string name = snapshot_name(ctx.seeds[i]);
        write_text(join_path(ctx.out, name), bytes[i]);
        const auto frac = phase_fractions(fields[i]);
        Json js;
        js["seed"] = ctx.seeds[i];
        js["file"] = name;
        js["hash"] = content_hash(bytes[i]);
        js["period"] = fields[i].period();
        js["cells"] = fields[i].cell_count();
        js["distinct_phases"] = frac.size();
        Json jp = Json::array();
        log << "seed " << ctx.seeds[i] << ": " << name << " hash " << content_hash(bytes[i]) << "\n";
        if (frac.size() <= 16) {
            int idx = 0;
            for (const auto& [s, f] : frac) {
                std::string sv;
                for (std::size_t q = 0; q < s.size(); ++q) {
                    sv += (q ? " " : "") + format_number(s[q]);
                }
                Json p;
                p["s"] = s;
                p["fraction"] = f;
                jp.push_back(p);
                phases.add({std::to_string(ctx.seeds[i]), std::to_string(idx++), sv, format_number(f)});
                std::ostringstream pct;
                pct << std::fixed << std::setprecision(2) << 100.0 * f;
                log << "  phase s = [" << sv << "]: " << pct.str() << "%\n";
            }
        } else {
            log << "  continuous field: " << frac.size() << " distinct cell values\n";
        }
        js["phases"] = jp;
        snaps.push_back(js);
    }
    rep["snapshots"] = snaps;
    rep["pass"] = true;
    write_json(join_path(ctx.out, "field_report.json"), rep);
    write_text(join_path(ctx.out, "field_phases.csv"), phases.str());
    return kOk;
}

// ---------------------------------------------------------------------------
// coarsen

struct CoarsenSeed {
    std::string hash;
    BigMat top;
    EsResult es;
    DefectResult defect;
    double loewner = 0.0;
    double asymmetry = 0.0;  // relative to max |A|
    double subadd = 0.0;     // relative to max |A(parent)|
    int max_iterations = 0;
};

inline int cmd_coarsen(const Context& ctx, std::ostream& log)
{
    const auto& c = ctx.cfg;
    const std::size_t need = multiscale_solve_count(c.ensemble.d, c.m);
    if (need > static_cast<std::size_t>(c.budget)) {
        throw ValidationError("refusing m=" + std::to_string(c.m) + ": " + std::to_string(need) +
                              " subcube solves exceed the budget of " + std::to_string(c.budget));
    }
    const ResolvedRef rr = resolve_reference(ctx);
    const AdaptedGeometry geom = make_geometry(ctx, rr.ref);
    std::vector<CoarsenSeed> out(ctx.seeds.size());
    const auto fails = for_each_seed(ctx, [&](std::size_t i) {
        const CoefficientField f = obtain_field(ctx, ctx.seeds[i]);
        CoarsenSeed& o = out[i];
        o.hash = content_hash(encode_snapshot(f));
        const MultiscaleTable t = build_multiscale_table(f, geom, c.m, c.solver, 1, static_cast<std::size_t>(c.budget));
        o.top = t.matrices[static_cast<std::size_t>(c.m)][0].M;
        o.es = homogenization_error_Es(t, c.s_exponent, rr.ref);
        o.defect = coarse_defect(t, c.s_exponent, rr.ref);
        o.loewner = min_loewner_gap(t);
        for (const auto& level : t.matrices) {
            for (const auto& cm : level) {
                const double scale = std::max(cm.M.cwiseAbs().maxCoeff(), 1e-300);
                o.asymmetry = std::max(o.asymmetry, cm.asymmetry / scale);
                o.max_iterations = std::max(o.max_iterations, cm.max_iterations);
            }
        }
        o.subadd = std::numeric_limits<double>::infinity();
        for (int pl = 1; pl <= std::min(c.m, 3); ++pl) {
            const double scale = std::max(o.top.cwiseAbs().maxCoeff(), 1.0);
            o.subadd = std::min(o.subadd, subadditivity_check(f, geom, pl, pl - 1, c.solver) / scale);
        }
        if (c.m == 0) {
            o.subadd = 0.0;
        }
    });

    Json rep = base_report(ctx, "coarsen");
    rep["homogenized"] = ref_json(rr);
    Json inputs = Json::array();
    Json per = Json::array();
    CsvTable summary({"seed", "hash", "E_s", "E_tilde", "gamma_hat", "theta_hat", "X_hat", "min_loewner_gap",
                      "max_rel_asymmetry", "min_rel_subadditivity", "max_iterations"});
    CsvTable levels({"seed", "level", "T_level", "R"});
    bool pass = true;
    bool partial = false;
    Json failures = Json::array();
    BigMat mean = BigMat::Zero(2 * c.ensemble.d, 2 * c.ensemble.d);
    int ok_count = 0;
    for (std::size_t i = 0; i < ctx.seeds.size(); ++i) {
        const auto seed = ctx.seeds[i];
        if (fails[i]) {
            partial = true;
            failures.push_back(failure_json(seed, *fails[i]));
            log << "seed " << seed << ": solver failure: " << fails[i]->message << "\n";
            continue;
        }
        const CoarsenSeed& o = out[i];
        mean += o.top;
        ++ok_count;
        const double sscale = std::max(extract_blocks(o.top).s.cwiseAbs().maxCoeff(), 1.0);
        const bool ok = o.asymmetry <= 1e-6 && o.loewner >= -1e-8 * sscale && o.subadd >= -1e-6;
        pass = pass && ok;
        Json in;
        in["seed"] = seed;
        in["hash"] = o.hash;
        inputs.push_back(in);
        Json js;
        js["seed"] = seed;
        js["A_top"] = json_matrix(o.top);
        js["E_s"] = json_number(o.es.value);
        Json lm = Json::array();
        for (double v : o.es.level_max) {
            lm.push_back(json_number(v));
        }
        js["T_level"] = lm;
        js["T_cell"] = json_number(o.es.cell_max);
        Json rj = Json::array();
        for (double v : o.defect.R) {
            rj.push_back(json_number(v));
        }
        js["R"] = rj;
        js["R_cell"] = json_number(o.defect.R_cell);
        js["E_tilde"] = json_number(o.defect.E_tilde);
        Json fit;
        fit["ok"] = o.defect.fit.ok;
        fit["gamma_hat"] = json_number(o.defect.fit.gamma_hat);
        fit["theta_hat"] = json_number(o.defect.fit.theta_hat);
        fit["X_hat"] = json_number(o.defect.fit.X_hat);
        fit["points"] = o.defect.fit.points;
        js["fit"] = fit;
        js["min_loewner_gap"] = json_number(o.loewner);
        js["max_rel_asymmetry"] = json_number(o.asymmetry);
        js["min_rel_subadditivity"] = json_number(o.subadd);
        js["max_iterations"] = o.max_iterations;
        js["checks_pass"] = ok;
        per.push_back(js);
        summary.add({std::to_string(seed), o.hash, format_number(o.es.value), format_number(o.defect.E_tilde),
                     format_number(o.defect.fit.gamma_hat), format_number(o.defect.fit.theta_hat),
                     format_number(o.defect.fit.X_hat), format_number(o.loewner), format_number(o.asymmetry),
                     format_number(o.subadd), std::to_string(o.max_iterations)});
        for (int n = 0; n <= c.m; ++n) {
            levels.add({std::to_string(seed), std::to_string(n),
                        format_number(o.es.level_max[static_cast<std::size_t>(n)]),
                        format_number(o.defect.R[static_cast<std::size_t>(n)])});
        }
        log << "seed " << seed << ": E_s = " << format_number(o.es.value) << ", loewner gap "
            << format_number(o.loewner) << (ok ? "" : "  [check failed]") << "\n";
    }
    rep["inputs"] = inputs;
    rep["per_seed"] = per;

    // Ensemble s_bar from the mean top-level matrix against the reference.
    CsvTable sbar({"i", "j", "sbar_hat", "sbar_ref", "ref_source", "rel_dev", "within_1pct"});
    if (ok_count > 0) {
        mean /= static_cast<double>(ok_count);
        const CoarseBlocks b = extract_blocks(mean);
        const SmallMat hat = linalg::symmetrize(linalg::geometric_mean(b.s_star, b.s));
        Json sj;
        sj["sbar_hat"] = json_matrix(hat);
        sj["sbar_ref"] = json_matrix(rr.ref.s_bar);
        rep["sbar"] = sj;
        const int d = c.ensemble.d;
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) {
                const double ref = rr.ref.s_bar(i, j);
                const double dev = std::abs(hat(i, j) - ref) / std::max(std::abs(ref), 1e-300);
                sbar.add({std::to_string(i), std::to_string(j), format_number(hat(i, j)), format_number(ref),
                          rr.source, format_number(i == j || ref != 0.0 ? dev : std::abs(hat(i, j))),
                          (i == j || ref != 0.0 ? dev : std::abs(hat(i, j))) <= 0.01 ? "true" : "false"});
            }
        }
    }
    rep["failures"] = failures;
    rep["partial"] = partial;
    rep["pass"] = pass && !partial;
    write_json(join_path(ctx.out, "coarsen_report.json"), rep);
    write_text(join_path(ctx.out, "coarsen_summary.csv"), summary.str());
    write_text(join_path(ctx.out, "coarsen_levels.csv"), levels.str());
    write_text(join_path(ctx.out, "coarsen_sbar.csv"), sbar.str());
    if (partial) {
        return kSolver;
    }
    return pass ? kOk : kPropertyFail;
}

// ---------------------------------------------------------------------------
// verify

inline BoundarySpec boundary_from_config(const ExperimentConfig& c)
{
    const int d = c.ensemble.d;
    if (c.boundary == "polynomial") {
        if (c.monomials.empty()) {
            throw ValidationError("harness.boundary = polynomial needs harness.monomials");
        }
        int deg = 0;
        for (std::size_t t = 0; t < c.monomials.size(); t += 3) {
            deg = std::max(deg, static_cast<int>(c.monomials[t] + c.monomials[t + 1]));
        }
        Poly p(d, deg);
        for (std::size_t t = 0; t < c.monomials.size(); t += 3) {
            const int i = static_cast<int>(c.monomials[t]);
            const int j = static_cast<int>(c.monomials[t + 1]);
            if (i < 0 || j < 0 || (d == 1 && j > 0)) {
                throw ValidationError("harness.monomials: bad exponent pair");
            }
            p.at(i, j) += c.monomials[t + 2];
        }
        return BoundarySpec::polynomial(p);
    }
    if (c.boundary == "random") {
        const double len = c.random_length > 0.0 ? c.random_length : std::pow(3.0, c.m - 1);
        return BoundarySpec::random_smooth(c.seeds.front(), len);
    }
    SmallVec e = SmallVec::Zero(d);
    if (c.direction.empty()) {
        e(0) = 1.0;
    } else {
        for (int i = 0; i < d; ++i) {
            e(i) = c.direction[static_cast<std::size_t>(i)];
        }
    }
    return BoundarySpec::affine(e);
}

using Row = Measurement;

inline Json rows_json(const std::vector<Row>& rows)
{
    Json a = Json::array();
    for (const auto& r : rows) {
        Json j;
        j["sample"] = r.sample;
        j["scale"] = r.scale;
        for (const auto& [k, v] : r.values) {
            j[k] = json_number(v);
        }
        a.push_back(j);
    }
    return a;
}

inline CsvTable rows_csv(const std::vector<Row>& rows)
{
    std::vector<std::string> keys;
    for (const auto& r : rows) {
        for (const auto& [k, v] : r.values) {
            if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
                keys.push_back(k);
            }
        }
    }
    std::vector<std::string> header{"sample", "scale"};
    header.insert(header.end(), keys.begin(), keys.end());
    CsvTable t(header);
    for (const auto& r : rows) {
        std::vector<std::string> line{r.sample, std::to_string(r.scale)};
        for (const auto& k : keys) {
            std::string cell;
            for (const auto& [kk, v] : r.values) {
                if (kk == k) {
                    cell = format_number(v);
                }
            }
            line.push_back(cell);
        }
        t.add(line);
    }
    return t;
}

inline bool all_finite_nonneg(const std::vector<Row>& rows)
{
    for (const auto& r : rows) {
        for (const auto& [k, v] : r.values) {
            if (!std::isfinite(v)) {
                return false;
            }
            if (k != "slope" && k != "kappa_hat" && v < 0.0) {
                return false;
            }
        }
    }
    return true;
}

inline int cmd_verify(const Context& ctx, const std::string& harness, std::ostream& log)
{
    const auto& c = ctx.cfg;
    const int d = c.ensemble.d;
    static const std::vector<std::string> known{"caccioppoli", "approx", "liouville", "excess", "dims"};
    if (std::find(known.begin(), known.end(), harness) == known.end()) {
        throw ValidationError("unknown harness '" + harness + "' (caccioppoli, approx, liouville, excess, dims)");
    }
    if ((harness == "liouville" || harness == "dims") && c.k > 1) {
        throw ValidationError("harness " + harness + " supports k in {0, 1} only");
    }
    // Cheap preconditions first, so invalid requests fail before any solve.
    std::vector<double> radii = c.radii;
    if (harness == "excess") {
        if (radii.empty()) {
            const double half = (std::pow(3.0, c.m) - 1.0) / 2.0;
            radii = radius_ladder(c.r_max > 0.0 ? c.r_max : half - 1.0);
        }
        for (double r : radii) {
            if (!(r >= 3.0)) {
                throw ValidationError("excess: radius " + format_number(r) + " is below 3 cells");
            }
        }
    }
    const ResolvedRef rr = (harness == "dims") ? ResolvedRef{} : resolve_reference(ctx);
    const AdaptedGeometry geom = harness == "dims" ? identity_geometry(d) : make_geometry(ctx, rr.ref);
    const BoundarySpec boundary = boundary_from_config(c);
    std::vector<std::vector<Row>> rows(ctx.seeds.size());
    std::vector<std::string> hashes(ctx.seeds.size());
    std::vector<int> verdict(ctx.seeds.size(), 1);
    std::vector<std::vector<std::pair<std::string, double>>> extra(ctx.seeds.size());

    const auto fails = for_each_seed(ctx, [&](std::size_t i) {
        const auto seed = ctx.seeds[i];
        const CoefficientField f = obtain_field(ctx, seed);
        hashes[i] = content_hash(encode_snapshot(f));
        const std::string sample = std::to_string(seed);
        auto& out = rows[i];
        bool ok = true;
        if (harness == "caccioppoli") {
            const auto r = caccioppoli_ratio(f, geom, c.m, boundary, rr.ref.lambda_bar(), c.solver, c.refine);
            out.push_back({sample, c.m,
                           {{"ratio", r.ratio},
                            {"energy_inner", r.energy_inner},
                            {"l2_outer", r.l2_outer},
                            {"iterations", static_cast<double>(r.stats.iterations)}}});
            if (!std::isnan(c.expect)) {
                ok = ok && std::abs(r.ratio - c.expect) <= c.tolerance;
            }
            if (c.max_ratio > 0.0) {
                ok = ok && r.ratio <= c.max_ratio;
            }
            if (!radii.empty()) {
                const auto curve = caccioppoli_r_curve(f, geom, c.m, boundary, rr.ref.lambda_bar(), radii, c.solver);
                for (std::size_t q = 0; q < curve.r.size(); ++q) {
                    out.push_back({sample, c.m, {{"r", curve.r[q]}, {"ratio_r", curve.ratio[q]}}});
                }
                extra[i].push_back({"kappa_hat", curve.kappa_hat});
            }
        } else if (harness == "approx") {
            const ApproxDirection dir =
                c.approx_direction == "reverse" ? ApproxDirection::reverse : ApproxDirection::forward;
            for (int n = std::max(c.m_min, 1); n <= c.m; ++n) {
                const auto r = harmonic_approx_error(f, geom, n, rr.ref, c.s_exponent, boundary, dir, c.solver);
                const double rel = r.terms.energy_ref > 0.0 ? r.terms.total() / r.terms.energy_ref : 0.0;
                out.push_back({sample, n,
                               {{"l2_term", r.terms.l2_term},
                                {"hs_term", r.terms.hs_term},
                                {"total", r.terms.total()},
                                {"energy_ref", r.terms.energy_ref},
                                {"relative", rel}}});
                if (c.max_ratio > 0.0) {
                    ok = ok && rel <= c.max_ratio;
                }
            }
        } else if (harness == "liouville") {
            std::vector<int> levels;
            for (int n = std::max(c.m_min, 1); n <= c.m; ++n) {
                levels.push_back(n);
            }
            LiouvilleOptions lo;
            lo.s_exponent = c.s_exponent;
            lo.X_hat = c.x_hat;
            lo.theta_hat = c.theta_hat;
            auto rec = liouville_two_sided(f, rr.ref, c.k, levels, lo, c.solver);
            for (auto& row : rec.rows) {
                row.sample = sample + ":" + row.sample;
                out.push_back(row);
            }
            for (const auto& kv : rec.summary) {
                extra[i].push_back(kv);
            }
            for (const auto& [k, v] : rec.summary) {
                if (k == "max_residual") {
                    ok = ok && v <= c.residual_tol;
                }
            }
        } else if (harness == "excess") {
            const CellDomain dom = adapted_cube(geom, c.m);
            const auto sol = solve_dirichlet(f, dom, boundary_function(boundary, d), c.solver, c.refine);
            const auto curve = excess_decay_curve(sol.u, geom, c.k, radii);
            for (std::size_t q = 0; q < curve.rows.size(); ++q) {
                const auto& er = curve.rows[q];
                out.push_back({sample, static_cast<int>(q),
                               {{"r", er.r},
                                {"E", er.E},
                                {"p_norm", er.p_norm},
                                {"ratio", q == 0 ? 0.0 : curve.ratios[q - 1]}}});
            }
            extra[i].push_back({"slope", curve.slope});
        } else {
            SolveConfig sc = c.solver;
            sc.tol_rel = std::min(sc.tol_rel, 1e-12);
            const auto r = corrector_space_dimension(f, c.k, c.dims_level, seed, sc);
            Row row{sample, c.dims_level, {{"dimension", static_cast<double>(r.dimension)},
                                           {"expected", static_cast<double>(dim_formula(d, c.k))},
                                           {"gap", r.gap}}};
            for (std::size_t q = 0; q < r.singular_values.size(); ++q) {
                row.values.push_back({"sv" + std::to_string(q), r.singular_values[q]});
            }
            out.push_back(row);
            ok = r.dimension == dim_formula(d, c.k) && r.gap >= c.min_gap;
        }
        ok = ok && all_finite_nonneg(out);
        verdict[i] = ok ? 1 : 0;
    });

    Json rep = base_report(ctx, "verify");
    rep["harness"] = harness;
    if (harness != "dims") {
        rep["homogenized"] = ref_json(rr);
    }
    Json inputs = Json::array();
    Json samples = Json::array();
    Json failures = Json::array();
    std::vector<Row> all;
    bool pass = true;
    bool partial = false;
    for (std::size_t i = 0; i < ctx.seeds.size(); ++i) {
        const auto seed = ctx.seeds[i];
        if (fails[i]) {
            partial = true;
            failures.push_back(failure_json(seed, *fails[i]));
            log << "seed " << seed << ": solver failure: " << fails[i]->message << "\n";
            continue;
        }
        Json in;
        in["seed"] = seed;
        in["hash"] = hashes[i];
        inputs.push_back(in);
        Json s;
        s["seed"] = seed;
        s["pass"] = verdict[i] == 1;
        s["rows"] = rows_json(rows[i]);
        for (const auto& [k, v] : extra[i]) {
            s[k] = json_number(v);
        }
        samples.push_back(s);
        pass = pass && verdict[i] == 1;
        all.insert(all.end(), rows[i].begin(), rows[i].end());
        log << "seed " << seed << ": " << (verdict[i] == 1 ? "PASS" : "FAIL");
        if (!rows[i].empty()) {
            const auto& first = rows[i].front().values.front();
            log << " (" << first.first << " = " << format_number(first.second) << ")";
        }
        log << "\n";
    }
    rep["inputs"] = inputs;
    rep["samples"] = samples;
    rep["failures"] = failures;
    rep["partial"] = partial;
    rep["pass"] = pass && !partial;
    write_json(join_path(ctx.out, "verify_" + harness + ".json"), rep);
    write_text(join_path(ctx.out, "verify_" + harness + ".csv"), rows_csv(all).str());
    if (partial) {
        return kSolver;
    }
    return pass ? kOk : kPropertyFail;
}

// ---------------------------------------------------------------------------
// report

/// Aggregates every report JSON in the output directory into summary files.
inline int cmd_report(const Context& ctx, std::ostream& log)
{
    std::vector<std::string> names;
    for (const auto& e : std::filesystem::directory_iterator(ctx.out)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && e.path().extension() == ".json" && name != "summary.json") {
            names.push_back(name);
        }
    }
    std::sort(names.begin(), names.end());
    Json rep = base_report(ctx, "report");
    Json items = Json::array();
    CsvTable table({"file", "command", "harness", "pass", "partial"});
    bool pass = true;
    for (const auto& name : names) {
        Json j;
        try {
            j = Json::parse(read_file_bytes(join_path(ctx.out, name)));
        } catch (const Json::parse_error&) {
            throw ValidationError("report: '" + name + "' is not valid JSON");
        }
        if (!j.is_object() || !j.contains("command")) {
            continue;
        }
        const bool p = j.value("pass", false);
        const bool part = j.value("partial", false);
        const std::string h = j.value("harness", std::string());
        Json it;
        it["file"] = name;
        it["command"] = j["command"];
        it["harness"] = h;
        it["pass"] = p;
        it["partial"] = part;
        it["content_hash"] = content_hash(read_file_bytes(join_path(ctx.out, name)));
        items.push_back(it);
        table.add({name, j["command"].get<std::string>(), h, p ? "true" : "false", part ? "true" : "false"});
        log << name << ": " << (p ? "PASS" : "FAIL") << "\n";
        pass = pass && p;
    }
    rep["reports"] = items;
    rep["pass"] = pass;
    write_json(join_path(ctx.out, "summary.json"), rep);
    write_text(join_path(ctx.out, "summary.csv"), table.str());
    return pass ? kOk : kPropertyFail;
}

// ---------------------------------------------------------------------------

/// Dispatches a verb and maps exceptions to exit codes.
inline int run(const std::string& verb, const std::string& harness, const Options& opt, std::ostream& log,
               std::ostream& err)
{
    try {
        const Context ctx = make_context(opt);
        if (verb == "field") {
            return cmd_field(ctx, log);
        }
        if (verb == "coarsen") {
            return cmd_coarsen(ctx, log);
        }
        if (verb == "verify") {
            return cmd_verify(ctx, harness, log);
        }
        if (verb == "report") {
            return cmd_report(ctx, log);
        }
        throw ValidationError("unknown command '" + verb + "'");
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const SolverError& e) {
        err << "solver failure: " << e.what() << "\n";
        return kSolver;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kValidation;
    }
}

}  // namespace hcg::cli
