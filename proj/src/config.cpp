#include "tcv/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "tcv/errors.hpp"
#include "tcv/rng.hpp"

namespace tcv {

namespace {

using nlohmann::json;

void require_keys(const json& obj, const std::string& where,
                  const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key()))
            throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

double get_num(const json& obj, const std::string& where, const std::string& key,
               std::optional<double> fallback = {}) {
    if (!obj.contains(key)) {
        if (fallback) return *fallback;
        throw ConfigError(where + ": missing required key '" + key + "'");
    }
    if (!obj[key].is_number()) throw ConfigError(where + "." + key + ": expected a number");
    return obj[key].get<double>();
}

RateComponent parse_rate_component(const json& j, const std::string& where) {
    require_keys(j, where, {"kind", "level", "knots", "levels", "speed", "mean", "vol", "init"});
    RateComponent c;
    const std::string kind = j.value("kind", "constant");
    if (kind == "constant") {
        c.kind = RateKind::Constant;
        c.level = get_num(j, where, "level", 1.0);
    } else if (kind == "piecewise") {
        c.kind = RateKind::PiecewiseConstant;
        if (!j.contains("knots") || !j.contains("levels"))
            throw ConfigError(where + ": piecewise rate needs 'knots' and 'levels'");
        c.knots = j["knots"].get<std::vector<double>>();
        c.levels = j["levels"].get<std::vector<double>>();
    } else if (kind == "cir") {
        c.kind = RateKind::MeanRevertingSqrt;
        c.speed = get_num(j, where, "speed");
        c.mean = get_num(j, where, "mean");
        c.vol = get_num(j, where, "vol");
        c.init = get_num(j, where, "init");
    } else {
        throw ConfigError(where + ".kind: unknown rate kind '" + kind + "'");
    }
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return c;
}

std::function<double(double, double)> parse_r_kernel(const json& j, const std::string& where,
                                                     std::function<double(double, double)>* dt_out,
                                                     std::string* kind_out) {
    require_keys(j, where, {"kind", "value", "c0", "c1", "scale", "rate"});
    const std::string kind = j.value("kind", "constant");
    *kind_out = kind;
    if (kind == "constant") {
        const double v = get_num(j, where, "value");
        *dt_out = [](double, double) { return 0.0; };
        return [v](double, double) { return v; };
    }
    if (kind == "affine_lag") { // r(t,s) = c0 + c1 (s - t)
        const double c0 = get_num(j, where, "c0");
        const double c1 = get_num(j, where, "c1");
        *dt_out = [c1](double, double) { return -c1; };
        return [c0, c1](double t, double s) { return c0 + c1 * (s - t); };
    }
    if (kind == "exp_diff") { // r(t,s) = scale * exp(-rate (t - s))
        const double sc = get_num(j, where, "scale");
        const double ra = get_num(j, where, "rate");
        *dt_out = [sc, ra](double t, double s) { return -ra * sc * std::exp(-ra * (t - s)); };
        return [sc, ra](double t, double s) { return sc * std::exp(-ra * (t - s)); };
    }
    throw ConfigError(where + ".kind: unknown growth-kernel kind '" + kind + "'");
}

std::function<double(double)> parse_sigma(const json& j, const std::string& where,
                                          std::string* kind_out) {
    require_keys(j, where, {"kind", "value", "a", "b"});
    const std::string kind = j.value("kind", "constant");
    *kind_out = kind;
    if (kind == "constant") {
        const double v = get_num(j, where, "value");
        return [v](double) { return v; };
    }
    if (kind == "linear") { // sigma(t) = a + b t
        const double a = get_num(j, where, "a");
        const double b = get_num(j, where, "b");
        return [a, b](double t) { return a + b * t; };
    }
    throw ConfigError(where + ".kind: unknown volatility kind '" + kind + "'");
}

} // namespace

ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    require_keys(j, "config",
                 {"grid", "marks", "rate", "ensemble", "condexp", "partition", "bsde", "forward",
                  "harvest", "mp", "output"});

    ExperimentConfig cfg;

    if (!j.contains("grid")) throw ConfigError("config: missing required section 'grid'");
    require_keys(j["grid"], "grid", {"T", "steps"});
    cfg.T = get_num(j["grid"], "grid", "T");
    const double steps = get_num(j["grid"], "grid", "steps");
    if (!(cfg.T > 0.0)) throw ConfigError("grid.T: must be positive");
    if (!(steps >= 1.0) || steps != std::floor(steps))
        throw ConfigError("grid.steps: must be a positive integer");
    cfg.steps = static_cast<std::size_t>(steps);

    if (j.contains("marks")) {
        require_keys(j["marks"], "marks", {"points", "weights"});
        std::vector<double> pts = j["marks"].value("points", std::vector<double>{});
        std::vector<double> wts = j["marks"].value("weights", std::vector<double>{});
        try {
            cfg.marks = MarkGrid::atoms(std::move(pts), std::move(wts));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("marks: ") + e.what());
        }
    }

    if (!j.contains("rate")) throw ConfigError("config: missing required section 'rate'");
    require_keys(j["rate"], "rate", {"B", "H", "shared_substream"});
    if (!j["rate"].contains("B")) throw ConfigError("rate: missing component 'B'");
    cfg.rate.B = parse_rate_component(j["rate"]["B"], "rate.B");
    if (j["rate"].contains("H")) cfg.rate.H = parse_rate_component(j["rate"]["H"], "rate.H");
    else cfg.rate.H = RateComponent{}; // defaults to constant 1
    cfg.rate.shared_substream = j["rate"].value("shared_substream", false);

    if (!j.contains("ensemble")) throw ConfigError("config: missing required section 'ensemble'");
    require_keys(j["ensemble"], "ensemble", {"paths", "seed"});
    const double paths = get_num(j["ensemble"], "ensemble", "paths");
    if (!(paths >= 1.0)) throw ConfigError("ensemble.paths: must be >= 1");
    cfg.n_paths = static_cast<std::size_t>(paths);
    cfg.seed = static_cast<std::uint64_t>(get_num(j["ensemble"], "ensemble", "seed", 1.0));

    if (j.contains("condexp")) {
        require_keys(j["condexp"], "condexp", {"degree", "lambda_samples"});
        cfg.condexp.degree = static_cast<int>(get_num(j["condexp"], "condexp", "degree", 2.0));
        cfg.condexp.lambda_samples =
            static_cast<int>(get_num(j["condexp"], "condexp", "lambda_samples", 8.0));
        if (cfg.condexp.degree < 1 || cfg.condexp.degree > 3)
            throw ConfigError("condexp.degree: supported range is 1..3");
        if (cfg.condexp.lambda_samples < 0 || cfg.condexp.lambda_samples > 64)
            throw ConfigError("condexp.lambda_samples: supported range is 0..64");
    }

    if (j.contains("partition")) {
        require_keys(j["partition"], "partition", {"level"});
        cfg.partition_level = static_cast<int>(get_num(j["partition"], "partition", "level", 3.0));
        if (cfg.partition_level < 0) throw ConfigError("partition.level: must be >= 0");
    }

    if (j.contains("bsde")) {
        require_keys(j["bsde"], "bsde", {"driver_on_raw_target"});
        cfg.bsde_driver_on_raw = j["bsde"].value("driver_on_raw_target", false);
    }

    if (j.contains("forward")) {
        const json& f = j["forward"];
        require_keys(f, "forward",
                     {"model", "x0", "drift", "sigma_x", "kernel_rate", "control",
                      "picard_iters", "picard_tol"});
        ForwardConfig fc;
        fc.model = f.value("model", "linear");
        if (fc.model != "linear" && fc.model != "exp_kernel" && fc.model != "additive")
            throw ConfigError("forward.model: unknown model '" + fc.model + "'");
        fc.x0 = get_num(f, "forward", "x0", 1.0);
        fc.drift = get_num(f, "forward", "drift", 0.25);
        fc.sigma_x = get_num(f, "forward", "sigma_x", 0.1);
        fc.kernel_rate = get_num(f, "forward", "kernel_rate", 1.0);
        fc.control = get_num(f, "forward", "control", 0.0);
        fc.picard_iters = static_cast<std::size_t>(get_num(f, "forward", "picard_iters", 8.0));
        fc.picard_tol = get_num(f, "forward", "picard_tol", 1e-12);
        cfg.forward = fc;
    }

    if (j.contains("harvest")) {
        const json& h = j["harvest"];
        require_keys(h, "harvest",
                     {"K", "X0", "delta", "u_max", "r", "sigma", "fixed_control", "scan_points",
                      "candidate_tol"});
        HarvestConfig hc;
        hc.model.K = get_num(h, "harvest", "K");
        hc.model.X0 = get_num(h, "harvest", "X0", 1.0);
        hc.model.delta = get_num(h, "harvest", "delta");
        hc.model.u_max = get_num(h, "harvest", "u_max", 1.0);
        if (!(hc.model.K > 0.0)) throw ConfigError("harvest.K: must be positive");
        if (!(hc.model.X0 > 0.0)) throw ConfigError("harvest.X0: must be positive");
        if (!(hc.model.delta > 0.0)) throw ConfigError("harvest.delta: must be positive");
        if (!(hc.model.u_max > 0.0)) throw ConfigError("harvest.u_max: must be positive");
        if (!h.contains("r")) throw ConfigError("harvest: missing growth kernel 'r'");
        hc.model.r = parse_r_kernel(h["r"], "harvest.r", &hc.model.dt_r, &hc.r_kind);
        if (!h.contains("sigma")) throw ConfigError("harvest: missing volatility 'sigma'");
        hc.model.sigma = parse_sigma(h["sigma"], "harvest.sigma", &hc.sigma_kind);
        hc.fixed_control = get_num(h, "harvest", "fixed_control", 0.0);
        if (hc.fixed_control < 0.0 || hc.fixed_control > hc.model.u_max)
            throw ConfigError("harvest.fixed_control: must lie in [0, u_max]");
        hc.scan_points = static_cast<std::size_t>(get_num(h, "harvest", "scan_points", 21.0));
        hc.candidate_tol = get_num(h, "harvest", "candidate_tol", 0.0);
        cfg.harvest = hc;
    }

    if (j.contains("mp")) {
        require_keys(j["mp"], "mp", {"u_grid", "tol_max", "tol_conc"});
        cfg.mp_u_grid = static_cast<std::size_t>(get_num(j["mp"], "mp", "u_grid", 101.0));
        cfg.mp_tol_max = get_num(j["mp"], "mp", "tol_max", 1e-6);
        cfg.mp_tol_conc = get_num(j["mp"], "mp", "tol_conc", 1e-8);
    }

    if (j.contains("output")) {
        require_keys(j["output"], "output", {"dir"});
        cfg.out_dir = j["output"].value("dir", "out");
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::uint64_t config_hash(const std::string& text) {
    json j = json::parse(text);
    return rng::fnv1a(j.dump()); // canonical (sorted-key) dump
}

} // namespace tcv
