#pragma once

#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowaccel/attention.hpp"
#include "flowaccel/fields.hpp"
#include "flowaccel/pipeline.hpp"
#include "flowaccel/rectflow.hpp"

namespace flowaccel {

using json = nlohmann::json;

/// Schema violation in a JSON config; `path` locates the offending value.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Reads one JSON object; finish() rejects keys that were never asked for.
class ConfigReader {
 public:
  ConfigReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  const std::string& path() const noexcept { return path_; }
  std::string path_of(const std::string& key) const { return path_ + "." + key; }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    if (!has(key)) throw ConfigError(path_of(key), "required key missing");
    used_.insert(key);
    return j_.at(key);
  }

  ConfigReader object(const std::string& key) { return {raw(key), path_of(key)}; }

  double number(const std::string& key) { return as_number(raw(key), path_of(key)); }
  double number(const std::string& key, double fallback) {
    return has(key) ? number(key) : fallback;
  }

  std::uint64_t count(const std::string& key) { return as_count(raw(key), path_of(key)); }
  std::uint64_t count(const std::string& key, std::uint64_t fallback) {
    return has(key) ? count(key) : fallback;
  }

  bool flag(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(path_of(key), "expected true or false");
    return v.get<bool>();
  }

  std::string text(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(path_of(key), "expected a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array() || v.empty()) {
      throw ConfigError(path_of(key), "expected a non-empty array of numbers");
    }
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      out.push_back(as_number(v[i], path_of(key) + "[" + std::to_string(i) + "]"));
    }
    return out;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError(path_of(key), "unknown key");
    }
  }

  static double as_number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(path, "expected a finite number");
    return x;
  }

  static std::uint64_t as_count(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
      return static_cast<std::uint64_t>(v.get<std::int64_t>());
    }
    throw ConfigError(path, "expected a non-negative integer");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline Tensor read_vector(ConfigReader& r, const std::string& key) {
  return Tensor::vector(r.numbers(key));
}

inline json to_json_value(const Tensor& t) { return t.values(); }

/// {"kind": ..., <kind-specific keys>}; omitted toy_stdit keys take defaults.
inline FieldSpec read_field_spec(ConfigReader r) {
  const std::string kind = r.text("kind");
  FieldSpec out;
  if (kind == "constant") {
    out = spec::Constant{read_vector(r, "c")};
  } else if (kind == "funnel") {
    out = spec::Funnel{read_vector(r, "target")};
  } else if (kind == "rotational") {
    out = spec::Rotational{r.number("omega")};
  } else if (kind == "curved_then_straight") {
    spec::CurvedThenStraight s;
    s.t_star = r.number("t_star");
    s.omega = r.number("omega");
    s.target = read_vector(r, "target");
    out = s;
  } else if (kind == "toy_stdit") {
    spec::ToyStdit s;
    s.seed = r.count("seed", s.seed);
    s.depth = r.count("depth", s.depth);
    s.batch = r.count("batch", s.batch);
    s.patches = r.count("patches", s.patches);
    s.frames = r.count("frames", s.frames);
    s.channels = r.count("channels", s.channels);
    s.heads = r.count("heads", s.heads);
    s.context_tokens = r.count("context_tokens", s.context_tokens);
    s.cross_attention = r.flag("cross_attention", s.cross_attention);
    out = s;
  } else {
    throw ConfigError(r.path_of("kind"), "unknown field kind '" + kind + "'");
  }
  r.finish();
  try {
    validate(out);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(r.path(), e.what());
  }
  return out;
}

inline json field_spec_to_json(const FieldSpec& fs) {
  json j;
  j["kind"] = kind_name(fs);
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, spec::Constant>) {
          j["c"] = to_json_value(s.c);
        } else if constexpr (std::is_same_v<S, spec::Funnel>) {
          j["target"] = to_json_value(s.target);
        } else if constexpr (std::is_same_v<S, spec::Rotational>) {
          j["omega"] = s.omega;
        } else if constexpr (std::is_same_v<S, spec::CurvedThenStraight>) {
          j["t_star"] = s.t_star;
          j["omega"] = s.omega;
          j["target"] = to_json_value(s.target);
        } else {
          j["seed"] = s.seed;
          j["depth"] = s.depth;
          j["batch"] = s.batch;
          j["patches"] = s.patches;
          j["frames"] = s.frames;
          j["channels"] = s.channels;
          j["heads"] = s.heads;
          j["context_tokens"] = s.context_tokens;
          j["cross_attention"] = s.cross_attention;
        }
      },
      fs);
  return j;
}

/// {"K": n} for a uniform grid or {"steps": [t_1, ..., t_K]}.
inline TimeGrid read_grid(ConfigReader r) {
  const bool uniform = r.has("K"), listed = r.has("steps");
  if (uniform == listed) throw ConfigError(r.path(), "give exactly one of K or steps");
  try {
    TimeGrid g = uniform ? TimeGrid::uniform(r.count("K"))
                         : TimeGrid::explicit_steps(r.numbers("steps"));
    r.finish();
    return g;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(r.path(), e.what());
  }
}

/// {"kind": "off"} | {"kind": "fixed", "n": n} |
/// {"kind": "dynamic", "min_fraction"?, "tolerance"?, "patience"?}.
inline LplConfig read_lpl(ConfigReader r) {
  const std::string kind = r.text("kind");
  LplConfig out;
  if (kind == "off") {
    out = LplOff{};
  } else if (kind == "fixed") {
    out = LplFixed{r.count("n")};
  } else if (kind == "dynamic") {
    LplDynamic d;
    d.min_fraction = r.number("min_fraction", d.min_fraction);
    d.tolerance = r.number("tolerance", d.tolerance);
    d.patience = r.count("patience", d.patience);
    out = d;
  } else {
    throw ConfigError(r.path_of("kind"), "unknown lpl kind '" + kind + "'");
  }
  r.finish();
  return out;
}

inline std::string lpl_label(const LplConfig& c) {
  if (std::holds_alternative<LplOff>(c)) return "off";
  if (const auto* f = std::get_if<LplFixed>(&c)) return "fixed:" + std::to_string(f->n);
  return "dynamic";
}

inline json to_json_value(const TrajectoryRecord& r) {
  json j;
  j["steps_executed"] = r.steps_executed;
  j["leap_step"] = r.leap_step ? json(*r.leap_step) : json(nullptr);
  j["cosine_series"] = r.cosine_series;
  j["endpoint"] = r.positions.empty() ? json::array() : to_json_value(r.positions.back());
  return j;
}

inline json to_json_value(const FlopReport& f) {
  return {{"projections", f.projections},
          {"scores", f.scores},
          {"weighted_sum", f.weighted_sum},
          {"output", f.output}};
}

inline json to_json_value(const Timeline& tl) {
  json events = json::array();
  for (const auto& e : tl.events) {
    events.push_back({{"block", e.block_id},
                      {"iter", e.iteration},
                      {"kind", to_string(e.kind)},
                      {"t", e.time}});
  }
  return {{"makespan", tl.makespan}, {"events", std::move(events)}};
}

inline Timeline timeline_from_json(const json& j) {
  ConfigReader r(j, "timeline");
  Timeline tl;
  tl.makespan = r.number("makespan");
  const json& events = r.raw("events");
  if (!events.is_array()) throw ConfigError("timeline.events", "expected an array");
  for (std::size_t i = 0; i < events.size(); ++i) {
    ConfigReader e(events[i], "timeline.events[" + std::to_string(i) + "]");
    Event ev;
    ev.block_id = e.count("block");
    ev.iteration = e.count("iter");
    try {
      ev.kind = event_kind_from_string(e.text("kind"));
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(e.path_of("kind"), ex.what());
    }
    ev.time = e.number("t");
    e.finish();
    tl.events.push_back(ev);
  }
  r.finish();
  return tl;
}

}  // namespace flowaccel
