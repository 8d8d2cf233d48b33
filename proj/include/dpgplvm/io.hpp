#ifndef DPGPLVM_IO_HPP_
#define DPGPLVM_IO_HPP_

// Requires nlohmann/json as "json.hpp" on the include path.
#include "json.hpp"

#include "dpgplvm/model.hpp"
#include "dpgplvm/synthetic.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace dpgplvm::io {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// 17 significant digits; reading the text back gives the same double.
inline std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v,
                                 std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string &where) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  if (!s.empty() && s.front() == '+')
    s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() ||
      !std::isfinite(v))
    throw InputError("cannot parse number '" + std::string(s) + "' " + where);
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline bool blank(std::string_view s) {
  return s.find_first_not_of(" \t\r") == std::string_view::npos;
}

inline std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string &path, const std::string &content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw InputError("cannot write '" + path + "'");
  out << content;
  if (!out)
    throw InputError("failed writing '" + path + "'");
}

struct Table {
  std::vector<std::string> header;
  DataMatrix data;
};

/// Parses a comma-separated table with a header row. Empty cells become
/// unobserved entries.
inline Table parse_csv(const std::string &text, const std::string &name) {
  std::vector<std::string_view> lines;
  for (auto l : split(text, '\n'))
    if (!blank(l))
      lines.push_back(l);
  if (lines.empty())
    throw InputError(name + ": empty file");
  Table t;
  for (auto h : split(lines[0], ',')) {
    while (!h.empty() && (h.back() == '\r' || h.back() == ' '))
      h.remove_suffix(1);
    t.header.emplace_back(h);
  }
  const auto cols = static_cast<Index>(t.header.size());
  const auto rows = static_cast<Index>(lines.size() - 1);
  Matrix values = Matrix::Zero(rows, cols);
  BoolMatrix mask = BoolMatrix::Constant(rows, cols, true);
  for (Index r = 0; r < rows; ++r) {
    const auto cells = split(lines[static_cast<std::size_t>(r + 1)], ',');
    if (static_cast<Index>(cells.size()) != cols)
      throw InputError(name + ": line " + std::to_string(r + 2) + " has " +
                       std::to_string(cells.size()) + " fields, expected " +
                       std::to_string(cols));
    for (Index c = 0; c < cols; ++c) {
      const auto cell = cells[static_cast<std::size_t>(c)];
      if (blank(cell)) {
        mask(r, c) = false;
        continue;
      }
      values(r, c) = parse_double(cell, "at " + name + " line " +
                                            std::to_string(r + 2));
    }
  }
  t.data = DataMatrix(std::move(values), std::move(mask));
  return t;
}

inline Table read_csv(const std::string &path) {
  return parse_csv(read_file(path), path);
}

inline std::string to_csv(const std::vector<std::string> &header,
                          const Matrix &values, const BoolMatrix *mask = nullptr) {
  std::string out;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c)
      out += ',';
    out += header[c];
  }
  out += '\n';
  for (Index r = 0; r < values.rows(); ++r) {
    for (Index c = 0; c < values.cols(); ++c) {
      if (c)
        out += ',';
      if (!mask || (*mask)(r, c))
        out += format_double(values(r, c));
    }
    out += '\n';
  }
  return out;
}

inline std::vector<std::string> numbered(const std::string &prefix, Index n) {
  std::vector<std::string> out;
  for (Index i = 1; i <= n; ++i)
    out.push_back(prefix + std::to_string(i));
  return out;
}

/// Integer labels separated by commas and/or newlines. A first line that is
/// not numeric is treated as a header.
inline std::vector<int> parse_labels(const std::string &text,
                                     const std::string &name) {
  std::vector<int> out;
  bool first_line = true;
  for (auto line : split(text, '\n')) {
    if (blank(line))
      continue;
    std::vector<int> row;
    bool numeric = true;
    for (auto cell : split(line, ',')) {
      if (blank(cell))
        continue;
      while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t'))
        cell.remove_prefix(1);
      while (!cell.empty() &&
             (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r'))
        cell.remove_suffix(1);
      int v = 0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (first_line) {
        first_line = false;
        continue;
      }
      throw InputError(name + ": labels must be integers");
    }
    first_line = false;
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

// ---- JSON helpers ---------------------------------------------------------

inline json matrix_json(const Matrix &m) {
  json data = json::array();
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix matrix_from_json(const json &j, const std::string &name) {
  try {
    const Index rows = j.at("rows").get<Index>();
    const Index cols = j.at("cols").get<Index>();
    const auto &data = j.at("data");
    if (rows < 0 || cols < 0 || !data.is_array() ||
        static_cast<Index>(data.size()) != rows * cols)
      throw InputError(name + ": matrix size mismatch");
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c)
        m(r, c) = data[static_cast<std::size_t>(r * cols + c)].get<double>();
    return m;
  } catch (const json::exception &e) {
    throw InputError(name + ": " + e.what());
  }
}

inline Vector vector_from_json(const json &j, const std::string &name) {
  const Matrix m = matrix_from_json(j, name);
  if (m.cols() != 1 && m.rows() != 0)
    throw InputError(name + ": expected a column vector");
  return m.col(0);
}

inline json config_json(const ModelConfig &c, ModelMode mode) {
  return {{"q", c.q},
          {"t", c.t},
          {"m", c.m},
          {"s1", c.s1},
          {"s2", c.s2},
          {"jitter", c.jitter},
          {"learning_rate", c.optimizer.learning_rate},
          {"momentum", c.optimizer.momentum},
          {"max_iters", c.optimizer.max_iters},
          {"elbo_tol", c.optimizer.elbo_tol},
          {"seed", c.seed},
          {"mode", std::string(to_string(mode))},
          {"bound", std::string(to_string(c.bound))}};
}

struct ConfigFile {
  ModelConfig config;
  std::optional<ModelMode> mode;
};

/// Reads the training configuration. Every key is optional; unknown keys
/// are rejected. n and d come from the data.
inline ConfigFile parse_config(const json &j) {
  static const std::set<std::string> known = {
      "q",        "t",         "m",        "s1",   "s2",   "jitter", "learning_rate",
      "momentum", "max_iters", "elbo_tol", "seed", "mode", "bound"};
  if (!j.is_object())
    throw InputError("config: expected a JSON object");
  for (const auto &[key, _] : j.items())
    if (!known.count(key))
      throw InputError("config: unknown key '" + key + "'");
  ConfigFile out;
  auto &c = out.config;
  try {
    auto count = [&](const char *key, std::size_t &dst) {
      if (!j.contains(key))
        return;
      const auto &v = j.at(key);
      if (!v.is_number_integer() || v.get<long long>() < 0)
        throw InputError(std::string("config: '") + key +
                         "' must be a nonnegative integer");
      dst = v.get<std::size_t>();
    };
    auto real = [&](const char *key, double &dst) {
      if (!j.contains(key))
        return;
      if (!j.at(key).is_number())
        throw InputError(std::string("config: '") + key + "' must be a number");
      dst = j.at(key).get<double>();
    };
    count("q", c.q);
    count("t", c.t);
    count("m", c.m);
    count("max_iters", c.optimizer.max_iters);
    real("s1", c.s1);
    real("s2", c.s2);
    real("jitter", c.jitter);
    real("learning_rate", c.optimizer.learning_rate);
    real("momentum", c.optimizer.momentum);
    real("elbo_tol", c.optimizer.elbo_tol);
    if (j.contains("seed")) {
      if (!j.at("seed").is_number_integer())
        throw InputError("config: 'seed' must be an integer");
      c.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("mode"))
      out.mode = mode_from_string(j.at("mode").get<std::string>());
    if (j.contains("bound"))
      c.bound = bound_form_from_string(j.at("bound").get<std::string>());
  } catch (const json::exception &e) {
    throw InputError(std::string("config: ") + e.what());
  }
  return out;
}

inline ConfigFile read_config(const std::string &path) {
  try {
    return parse_config(json::parse(read_file(path)));
  } catch (const json::parse_error &e) {
    throw InputError(path + ": " + e.what());
  }
}

// ---- checkpoints ----------------------------------------------------------

inline json checkpoint_json(const ModelState &s, double elbo_final) {
  json state = {
      {"mu", matrix_json(s.latent.mu)},
      {"sigma", matrix_json(s.latent.sigma)},
      {"xu", matrix_json(s.latent.xu)},
      {"signal_var", matrix_json(s.components.signal_var)},
      {"ard", matrix_json(s.components.ard)},
      {"noise_prec", matrix_json(s.components.noise_prec)},
      {"a", matrix_json(s.dp.a)},
      {"b", matrix_json(s.dp.b)},
      {"phi", matrix_json(s.dp.phi)},
      {"w1", s.dp.w1},
      {"w2", s.dp.w2},
      {"assignment", s.assignment},
  };
  json config = config_json(s.config, s.mode);
  config["n"] = s.config.n;
  config["d"] = s.config.d;
  return {{"schema_version", kSchemaVersion},
          {"config", std::move(config)},
          {"mode", std::string(to_string(s.mode))},
          {"state", std::move(state)},
          {"elbo_final", elbo_final},
          {"rng_seed", s.config.seed}};
}

inline std::string dump(const json &j) { return j.dump(2) + "\n"; }

inline ModelState state_from_checkpoint(const json &j) {
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kSchemaVersion)
      throw InputError("checkpoint: unsupported schema_version " +
                       std::to_string(version) + " (expected " +
                       std::to_string(kSchemaVersion) + ")");
    ModelState s;
    json cfg = j.at("config");
    s.config.n = cfg.at("n").get<std::size_t>();
    s.config.d = cfg.at("d").get<std::size_t>();
    cfg.erase("n");
    cfg.erase("d");
    const auto parsed = parse_config(cfg);
    const std::size_t n = s.config.n, d = s.config.d;
    s.config = parsed.config;
    s.config.n = n;
    s.config.d = d;
    s.mode = mode_from_string(j.at("mode").get<std::string>());
    const auto &st = j.at("state");
    s.latent.mu = matrix_from_json(st.at("mu"), "mu");
    s.latent.sigma = matrix_from_json(st.at("sigma"), "sigma");
    s.latent.xu = matrix_from_json(st.at("xu"), "xu");
    s.components.signal_var = vector_from_json(st.at("signal_var"), "signal_var");
    s.components.ard = matrix_from_json(st.at("ard"), "ard");
    s.components.noise_prec = vector_from_json(st.at("noise_prec"), "noise_prec");
    s.dp.a = vector_from_json(st.at("a"), "a");
    s.dp.b = vector_from_json(st.at("b"), "b");
    s.dp.phi = matrix_from_json(st.at("phi"), "phi");
    s.dp.w1 = st.at("w1").get<double>();
    s.dp.w2 = st.at("w2").get<double>();
    s.assignment = st.at("assignment").get<std::vector<int>>();
    validate(s);
    return s;
  } catch (const json::exception &e) {
    throw InputError(std::string("checkpoint: ") + e.what());
  } catch (const StructuralError &e) {
    throw InputError(std::string("checkpoint: ") + e.what());
  }
}

inline ModelState read_checkpoint(const std::string &path) {
  try {
    return state_from_checkpoint(json::parse(read_file(path)));
  } catch (const json::parse_error &e) {
    throw InputError(path + ": " + e.what());
  }
}

// ---- synthetic specs ------------------------------------------------------

/// Parses "1-10:1,2;11-20:1,3": 1-based dimension ranges (or single
/// indices, comma separated) before ':' and 1-based active latents after.
inline std::vector<SyntheticGroup> parse_groups(const std::string &text) {
  std::vector<SyntheticGroup> out;
  auto parse_index = [&](std::string_view s) {
    while (!s.empty() && s.front() == ' ')
      s.remove_prefix(1);
    while (!s.empty() && s.back() == ' ')
      s.remove_suffix(1);
    long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() ||
        v < 1)
      throw InputError("groups: bad index '" + std::string(s) + "' in '" +
                       text + "'");
    return static_cast<Index>(v - 1);
  };
  for (auto part : split(text, ';')) {
    if (blank(part))
      continue;
    const auto colon = part.find(':');
    if (colon == std::string_view::npos || part.find(':', colon + 1) !=
                                               std::string_view::npos)
      throw InputError("groups: expected 'dims:latents' in '" +
                       std::string(part) + "'");
    SyntheticGroup g;
    for (auto item : split(part.substr(0, colon), ',')) {
      const auto dash = item.find('-');
      if (dash == std::string_view::npos) {
        g.dims.push_back(parse_index(item));
        continue;
      }
      const Index lo = parse_index(item.substr(0, dash));
      const Index hi = parse_index(item.substr(dash + 1));
      if (hi < lo)
        throw InputError("groups: descending range '" + std::string(item) + "'");
      for (Index i = lo; i <= hi; ++i)
        g.dims.push_back(i);
    }
    for (auto item : split(part.substr(colon + 1), ','))
      g.latents.push_back(parse_index(item));
    out.push_back(std::move(g));
  }
  if (out.empty())
    throw InputError("groups: no groups in '" + text + "'");
  return out;
}

inline json synthetic_json(const SyntheticSpec &spec, const SyntheticData &data) {
  json groups = json::array();
  for (const auto &g : spec.groups) {
    std::vector<Index> dims, latents;
    for (Index i : g.dims)
      dims.push_back(i + 1);
    for (Index i : g.latents)
      latents.push_back(i + 1);
    groups.push_back({{"dims", dims},
                      {"latents", latents},
                      {"sigma2", g.sigma2},
                      {"gamma", g.gamma},
                      {"beta", g.beta}});
  }
  return {{"spec",
           {{"n", spec.n},
            {"d", spec.d},
            {"q_true", spec.q_true},
            {"seed", spec.seed},
            {"groups", std::move(groups)}}},
          {"labels", data.labels},
          {"x_true", matrix_json(data.x_true)}};
}

/// Truth labels from a synthetic sidecar JSON or a plain label file.
inline std::vector<int> read_truth_labels(const std::string &path) {
  const std::string text = read_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      return json::parse(text).at("labels").get<std::vector<int>>();
    } catch (const json::exception &e) {
      throw InputError(path + ": " + e.what());
    }
  }
  return parse_labels(text, path);
}

} // namespace dpgplvm::io

#endif // DPGPLVM_IO_HPP_
