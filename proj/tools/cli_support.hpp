#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gem/error.hpp"
#include "gem/rng.hpp"

namespace gem::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kNumerical = 3 };

/// Flags are parsed into private storage and laid over the target only when
/// given, so a config file loaded after parsing sits between the built-in
/// defaults and the command line.
class Overrides {
 public:
  template <class T>
  CLI::Option* add(CLI::App* app, const std::string& name, T& target, const std::string& help) {
    auto store = std::make_shared<T>(target);
    CLI::Option* opt = app->add_option(name, *store, help)->capture_default_str();
    steps_.push_back([opt, store, &target] {
      if (opt->count() > 0) target = *store;
    });
    return opt;
  }

  /// String flag mapped onto an enum (or any type) by `parse`.
  template <class T>
  CLI::Option* add_parsed(CLI::App* app, const std::string& name, T& target, std::function<T(const std::string&)> parse,
                          const std::string& help) {
    auto store = std::make_shared<std::string>();
    CLI::Option* opt = app->add_option(name, *store, help);
    steps_.push_back([opt, store, &target, parse] {
      if (opt->count() > 0) target = parse(*store);
    });
    return opt;
  }

  void apply() const {
    for (const auto& s : steps_) s();
  }

 private:
  std::vector<std::function<void()>> steps_;
};

inline nlohmann::json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
}

/// GEM_SEED, when set, wins over --seed.
inline std::uint64_t resolve_seed(std::uint64_t seed) {
  const char* env = std::getenv("GEM_SEED");
  if (!env || !*env) return seed;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0' || env[0] == '-') throw ConfigError(std::string("GEM_SEED is not an unsigned integer: '") + env + "'");
  return v;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string config_hash(const nlohmann::json& config) { return hex64(fnv1a(config.dump())); }

inline std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return hex64(fnv1a(bytes));
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string num(std::size_t v) { return std::to_string(v); }

/// CSV with a leading `# config=<json>` line and a header row. "-" writes to
/// stdout. Appending to an existing file keeps its header.
class CsvOut {
 public:
  CsvOut(const std::string& path, const nlohmann::json& config, const std::vector<std::string>& header,
         bool append = false)
      : width_(header.size()) {
    bool fresh = true;
    if (path != "-") {
      if (append) {
        std::ifstream probe(path);
        fresh = !probe || probe.peek() == std::ifstream::traits_type::eof();
      }
      file_.open(path, append ? std::ios::app : std::ios::trunc);
      if (!file_) throw FormatError("cannot open '" + path + "' for writing");
    }
    if (fresh) {
      out() << "# config=" << config.dump() << "\n";
      write(header);
    }
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != width_) throw ConfigError("csv row width does not match the header");
    write(cells);
  }

 private:
  std::ostream& out() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

  void write(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out() << ',';
      const std::string& c = cells[i];
      if (c.find_first_of(",\"\n") == std::string::npos) {
        out() << c;
      } else {
        out() << '"';
        for (char ch : c) out() << (ch == '"' ? "\"\"" : std::string(1, ch == '\n' ? ' ' : ch));
        out() << '"';
      }
    }
    out() << '\n';
    out().flush();
  }

  std::ofstream file_;
  std::size_t width_;
};

}  // namespace gem::cli
