#include "gem/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "gem/error.hpp"
#include "internal/binary_io.hpp"

namespace gem {

using detail::read_f64_le;
using detail::write_f64_le;

namespace {

constexpr char kMagic[] = "GEMCKPT\n";
constexpr std::size_t kMagicLen = 8;

long read_tagged_int(std::istream& in, const std::string& tag) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("checkpoint truncated: missing '" + tag + "'");
  std::istringstream ls(line);
  std::string name;
  long value = -1;
  if (!(ls >> name >> value) || name != tag) {
    throw FormatError("bad format: expected '" + tag + "' line in checkpoint header");
  }
  return value;
}

}  // namespace

void Checkpoint::add(std::string name, std::string kind, nlohmann::json spec, ParamVector params) {
  if (has(name)) throw ConfigError("checkpoint already has an entry named '" + name + "'");
  entries_.push_back(CheckpointEntry{std::move(name), std::move(kind), std::move(spec), std::move(params)});
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

const CheckpointEntry& Checkpoint::get(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw FormatError("checkpoint has no model named '" + name + "'");
}

void Checkpoint::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["metadata"] = metadata;
  header["models"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& e : entries_) {
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& s : e.params.layout().segments()) {
      segs.push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});
    }
    header["models"].push_back({{"name", e.name},
                                {"kind", e.kind},
                                {"spec", e.spec},
                                {"segments", segs},
                                {"offset", offset},
                                {"count", e.params.size()}});
    offset += e.params.size();
  }
  header["payload_doubles"] = offset;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic, kMagicLen);
  out << "format_version " << kFormatVersion << "\n";
  out << "header_bytes " << text.size() << "\n";
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : entries_) write_f64_le(out, e.params.values());
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path.string() + "'");

  char magic[kMagicLen] = {};
  in.read(magic, kMagicLen);
  if (in.gcount() != static_cast<std::streamsize>(kMagicLen) ||
      std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw FormatError("bad format: '" + path.string() + "' is not a GEM checkpoint");
  }
  const long version = read_tagged_int(in, "format_version");
  if (version != kFormatVersion) {
    throw FormatError("checkpoint version mismatch: file has " + std::to_string(version) +
                      ", reader supports " + std::to_string(kFormatVersion));
  }
  const long header_bytes = read_tagged_int(in, "header_bytes");
  if (header_bytes <= 0) throw FormatError("bad format: empty checkpoint header");
  std::string text(static_cast<std::size_t>(header_bytes), '\0');
  in.read(text.data(), header_bytes);
  if (in.gcount() != header_bytes) throw FormatError("checkpoint truncated inside header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad format: unreadable checkpoint header: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.metadata = header.at("metadata");
    for (const auto& m : header.at("models")) {
      std::vector<ParamLayout::SegmentShape> shapes;
      for (const auto& s : m.at("segments")) {
        shapes.push_back({s.at("name").get<std::string>(), s.at("rows").get<std::size_t>(),
                          s.at("cols").get<std::size_t>()});
      }
      auto layout = make_layout(shapes);
      const auto count = m.at("count").get<std::size_t>();
      if (count != layout->total_size()) throw FormatError("bad format: segment table/count disagree");
      ParamVector params(layout);
      read_f64_le(in, params.values());
      if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
        throw FormatError("checkpoint truncated: payload for '" + m.at("name").get<std::string>() +
                          "' is incomplete");
      }
      ckpt.add(m.at("name").get<std::string>(), m.at("kind").get<std::string>(), m.at("spec"),
               std::move(params));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad format: malformed checkpoint header: ") + e.what());
  }
  return ckpt;
}

void expect_layout(const CheckpointEntry& entry, const ParamLayout& expected) {
  const auto& got = entry.params.layout().segments();
  const auto& want = expected.segments();
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (i >= got.size()) {
      throw FormatError("shape mismatch in '" + entry.name + "': missing segment '" + want[i].name + "'");
    }
    if (got[i].name != want[i].name || got[i].rows != want[i].rows || got[i].cols != want[i].cols) {
      throw FormatError("shape mismatch in '" + entry.name + "' segment '" + want[i].name +
                        "': expected " + want[i].shape_string() + ", checkpoint has " +
                        got[i].shape_string());
    }
  }
  if (got.size() != want.size()) {
    throw FormatError("shape mismatch in '" + entry.name + "': unexpected segment '" +
                      got[want.size()].name + "'");
  }
}

}  // namespace gem
