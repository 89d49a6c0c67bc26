#include "omniseg/checkpoint.hpp"

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace omniseg::checkpoint {

namespace {

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

std::string hex(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

}  // namespace

void save(const std::filesystem::path& path, const config::RunConfig& config,
          const autodiff::ParamStore<float>& params, long iteration) {
  std::ostringstream header;
  header << "omniseg-checkpoint " << kFormatVersion << "\n";
  header << "config_hash " << hex(config.hash()) << "\n";
  header << "ablation disable_3d_fusion=" << (config.disable_3d_fusion ? 1 : 0)
         << " late_fusion_only=" << (config.late_fusion_only ? 1 : 0) << "\n";
  header << "iteration " << iteration << "\n";
  const auto entries = config.entries();
  header << "config " << entries.size() << "\n";
  for (const auto& [k, v] : entries) header << k << "=" << v << "\n";
  header << "params " << params.blocks().size() << "\n";
  long offset = 0;
  for (const auto& b : params.blocks()) {
    header << b->name << " f32 " << b->value.rows() << " " << b->value.cols() << " " << offset << "\n";
    offset += static_cast<long>(b->value.size()) * 4;
  }
  header << "blob " << offset << "\n";

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& b : params.blocks()) {
      for (Eigen::Index i = 0; i < b->value.size(); ++i) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(b->value.data()[i]);
        bits = to_little(bits);
        out.write(reinterpret_cast<const char*>(&bits), 4);
      }
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load(const std::filesystem::path& path, const config::RunConfig* expected) {
  const std::string name = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(name + ": cannot open checkpoint");
  const auto fail = [&](const std::string& what) { return LoadError(name + ": " + what); };
  std::string line;
  const auto next = [&](const char* what) {
    if (!std::getline(in, line)) throw fail(std::string("truncated header (") + what + ")");
    return std::istringstream(line);
  };

  int version = 0;
  std::string tag;
  if (!(next("magic") >> tag >> version) || tag != "omniseg-checkpoint") throw fail("not a checkpoint file");
  if (version != kFormatVersion) throw fail("unsupported format version " + std::to_string(version));
  std::string stored_hash;
  if (!(next("hash") >> tag >> stored_hash) || tag != "config_hash") throw fail("missing config_hash");
  next("ablation");
  Checkpoint ck;
  if (!(next("iteration") >> tag >> ck.iteration) || tag != "iteration") throw fail("missing iteration");
  size_t count = 0;
  if (!(next("config") >> tag >> count) || tag != "config") throw fail("missing config section");
  std::string text;
  for (size_t i = 0; i < count; ++i) {
    next("config entry");
    text += line + "\n";
  }
  try {
    ck.config = config::RunConfig::parse(text, name);
  } catch (const std::exception& e) {
    throw fail(std::string("embedded config: ") + e.what());
  }
  if (hex(ck.config.hash()) != stored_hash) throw fail("config hash does not match the embedded config");
  if (expected != nullptr && hex(expected->hash()) != stored_hash) {
    throw fail("config hash " + stored_hash + " does not match the provided config (" + hex(expected->hash()) + ")");
  }

  struct Entry {
    std::string name;
    long rows, cols, offset;
  };
  std::vector<Entry> manifest;
  if (!(next("params") >> tag >> count) || tag != "params") throw fail("missing params section");
  for (size_t i = 0; i < count; ++i) {
    Entry e;
    std::string dtype;
    if (!(next("manifest") >> e.name >> dtype >> e.rows >> e.cols >> e.offset) || dtype != "f32" || e.rows < 0 ||
        e.cols < 0 || e.offset < 0) {
      throw fail("malformed manifest line: " + line);
    }
    manifest.push_back(e);
  }
  long blob = 0;
  if (!(next("blob") >> tag >> blob) || tag != "blob") throw fail("missing blob size");
  std::vector<char> bytes(static_cast<size_t>(blob));
  in.read(bytes.data(), blob);
  if (in.gcount() != blob) throw fail("truncated parameter blob");
  if (in.peek() != std::char_traits<char>::eof()) throw fail("trailing bytes after parameter blob");

  long expected_offset = 0;
  for (const auto& e : manifest) {
    const long size = e.rows * e.cols * 4;
    if (e.offset != expected_offset || e.offset + size > blob) throw fail("manifest offsets overlap or exceed the blob: " + e.name);
    expected_offset += size;
    Matrix<float> m(e.rows, e.cols);
    for (long i = 0; i < e.rows * e.cols; ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, bytes.data() + e.offset + i * 4, 4);
      m.data()[i] = std::bit_cast<float>(to_little(bits));
    }
    if (ck.params.contains(e.name)) throw fail("duplicate parameter block " + e.name);
    ck.params.add(e.name, std::move(m));
  }
  if (expected_offset != blob) throw fail("blob size does not match the manifest");
  return ck;
}

}  // namespace omniseg::checkpoint
