#include "sentlat/pipeline/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sentlat::pipeline {

using nlohmann::json;

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

template <class U>
void put_le(std::ostream& out, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <class U>
U get_le(const unsigned char* b) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
  return out + "]";
}

std::size_t numel(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

}  // namespace

const TensorRecord* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json entries = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (numel(t.shape) != t.data.size())
      throw CheckpointError("tensor '" + t.name + "' holds " + std::to_string(t.data.size()) + " values for shape " +
                            shape_str(t.shape));
    entries.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"bytes", 4 * t.data.size()}});
    offset += 4 * t.data.size();
  }
  const json manifest = {{"format_version", ckpt.version}, {"stage", ckpt.stage},   {"config", ckpt.config},
                         {"meta", ckpt.meta},              {"rng_state", ckpt.rng_state}, {"tensors", entries},
                         {"data_bytes", offset}};
  const std::string text = manifest.dump();

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
    put_le<std::uint32_t>(out, ckpt.version);
    put_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : ckpt.tensors) {
      for (float f : t.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    }
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  const std::size_t header = kCheckpointMagic.size() + 4 + 8;
  if (buf.size() < header || std::memcmp(buf.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
    throw CheckpointError(where + "not a checkpoint (bad magic)");
  Checkpoint c;
  c.version = get_le<std::uint32_t>(buf.data() + kCheckpointMagic.size());
  if (c.version != kCheckpointVersion)
    throw CheckpointError(where + "format version " + std::to_string(c.version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  const auto mlen = get_le<std::uint64_t>(buf.data() + kCheckpointMagic.size() + 4);
  if (mlen > buf.size() - header) throw CheckpointError(where + "truncated manifest");
  json m;
  try {
    m = json::parse(buf.begin() + static_cast<std::ptrdiff_t>(header),
                    buf.begin() + static_cast<std::ptrdiff_t>(header + mlen));
    if (m.at("format_version").get<std::uint32_t>() != c.version)
      throw CheckpointError(where + "manifest version disagrees with the header");
    c.stage = m.at("stage").get<std::string>();
    c.config = m.at("config");
    c.meta = m.at("meta");
    c.rng_state = m.at("rng_state").get<std::string>();
  } catch (const json::exception& e) {
    throw CheckpointError(where + "corrupt manifest: " + e.what());
  }

  const unsigned char* data = buf.data() + header + mlen;
  const std::size_t available = buf.size() - header - mlen;
  try {
    for (const auto& e : m.at("tensors")) {
      TensorRecord t;
      t.name = e.at("name").get<std::string>();
      t.shape = e.at("shape").get<std::vector<std::size_t>>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto bytes = e.at("bytes").get<std::uint64_t>();
      if (bytes != 4 * numel(t.shape))
        throw CheckpointError(where + "tensor '" + t.name + "': byte count does not match shape " + shape_str(t.shape));
      if (offset > available || bytes > available - offset)
        throw CheckpointError(where + "truncated data: tensor '" + t.name + "' needs bytes [" + std::to_string(offset) +
                              ", " + std::to_string(offset + bytes) + ") but only " + std::to_string(available) +
                              " are present");
      t.data.resize(bytes / 4);
      for (std::size_t i = 0; i < t.data.size(); ++i)
        t.data[i] = std::bit_cast<float>(get_le<std::uint32_t>(data + offset + 4 * i));
      c.tensors.push_back(std::move(t));
    }
    if (m.at("data_bytes").get<std::uint64_t>() != available)
      throw CheckpointError(where + "data section is " + std::to_string(available) + " bytes, manifest says " +
                            std::to_string(m.at("data_bytes").get<std::uint64_t>()));
  } catch (const json::exception& e) {
    throw CheckpointError(where + "corrupt manifest: " + e.what());
  }
  return c;
}

std::vector<TensorRecord> capture(const std::vector<std::pair<std::string, ad::Tensor<float>>>& params) {
  std::vector<TensorRecord> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) {
    out.push_back({name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
  }
  return out;
}

void restore(const Checkpoint& ckpt, const std::vector<std::pair<std::string, ad::Tensor<float>>>& params,
             const std::string& prefix, bool strict) {
  for (const auto& [name, t] : params) {
    const auto* rec = ckpt.find(prefix + name);
    if (!rec) throw CheckpointError(ckpt.stage + " checkpoint has no tensor '" + prefix + name + "'");
    if (rec->shape != t.shape())
      throw ShapeError("shape mismatch for '" + prefix + name + "': checkpoint " + shape_str(rec->shape) +
                       " vs model " + shape_str(t.shape()));
  }
  if (strict) {
    for (const auto& rec : ckpt.tensors) {
      if (rec.name.rfind(prefix, 0) != 0) continue;
      bool used = false;
      for (const auto& [name, t] : params) used = used || prefix + name == rec.name;
      if (!used) throw CheckpointError(ckpt.stage + " checkpoint tensor '" + rec.name + "' matches no parameter");
    }
  }
  // Copy only after every check passed, so a failed load leaves the model untouched.
  for (const auto& [name, t] : params) {
    const auto* rec = ckpt.find(prefix + name);
    auto dst = ad::Tensor<float>(t).mutable_data();
    std::copy(rec->data.begin(), rec->data.end(), dst.begin());
  }
}

std::uint64_t tensors_fingerprint(const std::vector<TensorRecord>& tensors) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ull;
  };
  for (const auto& t : tensors) {
    mix(t.name.data(), t.name.size());
    for (auto d : t.shape) mix(&d, sizeof d);
    mix(t.data.data(), 4 * t.data.size());
  }
  return h;
}

}  // namespace sentlat::pipeline
