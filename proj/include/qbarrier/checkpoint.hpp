// Checkpoint container: named parameter stores plus string metadata,
// serialized as a JSON manifest (name, shape, offset, dtype, version)
// followed by one contiguous little-endian float32 blob.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "qbarrier/errors.hpp"
#include "qbarrier/gradnet.hpp"
#include "qbarrier/sha256.hpp"

namespace qb {

static_assert(sizeof(float) == 4, "float must be 32-bit");
static_assert(std::endian::native == std::endian::little,
              "checkpoint blob assumes a little-endian host");

struct Checkpoint {
  std::map<std::string, ParamStore> stores;
  std::map<std::string, std::string> meta;

  static constexpr char kMagic[8] = {'Q', 'B', 'C', 'K', 'P', 'T', '0', '1'};
  static constexpr int kFormatVersion = 1;

  ParamStore& store(const std::string& name) {
    auto it = stores.find(name);
    if (it == stores.end()) {
      it = stores.emplace(name, ParamStore(name)).first;
    }
    return it->second;
  }

  std::vector<uint8_t> serialize() const {
    nlohmann::json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["meta"] = meta;
    std::vector<float> blob;
    nlohmann::json jstores = nlohmann::json::array();
    for (const auto& [sname, ps] : stores) {
      nlohmann::json js;
      js["store"] = sname;
      nlohmann::json jt = nlohmann::json::array();
      for (const auto& [tname, t] : ps.tensors()) {
        nlohmann::json e;
        e["name"] = tname;
        e["shape"] = t.shape;
        e["offset"] = blob.size();
        e["dtype"] = "f32";
        jt.push_back(std::move(e));
        blob.insert(blob.end(), t.data.begin(), t.data.end());
      }
      js["tensors"] = std::move(jt);
      jstores.push_back(std::move(js));
    }
    manifest["stores"] = std::move(jstores);

    std::string mtxt = manifest.dump();
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + sizeof(kMagic));
    uint64_t mlen = mtxt.size();
    const uint8_t* mlp = reinterpret_cast<const uint8_t*>(&mlen);
    out.insert(out.end(), mlp, mlp + sizeof(mlen));
    out.insert(out.end(), mtxt.begin(), mtxt.end());
    const uint8_t* bp = reinterpret_cast<const uint8_t*>(blob.data());
    out.insert(out.end(), bp, bp + blob.size() * sizeof(float));
    return out;
  }

  static Checkpoint deserialize(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < sizeof(kMagic) + sizeof(uint64_t) ||
        std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
      throw ConfigError("checkpoint: bad magic");
    uint64_t mlen;
    std::memcpy(&mlen, bytes.data() + sizeof(kMagic), sizeof(mlen));
    size_t moff = sizeof(kMagic) + sizeof(uint64_t);
    if (bytes.size() < moff + mlen) throw ConfigError("checkpoint: truncated manifest");
    nlohmann::json manifest = nlohmann::json::parse(
        bytes.begin() + moff, bytes.begin() + moff + mlen);
    if (manifest.at("format_version").get<int>() != kFormatVersion)
      throw ConfigError("checkpoint: unsupported format version");

    Checkpoint ck;
    ck.meta = manifest.at("meta").get<std::map<std::string, std::string>>();
    size_t blob_off = moff + mlen;
    size_t blob_floats = (bytes.size() - blob_off) / sizeof(float);
    for (const auto& js : manifest.at("stores")) {
      std::string sname = js.at("store").get<std::string>();
      ParamStore ps(sname);
      for (const auto& e : js.at("tensors")) {
        std::string tname = e.at("name").get<std::string>();
        std::vector<int> shape = e.at("shape").get<std::vector<int>>();
        if (e.at("dtype").get<std::string>() != "f32")
          throw ConfigError("checkpoint: unsupported dtype for " + tname);
        size_t offset = e.at("offset").get<size_t>();
        int64_t n = 1;
        for (int d : shape) n *= d;
        if (offset + static_cast<size_t>(n) > blob_floats)
          throw ConfigError("checkpoint: blob out of range for " + tname);
        std::vector<float> data(n);
        std::memcpy(data.data(), bytes.data() + blob_off + offset * sizeof(float),
                    n * sizeof(float));
        ps.add(tname, std::move(shape), std::move(data));
      }
      ck.stores.emplace(sname, std::move(ps));
    }
    return ck;
  }

  void save(const std::string& path) const {
    auto bytes = serialize();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("checkpoint: cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ConfigError("checkpoint: write failed: " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("checkpoint: cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return deserialize(bytes);
  }

  // Digest over the full serialized form (manifest + blob + metadata).
  std::string digest() const {
    auto bytes = serialize();
    return Sha256::hash(bytes.data(), bytes.size());
  }
};

// Digest over parameter content only (names, shapes, raw float bytes).
inline std::string params_digest(const std::vector<const ParamStore*>& stores) {
  Sha256 h;
  for (const ParamStore* ps : stores) {
    h.update(ps->name());
    for (const auto& [name, t] : ps->tensors()) {
      h.update(name);
      h.update(t.shape.data(), t.shape.size() * sizeof(int));
      h.update(t.data.data(), t.data.size() * sizeof(float));
    }
  }
  return h.hex_digest();
}

}  // namespace qb
