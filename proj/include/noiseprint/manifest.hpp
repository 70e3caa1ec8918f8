#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "noiseprint/common.hpp"
#include "noiseprint/container.hpp"

namespace noiseprint {

enum class Role { train, validation, reference, pristine_test, forged_test };
enum class ForgeryKind { none, splicing, copymove, inpainting };

inline std::string to_string(Role r) {
  switch (r) {
    case Role::train: return "train";
    case Role::validation: return "validation";
    case Role::reference: return "reference";
    case Role::pristine_test: return "pristine-test";
    case Role::forged_test: return "forged-test";
  }
  return "?";
}

inline Role parse_role(const std::string& s) {
  for (Role r : {Role::train, Role::validation, Role::reference, Role::pristine_test, Role::forged_test})
    if (to_string(r) == s) return r;
  throw format_error("unknown manifest role '" + s + "'");
}

inline std::string to_string(ForgeryKind k) {
  switch (k) {
    case ForgeryKind::none: return "-";
    case ForgeryKind::splicing: return "splicing";
    case ForgeryKind::copymove: return "copymove";
    case ForgeryKind::inpainting: return "inpainting";
  }
  return "?";
}

inline ForgeryKind parse_kind(const std::string& s) {
  for (ForgeryKind k : {ForgeryKind::none, ForgeryKind::splicing, ForgeryKind::copymove, ForgeryKind::inpainting})
    if (to_string(k) == s) return k;
  throw format_error("unknown forgery kind '" + s + "'");
}

struct ModelRecord {
  int model_id = 0;
  int period = 8;
  double alpha = 0;
  double block_q = 0;
  std::uint64_t seed = 0;
  bool held_out = false;
};

struct DeviceRecord {
  int device_id = 0;
  int model_id = 0;
  double sigma_k = 0;
  std::uint64_t seed = 0;
};

struct ImageRecord {
  std::string path;  // relative to the manifest directory
  Role role = Role::train;
  int model_id = 0;
  int device_id = 0;
  std::uint64_t seed = 0;
  std::string mask_path;    // forged-test only
  ForgeryKind kind = ForgeryKind::none;
  std::string source_path;  // forged-test: the pristine original
};

/// Declarative description of a synthetic dataset.
///
/// Text format, one record per line:
///
///     noiseprint-manifest 1
///     setting <key> <value>
///     model <id> period <A> alpha <a> block_q <q> seed <s> <train|heldout>
///     device <id> model <id> sigma_k <s> seed <s>
///     image <path> <role> <model> <device> <seed> <mask|-> <kind|-> <source|->
struct Manifest {
  static constexpr int kVersion = 1;

  std::vector<std::pair<std::string, std::string>> settings;
  std::vector<ModelRecord> models;
  std::vector<DeviceRecord> devices;
  std::vector<ImageRecord> images;
  std::filesystem::path base_dir;

  std::vector<const ImageRecord*> with_role(Role r) const {
    std::vector<const ImageRecord*> out;
    for (const auto& i : images)
      if (i.role == r) out.push_back(&i);
    return out;
  }

  const ModelRecord& model(int id) const {
    for (const auto& m : models)
      if (m.model_id == id) return m;
    throw format_error("manifest has no model " + std::to_string(id));
  }

  const DeviceRecord& device(int id) const {
    for (const auto& d : devices)
      if (d.device_id == id) return d;
    throw format_error("manifest has no device " + std::to_string(id));
  }

  std::string setting(const std::string& key, const std::string& fallback = {}) const {
    for (const auto& [k, v] : settings)
      if (k == key) return v;
    return fallback;
  }

  std::filesystem::path resolve(const std::string& rel) const { return base_dir / rel; }

  /// Rejects manifests where a device appears in a training role and in an evaluation role.
  void check_camera_disjointness() const {
    std::map<int, bool> train_dev, eval_dev;
    for (const auto& i : images) {
      if (i.role == Role::train) train_dev[i.device_id] = true;
      else eval_dev[i.device_id] = true;
    }
    for (const auto& [dev, _] : train_dev)
      if (eval_dev.count(dev))
        throw invalid_input("device " + std::to_string(dev) + " appears in both training and evaluation roles");
  }
};

inline std::string serialize_manifest(const Manifest& m) {
  std::ostringstream os;
  os.precision(17);
  os << "noiseprint-manifest " << Manifest::kVersion << '\n';
  for (const auto& [k, v] : m.settings) os << "setting " << k << ' ' << v << '\n';
  for (const auto& r : m.models)
    os << "model " << r.model_id << " period " << r.period << " alpha " << r.alpha << " block_q " << r.block_q
       << " seed " << r.seed << ' ' << (r.held_out ? "heldout" : "train") << '\n';
  for (const auto& d : m.devices)
    os << "device " << d.device_id << " model " << d.model_id << " sigma_k " << d.sigma_k << " seed " << d.seed << '\n';
  auto dash = [](const std::string& s) { return s.empty() ? std::string("-") : s; };
  for (const auto& i : m.images)
    os << "image " << i.path << ' ' << to_string(i.role) << ' ' << i.model_id << ' ' << i.device_id << ' ' << i.seed
       << ' ' << dash(i.mask_path) << ' ' << to_string(i.kind) << ' ' << dash(i.source_path) << '\n';
  return os.str();
}

inline Manifest parse_manifest(const std::string& text) {
  Manifest m;
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw format_error("empty manifest");
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != "noiseprint-manifest") throw format_error("not a dataset manifest");
    if (version != Manifest::kVersion) throw format_error("unsupported manifest version " + std::to_string(version));
  }
  auto undash = [](const std::string& s) { return s == "-" ? std::string() : s; };
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    bool ok = true;
    if (tag == "setting") {
      std::string k, v;
      ok = static_cast<bool>(ls >> k >> v);
      m.settings.emplace_back(k, v);
    } else if (tag == "model") {
      ModelRecord r;
      std::string kp, ka, kq, ks, split;
      ok = static_cast<bool>(ls >> r.model_id >> kp >> r.period >> ka >> r.alpha >> kq >> r.block_q >> ks >> r.seed >> split);
      r.held_out = split == "heldout";
      m.models.push_back(r);
    } else if (tag == "device") {
      DeviceRecord d;
      std::string km, ks, kd;
      ok = static_cast<bool>(ls >> d.device_id >> km >> d.model_id >> ks >> d.sigma_k >> kd >> d.seed);
      m.devices.push_back(d);
    } else if (tag == "image") {
      ImageRecord i;
      std::string role, mask, kind, source;
      ok = static_cast<bool>(ls >> i.path >> role >> i.model_id >> i.device_id >> i.seed >> mask >> kind >> source);
      if (ok) {
        i.role = parse_role(role);
        i.mask_path = undash(mask);
        i.kind = parse_kind(kind);
        i.source_path = undash(source);
      }
      m.images.push_back(i);
    } else {
      ok = false;
    }
    if (!ok) throw format_error("malformed manifest line " + std::to_string(lineno) + ": " + line);
  }
  return m;
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  const auto text = serialize_manifest(m);
  detail::atomic_write(path, [&](std::ostream& os) { os << text; });
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw format_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  Manifest m = parse_manifest(read_text_file(path));
  m.base_dir = path.parent_path();
  return m;
}

/// Identity hash of a manifest's content (independent of where it lives on disk).
inline std::string manifest_hash(const Manifest& m) { return hex64(fnv1a(serialize_manifest(m))); }

}  // namespace noiseprint
