#include "bytekaz/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace bytekaz {

namespace {

constexpr std::array<char, 8> kMagic{'B', 'Y', 'T', 'E', 'K', 'A', 'Z', '\0'};

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

void write_matrix(std::ostream& out, const Matrix<float>& m) {
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
}

void read_matrix(std::istream& in, Matrix<float>& m, const std::string& what) {
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!in) throw Error("checkpoint: truncated payload while reading " + what);
}

}  // namespace

Checkpoint Checkpoint::fresh(const ModelConfig& config, std::uint64_t seed) {
  Checkpoint c;
  c.config = config;
  c.model = std::make_unique<ByteKazModel<float>>(config, seed);
  std::ostringstream rng;
  rng << std::mt19937_64(seed);
  c.rng_state = rng.str();
  return c;
}

bool Checkpoint::has_group_prefix(const std::string& prefix) const {
  for (const auto& g : loaded_groups)
    if (g.rfind(prefix, 0) == 0) return true;
  return false;
}

void Checkpoint::save(const std::filesystem::path& path, const std::function<bool(const std::string&)>& keep) const {
  if (!model) throw Error("checkpoint: nothing to save");
  nlohmann::json params = nlohmann::json::array();
  std::vector<const Parameter<float>*> order;
  for (const auto& p : model->params()) {
    if (keep && !keep(p->group)) continue;
    params.push_back({{"name", p->name},
                      {"group", p->group},
                      {"layer", p->layer},
                      {"rows", p->value.rows()},
                      {"cols", p->value.cols()},
                      {"trainable", p->trainable}});
    order.push_back(p.get());
  }
  nlohmann::json moments = nlohmann::json::array();
  for (const auto* p : order)
    if (optimizer.first.count(p->name) != 0) moments.push_back(p->name);

  std::set<std::string> groups;
  for (const auto* p : order)
    if (loaded_groups.count(p->group) != 0) groups.insert(p->group);

  nlohmann::json header{
      {"format_version", kFormatVersion},
      {"config", to_json(config)},
      {"stage", stage},
      {"step", step},
      {"rng_state", rng_state},
      {"params", params},
      {"loaded_groups", groups},
      {"optimizer", {{"step", optimizer.step}, {"params", moments}}},
      {"metadata", metadata},
  };
  if (vocab) header["vocab"] = vocab->to_json();
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("checkpoint: cannot write " + path.string());
  out.write(kMagic.data(), kMagic.size());
  const std::uint32_t version = kFormatVersion;
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* p : order) write_matrix(out, p->value);
  for (const auto& name : moments) write_matrix(out, optimizer.first.at(name.get<std::string>()));
  for (const auto& name : moments) write_matrix(out, optimizer.second.at(name.get<std::string>()));
  if (!out) throw Error("checkpoint: write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot read " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw Error("checkpoint: " + path.string() + " is not a checkpoint file");
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || version != kFormatVersion) throw Error("checkpoint: unsupported format version in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error("checkpoint: truncated header in " + path.string());
  const auto header = nlohmann::json::parse(text);

  Checkpoint c;
  apply_json(c.config, header.at("config"));
  c.model = std::make_unique<ByteKazModel<float>>(c.config, 0);
  c.stage = header.at("stage").get<std::string>();
  c.step = header.at("step").get<std::int64_t>();
  c.rng_state = header.at("rng_state").get<std::string>();
  c.metadata = header.value("metadata", nlohmann::json::object());
  if (header.contains("vocab")) c.vocab = BpeVocab::from_json(header.at("vocab"));
  for (const auto& g : header.at("loaded_groups")) c.loaded_groups.insert(g.get<std::string>());

  for (const auto& meta : header.at("params")) {
    auto& p = c.model->params().get(meta.at("name").get<std::string>());
    if (p.value.rows() != meta.at("rows").get<Eigen::Index>() || p.value.cols() != meta.at("cols").get<Eigen::Index>())
      throw Error("checkpoint: shape mismatch for " + p.name);
    p.trainable = meta.at("trainable").get<bool>();
    read_matrix(in, p.value, p.name);
  }
  const auto& opt = header.at("optimizer");
  c.optimizer.step = opt.at("step").get<std::int64_t>();
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& name_json : opt.at("params")) {
      const auto name = name_json.get<std::string>();
      const auto& p = c.model->params().get(name);
      Matrix<float> m(p.value.rows(), p.value.cols());
      read_matrix(in, m, name + " moments");
      (pass == 0 ? c.optimizer.first : c.optimizer.second)[name] = std::move(m);
    }
  }
  return c;
}

void Checkpoint::import_groups(const Checkpoint& other, const std::function<bool(const std::string&)>& keep) {
  for (auto& p : model->params()) {
    if (!keep(p->group)) continue;
    const auto& src = other.model->params().get(p->name);
    if (src.value.rows() != p->value.rows() || src.value.cols() != p->value.cols())
      throw Error("checkpoint: cannot import " + p->name + " (shape mismatch)");
    p->value = src.value;
    if (other.loaded_groups.count(p->group) != 0) loaded_groups.insert(p->group);
  }
}

std::map<std::string, std::uint64_t> group_hashes(const ParamStore<float>& store) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& p : store) {
    auto [it, inserted] = out.try_emplace(p->group, kFnvOffset);
    it->second = fnv1a(p->name.data(), p->name.size(), it->second);
    it->second = fnv1a(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(float), it->second);
  }
  return out;
}

std::string config_hash(const ModelConfig& config) {
  const auto text = to_json(config).dump();
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << fnv1a(text.data(), text.size());
  return s.str();
}

}  // namespace bytekaz
