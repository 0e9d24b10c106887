#include "pslab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pslab/errors.hpp"

namespace pslab {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

namespace {

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void expect(const char* p, std::size_t n) {
    need(n);
    if (std::memcmp(in_.data() + pos_, p, n) != 0) {
      throw IoError("not a checkpoint file (bad magic)");
    }
    pos_ += n;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw IoError("truncated checkpoint");
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.str(ck.config_hash);

  const TrainerState& st = ck.state;
  // parameters() hands out mutable refs; serialization reads only
  auto& model = const_cast<PersonSearchModel&>(st.model);
  const ModelConfig& mc = model.config();
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(mc.roi_width));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(mc.roi_height));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(mc.hidden.size()));
  for (int h : mc.hidden) w.pod<std::uint32_t>(static_cast<std::uint32_t>(h));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(mc.feat_dim));
  w.pod<std::uint8_t>(mc.dropout_site == DropoutSite::kNone ? 0 : 1);
  w.pod<double>(mc.keep_probability);

  w.pod<std::uint32_t>(static_cast<std::uint32_t>(model.class_identities().size()));
  for (int id : model.class_identities()) w.pod<std::int32_t>(id);

  const auto params = model.parameters();
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.str(p.name);
    const auto& shape = p.tensor->shape();
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.pod<std::uint64_t>(d);
    for (double v : p.tensor->values()) w.pod<double>(v);
  }

  w.pod<std::uint64_t>(st.bank.feature_dim());
  w.pod<double>(st.bank.alpha());
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(st.bank.size()));
  for (const auto& [id, c] : st.bank.centers()) {
    w.pod<std::int32_t>(id);
    for (double v : c) w.pod<double>(v);
  }

  w.pod<std::uint64_t>(st.seed);
  w.pod<std::int32_t>(st.stage);
  w.pod<std::int64_t>(st.iteration);
  w.pod<std::int64_t>(st.global_step);
  w.str(st.rng.state());
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  r.expect(kCheckpointMagic, sizeof kCheckpointMagic);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config_hash = r.str();

  ModelConfig mc;
  mc.roi_width = static_cast<int>(r.pod<std::uint32_t>());
  mc.roi_height = static_cast<int>(r.pod<std::uint32_t>());
  mc.hidden.resize(r.pod<std::uint32_t>());
  for (int& h : mc.hidden) h = static_cast<int>(r.pod<std::uint32_t>());
  mc.feat_dim = static_cast<int>(r.pod<std::uint32_t>());
  mc.dropout_site = r.pod<std::uint8_t>() ? DropoutSite::kBeforeFeatHead : DropoutSite::kNone;
  mc.keep_probability = r.pod<double>();

  std::vector<int> classes(r.pod<std::uint32_t>());
  for (int& id : classes) id = r.pod<std::int32_t>();

  TrainerState& st = ck.state;
  try {
    st.model = PersonSearchModel(mc, classes, 0);
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint holds an invalid model config: ") + e.what());
  }
  auto params = st.model.parameters();
  const auto count = r.pod<std::uint32_t>();
  if (count != params.size()) throw IoError("checkpoint tensor count mismatch");
  for (auto& p : params) {
    const std::string name = r.str();
    if (name != p.name) throw IoError("checkpoint tensor '" + name + "' unexpected");
    std::vector<std::size_t> shape(r.pod<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(r.pod<std::uint64_t>());
    if (shape != p.tensor->shape()) throw IoError("checkpoint tensor '" + name + "' shape mismatch");
    for (double& v : p.tensor->values()) v = r.pod<double>();
    p.tensor->drop_grad();
  }

  const auto dim = static_cast<std::size_t>(r.pod<std::uint64_t>());
  const double alpha = r.pod<double>();
  st.bank = CenterBank(dim, alpha);
  const auto centers = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < centers; ++i) {
    const int id = r.pod<std::int32_t>();
    std::vector<double> c(dim);
    for (double& v : c) v = r.pod<double>();
    st.bank.set_center(id, std::move(c));
  }

  st.seed = r.pod<std::uint64_t>();
  st.stage = r.pod<std::int32_t>();
  st.iteration = r.pod<std::int64_t>();
  st.global_step = r.pod<std::int64_t>();
  st.rng.set_state(r.str());
  if (!r.done()) throw IoError("trailing bytes after checkpoint");
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  // write-then-rename keeps the previous checkpoint intact on failure
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace pslab
