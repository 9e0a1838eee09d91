#include "rawnext/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace rawnext {

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename U>
  void scalar(U v) {
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, &v, sizeof(U));
    bytes(raw, sizeof(U));
  }
  void str(const std::string& s) {
    scalar<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  const std::vector<std::uint8_t>& data() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& buf, std::string name) : buf_(buf), name_(std::move(name)) {}
  void bytes(void* p, std::size_t n) {
    if (n > buf_.size() - pos_) throw IoError(name_ + ": truncated checkpoint");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename U>
  U scalar() {
    U v;
    bytes(&v, sizeof(U));
    return v;
  }
  std::string str() {
    const auto n = scalar<std::uint64_t>();
    if (n > buf_.size() - pos_) throw IoError(name_ + ": truncated checkpoint");
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::string name_;
  std::size_t pos_ = 0;
};

StoredTensor capture(const Tensor<float>& t) { return {t.shape(), {t.values().begin(), t.values().end()}}; }

void copy_into(const Checkpoint& ck, const std::string& key, Tensor<float> target) {
  const auto it = ck.tensors.find(key);
  if (it == ck.tensors.end()) throw IoError("checkpoint lacks tensor '" + key + "'");
  if (it->second.shape != target.shape())
    throw IoError("checkpoint tensor '" + key + "' has shape " + shape_str(it->second.shape) + ", expected " +
                  shape_str(target.shape()));
  std::copy(it->second.values.begin(), it->second.values.end(), target.mutable_values().begin());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  Writer w;
  w.bytes("RNXT", 4);
  w.scalar<std::uint32_t>(kCheckpointVersion);
  w.str(ck.config_text);
  w.scalar<std::uint64_t>(ck.epoch);
  w.scalar<std::uint64_t>(ck.step);
  w.scalar<double>(ck.running_loss);
  w.str(ck.rng_state);
  w.scalar<std::uint64_t>(ck.tensors.size());
  for (const auto& [name, t] : ck.tensors) {
    if (t.values.size() != numel(t.shape)) throw std::logic_error("checkpoint tensor '" + name + "' size mismatch");
    w.str(name);
    w.scalar<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.scalar<std::uint64_t>(d);
    w.bytes(t.values.data(), t.values.size() * sizeof(float));
  }
  // Write-then-rename so an interrupted save never leaves a torn file.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw IoError("failed writing checkpoint " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  const std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(buf, path.string());
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "RNXT", 4) != 0) throw IoError(path.string() + ": not a checkpoint (bad magic)");
  const auto version = r.scalar<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw IoError(path.string() + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  ck.config_text = r.str();
  ck.epoch = r.scalar<std::uint64_t>();
  ck.step = r.scalar<std::uint64_t>();
  ck.running_loss = r.scalar<double>();
  ck.rng_state = r.str();
  const auto count = r.scalar<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    StoredTensor t;
    const auto rank = r.scalar<std::uint32_t>();
    if (rank > 3) throw IoError(path.string() + ": tensor '" + name + "' has rank " + std::to_string(rank));
    for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(r.scalar<std::uint64_t>());
    const std::size_t n = numel(t.shape);
    if (n > buf.size()) throw IoError(path.string() + ": truncated checkpoint");
    t.values.resize(n);
    r.bytes(t.values.data(), n * sizeof(float));
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw IoError(path.string() + ": trailing bytes after checkpoint payload");
  return ck;
}

void store_model(Checkpoint& ck, const ParameterSet<float>& params) {
  for (const auto& [name, t] : params.parameters()) ck.tensors["param/" + name] = capture(t);
  for (const auto& [name, t] : params.buffers()) ck.tensors["buffer/" + name] = capture(t);
}

void restore_model(const Checkpoint& ck, ParameterSet<float>& params) {
  for (const auto& [name, t] : params.parameters()) copy_into(ck, "param/" + name, t);
  for (const auto& [name, t] : params.buffers()) copy_into(ck, "buffer/" + name, t);
}

void store_trainer(Checkpoint& ck, Trainer& trainer) {
  for (const auto& [name, t] : trainer.head_parameters().parameters()) ck.tensors["head/" + name] = capture(t);
  for (const auto& [name, mom] : trainer.optimizer().moments) {
    const Shape shape{mom.m.size()};
    ck.tensors["opt.m/" + name] = {shape, mom.m};
    ck.tensors["opt.v/" + name] = {shape, mom.v};
    ck.tensors["opt.vmax/" + name] = {shape, mom.vmax};
  }
  ck.epoch = trainer.epochs_done();
  ck.step = trainer.optimizer().step;
  std::ostringstream rng;
  rng << trainer.rng();
  ck.rng_state = rng.str();
}

void restore_trainer(const Checkpoint& ck, Trainer& trainer) {
  for (const auto& [name, t] : trainer.head_parameters().parameters()) copy_into(ck, "head/" + name, t);
  auto& opt = trainer.optimizer();
  opt.moments.clear();
  for (const auto& [key, t] : ck.tensors) {
    if (key.rfind("opt.m/", 0) != 0) continue;
    const std::string name = key.substr(6);
    auto& mom = opt.moments[name];
    mom.m = t.values;
    auto fetch = [&](const std::string& prefix) {
      const auto it = ck.tensors.find(prefix + name);
      if (it == ck.tensors.end() || it->second.values.size() != t.values.size())
        throw IoError("checkpoint optimiser state for '" + name + "' is incomplete");
      return it->second.values;
    };
    mom.v = fetch("opt.v/");
    mom.vmax = fetch("opt.vmax/");
  }
  opt.step = ck.step;
  std::istringstream rng(ck.rng_state);
  rng >> trainer.rng();
  if (!rng) throw IoError("checkpoint RNG state is unreadable");
  trainer.set_epochs_done(ck.epoch);
}

}  // namespace rawnext
