#include "edunet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace edunet {

namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'E', 'D', 'U', 'N'};
constexpr std::uint32_t kMaxName = 1u << 12;
constexpr int kMaxRank = 8;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  template <class U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void string(const std::string& s) {
    uint(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const std::string& name, const Tensor& t) {
    string(name);
    out_.push_back(static_cast<char>(t.rank()));
    for (auto d : t.shape()) uint(static_cast<std::uint64_t>(d));
    const Tensor f = t.dtype() == DType::F32 ? t : t.to(DType::F32);
    for (float v : f.data<float>()) uint(std::bit_cast<std::uint32_t>(v));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw CheckpointError("checkpoint is truncated");
  }
  template <class U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string string(std::uint32_t max_len) {
    const auto n = uint<std::uint32_t>();
    if (n > max_len) throw CheckpointError("checkpoint string length out of range");
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::pair<std::string, Tensor> tensor() {
    std::string name = string(kMaxName);
    need(1);
    const int rank = static_cast<unsigned char>(in_[pos_++]);
    if (rank > kMaxRank) throw CheckpointError("checkpoint tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t numel = 1;
    for (int i = 0; i < rank; ++i) {
      const auto d = uint<std::uint64_t>();
      if (d != 0 && numel > ((in_.size() - pos_) / 4) / d) throw CheckpointError("checkpoint is truncated");
      numel *= d;
      shape.push_back(static_cast<std::int64_t>(d));
    }
    if (numel > (in_.size() - pos_) / 4) throw CheckpointError("checkpoint is truncated");
    Tensor t = Tensor::zeros(shape, DType::F32);
    auto dst = t.mutable_data<float>();
    for (auto& v : dst) v = std::bit_cast<float>(uint<std::uint32_t>());
    return {std::move(name), std::move(t)};
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
  if (dst.shape() != src.shape())
    throw CheckpointError("checkpoint tensor '" + name + "' has shape " + shape_str(src.shape()) +
                          " but the configured model expects " + shape_str(dst.shape()));
  dst.mutable_buffer() = src.buffer().cast(dst.dtype());
}

}  // namespace

Checkpoint Checkpoint::clone() const {
  Checkpoint c;
  c.settings = settings;
  c.store = store.clone();
  c.adam.step = adam.step;
  for (const auto& [name, mv] : adam.moments)
    c.adam.moments.emplace(name, AdamMoments{mv.m.detach(), mv.v.detach()});
  c.scheduler = scheduler;
  c.lr = lr;
  c.epoch = epoch;
  c.rng = rng;
  return c;
}

Checkpoint init_checkpoint(const RunSettings& settings) {
  settings.validate();
  Checkpoint c;
  c.settings = settings;
  const Rng root(settings.train.seed);
  Rng init = root.fork("init");
  init_edunet(c.store, settings.model, init);
  c.scheduler = PlateauScheduler::from(settings.train);
  c.lr = settings.train.lr;
  c.rng = root.state();
  return c;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  json meta;
  meta["format"] = "edunet-checkpoint";
  json settings = json::object();
  for (const auto& [k, v] : ckpt.settings.to_pairs()) settings[k] = v;
  meta["settings"] = settings;
  meta["epoch"] = ckpt.epoch;
  meta["lr"] = format_double(ckpt.lr);
  meta["adam_step"] = ckpt.adam.step;
  meta["scheduler"] = {{"best", format_double(ckpt.scheduler.best)},
                       {"num_bad", ckpt.scheduler.num_bad}};
  meta["rng"] = {{"key", ckpt.rng.key}, {"counter", ckpt.rng.counter}};

  Writer w;
  w.bytes(kMagic, 4);
  w.uint(kCheckpointVersion);
  w.string(meta.dump());
  const auto& params = ckpt.store.params();
  const auto& buffers = ckpt.store.buffers();
  w.uint(static_cast<std::uint32_t>(params.size() + buffers.size()));
  for (const auto& [name, t] : params) w.tensor(name, t);
  for (const auto& [name, t] : buffers) w.tensor(name, t);
  w.uint(static_cast<std::uint32_t>(2 * ckpt.adam.moments.size()));
  for (const auto& [name, mv] : ckpt.adam.moments) {
    w.tensor("adam.m." + name, mv.m);
    w.tensor("adam.v." + name, mv.v);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  r.skip(4);
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

  json meta;
  try {
    meta = json::parse(r.string(1u << 24));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata is malformed: ") + e.what());
  }

  Checkpoint c;
  try {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& [k, v] : meta.at("settings").items()) pairs.emplace_back(k, v.get<std::string>());
    c.settings = RunSettings::from_pairs(pairs);
    c.settings.validate();
    c.epoch = meta.at("epoch").get<int>();
    c.lr = std::stod(meta.at("lr").get<std::string>());
    c.adam.step = meta.at("adam_step").get<std::int64_t>();
    c.scheduler = PlateauScheduler::from(c.settings.train);
    c.scheduler.best = std::stod(meta.at("scheduler").at("best").get<std::string>());
    c.scheduler.num_bad = meta.at("scheduler").at("num_bad").get<int>();
    c.rng.key = meta.at("rng").at("key").get<std::uint64_t>();
    c.rng.counter = meta.at("rng").at("counter").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata is incomplete: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint metadata is invalid: ") + e.what());
  }

  Rng dummy(0);
  init_edunet(c.store, c.settings.model, dummy);
  const std::size_t expected = c.store.params().size() + c.store.buffers().size();
  const auto count = r.uint<std::uint32_t>();
  if (count != expected)
    throw CheckpointError("checkpoint holds " + std::to_string(count) +
                          " tensors but the configured model has " + std::to_string(expected));
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = r.tensor();
    if (!seen.insert(name).second) throw CheckpointError("duplicate checkpoint tensor '" + name + "'");
    if (c.store.has_param(name))
      copy_into(c.store.param(name), t, name);
    else if (c.store.has_buffer(name))
      copy_into(c.store.buffer(name), t, name);
    else
      throw CheckpointError("checkpoint tensor '" + name + "' does not belong to the configured model");
  }

  const auto moments = r.uint<std::uint32_t>();
  for (std::uint32_t i = 0; i < moments; ++i) {
    auto [name, t] = r.tensor();
    const bool is_m = name.rfind("adam.m.", 0) == 0, is_v = name.rfind("adam.v.", 0) == 0;
    if (!is_m && !is_v) throw CheckpointError("unexpected optimizer tensor '" + name + "'");
    const std::string param = name.substr(7);
    if (!c.store.has_param(param)) throw CheckpointError("optimizer state for unknown parameter '" + param + "'");
    if (t.shape() != c.store.param(param).shape())
      throw CheckpointError("optimizer tensor '" + name + "' has the wrong shape");
    AdamMoments& mv = c.adam.moments[param];
    (is_m ? mv.m : mv.v) = t;
  }
  for (const auto& [name, mv] : c.adam.moments)
    if (!mv.m.defined() || !mv.v.defined())
      throw CheckpointError("incomplete optimizer state for '" + name + "'");
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace edunet
