#include "adloop/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "adloop/error.hpp"

namespace adloop {

namespace {

constexpr char kMagic[4] = {'A', 'D', 'L', 'P'};

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  bool at_end() const { return pos_ == bytes_.size(); }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::kParse, "checkpoint truncated");
  }

  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::string buf(kMagic, 4);
  put_u32(buf, kCheckpointVersion);
  for (const NamedTensor& t : tensors) {
    std::size_t n = 1;
    for (std::uint32_t d : t.dims) n *= d;
    if (n != t.data.size()) throw Error(ErrorCode::kInternal, "tensor " + t.name + " shape mismatch");
    put_u32(buf, static_cast<std::uint32_t>(t.name.size()));
    buf += t.name;
    put_u32(buf, static_cast<std::uint32_t>(t.dims.size()));
    for (std::uint32_t d : t.dims) put_u32(buf, d);
    for (float x : t.data) put_u32(buf, std::bit_cast<std::uint32_t>(x));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path);
}

std::vector<NamedTensor> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));
  if (r.bytes(4) != std::string(kMagic, 4)) {
    throw Error(ErrorCode::kParse, path + " is not an ADLP checkpoint");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kVersion, "checkpoint version " + std::to_string(version) +
                                         " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  std::vector<NamedTensor> out;
  while (!r.at_end()) {
    NamedTensor t;
    t.name = r.bytes(r.u32());
    const std::uint32_t rank = r.u32();
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      t.dims.push_back(r.u32());
      n *= t.dims.back();
    }
    t.data.resize(n);
    for (float& x : t.data) x = std::bit_cast<float>(r.u32());
    out.push_back(std::move(t));
  }
  return out;
}

const NamedTensor* find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const NamedTensor& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void append_policy(std::vector<NamedTensor>& out, const PolicyParams& params,
                   const std::string& prefix) {
  for (const Tensor& t : params.tensors()) {
    NamedTensor nt;
    nt.name = prefix + t.name;
    for (std::size_t d : t.dims) nt.dims.push_back(static_cast<std::uint32_t>(d));
    nt.data.reserve(t.data.size());
    for (double x : t.data) nt.data.push_back(static_cast<float>(x));
    out.push_back(std::move(nt));
  }
}

bool has_policy(const std::vector<NamedTensor>& tensors, const std::string& prefix) {
  return find_tensor(tensors, prefix + "embed") != nullptr;
}

PolicyParams extract_policy(const std::vector<NamedTensor>& tensors, double sigma,
                            const std::string& prefix) {
  auto get = [&](const char* name) -> const NamedTensor& {
    const NamedTensor* t = find_tensor(tensors, prefix + name);
    if (t == nullptr) throw Error(ErrorCode::kParse, "checkpoint lacks " + prefix + name);
    return *t;
  };
  const NamedTensor& embed = get("embed");
  const NamedTensor& vec_in = get("vec_in");
  const NamedTensor& context = get("context");
  if (embed.dims.size() != 2 || vec_in.dims.size() != 2 || context.dims.size() != 2) {
    throw Error(ErrorCode::kParse, "checkpoint tensors have unexpected ranks");
  }
  PolicyConfig cfg;
  cfg.vocab_size = static_cast<int>(embed.dims[0]);
  cfg.d_model = static_cast<int>(embed.dims[1]);
  cfg.latent_dim = static_cast<int>(vec_in.dims[1]);
  const auto cells = (static_cast<int>(context.dims[1]) - 2) / kNumCellTypes;
  cfg.max_grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cells))));
  cfg.sigma = sigma;
  if (cfg.context_dim() != static_cast<int>(context.dims[1])) {
    throw Error(ErrorCode::kParse, "checkpoint context width is not a square board");
  }
  PolicyParams p = PolicyParams::zeros(cfg);
  for (Tensor& t : p.tensors()) {
    const NamedTensor& src = get(t.name.c_str());
    std::vector<std::size_t> dims(src.dims.begin(), src.dims.end());
    if (dims != t.dims) throw Error(ErrorCode::kParse, "shape mismatch for " + t.name);
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = src.data[i];
  }
  return p;
}

void append_scalar(std::vector<NamedTensor>& out, const std::string& name, double value) {
  out.push_back(NamedTensor{name, {1}, {static_cast<float>(value)}});
}

std::optional<double> extract_scalar(const std::vector<NamedTensor>& tensors,
                                     const std::string& name) {
  const NamedTensor* t = find_tensor(tensors, name);
  if (t == nullptr || t->data.size() != 1) return std::nullopt;
  return t->data[0];
}

void save_policy(const std::string& path, const PolicyParams& params) {
  std::vector<NamedTensor> tensors;
  append_policy(tensors, params);
  write_checkpoint(path, tensors);
}

PolicyParams load_policy(const std::string& path, double sigma) {
  return extract_policy(read_checkpoint(path), sigma);
}

}  // namespace adloop
