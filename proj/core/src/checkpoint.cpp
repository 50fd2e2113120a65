#include "fits/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace fits::checkpoint {

namespace {

constexpr char kMagic[5] = {'F', 'I', 'T', 'S', '1'};

void write_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  f.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw CheckpointError("truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_tensor(std::ofstream& f, const std::string& name, const Tensor& t) {
  write_u32(f, static_cast<std::uint32_t>(name.size()));
  f.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(f, static_cast<std::uint32_t>(t.shape.size()));
  for (int d : t.shape) write_u32(f, static_cast<std::uint32_t>(d));
  static_assert(std::endian::native == std::endian::little,
                "dump format is little-endian");
  f.write(reinterpret_cast<const char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

bool read_tensor(std::ifstream& f, std::string& name, Tensor& t) {
  std::uint32_t name_len;
  {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (f.gcount() == 0) return false;  // clean EOF
    if (f.gcount() != 4) throw CheckpointError("truncated checkpoint");
    name_len = 0;
    for (int i = 0; i < 4; ++i)
      name_len |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  }
  name.resize(name_len);
  f.read(name.data(), name_len);
  std::uint32_t rank = read_u32(f);
  if (rank > 8) throw CheckpointError("implausible tensor rank");
  std::vector<int> shape(rank);
  for (auto& d : shape) d = static_cast<int>(read_u32(f));
  t = Tensor(shape);
  f.read(reinterpret_cast<char*>(t.data.data()),
         static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!f) throw CheckpointError("truncated checkpoint");
  return true;
}

std::vector<double> config_to_vec(const encoder::EncoderConfig& c) {
  return {static_cast<double>(c.d_l),        static_cast<double>(c.d_g),
          static_cast<double>(c.n_unimodal), static_cast<double>(c.m_fusion),
          static_cast<double>(c.text_heads), static_cast<double>(c.gat_heads),
          static_cast<double>(c.max_seq),    static_cast<double>(c.vocab_size),
          static_cast<double>(c.relation_count),
          static_cast<double>(c.entity_count),
          static_cast<double>(c.ff_width)};
}

encoder::EncoderConfig config_from_vec(const std::vector<double>& v) {
  if (v.size() != 11) throw CheckpointError("bad embedded config");
  encoder::EncoderConfig c;
  c.d_l = static_cast<int>(v[0]);
  c.d_g = static_cast<int>(v[1]);
  c.n_unimodal = static_cast<int>(v[2]);
  c.m_fusion = static_cast<int>(v[3]);
  c.text_heads = static_cast<int>(v[4]);
  c.gat_heads = static_cast<int>(v[5]);
  c.max_seq = static_cast<int>(v[6]);
  c.vocab_size = static_cast<int>(v[7]);
  c.relation_count = static_cast<int>(v[8]);
  c.entity_count = static_cast<int>(v[9]);
  c.ff_width = static_cast<int>(v[10]);
  return c;
}

}  // namespace

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::kInit: return "INIT";
    case Stage::kPost: return "POST";
    case Stage::kFinetune: return "FINETUNE";
  }
  return "?";
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void save(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write checkpoint: " + path);
  f.write(kMagic, 5);

  write_tensor(f, "__meta.config", Tensor::vec(config_to_vec(ckpt.model.cfg)));
  write_tensor(f, "__meta.stage",
               Tensor::scalar(static_cast<double>(static_cast<int>(ckpt.stage))));
  write_tensor(f, "__meta.config_hash",
               Tensor::scalar(std::bit_cast<double>(ckpt.config_hash)));
  const auto& oc = ckpt.optimizer.config();
  write_tensor(f, "__meta.opt",
               Tensor::vec({static_cast<double>(ckpt.optimizer.step_count()),
                            oc.lr, oc.beta1, oc.beta2, oc.eps}));

  for (const auto& name : ckpt.model.params.names())
    write_tensor(f, name, ckpt.model.params.at(name).value);

  auto& opt = const_cast<Adam&>(ckpt.optimizer);
  for (const auto& name : ckpt.model.params.names()) {
    auto mit = opt.first_moments().find(name);
    if (mit != opt.first_moments().end())
      write_tensor(f, "__opt.m." + name, mit->second);
    auto vit = opt.second_moments().find(name);
    if (vit != opt.second_moments().end())
      write_tensor(f, "__opt.v." + name, vit->second);
  }
  if (!f) throw CheckpointError("write failure: " + path);
}

Checkpoint load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint: " + path);
  char magic[5];
  f.read(magic, 5);
  if (!f || std::memcmp(magic, kMagic, 5) != 0)
    throw CheckpointError("bad magic in " + path);

  std::vector<std::pair<std::string, Tensor>> tensors;
  std::string name;
  Tensor t;
  while (read_tensor(f, name, t)) tensors.emplace_back(name, std::move(t));

  std::map<std::string, Tensor> meta;
  Checkpoint ckpt;
  // first pass: meta
  for (auto& [n, tt] : tensors)
    if (n.rfind("__meta.", 0) == 0) meta[n] = tt;
  if (!meta.count("__meta.config")) throw CheckpointError("missing config");
  ckpt.model.cfg = config_from_vec(meta["__meta.config"].data);
  ckpt.stage = static_cast<Stage>(static_cast<int>(meta["__meta.stage"].data[0]));
  ckpt.config_hash = std::bit_cast<std::uint64_t>(meta["__meta.config_hash"].data[0]);
  const auto& ov = meta["__meta.opt"].data;
  AdamConfig ac{ov[1], ov[2], ov[3], ov[4]};
  ckpt.optimizer = Adam(ac);
  ckpt.optimizer.set_step_count(static_cast<std::int64_t>(ov[0]));

  for (auto& [n, tt] : tensors) {
    if (n.rfind("__meta.", 0) == 0) continue;
    if (n.rfind("__opt.m.", 0) == 0)
      ckpt.optimizer.first_moments()[n.substr(8)] = std::move(tt);
    else if (n.rfind("__opt.v.", 0) == 0)
      ckpt.optimizer.second_moments()[n.substr(8)] = std::move(tt);
    else
      ckpt.model.params.add(n, std::move(tt));
  }
  return ckpt;
}

}  // namespace fits::checkpoint
