#include "seqseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace seqseg {

namespace {

constexpr char kMagic[] = "SEQSEG1";
constexpr size_t kMagicLen = 7;

template <class T>
void put(std::ofstream& out, T v) {
  out.write((const char*)&v, sizeof(T));
}

template <class T>
T get(std::ifstream& in, const std::string& path) {
  T v;
  in.read((char*)&v, sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<Param<float>*>& params,
                     const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kMagic, kMagicLen);
  for (const Param<float>* p : params) {
    put(out, (uint32_t)p->name.size());
    out.write(p->name.data(), (std::streamsize)p->name.size());
    put(out, (uint32_t)4);
    const Shape& s = p->value.shape;
    for (int d : {s.n, s.c, s.h, s.w}) put(out, (uint32_t)d);
    out.write((const char*)p->value.data(), (std::streamsize)(p->value.numel() * sizeof(float)));
  }
  put(out, (uint32_t)0);  // sentinel
  put(out, (int64_t)meta.iteration);
  put(out, (double)meta.val_miou);
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

CheckpointMeta load_checkpoint(const std::string& path,
                               const std::vector<Param<float>*>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);

  std::map<std::string, std::pair<Shape, std::vector<float>>> records;
  for (;;) {
    uint32_t len = get<uint32_t>(in, path);
    if (len == 0) break;
    std::string name(len, '\0');
    in.read(name.data(), len);
    uint32_t rank = get<uint32_t>(in, path);
    if (rank != 4) throw std::runtime_error("load_checkpoint: unexpected rank in " + path);
    Shape s;
    s.n = (int)get<uint32_t>(in, path);
    s.c = (int)get<uint32_t>(in, path);
    s.h = (int)get<uint32_t>(in, path);
    s.w = (int)get<uint32_t>(in, path);
    std::vector<float> data(s.numel());
    in.read((char*)data.data(), (std::streamsize)(data.size() * sizeof(float)));
    if (!in) throw std::runtime_error("load_checkpoint: truncated record in " + path);
    records[name] = {s, std::move(data)};
  }
  CheckpointMeta meta;
  meta.iteration = get<int64_t>(in, path);
  meta.val_miou = get<double>(in, path);

  for (Param<float>* p : params) {
    auto it = records.find(p->name);
    if (it == records.end())
      throw std::runtime_error("load_checkpoint: missing parameter '" + p->name + "' in " + path);
    if (!(it->second.first == p->value.shape))
      throw std::runtime_error("load_checkpoint: shape mismatch for '" + p->name + "' in " + path);
    *p->value.store = it->second.second;
  }
  return meta;
}

}  // namespace seqseg
