#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "st/config.hpp"
#include "st/data.hpp"
#include "st/model.hpp"

namespace st {

// Directory layout:
//   manifest.txt  header lines plus `param <name> <shape> <offset>` per tensor
//                 (offset counted in floats into params.bin)
//   params.bin    little-endian float32 values, manifest order
//   config.txt    full TrainConfig snapshot
//   vocab.txt     one token per line, id order
//   labels.txt    one label name per line, class-id order
struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  double dev_accuracy = 0.0;
};

struct Checkpoint {
  TrainConfig cfg;
  Vocab vocab;
  LabelSet labels;
  CheckpointMeta meta;
  StModel<float> model;
};

namespace detail {

inline std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big)
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
  return v;
}

inline Shape parse_shape(const std::string& s) {
  Shape shape;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      shape.push_back(std::stoull(part));
    } catch (const std::logic_error&) {
      throw CorruptionError("bad shape '" + s + "' in manifest");
    }
  }
  if (shape.empty()) throw CorruptionError("empty shape in manifest");
  return shape;
}

inline void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  for (const auto& l : lines) out << l << '\n';
}

inline std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw CorruptionError("missing " + p.filename().string());
  std::vector<std::string> lines;
  std::string l;
  while (std::getline(in, l)) lines.push_back(l);
  return lines;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, StModel<float>& model,
                            const Vocab& vocab, const LabelSet& labels,
                            const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  std::ofstream blob(dir / "params.bin", std::ios::binary);
  if (!manifest || !blob) throw DataError("cannot write checkpoint into " + dir.string());
  manifest.precision(17);
  manifest << "# semantic-transform checkpoint v1\n"
           << "seed " << meta.seed << '\n'
           << "epoch " << meta.epoch << '\n'
           << "dev_accuracy " << meta.dev_accuracy << '\n';
  std::size_t offset = 0;
  for (auto& [name, t] : model.named_params()) {
    manifest << "param " << name << ' ' << shape_str(t->shape()) << ' ' << offset << '\n';
    for (float v : t->values()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      bits = detail::to_little(bits);
      blob.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
    offset += t->size();
  }
  std::ofstream(dir / "config.txt") << model.cfg.to_text();
  detail::write_lines(dir / "vocab.txt", vocab.tokens());
  detail::write_lines(dir / "labels.txt", labels.names());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("no checkpoint at " + dir.string());
  Checkpoint ck;
  {
    std::ifstream in(dir / "config.txt");
    if (!in) throw CorruptionError("checkpoint has no config.txt");
    ck.cfg.load_text(in, (dir / "config.txt").string());
  }
  ck.vocab = Vocab::from_tokens(detail::read_lines(dir / "vocab.txt"));
  auto label_names = detail::read_lines(dir / "labels.txt");
  ck.labels = LabelSet(label_names);
  ck.model = StModel<float>::init(ck.cfg, ck.vocab.size(), label_names.size(), ck.cfg.seed);

  struct Entry {
    Shape shape;
    std::size_t offset;
  };
  std::map<std::string, Entry> entries;
  for (const auto& line : detail::read_lines(dir / "manifest.txt")) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "seed") ls >> ck.meta.seed;
    else if (key == "epoch") ls >> ck.meta.epoch;
    else if (key == "dev_accuracy") ls >> ck.meta.dev_accuracy;
    else if (key == "param") {
      std::string name, shape;
      std::size_t offset = 0;
      if (!(ls >> name >> shape >> offset)) throw CorruptionError("bad manifest line '" + line + "'");
      entries[name] = Entry{detail::parse_shape(shape), offset};
    } else {
      throw CorruptionError("unexpected manifest line '" + line + "'");
    }
    if (ls.fail()) throw CorruptionError("bad manifest line '" + line + "'");
  }

  std::ifstream blob(dir / "params.bin", std::ios::binary | std::ios::ate);
  if (!blob) throw CorruptionError("checkpoint has no params.bin");
  const auto bytes = static_cast<std::size_t>(blob.tellg());
  if (bytes % 4) throw CorruptionError("params.bin size is not a multiple of 4");
  std::vector<std::uint32_t> raw(bytes / 4);
  blob.seekg(0);
  blob.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));

  auto params = ck.model.named_params();
  std::size_t expected = 0;
  for (auto& [name, t] : params) {
    auto it = entries.find(name);
    if (it == entries.end()) throw CorruptionError("manifest lacks parameter '" + name + "'");
    if (it->second.shape != t->shape())
      throw CorruptionError("parameter '" + name + "' has shape " + shape_str(it->second.shape) +
                            ", model expects " + shape_str(t->shape()));
    if (it->second.offset + t->size() > raw.size())
      throw CorruptionError("params.bin is truncated at parameter '" + name + "'");
    for (std::size_t i = 0; i < t->size(); ++i) {
      const std::uint32_t bits = detail::to_little(raw[it->second.offset + i]);
      float v;
      std::memcpy(&v, &bits, sizeof v);
      (*t)[i] = v;
    }
    expected += t->size();
    entries.erase(it);
  }
  if (!entries.empty())
    throw CorruptionError("manifest lists unknown parameter '" + entries.begin()->first + "'");
  if (expected != raw.size())
    throw CorruptionError("params.bin holds " + std::to_string(raw.size()) + " values, manifest " +
                          std::to_string(expected));
  return ck;
}

}  // namespace st
