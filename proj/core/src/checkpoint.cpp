#include "ctrl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ctrl/error.hpp"

namespace ctrl {

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'T', 'R', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <class T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_bytes(const std::string& s) { out_.append(s); }
  void put_string32(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t limit) : bytes_(bytes), limit_(limit) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_bytes(std::uint64_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_string32() { return get_bytes(get<std::uint32_t>()); }
  bool done() const { return pos_ == limit_; }

 private:
  void need(std::uint64_t n) const {
    if (n > limit_ - pos_) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

void write_record(Writer& w, const Param& p) {
  w.put_string32(p.name);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(p.group));
  w.put<std::uint8_t>(p.trainable ? 1 : 0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.value.rank()));
  for (std::size_t d : p.value.shape()) w.put<std::uint64_t>(d);
  for (double v : p.value.data()) w.put<double>(v);
}

struct Record {
  std::string name;
  Group group;
  bool trainable;
  Tensor value;
};

Record read_record(Reader& r) {
  Record rec;
  rec.name = r.get_string32();
  const auto group = r.get<std::uint8_t>();
  if (group > 3) throw CheckpointError("record '" + rec.name + "' has invalid group " + std::to_string(group));
  rec.group = static_cast<Group>(group);
  rec.trainable = r.get<std::uint8_t>() != 0;
  const auto rank = r.get<std::uint32_t>();
  if (rank == 0 || rank > 8) throw CheckpointError("record '" + rec.name + "' has invalid rank " + std::to_string(rank));
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    d = r.get<std::uint64_t>();
    if (d == 0 || d > (std::uint64_t{1} << 32)) throw CheckpointError("record '" + rec.name + "' has invalid shape");
    count *= d;
  }
  std::vector<double> values(count);
  for (auto& v : values) v = r.get<double>();
  rec.value = Tensor(std::move(shape), std::move(values));
  return rec;
}

struct Decoded {
  ModelConfig config;
  std::vector<std::string> vocab;
  std::vector<Record> records;
};

Decoded decode(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t)) {
    throw CheckpointError("checkpoint too short (" + std::to_string(bytes.size()) + " bytes)");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);
  if (stored != fnv1a(bytes.data(), body)) throw CheckpointError("checkpoint checksum mismatch (file corrupted)");

  Reader r(bytes, body);
  if (r.get_bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) throw CheckpointError("not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

  Decoded d;
  try {
    d.config = ModelConfig::from_text(r.get_bytes(r.get<std::uint64_t>()));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  const auto vocab_count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < vocab_count; ++i) d.vocab.push_back(r.get_string32());
  const auto record_count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < record_count; ++i) d.records.push_back(read_record(r));
  if (!r.done()) throw CheckpointError("trailing bytes after the last record");
  return d;
}

void assign_records(Model& model, std::vector<Record>& records) {
  const auto params = model.params();
  const std::size_t n = std::min(params.size(), records.size());
  for (std::size_t i = 0; i < n; ++i) {
    Param& p = *params[i];
    const Record& rec = records[i];
    if (rec.name != p.name || rec.value.shape() != p.value.shape() || rec.group != p.group) {
      throw CheckpointError("checkpoint tensor '" + rec.name + "' " + shape_to_string(rec.value.shape()) + " [" +
                            std::string(group_name(rec.group)) + "] does not match model tensor '" + p.name + "' " +
                            shape_to_string(p.value.shape()) + " [" + std::string(group_name(p.group)) + "]");
    }
  }
  if (params.size() != records.size()) {
    const std::string first = params.size() > records.size() ? params[n]->name : records[n].name;
    throw CheckpointError("checkpoint has " + std::to_string(records.size()) + " tensors, model has " +
                          std::to_string(params.size()) + "; first unmatched tensor '" + first + "'");
  }
  for (std::size_t i = 0; i < n; ++i) {
    params[i]->value = std::move(records[i].value);
    params[i]->trainable = records[i].trainable;
  }
}

}  // namespace

std::string encode_checkpoint(const Model& model, const std::vector<std::string>& vocab) {
  Writer w;
  w.str().append(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kVersion);
  const std::string config = model.config().to_text();
  w.put<std::uint64_t>(config.size());
  w.put_bytes(config);
  w.put<std::uint64_t>(vocab.size());
  for (const auto& token : vocab) w.put_string32(token);
  const auto params = model.params();
  w.put<std::uint64_t>(params.size());
  for (const Param* p : params) write_record(w, *p);
  w.put<std::uint64_t>(fnv1a(w.str().data(), w.str().size()));
  return std::move(w.str());
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Decoded d = decode(bytes);
  Model model = [&] {
    try {
      return Model::build(d.config);
    } catch (const ConfigError& e) {
      throw CheckpointError(std::string("checkpoint config: ") + e.what());
    }
  }();
  assign_records(model, d.records);
  return Checkpoint{d.config, std::move(d.vocab), std::move(model)};
}

void save_checkpoint(const Model& model, const std::vector<std::string>& vocab, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(model, vocab);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void load_params_into(Model& model, const std::string& bytes) {
  Decoded d = decode(bytes);
  assign_records(model, d.records);
}

std::string serialize_groups(const Model& model, GroupSet groups) {
  Writer w;
  for (const Param* p : model.params()) {
    if (groups.contains(p->group)) write_record(w, *p);
  }
  return std::move(w.str());
}

}  // namespace ctrl
