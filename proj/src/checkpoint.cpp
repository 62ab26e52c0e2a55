#include "splitvfu/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include <nlohmann/json.hpp>

#include "splitvfu/errors.hpp"
#include "splitvfu/rng.hpp"

namespace splitvfu {
namespace {

using json = nlohmann::json;

constexpr char kMagic[8] = {'S', 'V', 'F', 'U', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const unsigned char* at(std::size_t p) const { return bytes_.data() + p; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated checkpoint reading ") + what, pos_);
  }
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

json shape_json(const Shape& s) { return json::array({s.channels, s.height, s.width}); }

Shape shape_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ArgumentError("shape must be [channels, height, width]");
  return Shape{j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

json network_json(const Network& net) {
  json layers = json::array();
  for (const LayerParams& l : net.layers()) {
    layers.push_back({{"kind", to_string(l.kind)},
                      {"in", shape_json(l.in_shape)},
                      {"out", shape_json(l.out_shape)},
                      {"padding", l.padding}});
  }
  return layers;
}

Network network_from(const json& layers) {
  std::vector<LayerParams> out;
  for (const json& l : layers) {
    const LayerKind kind = layer_kind_from_string(l.at("kind").get<std::string>());
    const Shape in = shape_from(l.at("in"));
    const Shape want = shape_from(l.at("out"));
    LayerParams p;
    switch (kind) {
      case LayerKind::kDense:
        p = dense_layer(static_cast<int>(in.size()), static_cast<int>(want.size()));
        break;
      case LayerKind::kConv3x3:
        p = conv3x3_layer(in, want.channels, l.at("padding").get<int>());
        break;
      case LayerKind::kMaxPool2x2:
        p = maxpool2x2_layer(in);
        break;
      case LayerKind::kReLU:
        p = relu_layer(in);
        break;
    }
    if (!(p.out_shape == want)) throw ArgumentError("layer output shape disagrees with its input");
    out.push_back(std::move(p));
  }
  return Network(std::move(out));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const VflModel& model, const CheckpointMeta& meta) {
  model.validate();
  json header;
  header["label"] = meta.label;
  header["active"] = model.active.index;
  header["parties"] = json::array();
  for (const auto& [p, net] : model.bottom) {
    header["parties"].push_back({{"index", p.index}, {"layers", network_json(net)}});
  }
  header["top"] = network_json(model.top);
  header["parameter_count"] = model.parameter_count();
  const std::string text = header.dump();

  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, meta.config_hash);
  put_le<std::uint64_t>(out, meta.seed);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  const Vector params = model.flatten();
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(params.size()));
  const std::size_t payload = out.size();
  for (Eigen::Index i = 0; i < params.size(); ++i) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(params[i]));
  put_le<std::uint64_t>(out, fnv1a64(std::span<const unsigned char>(out.data() + payload, out.size() - payload)));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint " + path.string());
  Reader r(std::vector<unsigned char>(std::istreambuf_iterator<char>(f), {}));

  if (r.str(8, "magic") != std::string(kMagic, 8)) throw FormatError("not a splitvfu checkpoint", 0);
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 8);
  }
  Checkpoint ck;
  ck.meta.config_hash = r.le<std::uint64_t>("config hash");
  ck.meta.seed = r.le<std::uint64_t>("seed");
  const auto header_len = r.le<std::uint32_t>("header length");
  const std::size_t header_at = r.pos();
  json header;
  try {
    header = json::parse(r.str(header_len, "header"));
    ck.meta.label = header.at("label").get<std::string>();
    ck.model.active = PartyId{header.at("active").get<int>()};
    for (const json& p : header.at("parties")) {
      ck.model.bottom.emplace(PartyId{p.at("index").get<int>()}, network_from(p.at("layers")));
    }
    ck.model.top = network_from(header.at("top"));
    ck.model.validate();
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what(), header_at);
  }
  const std::size_t count_at = r.pos();
  const auto n = r.le<std::uint64_t>("parameter count");
  if (n != static_cast<std::uint64_t>(ck.model.parameter_count())) {
    throw FormatError("parameter count " + std::to_string(n) + " does not match the architecture", count_at);
  }
  if (r.remaining() != n * 8 + 8) throw FormatError("parameter payload has the wrong length", r.pos());
  const std::size_t payload = count_at + 8;
  Vector params(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < params.size(); ++i) params[i] = std::bit_cast<double>(r.le<std::uint64_t>("parameters"));
  const std::size_t sum_at = r.pos();
  const std::uint64_t expected = fnv1a64(std::span<const unsigned char>(r.at(payload), sum_at - payload));
  if (r.le<std::uint64_t>("checksum") != expected) throw FormatError("checkpoint checksum mismatch", sum_at);
  ck.model.unflatten(params);
  return ck;
}

}  // namespace splitvfu
