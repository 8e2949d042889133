#include "psd/model.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "psd/binio.hpp"
#include "psd/errors.hpp"
#include "psd/rng.hpp"

namespace psd {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr int kInputChannels = 3;

Tensor he_normal(Shape shape, std::int64_t fan_in, std::uint64_t seed) {
  Rng rng(seed);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

std::string block_param(int i, const char* leaf) {
  return "embed.block" + std::to_string(i + 1) + ".conv." + leaf;
}

}  // namespace

ModelBundle init_model(const std::vector<int>& widths, int num_classes, int tap_index,
                       std::uint64_t seed, bool share_heads) {
  if (num_classes < 2) throw ConfigError("init_model: need at least 2 classes");
  if (widths.empty()) throw ConfigError("init_model: widths must be non-empty");
  for (int w : widths)
    if (w <= 0) throw ConfigError("init_model: channel widths must be positive");
  if (tap_index < 1 || tap_index > static_cast<int>(widths.size()))
    throw ConfigError("init_model: tap_index " + std::to_string(tap_index) +
                      " outside [1, " + std::to_string(widths.size()) + "]");

  ModelBundle m;
  m.embed.widths = widths;
  m.embed.tap_index = tap_index;
  m.num_classes = num_classes;
  m.share_heads = share_heads;

  // Each tensor draws from its own derived stream, so aliasing the student
  // head does not shift any other parameter's initial values.
  int in_ch = kInputChannels;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const int out_ch = widths[i];
    const std::int64_t fan_in = static_cast<std::int64_t>(in_ch) * 3 * 3;
    m.embed.conv_w.push_back(
        he_normal({out_ch, in_ch, 3, 3}, fan_in, derive_seed(seed, 100, i)));
    m.embed.conv_b.push_back(Tensor::zeros({out_ch}, true));
    in_ch = out_ch;
  }
  const std::int64_t d_final = widths.back();
  const std::int64_t d_tap = widths[static_cast<std::size_t>(tap_index) - 1];
  m.teacher.w = he_normal({d_final, num_classes}, d_final, derive_seed(seed, 200));
  m.teacher.b = Tensor::zeros({num_classes}, true);
  if (share_heads) {
    m.student = m.teacher;
  } else {
    m.student.w = he_normal({d_final, num_classes}, d_final, derive_seed(seed, 201));
    m.student.b = Tensor::zeros({num_classes}, true);
  }
  m.crm.theta = he_normal({d_tap, num_classes}, d_tap, derive_seed(seed, 300));
  return m;
}

EmbedOut forward_embed(const ModelBundle& bundle, const Tensor& x) {
  if (x.shape().size() != 4 || x.dim(1) != kInputChannels)
    throw ShapeError("forward_embed: expected [B x 3 x h x w] input, got " + shape_str(x.shape()));
  const std::int64_t blocks = static_cast<std::int64_t>(bundle.embed.widths.size());
  const std::int64_t div = std::int64_t{1} << blocks;
  if (x.dim(2) % div != 0 || x.dim(3) % div != 0)
    throw ShapeError("forward_embed: spatial size " + shape_str(x.shape()) +
                     " not divisible by 2^" + std::to_string(blocks));

  EmbedOut out;
  Tensor h = x;
  for (std::int64_t i = 0; i < blocks; ++i) {
    h = avg_pool2(relu(bias_add(conv2d(h, bundle.embed.conv_w[i], 1, 1),
                                bundle.embed.conv_b[i])));
    out.blocks.push_back(h);
  }
  out.tap = out.blocks[static_cast<std::size_t>(bundle.embed.tap_index) - 1];
  out.final = out.blocks.back();
  return out;
}

Tensor forward_head(const Tensor& s_final, const HeadNet& head) {
  return bias_add(matmul(global_avg_pool(s_final), head.w), head.b);
}

Tensor crm_logits(const Tensor& s_tap, const CRMHead& crm) {
  return matmul(global_avg_pool(stop_gradient(s_tap)), crm.theta);
}

ResponseMap compute_crm(const Tensor& s_tap, std::int64_t sample, const CRMHead& crm, int c) {
  if (s_tap.shape().size() != 4)
    throw ShapeError("compute_crm: expected rank-4 feature map, got " + shape_str(s_tap.shape()));
  const std::int64_t b = s_tap.dim(0), d = s_tap.dim(1), h = s_tap.dim(2), w = s_tap.dim(3);
  const std::int64_t classes = crm.theta.dim(1);
  if (crm.theta.dim(0) != d)
    throw ShapeError("compute_crm: theta rows " + std::to_string(crm.theta.dim(0)) +
                     " do not match feature channels " + std::to_string(d));
  if (sample < 0 || sample >= b)
    throw DomainError("compute_crm: sample " + std::to_string(sample) + " outside batch of " +
                      std::to_string(b));
  if (c < 0 || c >= classes)
    throw DomainError("compute_crm: class " + std::to_string(c) + " outside [0, " +
                      std::to_string(classes) + ")");

  ResponseMap map;
  map.h = h;
  map.w = w;
  map.values.assign(static_cast<std::size_t>(h * w), 0.0);
  const double* s = s_tap.data().data() + sample * d * h * w;
  const double* theta = crm.theta.data().data();
  for (std::int64_t ch = 0; ch < d; ++ch) {
    const double weight = theta[ch * classes + c];
    const double* plane = s + ch * h * w;
    for (std::int64_t i = 0; i < h * w; ++i) map.values[static_cast<std::size_t>(i)] += weight * plane[i];
  }
  return map;
}

std::vector<std::pair<std::string, Tensor>> named_params(const ModelBundle& bundle) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < bundle.embed.conv_w.size(); ++i) {
    out.emplace_back(block_param(static_cast<int>(i), "w"), bundle.embed.conv_w[i]);
    out.emplace_back(block_param(static_cast<int>(i), "b"), bundle.embed.conv_b[i]);
  }
  out.emplace_back("head_t.fc.w", bundle.teacher.w);
  out.emplace_back("head_t.fc.b", bundle.teacher.b);
  if (!bundle.share_heads) {
    out.emplace_back("head_s.fc.w", bundle.student.w);
    out.emplace_back("head_s.fc.b", bundle.student.b);
  }
  out.emplace_back("crm.theta", bundle.crm.theta);
  return out;
}

std::int64_t param_count(const ModelBundle& bundle) {
  std::int64_t n = 0;
  for (const auto& [name, t] : named_params(bundle)) n += t.numel();
  return n;
}

namespace {

void write_record(std::ostream& out, const std::string& name, const Shape& shape,
                  const std::vector<double>& values) {
  binio::write_u64(out, name.size());
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  binio::write_u64(out, shape.size());
  for (std::int64_t d : shape) binio::write_u64(out, static_cast<std::uint64_t>(d));
  binio::write_f64_array(out, values.data(), values.size());
}

struct RawRecord {
  Shape shape;
  std::vector<double> values;
};

}  // namespace

void save_checkpoint(const ModelBundle& bundle, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("save_checkpoint: cannot open " + path + " for writing");
  out.write("PSDM", 4);
  binio::write_u32(out, kCheckpointVersion);

  // meta.arch first: [C, tap_index, share_heads, widths...], stored as f64s so
  // the record fits the uniform named-tensor layout.
  std::vector<double> arch{static_cast<double>(bundle.num_classes),
                           static_cast<double>(bundle.embed.tap_index),
                           bundle.share_heads ? 1.0 : 0.0};
  for (int w : bundle.embed.widths) arch.push_back(static_cast<double>(w));
  write_record(out, "meta.arch", {static_cast<std::int64_t>(arch.size())}, arch);

  for (const auto& [name, t] : named_params(bundle)) write_record(out, name, t.shape(), t.data());
  if (!out) throw ContractError("save_checkpoint: write to " + path + " failed");
}

ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path, 0);
  binio::Reader r(in);
  char magic[4];
  r.read_bytes(magic, 4, "checkpoint magic");
  if (std::string(magic, 4) != "PSDM")
    throw FormatError("bad checkpoint magic, expected \"PSDM\"", 0);
  const std::uint32_t version = r.read_u32("checkpoint version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);

  std::map<std::string, RawRecord> records;
  std::vector<std::string> order;
  while (!r.at_eof()) {
    const std::uint64_t name_len = r.read_u64("parameter name length");
    if (name_len > 4096) throw FormatError("implausible parameter name length", r.offset() - 8);
    const std::string name = r.read_string(name_len, "parameter name");
    const std::uint64_t rank = r.read_u64("parameter rank");
    if (rank > 8) throw FormatError("implausible rank for \"" + name + "\"", r.offset() - 8);
    RawRecord rec;
    std::uint64_t numel = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      const std::uint64_t dim = r.read_u64("dimension of \"" + name + "\"");
      if (dim == 0 || dim > (std::uint64_t{1} << 32))
        throw FormatError("implausible dimension in \"" + name + "\"", r.offset() - 8);
      rec.shape.push_back(static_cast<std::int64_t>(dim));
      numel *= dim;
    }
    rec.values.resize(numel);
    r.read_f64_array(rec.values.data(), numel, "payload of \"" + name + "\"");
    if (records.count(name))
      throw FormatError("duplicate parameter \"" + name + "\"", r.offset());
    order.push_back(name);
    records.emplace(name, std::move(rec));
  }
  if (order.empty() || order.front() != "meta.arch")
    throw FormatError("first checkpoint record must be meta.arch", 8);

  const auto& arch = records.at("meta.arch").values;
  if (arch.size() < 4) throw FormatError("meta.arch record too short", 8);
  const int num_classes = static_cast<int>(arch[0]);
  const int tap_index = static_cast<int>(arch[1]);
  const bool share_heads = arch[2] != 0.0;
  std::vector<int> widths;
  for (std::size_t i = 3; i < arch.size(); ++i) widths.push_back(static_cast<int>(arch[i]));

  ModelBundle bundle;
  try {
    bundle = init_model(widths, num_classes, tap_index, 0, share_heads);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid meta.arch: ") + e.what(), 8);
  }

  std::size_t used = 1;
  for (auto& [name, t] : named_params(bundle)) {
    auto it = records.find(name);
    if (it == records.end()) throw FormatError("missing parameter \"" + name + "\"", r.offset());
    if (it->second.shape != t.shape())
      throw FormatError("parameter \"" + name + "\" has shape " + shape_str(it->second.shape) +
                            ", expected " + shape_str(t.shape()),
                        r.offset());
    Tensor target = t;
    target.mutable_data() = std::move(it->second.values);
    ++used;
  }
  if (used != records.size()) {
    for (const auto& name : order)
      if (name != "meta.arch") {
        bool known = false;
        for (const auto& [pname, pt] : named_params(bundle)) known = known || pname == name;
        if (!known) throw FormatError("unknown parameter \"" + name + "\"", r.offset());
      }
  }
  return bundle;
}

}  // namespace psd
