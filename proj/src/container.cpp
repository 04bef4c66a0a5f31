#include "vpr/container.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vpr/errors.hpp"

namespace vpr {

namespace {

using Json = nlohmann::json;
using Bytes = std::vector<unsigned char>;

constexpr unsigned char kMagic[4] = {'V', 'P', 'R', 'F'};
constexpr std::size_t kHeaderBytes = 8;
constexpr std::size_t kSectionHeaderBytes = 12;

// ---- little-endian encoding -------------------------------------------------

template <typename U>
void put_le(Bytes& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(value >> (8 * i)));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return v;
}

template <typename Range>
Bytes encode_f32(const Range& values) {
  Bytes out;
  out.reserve(values.size() * 4);
  for (const auto v : values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

std::vector<float> decode_f32(const Bytes& payload, const std::string& field) {
  if (payload.size() % 4 != 0) throw DataError(field, "truncated section: " + field);
  std::vector<float> out(payload.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::bit_cast<float>(get_le<std::uint32_t>(payload.data() + 4 * i));
  return out;
}

// ---- section framing --------------------------------------------------------

struct SectionWriter {
  std::vector<std::pair<SectionTag, Bytes>> sections;

  void add(SectionTag tag, Bytes payload) { sections.emplace_back(tag, std::move(payload)); }

  Bytes finish() const {
    Bytes out(std::begin(kMagic), std::end(kMagic));
    put_le<std::uint16_t>(out, kContainerVersion);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(sections.size()));
    for (const auto& [tag, payload] : sections) {
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tag));
      put_le<std::uint64_t>(out, payload.size());
      out.insert(out.end(), payload.begin(), payload.end());
    }
    return out;
  }
};

using SectionMap = std::map<std::uint32_t, Bytes>;

Bytes slurp(std::istream& in) {
  Bytes data{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (in.bad()) throw DataError("stream", "read failure");
  return data;
}

std::string tag_name(std::uint32_t tag) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%02X", tag);
  return buf;
}

SectionMap parse_sections(const Bytes& data) {
  if (data.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), data.begin()))
    throw DataError("magic", "bad magic");
  if (data.size() < kHeaderBytes) throw DataError("header", "truncated header");
  const auto version = get_le<std::uint16_t>(data.data() + 4);
  if (version != kContainerVersion)
    throw DataError("version", "unsupported version " + std::to_string(version));
  const auto count = get_le<std::uint16_t>(data.data() + 6);

  SectionMap sections;
  std::size_t offset = kHeaderBytes;
  for (std::uint16_t s = 0; s < count; ++s) {
    if (data.size() - offset < kSectionHeaderBytes) throw DataError("section", "truncated section header");
    const auto tag = get_le<std::uint32_t>(data.data() + offset);
    const auto length = get_le<std::uint64_t>(data.data() + offset + 4);
    offset += kSectionHeaderBytes;
    if (length > data.size() - offset)
      throw DataError("section", "truncated section " + tag_name(tag));
    if (sections.count(tag) != 0) throw DataError("section", "duplicate section " + tag_name(tag));
    sections.emplace(tag, Bytes(data.begin() + static_cast<std::ptrdiff_t>(offset),
                                data.begin() + static_cast<std::ptrdiff_t>(offset + length)));
    offset += length;
  }
  if (offset != data.size()) throw DataError("section", "trailing bytes after last section");
  return sections;
}

const Bytes* find(const SectionMap& sections, SectionTag tag) {
  const auto it = sections.find(static_cast<std::uint32_t>(tag));
  return it == sections.end() ? nullptr : &it->second;
}

std::vector<float> tensor(const SectionMap& sections, SectionTag tag, std::size_t expected, const std::string& field) {
  const Bytes* payload = find(sections, tag);
  if (payload == nullptr) return {};
  auto values = decode_f32(*payload, field);
  if (values.size() != expected)
    throw DataError(field, "truncated section: " + field + " has " + std::to_string(values.size()) +
                               " values, expected " + std::to_string(expected));
  return values;
}

std::size_t dim_of(const Json& dims, const char* key) {
  if (!dims.contains(key)) return 0;
  const auto v = dims.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw DataError(std::string("meta.dims.") + key, "dimension must be a non-negative integer");
  return v.get<std::size_t>();
}

Json parse_meta(const SectionMap& sections) {
  const Bytes* payload = find(sections, SectionTag::kMeta);
  if (payload == nullptr) throw DataError("meta", "missing meta section");
  try {
    return Json::parse(payload->begin(), payload->end());
  } catch (const Json::exception& e) {
    throw DataError("meta", std::string("malformed meta JSON: ") + e.what());
  }
}

Bytes encode_json(const Json& j) {
  const std::string text = j.dump();
  return Bytes(text.begin(), text.end());
}

void write_bytes(const Bytes& bytes, std::ostream& sink) {
  sink.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!sink) throw DataError("stream", "write failure");
}

}  // namespace

std::size_t write_record(const ImageRecord& r, std::ostream& sink) {
  validate_record(r);

  Json dims = {{"H_p", r.patch_shape.height},
               {"W_p", r.patch_shape.width},
               {"D", r.tokens.dim},
               {"M", r.clusters},
               {"l", r.reduced_dim},
               {"R_h", r.reliability.values.rows},
               {"R_w", r.reliability.values.cols},
               {"local_h", r.local.grid_height},
               {"local_w", r.local.grid_width},
               {"local_dim", r.local.dim()},
               {"K", r.local.size()}};
  Json meta = {{"image_id", r.image_id}, {"dims", dims}};
  if (r.geotag) meta["geotag"] = {{"lat", r.geotag->lat}, {"lon", r.geotag->lon}};
  if (r.frame_index) meta["frame"] = *r.frame_index;
  if (!r.mask.empty()) meta["top_fraction"] = r.mask.top_fraction;

  SectionWriter w;
  w.add(SectionTag::kMeta, encode_json(meta));
  if (!r.tokens.empty()) w.add(SectionTag::kPatchTokens, encode_f32(r.tokens.tokens));
  if (!r.class_token.values.empty()) w.add(SectionTag::kClassToken, encode_f32(r.class_token.values));
  if (r.assignment) {
    w.add(SectionTag::kAssignment, encode_f32(r.assignment->probs.values));
    w.add(SectionTag::kSalienceMask, encode_f32(r.assignment->mask_a.values));
  }
  if (!r.reliability.values.empty()) w.add(SectionTag::kReliability, encode_f32(r.reliability.values.values));
  if (!r.global.values.empty()) w.add(SectionTag::kGlobalDescriptor, encode_f32(r.global.values));
  if (r.local.grid_height * r.local.grid_width > 0) {
    Bytes pos;
    pos.reserve(r.local.size() * 4);
    for (const GridPos& p : r.local.positions) {
      put_le<std::uint16_t>(pos, p.row);
      put_le<std::uint16_t>(pos, p.col);
    }
    w.add(SectionTag::kLocalPositions, std::move(pos));
    w.add(SectionTag::kLocalDescriptors, encode_f32(r.local.descriptors.values));
    w.add(SectionTag::kLocalReliability, encode_f32(r.local.reliability));
  }
  if (!r.mask.empty()) w.add(SectionTag::kFusedMask, encode_f32(r.mask.values.values));

  const Bytes bytes = w.finish();
  write_bytes(bytes, sink);
  return bytes.size();
}

ImageRecord read_record(std::istream& source) {
  const SectionMap sections = parse_sections(slurp(source));
  const Json meta = parse_meta(sections);

  ImageRecord r;
  try {
    r.image_id = meta.at("image_id").get<std::string>();
    if (meta.contains("geotag"))
      r.geotag = Geotag{meta["geotag"].at("lat").get<double>(), meta["geotag"].at("lon").get<double>()};
    if (meta.contains("frame")) r.frame_index = meta["frame"].get<std::int64_t>();
  } catch (const Json::exception& e) {
    throw DataError("meta", std::string("bad meta field: ") + e.what());
  }
  const Json dims = meta.value("dims", Json::object());
  r.patch_shape = {dim_of(dims, "H_p"), dim_of(dims, "W_p")};
  r.clusters = dim_of(dims, "M");
  r.reduced_dim = dim_of(dims, "l");
  const std::size_t n = r.patch_shape.count();
  const std::size_t token_dim = dim_of(dims, "D");

  if (const Bytes* p = find(sections, SectionTag::kPatchTokens)) {
    r.tokens.height = r.patch_shape.height;
    r.tokens.width = r.patch_shape.width;
    r.tokens.dim = token_dim;
    r.tokens.tokens = decode_f32(*p, "patch_tokens");
    if (token_dim == 0 || r.tokens.tokens.size() != n * token_dim)
      throw DataError("patch_tokens", "truncated section: patch_tokens size does not match H_p * W_p * D");
  }
  if (const Bytes* p = find(sections, SectionTag::kClassToken)) r.class_token.values = decode_f32(*p, "class_token");

  if (find(sections, SectionTag::kAssignment) != nullptr) {
    if (r.clusters == 0) throw DataError("assignment", "assignment present but meta M is 0");
    AssignmentResult a;
    a.probs.rows = n;
    a.probs.cols = r.clusters + 1;
    const auto probs = tensor(sections, SectionTag::kAssignment, n * (r.clusters + 1), "assignment");
    a.probs.values.assign(probs.begin(), probs.end());
    const auto salience = tensor(sections, SectionTag::kSalienceMask, n, "salience");
    if (salience.empty() && n > 0) throw DataError("salience", "assignment present without salience mask");
    a.salience.assign(salience.begin(), salience.end());
    a.mask_a = Array2d(r.patch_shape.height, r.patch_shape.width);
    a.mask_a.values = a.salience;
    r.assignment = std::move(a);
  }

  const std::size_t rh = dim_of(dims, "R_h");
  const std::size_t rw = dim_of(dims, "R_w");
  if (find(sections, SectionTag::kReliability) != nullptr) {
    r.reliability.values = Array2f(rh, rw);
    r.reliability.values.values = tensor(sections, SectionTag::kReliability, rh * rw, "reliability");
  }

  if (const Bytes* p = find(sections, SectionTag::kGlobalDescriptor)) r.global.values = decode_f32(*p, "global_descriptor");

  if (const Bytes* p = find(sections, SectionTag::kLocalPositions)) {
    const std::size_t k = dim_of(dims, "K");
    const std::size_t ldim = dim_of(dims, "local_dim");
    if (p->size() != 4 * k) throw DataError("local_positions", "truncated section: local_positions");
    r.local.grid_height = dim_of(dims, "local_h");
    r.local.grid_width = dim_of(dims, "local_w");
    r.local.positions.resize(k);
    for (std::size_t i = 0; i < k; ++i)
      r.local.positions[i] = {get_le<std::uint16_t>(p->data() + 4 * i), get_le<std::uint16_t>(p->data() + 4 * i + 2)};
    r.local.descriptors = Array2f(k, ldim);
    r.local.descriptors.values = tensor(sections, SectionTag::kLocalDescriptors, k * ldim, "local_descriptors");
    r.local.reliability = tensor(sections, SectionTag::kLocalReliability, k, "local_reliability");
    if (k > 0 && (r.local.descriptors.values.empty() || r.local.reliability.empty()))
      throw DataError("local_descriptors", "local positions present without descriptors or reliabilities");
  }

  if (find(sections, SectionTag::kFusedMask) != nullptr) {
    r.mask.values = Array2f(r.patch_shape.height, r.patch_shape.width);
    r.mask.values.values = tensor(sections, SectionTag::kFusedMask, n, "fused_mask");
    r.mask.top_fraction = meta.value("top_fraction", kDefaultTopFraction);
    if (!(r.mask.top_fraction > 0.0 && r.mask.top_fraction <= 1.0))
      throw DataError("fused_mask", "invariant violation in fused_mask: top_fraction outside (0,1]");
    r.mask.bin = top_fraction_binary(r.mask.values, r.mask.top_fraction);
  }

  validate_record(r);
  return r;
}

void save_record(const ImageRecord& record, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("path", "cannot open " + path.string() + " for writing");
  write_record(record, out);
}

ImageRecord load_record(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("path", "cannot open " + path.string());
  try {
    return read_record(in);
  } catch (const DataError& e) {
    throw DataError(e.field(), path.string() + ": " + e.what());
  }
}

std::size_t write_cluster_params(const ClusterParams& params, std::ostream& sink) {
  params.validate();
  const Json meta = {{"M", params.clusters},
                     {"D", params.dim},
                     {"l", params.reduced_dim},
                     {"g", params.class_dim},
                     {"sinkhorn_iters", params.sinkhorn_iters}};
  SectionWriter w;
  w.add(SectionTag::kMeta, encode_json(meta));
  w.add(SectionTag::kClusterWeights, encode_f32(params.weights.values));
  w.add(SectionTag::kClusterBiases, encode_f32(params.biases));
  if (!params.projection.empty()) w.add(SectionTag::kProjection, encode_f32(params.projection.values));
  if (!params.class_projection.empty())
    w.add(SectionTag::kClassProjection, encode_f32(params.class_projection.values));
  w.add(SectionTag::kDustbinScore, encode_f32(std::vector<float>{params.dustbin_score}));
  const Bytes bytes = w.finish();
  write_bytes(bytes, sink);
  return bytes.size();
}

ClusterParams read_cluster_params(std::istream& source) {
  const SectionMap sections = parse_sections(slurp(source));
  const Json meta = parse_meta(sections);
  ClusterParams p;
  p.clusters = dim_of(meta, "M");
  p.dim = dim_of(meta, "D");
  p.reduced_dim = dim_of(meta, "l");
  p.class_dim = dim_of(meta, "g");
  p.sinkhorn_iters = meta.contains("sinkhorn_iters") ? dim_of(meta, "sinkhorn_iters") : 3;

  p.weights = Array2f(p.clusters, p.dim);
  p.weights.values = tensor(sections, SectionTag::kClusterWeights, p.clusters * p.dim, "cluster_weights");
  if (p.weights.values.empty()) throw DataError("cluster_weights", "missing cluster weights section");
  p.biases = tensor(sections, SectionTag::kClusterBiases, p.clusters, "cluster_biases");
  if (p.biases.empty()) throw DataError("cluster_biases", "missing cluster biases section");
  if (find(sections, SectionTag::kProjection) != nullptr) {
    p.projection = Array2f(p.dim, p.reduced_dim);
    p.projection.values = tensor(sections, SectionTag::kProjection, p.dim * p.reduced_dim, "projection");
  }
  if (find(sections, SectionTag::kClassProjection) != nullptr) {
    p.class_projection = Array2f(p.dim, p.class_dim);
    p.class_projection.values =
        tensor(sections, SectionTag::kClassProjection, p.dim * p.class_dim, "class_projection");
  }
  const auto dustbin = tensor(sections, SectionTag::kDustbinScore, 1, "dustbin_score");
  if (dustbin.empty()) throw DataError("dustbin_score", "missing dustbin score section");
  p.dustbin_score = dustbin[0];
  p.validate();
  return p;
}

ClusterParams load_cluster_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("path", "cannot open " + path.string());
  return read_cluster_params(in);
}

void save_cluster_params(const ClusterParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("path", "cannot open " + path.string() + " for writing");
  write_cluster_params(params, out);
}

}  // namespace vpr
