#pragma once

// Embedding datasets: the ANSEMB01 binary format, the open-world split
// protocol, the Gaussian-mixture generator and per-category statistics.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ans/error.hpp"
#include "ans/matrix.hpp"
#include "ans/random.hpp"

namespace ans::data {

inline constexpr int kOpenLabel = -1;
inline constexpr std::array<char, 8> kMagic = {'A', 'N', 'S', 'E', 'M', 'B', '0', '1'};
inline constexpr std::size_t kHeaderBytes = 8 + 4 + 4 + 8;

enum class SplitTag { train, val, test };

inline const char* to_string(SplitTag t) {
  switch (t) {
    case SplitTag::train: return "train";
    case SplitTag::val: return "val";
    case SplitTag::test: return "test";
  }
  return "?";
}

struct EmbeddingDataset {
  BasicMatrix<float> features;  // N x d
  std::vector<int> labels;      // -1 is open, otherwise [0, C)
  std::vector<std::string> vocab;
  SplitTag split = SplitTag::train;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  std::size_t num_classes() const { return vocab.size(); }

  void validate() const {
    if (features.rows() != labels.size()) throw ValidationError("feature rows and label count differ");
    if (labels.empty()) throw ValidationError("dataset is empty");
    if (features.cols() < 1) throw ValidationError("feature dimension must be >= 1");
    const int C = static_cast<int>(vocab.size());
    for (int y : labels) {
      if (y < kOpenLabel || y >= C)
        throw ValidationError("label " + std::to_string(y) + " out of range for " + std::to_string(C) +
                              " categories");
      if (y == kOpenLabel && split != SplitTag::test)
        throw ValidationError(std::string("open label in ") + to_string(split) + " split");
    }
  }

  std::vector<std::size_t> indices_of(int label) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) idx.push_back(i);
    return idx;
  }

  Matrix rows(std::span<const std::size_t> idx) const { return gather_rows(features, idx); }
  Matrix all_rows() const { return to_double(features); }

  bool operator==(const EmbeddingDataset&) const = default;
};

// ---- binary format ------------------------------------------------------

// Writes to "<path>.tmp" and renames over the target.
inline void write_atomically(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

namespace detail {

template <typename U>
void put_le(std::string& buf, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline std::filesystem::path labels_sidecar(const std::filesystem::path& path) {
  auto p = path;
  p.replace_extension(".labels.json");
  return p;
}

inline std::string encode_embeddings(const EmbeddingDataset& ds) {
  ds.validate();
  const std::size_t d = ds.dim(), n = ds.size();
  std::string buf;
  buf.reserve(kHeaderBytes + n * (4 + 4 * d));
  buf.append(kMagic.data(), kMagic.size());
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(ds.num_classes()));
  detail::put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(n));
  for (std::size_t i = 0; i < n; ++i) {
    detail::put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(static_cast<std::int32_t>(ds.labels[i])));
    for (float f : ds.features.row(i)) detail::put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(f));
  }
  return buf;
}

// Decodes an ANSEMB01 payload. The vocabulary comes from the sidecar, so the
// returned dataset carries placeholder names until the caller attaches them.
inline EmbeddingDataset decode_embeddings(const std::string& bytes, SplitTag split) {
  if (bytes.size() < kHeaderBytes) throw IoError("truncated embedding header");
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
    throw FormatError("bad magic: not an ANSEMB01 embedding file");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const auto d = detail::get_le<std::uint32_t>(p + 8);
  const auto C = detail::get_le<std::uint32_t>(p + 12);
  const auto n = detail::get_le<std::uint64_t>(p + 16);
  if (d == 0) throw FormatError("embedding dimension is zero");
  const std::uint64_t record = 4 + 4ULL * d;
  const std::uint64_t payload = bytes.size() - kHeaderBytes;
  if (n != 0 && payload / record < n) throw IoError("truncated embedding payload");
  if (payload != n * record) throw FormatError("embedding payload length does not match declared N*(4+4d)");

  EmbeddingDataset ds;
  ds.split = split;
  ds.features = BasicMatrix<float>(n, d);
  ds.labels.resize(n);
  ds.vocab.resize(C);
  for (std::uint32_t c = 0; c < C; ++c) ds.vocab[c] = "class_" + std::to_string(c);
  const unsigned char* q = p + kHeaderBytes;
  for (std::uint64_t i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<int>(std::bit_cast<std::int32_t>(detail::get_le<std::uint32_t>(q)));
    q += 4;
    for (std::uint32_t j = 0; j < d; ++j, q += 4)
      ds.features(i, j) = std::bit_cast<float>(detail::get_le<std::uint32_t>(q));
  }
  ds.validate();
  return ds;
}

inline void save_embeddings(const EmbeddingDataset& ds, const std::filesystem::path& path) {
  write_atomically(path, encode_embeddings(ds));
  write_atomically(labels_sidecar(path), nlohmann::json(ds.vocab).dump() + "\n");
}

inline EmbeddingDataset load_embeddings(const std::filesystem::path& path, SplitTag split = SplitTag::test) {
  EmbeddingDataset ds = decode_embeddings(read_file(path), split);
  const auto side = labels_sidecar(path);
  if (std::filesystem::exists(side)) {
    std::vector<std::string> vocab;
    try {
      vocab = nlohmann::json::parse(read_file(side)).get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed label sidecar " + side.string() + ": " + e.what());
    }
    if (vocab.size() != ds.vocab.size())
      throw ValidationError("label sidecar has " + std::to_string(vocab.size()) + " names, header declares " +
                            std::to_string(ds.vocab.size()));
    ds.vocab = std::move(vocab);
  }
  return ds;
}

// ---- open-world split ---------------------------------------------------

struct OpenWorldSplit {
  double known_ratio = 0.0;
  std::uint64_t seed = 0;
  std::vector<int> known_category_ids;  // sorted original ids
};

struct SplitResult {
  EmbeddingDataset train, val, test;
  OpenWorldSplit split;
};

inline std::size_t known_category_count(double known_ratio, std::size_t num_categories) {
  if (!(known_ratio > 0.0 && known_ratio <= 1.0))
    throw ValidationError("known_ratio must lie in (0, 1], got " + std::to_string(known_ratio));
  const auto k = static_cast<std::size_t>(std::llround(known_ratio * static_cast<double>(num_categories)));
  if (k == 0) throw ValidationError("known_ratio selects zero categories");
  return k;
}

// Keeps a seeded uniform subset of categories as known. Train/val keep only
// those samples (relabelled densely in sorted order); test keeps everything,
// with all other categories mapped to the open label.
inline SplitResult make_open_world_split(const EmbeddingDataset& train, const EmbeddingDataset& val,
                                         const EmbeddingDataset& test, double known_ratio, std::uint64_t seed) {
  if (train.vocab != val.vocab || train.vocab != test.vocab)
    throw ValidationError("train/val/test must share the same vocabulary");
  if (train.dim() != val.dim() || train.dim() != test.dim())
    throw ValidationError("train/val/test must share the feature dimension");
  const std::size_t C = train.num_classes();
  const std::size_t k = known_category_count(known_ratio, C);

  std::vector<int> ids(C);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng = make_rng(seed);
  shuffle_in_place(std::span<int>(ids), rng);
  ids.resize(k);
  std::sort(ids.begin(), ids.end());

  std::vector<int> remap(C, kOpenLabel);
  std::vector<std::string> vocab;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    remap[ids[i]] = static_cast<int>(i);
    vocab.push_back(train.vocab[ids[i]]);
  }

  auto project = [&](const EmbeddingDataset& src, SplitTag tag, bool keep_open) {
    EmbeddingDataset out;
    out.vocab = vocab;
    out.split = tag;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < src.size(); ++i) {
      const int y = src.labels[i];
      const int mapped = y == kOpenLabel ? kOpenLabel : remap[y];
      if (mapped == kOpenLabel && !keep_open) continue;
      keep.push_back(i);
      out.labels.push_back(mapped);
    }
    out.features = BasicMatrix<float>(keep.size(), src.dim());
    for (std::size_t i = 0; i < keep.size(); ++i) {
      auto s = src.features.row(keep[i]);
      std::copy(s.begin(), s.end(), out.features.row(i).begin());
    }
    return out;
  };

  SplitResult r;
  r.train = project(train, SplitTag::train, false);
  r.val = project(val, SplitTag::val, false);
  r.test = project(test, SplitTag::test, true);
  r.split = {known_ratio, seed, ids};
  return r;
}

// ---- synthetic mixtures -------------------------------------------------

struct ClusterSpec {
  std::vector<double> mean;
  std::vector<double> cov_diag;
  std::size_t count = 0;
  bool known = true;
  std::string name;
};

struct SyntheticSpec {
  std::vector<ClusterSpec> clusters;
  std::uint64_t seed = 0;

  void validate() const {
    if (clusters.empty()) throw ValidationError("synthetic spec has no clusters");
    const std::size_t d = clusters.front().mean.size();
    if (d == 0) throw ValidationError("cluster mean must be non-empty");
    bool any_known = false, any_open = false;
    for (const auto& c : clusters) {
      if (c.mean.size() != d || c.cov_diag.size() != d) throw ValidationError("cluster dimension mismatch");
      if (c.count == 0) throw ValidationError("cluster count must be positive");
      for (double v : c.cov_diag)
        if (!(v > 0.0)) throw ValidationError("cluster cov_diag entries must be positive");
      (c.known ? any_known : any_open) = true;
    }
    if (!any_known || !any_open)
      throw ValidationError("synthetic spec needs at least one known and one non-known cluster");
  }
};

struct SyntheticSplits {
  EmbeddingDataset train, val, test;
};

// Known clusters are split 80/10/10 across train/val/test; non-known
// clusters appear only in test with the open label.
inline SyntheticSplits generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t d = spec.clusters.front().mean.size();
  std::vector<std::string> vocab;
  for (std::size_t i = 0; i < spec.clusters.size(); ++i)
    if (spec.clusters[i].known)
      vocab.push_back(spec.clusters[i].name.empty() ? "cluster_" + std::to_string(i) : spec.clusters[i].name);

  struct Acc {
    std::vector<float> feats;
    std::vector<int> labels;
  } acc[3];

  int next_label = 0;
  for (std::size_t ci = 0; ci < spec.clusters.size(); ++ci) {
    const auto& c = spec.clusters[ci];
    const int label = c.known ? next_label++ : kOpenLabel;
    Rng rng = make_rng(mix_seed(spec.seed, ci));
    std::vector<double> sd(d);
    for (std::size_t j = 0; j < d; ++j) sd[j] = std::sqrt(c.cov_diag[j]);
    const std::size_t n_train = c.known ? c.count * 8 / 10 : 0;
    const std::size_t n_val = c.known ? c.count / 10 : 0;
    for (std::size_t s = 0; s < c.count; ++s) {
      const int which = !c.known ? 2 : s < n_train ? 0 : s < n_train + n_val ? 1 : 2;
      for (std::size_t j = 0; j < d; ++j)
        acc[which].feats.push_back(static_cast<float>(c.mean[j] + sd[j] * standard_normal(rng)));
      acc[which].labels.push_back(label);
    }
  }

  auto build = [&](Acc& a, SplitTag tag) {
    EmbeddingDataset ds;
    ds.labels = std::move(a.labels);
    ds.features = BasicMatrix<float>(ds.labels.size(), d, std::move(a.feats));
    ds.vocab = vocab;
    ds.split = tag;
    return ds;
  };
  return {build(acc[0], SplitTag::train), build(acc[1], SplitTag::val), build(acc[2], SplitTag::test)};
}

inline nlohmann::json to_json(const SyntheticSpec& s) {
  nlohmann::json clusters = nlohmann::json::array();
  for (const auto& c : s.clusters) {
    nlohmann::json j = {{"mean", c.mean}, {"cov_diag", c.cov_diag}, {"count", c.count}, {"known", c.known}};
    if (!c.name.empty()) j["name"] = c.name;
    clusters.push_back(std::move(j));
  }
  return {{"clusters", std::move(clusters)}, {"seed", s.seed}};
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    s.seed = j.value("seed", std::uint64_t{0});
    for (const auto& c : j.at("clusters")) {
      ClusterSpec cs;
      cs.mean = c.at("mean").get<std::vector<double>>();
      cs.cov_diag = c.at("cov_diag").get<std::vector<double>>();
      cs.count = c.at("count").get<std::size_t>();
      cs.known = c.at("known").get<bool>();
      cs.name = c.value("name", std::string{});
      s.clusters.push_back(std::move(cs));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

// ---- statistics ---------------------------------------------------------

struct CategoryStats {
  std::vector<double> mean;
  std::vector<double> cov_diag;  // unbiased; zeros for a single sample
  std::size_t count = 0;
};

inline CategoryStats per_category_stats(const EmbeddingDataset& ds, int category) {
  const std::size_t d = ds.dim();
  CategoryStats st{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0), 0};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] != category) continue;
    ++st.count;
    auto r = ds.features.row(i);
    for (std::size_t j = 0; j < d; ++j) st.mean[j] += r[j];
  }
  if (st.count == 0) throw ValidationError("category " + std::to_string(category) + " has no samples");
  for (auto& m : st.mean) m /= static_cast<double>(st.count);
  if (st.count < 2) return st;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] != category) continue;
    auto r = ds.features.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double t = r[j] - st.mean[j];
      st.cov_diag[j] += t * t;
    }
  }
  for (auto& v : st.cov_diag) v /= static_cast<double>(st.count - 1);
  return st;
}

}  // namespace ans::data
