#include "hsgnet/evaluator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

namespace hsg {

std::vector<std::vector<std::size_t>> rank_gallery(const Tensor& probe_features, const Tensor& gallery_features) {
  if (probe_features.rank() != 2 || gallery_features.rank() != 2 ||
      probe_features.dim(1) != gallery_features.dim(1)) {
    throw Error(fmt::format("rank_gallery: probe {} and gallery {} feature dimensions differ",
                            shape_str(probe_features.shape()), shape_str(gallery_features.shape())));
  }
  const std::size_t np = probe_features.dim(0), ng = gallery_features.dim(0), d = probe_features.dim(1);
  auto norms = [d](const Tensor& f, const char* what) {
    std::vector<double> out(f.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) {
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) s += f[i * d + t] * f[i * d + t];
      if (s == 0.0) throw Error(fmt::format("rank_gallery: {} row {} has zero norm", what, i));
      out[i] = std::sqrt(s);
    }
    return out;
  };
  const auto pn = norms(probe_features, "probe");
  const auto gn = norms(gallery_features, "gallery");

  std::vector<std::vector<std::size_t>> rankings(np);
  std::vector<double> sim(ng);
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t g = 0; g < ng; ++g) {
      double dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) dot += probe_features[p * d + t] * gallery_features[g * d + t];
      sim[g] = dot / (pn[p] * gn[g]);
    }
    auto& order = rankings[p];
    order.resize(ng);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
  }
  return rankings;
}

RankingMetrics compute_metrics(const std::vector<std::vector<std::size_t>>& rankings,
                               std::span<const std::size_t> probe_labels, std::span<const std::size_t> gallery_labels,
                               std::size_t max_rank, const JunkMask& junk) {
  if (rankings.size() != probe_labels.size()) {
    throw Error(fmt::format("compute_metrics: {} rankings for {} probe labels", rankings.size(), probe_labels.size()));
  }
  if (max_rank == 0) throw Error("compute_metrics: max_rank must be >= 1");
  RankingMetrics m;
  m.cmc.assign(max_rank, 0.0);
  double ap_sum = 0.0;
  for (std::size_t p = 0; p < rankings.size(); ++p) {
    std::size_t rank = 0, hits = 0, first_hit = 0;
    double precision_sum = 0.0;
    for (auto g : rankings[p]) {
      if (g >= gallery_labels.size()) throw Error(fmt::format("compute_metrics: gallery index {} out of range", g));
      if (junk && junk(p, g)) continue;
      ++rank;
      if (gallery_labels[g] == probe_labels[p]) {
        ++hits;
        if (hits == 1) first_hit = rank;
        precision_sum += static_cast<double>(hits) / static_cast<double>(rank);
      }
    }
    if (hits == 0) {
      ++m.skipped_probes;
      continue;
    }
    ++m.evaluated_probes;
    ap_sum += precision_sum / static_cast<double>(hits);
    for (std::size_t r = first_hit; r <= max_rank; ++r) m.cmc[r - 1] += 1.0;
  }
  if (m.evaluated_probes > 0) {
    const auto n = static_cast<double>(m.evaluated_probes);
    m.map = ap_sum / n;
    for (auto& c : m.cmc) c /= n;
  }
  return m;
}

RankingMetrics evaluate_retrieval(const Tensor& probe_features, std::span<const std::size_t> probe_labels,
                                  const Tensor& gallery_features, std::span<const std::size_t> gallery_labels,
                                  std::size_t max_rank) {
  return compute_metrics(rank_gallery(probe_features, gallery_features), probe_labels, gallery_labels, max_rank);
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw Error("unexpected end of feature file");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

void put_f32(std::ostream& os, double v) {
  const auto f = static_cast<float>(v);
  std::uint32_t bits = 0;
  std::memcpy(&bits, &f, 4);
  put_u32(os, bits);
}

double get_f32(std::istream& is) {
  const std::uint32_t bits = get_u32(is);
  float f = 0.0f;
  std::memcpy(&f, &bits, 4);
  return static_cast<double>(f);
}

constexpr std::array<char, 4> kFeatureMagic{'H', 'S', 'G', 'F'};

}  // namespace

void write_features(const std::filesystem::path& path, const Tensor& features) {
  if (features.rank() != 2) throw Error(fmt::format("feature files hold count x dim matrices, got {}", shape_str(features.shape())));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(fmt::format("cannot write {}", path.string()));
  os.write(kFeatureMagic.data(), 4);
  put_u32(os, static_cast<std::uint32_t>(features.dim(0)));
  put_u32(os, static_cast<std::uint32_t>(features.dim(1)));
  for (double v : features.data()) put_f32(os, v);
}

Tensor read_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(fmt::format("cannot open feature file {}", path.string()));
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kFeatureMagic) throw Error(fmt::format("{} is not an HSGF feature file", path.string()));
  const std::uint32_t count = get_u32(is);
  const std::uint32_t dim = get_u32(is);
  if (count == 0 || dim == 0) throw Error(fmt::format("{} declares an empty feature matrix", path.string()));
  std::vector<double> data(static_cast<std::size_t>(count) * dim);
  for (auto& v : data) v = get_f32(is);
  return Tensor(Shape{count, dim}, std::move(data));
}

void write_labels(const std::filesystem::path& path, std::span<const std::size_t> labels) {
  std::ofstream os(path);
  if (!os) throw Error(fmt::format("cannot write {}", path.string()));
  for (auto l : labels) os << l << '\n';
}

std::vector<std::size_t> read_labels(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(fmt::format("cannot open label file {}", path.string()));
  std::vector<std::size_t> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(line, &used);
      if (v < 0 || line.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(line);
      labels.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw Error(fmt::format("{}:{}: expected a non-negative integer label", path.string(), lineno));
    }
  }
  return labels;
}

std::filesystem::path labels_path_for(const std::filesystem::path& features_path) {
  return std::filesystem::path(features_path.string() + ".labels");
}

std::string format_metrics_report(const RankingMetrics& m) {
  return fmt::format("mAP\tcmc@1\tcmc@5\tcmc@10\n{:.6f}\t{:.6f}\t{:.6f}\t{:.6f}\n", m.map, m.rank(1), m.rank(5),
                     m.rank(10));
}

}  // namespace hsg
