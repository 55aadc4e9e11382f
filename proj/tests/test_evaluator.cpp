#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "hsgnet/evaluator.hpp"
#include "support.hpp"

using namespace hsg;
using testing_support::random_tensor;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("hsgnet_test_" + name);
  std::filesystem::create_directories(dir);
  return dir;
}

void check_equal(const RankingMetrics& got, const oracle::Metrics& expected) {
  CHECK(got.map == expected.map);
  CHECK(got.cmc == expected.cmc);
  CHECK(got.evaluated_probes == expected.evaluated);
}

}  // namespace

TEST_CASE("ranking by cosine similarity") {
  SUBCASE("angles 0, 60 and 90 degrees") {
    const Tensor probe = Tensor::matrix({{1, 0}});
    const double r = std::sqrt(3.0) / 2;
    const Tensor gallery = Tensor::matrix({{0, 2}, {0.5, r}, {3, 0}});
    CHECK(rank_gallery(probe, gallery)[0] == std::vector<std::size_t>{2, 1, 0});
  }
  SUBCASE("the probe itself ranks first and scaling changes nothing") {
    std::mt19937_64 rng(2);
    const Tensor g = random_tensor({6, 4}, rng);
    for (std::size_t p = 0; p < 6; ++p) {
      const Tensor probe = Tensor(Shape{1, 4}, std::vector<double>(g.data().begin() + p * 4, g.data().begin() + p * 4 + 4));
      CHECK(rank_gallery(probe, g)[0][0] == p);
    }
    Tensor scaled = g;
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t t = 0; t < 4; ++t) scaled[i * 4 + t] *= 0.5 + static_cast<double>(i);
    CHECK(rank_gallery(g, g) == rank_gallery(g, scaled));
  }
  SUBCASE("ties go to the lower index") {
    const Tensor gallery = Tensor::matrix({{1, 0}, {0, 1}, {2, 0}, {4, 0}});
    CHECK(rank_gallery(Tensor::matrix({{1, 0}}), gallery)[0] == std::vector<std::size_t>{0, 2, 3, 1});
  }
  SUBCASE("errors") {
    try {
      rank_gallery(Tensor::matrix({{1, 0}}), Tensor::matrix({{1, 0}, {0, 0}}));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("row 1") != std::string::npos);
    }
    CHECK_THROWS_AS(rank_gallery(Tensor::matrix({{1, 0}}), Tensor::matrix({{1, 0, 0}})), Error);
  }
}

TEST_CASE("metrics") {
  SUBCASE("relevant items at ranks 1 and 3") {
    const RankingMetrics m = compute_metrics({{4, 2, 7, 1}}, std::vector<std::size_t>{5},
                                             std::vector<std::size_t>{0, 0, 9, 0, 5, 0, 0, 5}, 3);
    CHECK(std::abs(m.map - 5.0 / 6.0) < 1e-15);
    CHECK(m.cmc == std::vector<double>{1, 1, 1});
  }
  SUBCASE("perfect ranking") {
    const RankingMetrics m = compute_metrics({{0, 1, 2}, {2, 1, 0}}, std::vector<std::size_t>{1, 2},
                                             std::vector<std::size_t>{1, 0, 2}, 3);
    CHECK(m.map == 1.0);
    CHECK(m.cmc == std::vector<double>{1, 1, 1});
  }
  SUBCASE("probes without relevant items are counted and skipped") {
    const RankingMetrics m = compute_metrics({{0, 1}, {1, 0}}, std::vector<std::size_t>{0, 9},
                                             std::vector<std::size_t>{0, 1}, 2);
    CHECK(m.skipped_probes == 1);
    CHECK(m.evaluated_probes == 1);
    CHECK(m.map == 1.0);
  }
  SUBCASE("junk mask removes pairs before ranking") {
    const JunkMask junk = [](std::size_t, std::size_t g) { return g == 0; };
    const RankingMetrics m = compute_metrics({{0, 1, 2}}, std::vector<std::size_t>{1},
                                             std::vector<std::size_t>{1, 0, 1}, 2, junk);
    CHECK(m.map == doctest::Approx(0.5));
    CHECK(m.cmc == std::vector<double>{0, 1});
  }
  SUBCASE("exact match with the brute-force oracle, monotone CMC, gallery permutation") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t np = 1 + rng() % 10, ng = 1 + rng() % 20, ids = 1 + rng() % 5, d = 3;
      std::vector<std::size_t> pl(np), gl(ng);
      for (auto& l : pl) l = rng() % ids;
      for (auto& l : gl) l = rng() % ids;
      const Tensor pf = random_tensor({np, d}, rng), gf = random_tensor({ng, d}, rng);
      const auto rankings = rank_gallery(pf, gf);
      const RankingMetrics m = compute_metrics(rankings, pl, gl, 10);
      check_equal(m, oracle::metrics(rankings, pl, gl, 10));
      CHECK(m.map >= 0.0);
      CHECK(m.map <= 1.0);
      for (std::size_t r = 1; r < m.cmc.size(); ++r) CHECK(m.cmc[r] >= m.cmc[r - 1]);
      CHECK(m.cmc.back() <= 1.0);

      std::vector<std::size_t> perm(ng);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      Tensor gp(gf.shape());
      std::vector<std::size_t> glp(ng);
      for (std::size_t i = 0; i < ng; ++i) {
        for (std::size_t t = 0; t < d; ++t) gp[i * d + t] = gf[perm[i] * d + t];
        glp[i] = gl[perm[i]];
      }
      const RankingMetrics mp = evaluate_retrieval(pf, pl, gp, glp, 10);
      CHECK(mp.map == doctest::Approx(m.map).epsilon(1e-14));
      CHECK(mp.cmc == m.cmc);
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(compute_metrics({{0}}, std::vector<std::size_t>{0, 1}, std::vector<std::size_t>{0}, 1), Error);
    CHECK_THROWS_AS(compute_metrics({{3}}, std::vector<std::size_t>{0}, std::vector<std::size_t>{0}, 1), Error);
  }
}

TEST_CASE("feature and label files") {
  const auto dir = temp_dir("features");
  std::mt19937_64 rng(3);
  Tensor f = random_tensor({5, 3}, rng);
  for (auto& v : f.mutable_data()) v = static_cast<double>(static_cast<float>(v));
  write_features(dir / "f.hsgf", f);
  CHECK(read_features(dir / "f.hsgf").bit_equal(f));
  const std::vector<std::size_t> labels{3, 1, 4, 1, 5};
  write_labels(labels_path_for(dir / "f.hsgf"), labels);
  CHECK(read_labels(dir / "f.hsgf.labels") == labels);

  // Byte layout: magic, count, dim, then little-endian float32 values.
  std::ifstream is(dir / "f.hsgf", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 12 + 15 * 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "HSGF");
  CHECK(bytes[4] == 5);
  CHECK(bytes[8] == 3);

  {
    std::ofstream bad(dir / "bad.labels");
    bad << "1\nx\n";
  }
  CHECK_THROWS_AS(read_labels(dir / "bad.labels"), Error);
  {
    std::ofstream bad(dir / "bad.hsgf");
    bad << "NOPE";
  }
  CHECK_THROWS_AS(read_features(dir / "bad.hsgf"), Error);
  CHECK_THROWS_AS(read_features(dir / "missing.hsgf"), Error);
}

TEST_CASE("metrics report") {
  RankingMetrics m;
  m.map = 0.5;
  m.cmc = std::vector<double>(10, 1.0);
  const std::string r = format_metrics_report(m);
  CHECK(r.rfind("mAP\tcmc@1\tcmc@5\tcmc@10\n", 0) == 0);
  CHECK(r.find("0.500000\t1.000000") != std::string::npos);
}
