#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "vpr/aggregation.hpp"
#include "vpr/container.hpp"
#include "vpr/errors.hpp"

using namespace vpr;

namespace {

const std::filesystem::path kDir = VPR_FIXTURE_DIR;

nlohmann::json expected() {
  std::ifstream in(kDir / "expected.json");
  return nlohmann::json::parse(in);
}

}  // namespace

// Files written by tests/fixtures/make_fixture.py, the reference for the extractor side.
TEST_CASE("extractor fixture loads and validates") {
  const ImageRecord r = load_record(kDir / "extractor_record.vprf");
  CHECK(r.image_id == "fixture_0001");
  REQUIRE(r.geotag.has_value());
  CHECK(r.geotag->lat == doctest::Approx(47.3769));
  CHECK(r.patch_shape == GridShape{4, 4});
  CHECK(r.tokens.dim == 16);
  CHECK(r.class_token.values.size() == 16);
  CHECK(r.reliability.values.rows == 7);
  CHECK(r.reliability.values.cols == 7);
  CHECK(r.local.is_dense());
  CHECK(r.local.size() == 64);
  CHECK(r.local.descriptors.cols == 128);
  CHECK(!r.assignment.has_value());

  // re-serializing is byte-stable
  std::stringstream a, b;
  write_record(r, a);
  write_record(read_record(a), b);
  CHECK(a.str() == b.str());

  const ClusterParams p = load_cluster_params(kDir / "cluster_params.vprf");
  CHECK(p.clusters == 3);
  CHECK(p.reduced_dim == 4);
  CHECK(p.class_dim == 4);
  CHECK(p.sinkhorn_iters == 3);
  CHECK(p.dustbin_score == 0.25f);
}

TEST_CASE("assignment and global descriptor match the reference") {
  const ImageRecord r = load_record(kDir / "extractor_record.vprf");
  const ClusterParams p = load_cluster_params(kDir / "cluster_params.vprf");
  const auto e = expected();

  const AssignmentResult a = assign_tokens(r.tokens, p);
  const auto& probs = e["assignment"];
  REQUIRE(a.probs.values.size() == probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) CHECK(a.probs.values[i] == doctest::Approx(probs[i].get<double>()).epsilon(1e-4));
  const auto& sal = e["salience"];
  REQUIRE(a.salience.size() == sal.size());
  for (std::size_t i = 0; i < sal.size(); ++i) CHECK(a.salience[i] == doctest::Approx(sal[i].get<double>()).epsilon(1e-4));

  const GlobalDescriptor g = aggregate_global(r.tokens, r.class_token, a, p);
  const auto& ref = e["global"];
  REQUIRE(g.values.size() == ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(g.values[i] - ref[i].get<double>()) < 1e-4);
}

TEST_CASE("truncated fixture is rejected") {
  std::ifstream in(kDir / "extractor_record.vprf", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  bytes.resize(bytes.size() - 7);
  std::istringstream s(bytes);
  CHECK_THROWS_AS(read_record(s), DataError);
}
