#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <sstream>

#include "dmdno/config.hpp"
#include "dmdno/error.hpp"
#include "dmdno/io.hpp"

using namespace dmdno;

namespace {

pde::Dataset tiny(pde::Equation eq) {
  pde::GeneratorParams p = pde::default_params(eq);
  p.n_samples = 3;
  p.steps = 12;
  p.dmd.rank = 4;
  p.seed = 77;
  return pde::generate(p);
}

std::string bytes_of(const pde::Dataset& d) {
  std::ostringstream os;
  io::write_dataset(os, d);
  return os.str();
}

pde::Dataset parse(const std::string& bytes) {
  std::istringstream is(bytes);
  return io::read_dataset(is);
}

std::uint32_t read_u32(const std::string& b, std::size_t at) {
  std::uint32_t v = 0;
  std::memcpy(&v, b.data() + at, 4);
  return v;
}

// Offset of the first dimension of the first array.
std::size_t first_dim_offset(const std::string& b) {
  const std::size_t json_len = read_u32(b, 13);
  std::size_t at = 17 + json_len + 4;  // JSON, then the array count
  std::uint16_t name_len = 0;
  std::memcpy(&name_len, b.data() + at, 2);
  return at + 2 + name_len + 2;  // name, dtype, ndim
}

}  // namespace

TEST_CASE("dataset round trip is exact for every equation") {
  for (pde::Equation eq : {pde::Equation::kLaplace, pde::Equation::kHeat, pde::Equation::kBurgers}) {
    const pde::Dataset d = tiny(eq);
    const std::string b = bytes_of(d);
    CHECK(b.compare(0, 8, "DMDNODS1") == 0);
    CHECK(static_cast<std::uint8_t>(b[12]) == static_cast<std::uint8_t>(eq));
    const pde::Dataset r = parse(b);
    CHECK(config::to_json(r.params) == config::to_json(d.params));
    REQUIRE(r.samples.size() == d.samples.size());
    for (std::size_t k = 0; k < d.samples.size(); ++k) {
      const auto& a = d.samples[k];
      const auto& c = r.samples[k];
      CHECK(a.condition == c.condition);
      CHECK(a.trajectory == c.trajectory);
      CHECK(a.target == c.target);
      CHECK(a.dmd.modes == c.dmd.modes);
      CHECK(a.dmd.eigenvalues == c.dmd.eigenvalues);
      CHECK(a.dmd.amplitudes == c.dmd.amplitudes);
      CHECK(a.dmd.sigmas == c.dmd.sigmas);
      CHECK(a.dmd.rank == c.dmd.rank);
    }
    CHECK(bytes_of(r) == b);
  }
}

TEST_CASE("corrupt datasets are rejected with a format error") {
  const std::string good = bytes_of(tiny(pde::Equation::kHeat));
  SUBCASE("bad magic") {
    std::string b = good;
    b[3] = 'X';
    CHECK_THROWS_AS(parse(b), FormatError);
  }
  SUBCASE("version mismatch") {
    std::string b = good;
    b[8] = 9;
    CHECK_THROWS_AS(parse(b), FormatError);
  }
  SUBCASE("a corrupted dimension header") {
    std::string b = good;
    b[first_dim_offset(b)] += 1;
    CHECK_THROWS_AS(parse(b), FormatError);
  }
  SUBCASE("truncation names the field being read") {
    try {
      parse(good.substr(0, good.size() - 5));
      FAIL("expected a FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("dmd_sigmas") != std::string::npos);
    }
  }
  SUBCASE("trailing bytes") { CHECK_THROWS_AS(parse(good + "x"), FormatError); }
  SUBCASE("unknown equation tag") {
    std::string b = good;
    b[12] = 7;
    CHECK_THROWS_AS(parse(b), FormatError);
  }
}

TEST_CASE("checkpoint round trip") {
  const pde::Dataset d = tiny(pde::Equation::kBurgers);
  config::ModelConfig m;
  m.latent_p = 6;
  m.trunk_hidden = {5};
  m.dynamics_encoding = dmd::DynamicsEncoding::kEvolved;
  m.dynamics_horizon = 12;
  model::OperatorSpec spec = config::make_operator_spec(m, d.params, false);
  spec.output_scale = 0.123;
  const model::ModelParams params = model::init_params(spec, 4);

  std::ostringstream os;
  io::write_checkpoint(os, spec, params);
  const std::string b = os.str();
  CHECK(b.compare(0, 8, "DMDNOMP1") == 0);
  std::istringstream is(b);
  const io::Checkpoint ck = io::read_checkpoint(is);
  CHECK(config::to_json(ck.spec) == config::to_json(spec));
  CHECK(ck.params.theta == params.theta);
  CHECK(ck.params.layout.size == params.layout.size);

  SUBCASE("mismatched theta length") {
    std::istringstream bad(b.substr(0, b.size() - 8));
    CHECK_THROWS_AS(io::read_checkpoint(bad), FormatError);
  }
  SUBCASE("parameters that do not fit the spec are not written") {
    model::ModelParams wrong = params;
    wrong.theta.pop_back();
    std::ostringstream sink;
    CHECK_THROWS_AS(io::write_checkpoint(sink, spec, wrong), InvalidInput);
  }
}

TEST_CASE("file helpers") {
  const auto dir = std::filesystem::temp_directory_path() / "dmdno_io_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "data.bin";
  io::write_file_atomic(path, "abc");
  CHECK(io::read_file(path) == "abc");
  CHECK_FALSE(std::filesystem::exists(dir / "data.bin.tmp"));
  CHECK_THROWS_AS(io::read_file(dir / "missing.bin"), IoError);
  CHECK_THROWS_AS(io::write_file_atomic(dir / "no" / "such" / "dir.bin", "x"), IoError);
  std::filesystem::remove_all(dir);
}
