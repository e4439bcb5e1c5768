#include <doctest.h>

#include <cmath>

#include "radarvel/gradcheck.hpp"

using namespace radarvel;

TEST_SUITE("gradcheck") {
  TEST_CASE("analytic gradients agree with finite differences") {
    for (std::uint64_t seed : {1u, 2u}) {
      const auto results = run_gradcheck(seed);
      CHECK(results.size() >= 10);
      for (const auto& r : results) {
        INFO(r.name << " seed " << seed << " max error " << r.max_rel_error);
        CHECK(r.checked > 0);
        CHECK(r.max_rel_error < 1e-4);
        CHECK(r.passed);
      }
    }
  }

  TEST_CASE("the checker flags a wrong gradient") {
    auto f = [](const std::vector<double>& x) { return x[0] * x[0] + 3.0 * x[1]; };
    const GradCheckOptions opt;
    CHECK(check_gradient("ok", {1.5, -2.0}, {3.0, 3.0}, f, opt).passed);
    const GradCheckResult bad = check_gradient("bad", {1.5, -2.0}, {3.0, 3.1}, f, opt);
    CHECK_FALSE(bad.passed);
    CHECK(bad.max_rel_error > 1e-2);
  }
}
