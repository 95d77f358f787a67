#include "doctest.h"
#include "entrain/gradcheck.hpp"

using namespace entrain;

TEST_CASE("relative error uses the floor for tiny gradients") {
    CHECK(gradcheck::relative_error(1.0, 1.0, 1e-6) == 0.0);
    CHECK(gradcheck::relative_error(2.0, 1.0, 1e-6) == 0.5);
    CHECK(gradcheck::relative_error(1e-12, 0.0, 1e-6) == doctest::Approx(1e-6));
}

TEST_CASE("every backward pass agrees with finite differences") {
    gradcheck::Options opt;
    opt.full_width_samples = 6;  // the acceptance run samples more coordinates
    const gradcheck::Report r = gradcheck::run_all(opt);
    CHECK(r.passed());
    for (const auto& c : r.checks) {
        INFO(c.name);
        CHECK(c.passed);
        CHECK(c.checked > 0);
        CHECK(c.max_rel_error < 1e-4);
    }
    bool saw_reverse = false;
    for (const auto& c : r.checks) saw_reverse |= c.name == "grad_reverse_exact";
    CHECK(saw_reverse);
}
