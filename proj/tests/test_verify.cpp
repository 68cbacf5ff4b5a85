#include <gtest/gtest.h>

#include "rnica/verify.hpp"

using namespace rnica;

TEST(TheorySuite, EveryCheckPasses) {
  for (const auto& c : verify::theory_suite()) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}

TEST(TheorySuite, GradientSuiteSeesKinklessCoordinates) {
  const auto c = verify::gradient_suite(2);
  EXPECT_TRUE(c.passed) << c.detail;
  EXPECT_NE(c.detail.find("8 combinations"), std::string::npos);
}
