/*
 * c3dm - canonical 3D deformer maps on synthetic deformable categories.
 *
 * Copyright 2026 The c3dm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "c3dm/checks.hpp"
#include "c3dm/error.hpp"

#include <gtest/gtest.h>

namespace c3dm::checks {
namespace {

TEST(GradCheckSuite, AllRowsPassOnFewPoints) {
  GradCheckOptions opt;
  opt.points = 3;
  const auto rows = run_gradcheck(opt);
  EXPECT_EQ(rows.size(), gradcheck_names().size());
  for (const auto& r : rows) EXPECT_TRUE(r.pass) << r.name << " " << r.max_rel_error;
}

TEST(GradCheckSuite, ScopeSelectsRowOrGroup) {
  GradCheckOptions opt;
  opt.points = 1;
  opt.scope = "mlp";
  EXPECT_EQ(run_gradcheck(opt).size(), 1U);
  opt.scope = "geom";
  EXPECT_EQ(run_gradcheck(opt).size(), 2U);
  opt.scope = "nope";
  EXPECT_THROW((void)run_gradcheck(opt), Error);
}

TEST(GradCheckSuite, CorruptionFailsOnlyFirstSelectedRow) {
  GradCheckOptions opt;
  opt.points = 2;
  opt.scope = "losses";
  opt.corrupt_one = true;
  const auto rows = run_gradcheck(opt);
  EXPECT_FALSE(rows.front().pass);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_TRUE(rows[i].pass) << rows[i].name;
}

}  // namespace
}  // namespace c3dm::checks
