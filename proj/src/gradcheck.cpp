// Copyright 2026 The Sidetune Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sidetune/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace sidetune {

namespace {

double evaluate(const LossBuilder& loss) {
  Tape tape;
  return loss(tape).value().item();
}

}  // namespace

GradCheckReport grad_check(std::span<Parameter* const> params, const LossBuilder& loss,
                           double tolerance, double step) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    if (p.frozen) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      auto at = [&](double offset) {
        p.value[i] = saved + offset;
        return evaluate(loss);
      };
      const double f_p2 = at(2.0 * step);
      const double f_p1 = at(step);
      const double f_m1 = at(-step);
      const double f_m2 = at(-2.0 * step);
      p.value[i] = saved;
      const double numeric = (8.0 * (f_p1 - f_m1) - (f_p2 - f_m2)) / (12.0 * step);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || report.worst.empty()) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        if (rel >= report.max_rel_error) report.worst = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  for (Parameter* p : params) p->zero_grad();
  report.pass = report.max_rel_error < tolerance;
  return report;
}

}  // namespace sidetune
