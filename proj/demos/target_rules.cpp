// Prints the constructed targets for one correctly classified and one
// misclassified teacher prediction.

#include <cstdio>

#include "ensdistill/targets.hpp"

using namespace ensdistill;

namespace {

void show(const char* what, const Categorical& q) {
  std::printf("%-28s (", what);
  for (std::size_t k = 0; k < q.size(); ++k) std::printf("%s%.4f", k ? ", " : "", q[k]);
  std::printf(")  H=%.4f\n", q.entropy());
}

}  // namespace

int main() {
  const Categorical correct{0.6, 0.3, 0.1};
  show("teacher, label 0", correct);
  for (double alpha : {0.1, 0.3, 0.5}) {
    char name[64];
    std::snprintf(name, sizeof name, "sharpened alpha=%.1f", alpha);
    show(name, sharpen_target(correct, alpha, one_hot(0, 3)));
  }

  const Categorical wrong{0.5, 0.35, 0.15};
  show("teacher, label 1", wrong);
  const double bound = proper_alpha_lower_bound(wrong, 1);
  std::printf("lower bound on alpha_i: %.6f\n", bound);
  for (auto rule : {ProperAlphaRule::lower_bound(), ProperAlphaRule::interpolated(0.1), ProperAlphaRule::interpolated(0.2),
                    ProperAlphaRule::one()}) {
    char name[64];
    std::snprintf(name, sizeof name, "%s t=%.1f", rule.name().c_str(), rule.t);
    show(name, proper_target(wrong, 1, rule.resolve(bound)));
  }
}
