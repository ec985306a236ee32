// Trains a 5-member teacher on two moons, distils a student and compares
// both in distribution and on a far-away ring.

#include <cstdio>

#include "ensdistill/data.hpp"
#include "ensdistill/distill.hpp"
#include "ensdistill/ensemble.hpp"
#include "ensdistill/metrics.hpp"

using namespace ensdistill;

int main() {
  const auto parts = split(make_two_moons(1000, 0.2, 1), {0.7, 0.15, 0.15}, 2);
  OodParams ring;
  ring.radius = 10.0;
  ring.ring_width = 1.0;
  const auto ood = make_ood_set(OodKind::remote_ring, 500, ring, 3);

  const ArchSpec arch{2, {16, 16}, 2, Activation::relu};
  const Ensemble teacher = train_ensemble(parts.train, parts.val, arch, 5, TrainingConfig{}, 100);

  DistillConfig dc;
  dc.student_arch = arch;
  dc.epochs = 100;
  dc.lr_schedule = default_lr_schedule(dc.epochs);
  dc.seed = 7;
  const DistillResult result = distill(teacher, parts.train, parts.val, dc);

  for (const auto& [name, report, ood_report] :
       {std::tuple{"teacher", evaluate(teacher, parts.test, "test"), evaluate(teacher, ood, "ring")},
        std::tuple{"student", evaluate(result.student, parts.test, "test"), evaluate(result.student, ood, "ring")}}) {
    std::printf("%-8s test nll %.4f  error %.4f  brier %.4f  ring entropy %.4f\n", name, *report.nll, *report.error,
                *report.brier, ood_report.mean_entropy);
  }
  std::printf("student best epoch %zu of %zu\n", result.best_epoch, dc.epochs);
}
