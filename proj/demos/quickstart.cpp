// Library walk-through: learn the OT map of a 4D benchmark task with OFM,
// compare it with the closed-form linear baseline, and check that the
// learned trajectories are straight.
//
//   ./quickstart [iterations]

#include <cstdio>
#include <cstdlib>

#include "ofm/ofm.hpp"

using namespace ofm;

int main(int argc, char** argv) {
  const long iterations = argc > 1 ? std::atol(argv[1]) : 1000;
  const BenchmarkTask task = make_convex_task(4, /*seed=*/1, /*complexity=*/8);

  IcnnOptions arch;
  arch.hidden = {64, 64};
  arch.activation = Activation::softplus;
  Rng rng(0);
  IcnnPotential psi = IcnnPotential::random(task.dim(), arch, rng);

  TrainConfig cfg;
  cfg.iterations = iterations;
  cfg.batch_size = 256;
  cfg.learning_rate = 1e-2;
  cfg.ema_decay = 1.0 - 10.0 / double(std::max(iterations, 20L));
  cfg.log_interval = std::max(iterations / 5, 1L);

  std::printf("training OFM on a %d-dimensional convex task for %ld iterations\n", task.dim(), iterations);
  const auto result = train_ofm(psi, task.plan(PairingTag::independent), cfg, [&](const IcnnPotential& p, MetricsRow& row) {
    const auto r = evaluate(gradient_map(p), task, 1);
    row.l2_uvp = r.l2_uvp;
    std::printf("  iteration %6ld  ofm loss %.4f  L2-UVP %.3f%%\n", row.iteration, row.ofm_loss, r.l2_uvp);
  });

  const auto ofm = evaluate(gradient_map(result.potential), task, 2);
  const QuadraticPotential linear = fit_linear_baseline(task, 20000, rng);
  const auto lin = evaluate(gradient_map(linear), task, 2);
  std::printf("\n%-16s %10s %10s\n", "map", "L2-UVP %", "cosine");
  std::printf("%-16s %10.3f %10.4f\n", "OFM", ofm.l2_uvp, ofm.cosine);
  std::printf("%-16s %10.3f %10.4f\n", "linear baseline", lin.l2_uvp, lin.cosine);

  // z_t = (1 - t) z0 + t grad Psi(z0): every trajectory is a segment.
  const Matrix x0 = sample(task.p0, 8, rng);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    const Vector z0 = x0.row(i).transpose(), z1 = transport(result.potential, z0);
    for (double t : {0.25, 0.5, 0.75})
      worst = std::max(worst, (trajectory_point(result.potential, z0, t) - ((1 - t) * z0 + t * z1)).norm());
  }
  std::printf("\nmax deviation of trajectories from their chords: %.2e\n", worst);
  return 0;
}
