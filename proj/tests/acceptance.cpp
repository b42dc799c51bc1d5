// Acceptance harness: one PASS/FAIL line per criterion. Exit status is
// non-zero only when a criterion outside kKnownRed fails; known-red criteria
// are still printed as FAIL.

#include "c4/covstats.hpp"
#include "c4/dataset.hpp"
#include "c4/gmm.hpp"
#include "c4/diagnostics.hpp"
#include "c4/mlp.hpp"
#include "c4/td_train.hpp"
#include "c4/verify.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

using namespace c4;

namespace {

const std::set<int> kKnownRed = {7, 8, 11};

struct Outcome {
  int id;
  bool pass;
  std::string text;
};
std::vector<Outcome> outcomes;

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

std::string describe(const CheckResult& c) {
  return c.name + "=" + fmt("%.3g", c.value) + (c.pass ? " ok" : " FAILED");
}

void report(int id, bool pass, const std::string& what) {
  outcomes.push_back({id, pass, what});
  std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", what.c_str());
  std::fflush(stdout);
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// budget <= 0: no runtime limit
void criterion_checks(int id, const std::vector<CheckResult>& checks, double seconds, double budget = 0.0) {
  bool ok = budget <= 0.0 || seconds < budget;
  std::string text;
  for (const auto& c : checks) {
    ok = ok && c.pass;
    text += describe(c) + "; ";
  }
  report(id, ok, text + (budget > 0.0 ? fmt("%.2fs (budget %.0fs)", seconds, budget) : fmt("%.2fs", seconds)));
}

void criterion_5() {
  Timer t;
  const auto env = EnvSpec::three_mode();
  const auto ds = generate(env, 30, 5);
  TrainConfig cfg;
  cfg.steps = 300;
  cfg.clusters = 3;
  cfg.refresh_period = 50;
  cfg.batch_size = 128;
  double worst_moment = 0.0, worst_grad = 0.0;
  long batches = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const StepView& v) {
    const Vector& d = v.parts.delta;
    const double mean = d.mean();
    const double var = (d.array() - mean).square().mean();
    worst_moment = std::max(worst_moment, std::abs(d.squaredNorm() / static_cast<double>(d.size()) - mean * mean - var));
    worst_grad = std::max(worst_grad, grad_cosine_report(v.state.online, v.state.target, v.batch, cfg.gamma).identity_residual);
    ++batches;
  };
  train(ds, cfg, nullptr, hooks);
  report(5, worst_moment < 1e-12 && worst_grad < 1e-10 && batches == cfg.steps,
         fmt("moment residual %.3g (< 1e-12), gradient residual %.3g (< 1e-10) over %.0f batches; %.1fs", worst_moment,
             worst_grad, static_cast<double>(batches), t.seconds()));
}

void criterion_6() {
  Timer t;
  Rng rng(6);
  const std::vector<int> arch{4, 16, 16, 1};
  double worst_input = 0.0, worst_param = 0.0;
  int points = 0;
  while (points < 100) {
    const MlpCritic critic = MlpCritic::random(arch, rng);
    const Vector x = gaussian_matrix(4, 1, rng);
    if (oracle::min_abs_preactivation(critic, x) < 1e-3) continue;
    ++points;
    const Vector gi = input_gradient(critic, x);
    const Vector fdi = oracle::central_difference([&](const Vector& v) { return forward(critic, v); }, x, 1e-5);
    worst_input = std::max(worst_input, oracle::max_relative_error(gi, fdi));

    const Vector gp = param_gradient(critic, x, [](const BatchOutputs& out) {
                        LossSensitivity s;
                        s.value = out.output(0);
                        s.d_output = RowVector::Ones(1);
                        return s;
                      }).gradient;
    const Vector fdp = oracle::central_difference(
        [&](const Vector& p) {
          MlpCritic c = critic;
          c.set_parameters(p);
          return forward(c, x);
        },
        critic.parameters(), 1e-6);
    worst_param = std::max(worst_param, oracle::max_relative_error(gp, fdp));
  }
  report(6, worst_input < 1e-4 && worst_param < 1e-4,
         fmt("input rel err %.3g, parameter rel err %.3g (< 1e-4) on 100 smooth points; %.1fs", worst_input, worst_param,
             t.seconds()));
}

void criterion_11() {
  Timer t;
  const auto env = EnvSpec::three_mode();
  std::vector<double> tr_c4, tr_base, ret_c4, ret_base;
  for (int s = 0; s < 10; ++s) {
    const auto ds = generate(env, 100, 100 + static_cast<std::uint64_t>(s));  // horizon 20 -> 2000 transitions
    const auto data = to_matrices(ds);
    for (bool baseline : {false, true}) {
      TrainConfig cfg;
      cfg.steps = 20000;
      cfg.seed = static_cast<std::uint64_t>(s);
      cfg.baseline_mode = baseline;
      const auto r = train(ds, cfg, &env);
      const double tr = dataset_normalized_trace(r.critic, r.target, data, cfg.feature_mode);
      (baseline ? tr_base : tr_c4).push_back(tr);
      (baseline ? ret_base : ret_c4).push_back(r.metrics.back().eval_return);
    }
    std::printf("    pair %d: trace c4 %.5f base %.5f | return c4 %.3f base %.3f\n", s, tr_c4.back(), tr_base.back(),
                ret_c4.back(), ret_base.back());
    std::fflush(stdout);
  }
  const double mt_c4 = median(tr_c4), mt_b = median(tr_base), mr_c4 = median(ret_c4), mr_b = median(ret_base);
  const double secs = t.seconds();
  report(11, mt_c4 < mt_b && mr_c4 >= mr_b && secs < 600.0,
         fmt("median trace c4 %.5f vs base %.5f, ", mt_c4, mt_b) + (mt_c4 < mt_b ? "lower" : "NOT lower") +
             fmt("; median return c4 %.3f vs base %.3f; ", mr_c4, mr_b) + (mr_c4 >= mr_b ? ">=" : "NOT >=") +
             fmt("; %.0fs (budget 600s)", secs));
}

void criterion_12() {
  Timer t;
  // Well separated behavior modes with little noise make the fitted
  // responsibilities close to one-hot.
  EnvSpec env = EnvSpec::three_mode();
  env.noise_scale = 0.02;
  const auto ds = generate(env, 40, 12);
  TrainConfig cfg;
  cfg.steps = 400;
  cfg.clusters = 3;
  cfg.refresh_period = 100;
  cfg.batch_size = 64;
  long qualifying = 0, nonzero = 0;
  TrainHooks hooks;
  hooks.on_step = [&](const StepView& v) {
    for (int i : v.indices)
      if (v.state.responsibilities(i, v.cluster) < 0.99) return;
    ++qualifying;
    std::vector<int> labels;
    for (int i : v.indices) {
      Eigen::Index best;
      v.state.responsibilities.row(i).maxCoeff(&best);
      labels.push_back(static_cast<int>(best));
    }
    const auto dec = total_cov_decomposition(StackedPairSet::from_pairs(v.parts.pairs.gp, v.parts.pairs.g), labels);
    if (!dec.between.isZero(0.0)) ++nonzero;
  };
  train(ds, cfg, nullptr, hooks);
  report(12, qualifying > 0 && nonzero == 0,
         fmt("%.0f of %.0f batches had every row at responsibility >= 0.99; between-cluster term nonzero in %.0f; %.1fs",
             static_cast<double>(qualifying), static_cast<double>(cfg.steps), static_cast<double>(nonzero),
             t.seconds()));
}

}  // namespace

int main() {
  using namespace checks;
  {
    Timer t;
    const auto c = total_covariance(1);
    criterion_checks(1, {c}, t.seconds(), 1.0);
  }
  {
    Timer t;
    const auto c = within_bound_chain(2);
    criterion_checks(2, {c}, t.seconds(), 1.0);
  }
  {
    Timer t;
    const auto a = svd_alignment(3);
    const auto b = svd_alignment_construction(3);
    criterion_checks(3, {a, b}, t.seconds(), 1.0);
  }
  {
    Timer t;
    const auto a = theorem1_linear_exact(4);
    const auto b = theorem1_relu_gap(4, 10, 10000);
    criterion_checks(4, {a, b}, t.seconds(), 30.0);
  }
  criterion_5();
  criterion_6();
  {
    Timer t;
    const auto a = em_monotone(7);  // default ridge, as the trainer uses
    const auto b = em_separated_recovery(7);
    criterion_checks(7, {a, b}, t.seconds());
  }
  {
    Timer t;
    criterion_checks(8, {kappa_residuals(8), kappa_kl_closed_form(8), kappa_pearson_lambert(8), chi2_cap_all(8)},
                     t.seconds());
  }
  {
    Timer t;
    criterion_checks(9, {mixture_bound_1d(9), mixture_bound_2d(9), cluster_gradient_unbiased(9)}, t.seconds());
  }
  {
    Timer t;
    criterion_checks(10, {cql_tabular(10)}, t.seconds());
  }
  criterion_12();
  criterion_11();

  int passed = 0, unexpected = 0;
  std::string red;
  for (const auto& o : outcomes) {
    passed += o.pass;
    if (!o.pass) {
      red += " " + std::to_string(o.id);
      if (!kKnownRed.count(o.id)) ++unexpected;
    }
  }
  std::printf("acceptance: %d/%zu PASS; failing:%s; known-red list: 7 8 11; unexpected failures: %d\n", passed,
              outcomes.size(), red.empty() ? " none" : red.c_str(), unexpected);
  return unexpected == 0 ? 0 : 1;
}
