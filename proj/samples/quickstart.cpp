// Simulated two-covariate trial: EWM fit, then posterior draws for a linear
// and a depth-2 tree class, and the posterior probability that the tree wins.
#include <cstdio>

#include <nbpl/nbpl.hpp>

int main() {
  nbpl::sim::DgpSpec dgp;
  dgp.covariates = nbpl::sim::UniformBox{{0.0, 0.0}, {1.0, 1.0}};
  dgp.effects = nbpl::sim::binary_effect([](std::span<const double> x) {
    return (x[0] > 0.5 && x[1] > 0.3) ? 1.0 : -0.5;
  });
  dgp.noise_sd = 1.0;
  const nbpl::Dataset ds = nbpl::sim::make_dataset(dgp, 800, 11);
  const nbpl::ScoreTable scores = nbpl::compute_scores(ds);

  nbpl::PolicyClassSpec linear{nbpl::LinearClass{{0, 1}, true}, std::nullopt, nbpl::CapacityBasis::uniform};
  nbpl::PolicyClassSpec tree{nbpl::TreeClass{2, nbpl::quantile_split_grid(ds.covariates(), 2, 16)},
                             std::nullopt, nbpl::CapacityBasis::uniform};

  const auto fit = nbpl::ewm_fit(scores, tree);
  std::printf("EWM tree: welfare %.4f, treated share %.3f\n", fit.value, fit.treated_share());

  nbpl::NbplOptions opt;
  opt.S = 400;
  opt.seed = 2024;
  const auto run = nbpl::run_nbpl(scores, {{"linear", linear}, {"tree", tree}}, opt);
  const auto report = nbpl::summarize(run, 0.05);
  for (const auto& c : report.classes)
    std::printf("%-6s median %.4f  95%% CI (%.4f, %.4f)\n", c.label.c_str(), c.median, c.ci.lo, c.ci.hi);
  const auto cmp = nbpl::compare_classes(run, "tree", "linear");
  std::printf("Pr(tree > linear) = %.3f\n", cmp.greater);
}
