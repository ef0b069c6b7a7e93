#include <CLI11.hpp>

#include "cli_commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"CTDS movement model: imputation, discretization, fitting, simulation"};
  app.require_subcommand(1);
  std::string config;
  std::vector<std::string> overrides;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"impute", "fit the CTCRW imputation model and draw K paths"},
      {"discretize", "reduce imputed paths to cell visits"},
      {"fit", "impute, build designs and fit (mle, lasso-cv, stacked-lasso, bayes, bayes-lasso)"},
      {"cv", "cross-validate the stacked lasso and record gamma_lasso"},
      {"simulate", "simulate a CTDS path and thin it to telemetry"},
      {"recovery-study", "repeat simulate-thin-impute-fit and tabulate selection rates"},
      {"bayes", "composition-sampled posterior over imputations"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config, "key = value run file")->required()->check(CLI::ExistingFile);
    sub->add_option("-s,--set", overrides, "override a config entry, key=value");
  }
  CLI11_PARSE(app, argc, argv);
  const auto* chosen = app.get_subcommands().front();
  return ctds::cli::run(chosen->get_name(), config, overrides);
}
