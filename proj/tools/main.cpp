#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cli.hpp"

namespace {

void add_instance_flags(CLI::App* cmd, ccv::cli::RunConfig& c) {
  cmd->add_option("--model", c.model, "Network JSON");
  cmd->add_option("--instance", c.instance, "Instance JSON (single, list or {\"instances\": [...]})");
  cmd->add_option("--index", c.instance_index, "Instance to use from a multi-instance file");
  cmd->add_option("--x0", c.x0, "Inline center point")->delimiter(',');
  cmd->add_option("--delta", c.delta, "Inline radius");
  cmd->add_option("--norm", c.norm, "inf or two");
  cmd->add_option("--label", c.label, "Inline label index");
  cmd->add_option("--target", c.target, "Inline target index");
}

void add_override_flags(CLI::App* cmd, ccv::cli::RunConfig& c) {
  cmd->add_option("--epsilon", c.epsilon, "Gap tolerance");
  cmd->add_option("--lambda", c.lambda, "Pattern-alignment weight");
  cmd->add_option("--tau-max", c.tau_max, "Rounds between NLP re-solves");
  cmd->add_option("--eps-comp", c.eps_comp, "Complementarity relaxation");
  cmd->add_option("--t-max", c.t_max, "Round budget");
}

}  // namespace

int main(int argc, char** argv) {
  ccv::cli::RunConfig c;
  c.timeout_s = ccv::cli::default_timeout();

  CLI::App app{"ccverify: global robustness verification for ReLU networks"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--seed", c.seed, "Seed for random restarts and generators");
  app.add_option("--output,-o", c.output, "Write the result here instead of stdout");
  app.add_option("--timeout", c.timeout_s, "Wall-clock limit in seconds (default $CCVERIFY_TIMEOUT or 600)");

  auto* verify = app.add_subcommand("verify", "Branch-and-bound verification");
  add_instance_flags(verify, c);
  add_override_flags(verify, c);
  verify->add_flag("--auto-tau", c.auto_tau, "Derive tau_max from root timings");

  auto* bounds = app.add_subcommand("bounds", "Root interval and linear bounds");
  add_instance_flags(bounds, c);

  auto* upper = app.add_subcommand("upper", "Root MPCC upper bound");
  add_instance_flags(upper, c);
  add_override_flags(upper, c);
  upper->add_option("--dump-problem", c.dump_problem, "Write the assembled NLP as JSON");

  auto* oracle = app.add_subcommand("oracle", "Exact minimum by activation-pattern enumeration");
  add_instance_flags(oracle, c);
  oracle->add_option("--pattern-cap", c.pattern_cap, "Refuse when more unstable neurons than this");

  auto* bench = app.add_subcommand("bench", "Batch evaluation to CSV");
  bench->add_option("inputs", c.bench_inputs, "Instance files or directories")->required();
  bench->add_option("--model", c.model, "Network JSON for instances without a \"model\" key");
  add_override_flags(bench, c);
  bench->add_option("--pattern-cap", c.pattern_cap, "Oracle cap; larger cases are marked skipped-cap");
  bench->add_option("--history", c.history_csv, "Also run verify and write gap histories here");
  bench->add_option("--workers", c.workers, "Parallel cases");

  auto* gen = app.add_subcommand("gen-toy", "Write a toy model and instance");
  gen->add_option("--kind", c.toy_kind, "two-neuron or random");
  gen->add_option("--widths", c.widths, "Layer widths for random networks")->delimiter(',');
  gen->add_option("--count", c.count, "Number of random instances");
  gen->add_option("--delta", c.delta, "Radius for random instances");
  gen->add_option("--norm", c.norm, "inf or two");
  gen->add_option("--epsilon", c.epsilon, "Gap tolerance written into the instance");
  gen->add_option("--model-out", c.model_out, "Model JSON path")->required();
  gen->add_option("--instance-out", c.instance_out, "Instance JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return ccv::cli::kError;
  }
  for (auto* sub : app.get_subcommands()) c.subcommand = sub->get_name();
  return ccv::cli::run(c, std::cout, std::cerr);
}
