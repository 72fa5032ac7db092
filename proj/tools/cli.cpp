#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "ccverify/bab.hpp"
#include "ccverify/io.hpp"
#include "ccverify/mpcc.hpp"
#include "ccverify/oracle.hpp"
#include "ccverify/propagate.hpp"
#include "ccverify/report.hpp"
#include "ccverify/toy.hpp"

namespace ccv::cli {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::vector<double> to_vector(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

void emit(const RunConfig& config, const json& doc, std::ostream& out) {
  const std::string text = rounded(doc).dump(2) + "\n";
  if (config.output) {
    std::ofstream file(*config.output);
    if (!file) throw ConfigError("cannot write " + config.output->string());
    file << text;
  } else {
    out << text;
  }
}

std::shared_ptr<const ReluNetwork> load_model(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("model file not found: " + path.string());
  return std::make_shared<const ReluNetwork>(load_network(path));
}

void apply_overrides(const RunConfig& config, VerificationInstance& inst) {
  if (config.epsilon) inst.epsilon = *config.epsilon;
  if (config.lambda) inst.lambda = *config.lambda;
  if (config.tau_max) inst.tau_max = *config.tau_max;
  if (config.eps_comp) inst.eps_comp = *config.eps_comp;
  if (config.t_max) inst.t_max = *config.t_max;
}

VerificationInstance load_document(const json& doc, const fs::path& source,
                                   const std::optional<fs::path>& model_flag) {
  std::optional<fs::path> model_path = model_flag;
  if (!model_path && doc.is_object() && doc.contains("model") && doc["model"].is_string()) {
    model_path = source.parent_path() / doc["model"].get<std::string>();
  }
  if (!model_path) throw ConfigError("no model: pass --model or add a \"model\" key to " + source.string());
  return instance_from_json(doc, load_model(*model_path));
}

struct BenchCase {
  std::string name;
  VerificationInstance instance;
};

std::vector<BenchCase> collect_cases(const RunConfig& config) {
  std::vector<fs::path> files;
  for (const auto& p : config.bench_inputs) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(p)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") found.push_back(entry.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::exists(p)) {
      files.push_back(p);
    } else {
      throw ConfigError("bench input not found: " + p.string());
    }
  }
  std::vector<BenchCase> cases;
  for (const auto& file : files) {
    const json doc = read_json_file(file);
    if (doc.is_object() && doc.contains("layers")) continue;  // a model file
    const auto docs = instance_documents(doc);
    for (std::size_t i = 0; i < docs.size(); ++i) {
      BenchCase c;
      c.name = docs.size() == 1 ? file.stem().string() : file.stem().string() + "#" + std::to_string(i);
      c.instance = load_document(docs[i], file, config.model);
      apply_overrides(config, c.instance);
      c.instance.validate();
      cases.push_back(std::move(c));
    }
  }
  if (cases.empty()) throw ConfigError("bench found no instances");
  return cases;
}

struct BenchRow {
  std::optional<double> f_star;
  bool skipped_cap = false;
  double lb_root = 0.0;
  double ub_nlp = std::numeric_limits<double>::infinity();
  double ub_pgd = 0.0;
  double time_lb = 0.0;
  double time_ub = 0.0;
  std::vector<HistoryEntry> history;
};

BenchRow bench_case(const VerificationInstance& inst, const RunConfig& config, bool with_history) {
  BenchRow row;
  auto t = Clock::now();
  const LayerBounds root = crown_bounds(inst);
  row.lb_root = optimize_relaxation(inst, root, {}).lower;
  row.time_lb = seconds_since(t);

  t = Clock::now();
  MpccOptions mopt;
  mopt.seed = config.seed;
  const auto sol = upper_bound(inst, build_problem(inst, root, {}), std::nullopt, mopt);
  row.time_ub = seconds_since(t);
  if (sol.has_point()) row.ub_nlp = sol.objective;

  oracle::PgdOptions popt;
  popt.seed = config.seed;
  row.ub_pgd = oracle::pgd_upper_bound(inst, popt).value;

  try {
    row.f_star = oracle::global_min(inst, config.pattern_cap).f_star;
  } catch (const oracle::PatternCapExceeded&) {
    row.skipped_cap = true;
  }
  if (with_history) {
    BabOptions bopt;
    bopt.timeout_s = config.timeout_s;
    bopt.mpcc.seed = config.seed;
    row.history = verify(inst, bopt).history;
  }
  return row;
}

}  // namespace

double default_timeout() {
  if (const char* env = std::getenv("CCVERIFY_TIMEOUT")) {
    char* end = nullptr;
    const double v = std::strtod(env, &end);
    if (end != env && std::isfinite(v) && v > 0.0) return v;
  }
  return 600.0;
}

void RunConfig::validate() const {
  if (!(timeout_s > 0.0) || !std::isfinite(timeout_s)) throw ConfigError("--timeout must be positive");
  if (epsilon && !(*epsilon > 0.0 && std::isfinite(*epsilon))) throw ConfigError("--epsilon must be positive");
  if (lambda && !(*lambda >= 0.0 && std::isfinite(*lambda))) throw ConfigError("--lambda must be nonnegative");
  if (tau_max && *tau_max <= 0) throw ConfigError("--tau-max must be a positive integer");
  if (t_max && *t_max <= 0) throw ConfigError("--t-max must be a positive integer");
  if (eps_comp && !(*eps_comp > 0.0 && std::isfinite(*eps_comp))) throw ConfigError("--eps-comp must be positive");
  if (delta && !(*delta >= 0.0 && std::isfinite(*delta))) throw ConfigError("--delta must be nonnegative");
  if (norm != "inf" && norm != "two") throw ConfigError("--norm must be inf or two");
  if (workers < 1) throw ConfigError("--workers must be at least 1");
  if (pattern_cap < 0) throw ConfigError("--pattern-cap must be nonnegative");
  if (count < 1) throw ConfigError("--count must be at least 1");
}

VerificationInstance load_instance(const RunConfig& config, std::ostream& err) {
  config.validate();
  VerificationInstance inst;
  if (config.instance) {
    if (!fs::exists(*config.instance)) {
      throw ConfigError("instance file not found: " + config.instance->string());
    }
    const auto docs = instance_documents(read_json_file(*config.instance));
    if (config.instance_index >= docs.size()) {
      throw ConfigError("--index " + std::to_string(config.instance_index) + " out of range (" +
                        std::to_string(docs.size()) + " instances)");
    }
    inst = load_document(docs[config.instance_index], *config.instance, config.model);
  } else {
    if (!config.model) throw ConfigError("pass --instance, or --model with an inline instance");
    if (!config.x0 || !config.delta || !config.label) {
      throw ConfigError("an inline instance needs --x0, --delta and --label");
    }
    inst.network = load_model(*config.model);
    inst.x0 = Eigen::Map<const Eigen::VectorXd>(config.x0->data(),
                                                static_cast<Eigen::Index>(config.x0->size()));
    inst.delta = *config.delta;
    inst.norm = config.norm == "two" ? Norm::two : Norm::inf;
    inst.spec = Specification{*config.label, config.target};
  }
  apply_overrides(config, inst);
  for (const auto& w : inst.validate()) err << "warning: " << w << "\n";
  return inst;
}

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  return buf;
}

json rounded(const json& doc) {
  if (doc.is_number_float()) {
    const double v = doc.get<double>();
    if (!std::isfinite(v)) return nullptr;
    return std::strtod(format_number(v).c_str(), nullptr);
  }
  if (doc.is_array()) {
    json out = json::array();
    for (const auto& e : doc) out.push_back(rounded(e));
    return out;
  }
  if (doc.is_object()) {
    json out = json::object();
    for (auto it = doc.begin(); it != doc.end(); ++it) out[it.key()] = rounded(it.value());
    return out;
  }
  return doc;
}

int cmd_verify(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const auto inst = load_instance(config, err);
  BabOptions opt;
  opt.timeout_s = config.timeout_s;
  opt.auto_tau = config.auto_tau;
  opt.mpcc.seed = config.seed;
  const Certificate cert = verify(inst, opt);
  emit(config, certificate_to_json(cert), out);
  if (cert.timed_out) err << "timeout after " << format_number(cert.wall_time_s) << " s\n";
  switch (cert.verdict) {
    case Verdict::safe: return kSafe;
    case Verdict::unsafe: return kUnsafe;
    case Verdict::gap: return kGap;
  }
  return kError;
}

int cmd_bounds(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const auto inst = load_instance(config, err);
  const LayerBounds ibp = ibp_bounds(inst);
  const LayerBounds root = crown_bounds(inst);
  const auto lb = optimize_relaxation(inst, root, {});
  json layers = json::array();
  for (int k = 0; k < root.num_layers(); ++k) {
    layers.push_back({{"lower", to_vector(root.lower[k])}, {"upper", to_vector(root.upper[k])}});
  }
  json doc;
  doc["layers"] = layers;
  doc["unstable"] = root.unstable().size();
  doc["unstable_ibp"] = ibp.unstable().size();
  doc["root_lower"] = number_or_null(lb.lower);
  doc["root_lower_initial"] = number_or_null(lb.initial);
  emit(config, doc, out);
  return 0;
}

int cmd_upper(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const auto inst = load_instance(config, err);
  const LayerBounds root = crown_bounds(inst);
  const MpccProblem problem = build_problem(inst, root, {});
  if (config.dump_problem) write_json_file(problem.to_json(), *config.dump_problem);
  MpccOptions opt;
  opt.seed = config.seed;
  const auto sol = upper_bound(inst, problem, std::nullopt, opt);
  json doc;
  doc["status"] = to_string(sol.status);
  doc["objective"] = number_or_null(sol.objective);
  doc["nlp_objective"] = number_or_null(sol.nlp_objective);
  doc["x_star"] = to_vector(sol.x_star);
  json neurons = json::array();
  for (std::size_t k = 0; k < problem.complementarity.size(); ++k) {
    const NeuronId id = problem.complementarity[k];
    neurons.push_back({{"layer", id.layer},
                       {"index", id.index},
                       {"p", sol.p_star[static_cast<Eigen::Index>(k)]},
                       {"q", sol.q_star[static_cast<Eigen::Index>(k)]},
                       {"phase", sol.partition.pattern[k]}});
  }
  doc["neurons"] = neurons;
  doc["I_p"] = sol.partition.i_p;
  doc["I_q"] = sol.partition.i_q;
  doc["I_0"] = sol.partition.i_0;
  doc["ipm_iterations"] = sol.ipm_iterations;
  doc["kkt_residual"] = sol.kkt_residual;
  doc["variables"] = problem.num_vars();
  emit(config, doc, out);
  return sol.has_point() ? 0 : kError;
}

int cmd_oracle(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const auto inst = load_instance(config, err);
  const auto g = oracle::global_min(inst, config.pattern_cap);
  json doc;
  doc["f_star"] = number_or_null(g.f_star);
  doc["x_star"] = to_vector(g.x_star);
  doc["regions_solved"] = g.regions_solved;
  doc["unstable"] = g.unstable;
  emit(config, doc, out);
  return 0;
}

int cmd_bench(const RunConfig& config, std::ostream& out, std::ostream& err) {
  config.validate();
  const auto cases = collect_cases(config);
  std::vector<BenchRow> rows(cases.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  const auto worker = [&]() {
    for (std::size_t i = next++; i < cases.size(); i = next++) {
      rows[i] = bench_case(cases[i].instance, config, config.history_csv.has_value());
      std::lock_guard<std::mutex> lock(err_mutex);
      err << "bench: " << cases[i].name << " done\n";
    }
  };
  const int n_workers = std::min<int>(config.workers, static_cast<int>(cases.size()));
  std::vector<std::thread> pool;
  for (int w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::ostringstream csv;
  csv << "case,f_star,lb_root,ub_nlp,ub_pgd,abs_err,rel_err,time_lb,time_ub,phi\n";
  std::vector<double> uppers;
  std::vector<std::optional<double>> refs;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    uppers.push_back(rows[i].ub_nlp);
    refs.push_back(rows[i].f_star);
  }
  const auto summary = compute_metrics(uppers, refs);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& r = rows[i];
    const auto& m = summary.cases[i];
    csv << cases[i].name << ',' << (r.skipped_cap ? std::string("skipped-cap") : format_number(*r.f_star))
        << ',' << format_number(r.lb_root) << ',' << format_number(r.ub_nlp) << ','
        << format_number(r.ub_pgd) << ',' << (m ? format_number(m->abs_err) : std::string(""))
        << ',' << (m ? format_number(m->rel_err) : std::string("")) << ','
        << format_number(r.time_lb) << ',' << format_number(r.time_ub) << ','
        << (std::isfinite(r.ub_nlp) ? "100" : "0") << '\n';
  }
  csv << "aggregate,,,,," << format_number(summary.mean_abs_err) << ','
      << format_number(summary.mean_rel_err) << ",,," << format_number(100.0 * summary.upper_rate)
      << '\n';

  if (config.output) {
    std::ofstream file(*config.output);
    if (!file) throw ConfigError("cannot write " + config.output->string());
    file << csv.str();
  } else {
    out << csv.str();
  }
  if (config.history_csv) {
    std::ofstream file(*config.history_csv);
    if (!file) throw ConfigError("cannot write " + config.history_csv->string());
    file << "case,round,lower,upper,gap\n";
    for (std::size_t i = 0; i < cases.size(); ++i) {
      for (const auto& h : rows[i].history) {
        file << cases[i].name << ',' << h.round << ',' << format_number(h.lower) << ','
             << format_number(h.upper) << ',' << format_number(h.upper - h.lower) << '\n';
      }
    }
  }
  return 0;
}

int cmd_gen_toy(const RunConfig& config, std::ostream& out, std::ostream& err) {
  (void)err;
  config.validate();
  if (!config.model_out || !config.instance_out) {
    throw ConfigError("gen-toy needs --model-out and --instance-out");
  }
  std::shared_ptr<const ReluNetwork> net;
  std::vector<VerificationInstance> instances;
  if (config.toy_kind == "two-neuron") {
    auto inst = toy::two_neuron_instance();
    if (config.epsilon) inst.epsilon = *config.epsilon;
    net = inst.network;
    instances.push_back(std::move(inst));
  } else if (config.toy_kind == "random") {
    net = std::make_shared<const ReluNetwork>(toy::random_network(config.widths, config.seed));
    const double delta = config.delta.value_or(0.1);
    const Norm norm = config.norm == "two" ? Norm::two : Norm::inf;
    for (int i = 0; i < config.count; ++i) {
      auto inst = toy::random_instance(net, config.seed + static_cast<std::uint64_t>(i), delta, norm);
      apply_overrides(config, inst);
      instances.push_back(std::move(inst));
    }
  } else {
    throw ConfigError("--kind must be two-neuron or random");
  }
  save_network(*net, *config.model_out);
  const fs::path rel = fs::relative(fs::absolute(*config.model_out),
                                    fs::absolute(*config.instance_out).parent_path());
  json docs = json::array();
  for (const auto& inst : instances) {
    json doc = instance_to_json(inst);
    doc["model"] = rel.generic_string();
    docs.push_back(std::move(doc));
  }
  write_json_file(docs.size() == 1 ? docs[0] : json{{"instances", docs}}, *config.instance_out);
  out << "wrote " << config.model_out->string() << " and " << config.instance_out->string() << "\n";
  return 0;
}

int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  try {
    if (config.subcommand == "verify") return cmd_verify(config, out, err);
    if (config.subcommand == "bounds") return cmd_bounds(config, out, err);
    if (config.subcommand == "upper") return cmd_upper(config, out, err);
    if (config.subcommand == "oracle") return cmd_oracle(config, out, err);
    if (config.subcommand == "bench") return cmd_bench(config, out, err);
    if (config.subcommand == "gen-toy") return cmd_gen_toy(config, out, err);
    err << "error: unknown subcommand '" << config.subcommand << "'\n";
  } catch (const oracle::PatternCapExceeded& e) {
    err << "error: " << e.what() << "\n";
  } catch (const ModelError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return kError;
}

}  // namespace ccv::cli
