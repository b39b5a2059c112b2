#include "mixsem/cli.hpp"

#include "data_io_internal.hpp"
#include "mixsem/data_io.hpp"
#include "mixsem/em.hpp"
#include "mixsem/inference.hpp"

#include "CLI11.hpp"

#include <array>
#include <cstdlib>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>

namespace mixsem {

namespace {

struct EstimationFlags {
  int starts = 20;
  std::uint64_t seed = 0;
  double tol = EmConfig{}.tol;
  int max_iter = EmConfig{}.max_iter;
  int threads = 0;  // 0: MIXSEM_THREADS or 1
};

struct RunConfig {
  std::string data;
  std::string schema;
  std::string params;
  std::string out;
  std::string covariates;
  int k = 1;
  int k_max = 1;
  long long n = 0;
  std::uint64_t sim_seed = 0;
  EstimationFlags est;
  int verbosity = 0;
};

void add_estimation_flags(CLI::App* sub, EstimationFlags& f) {
  sub->add_option("--starts", f.starts, "EM starts per fit (1 deterministic + random)")
      ->check(CLI::Range(1, 100000));
  sub->add_option("--seed", f.seed, "master seed for random starts");
  sub->add_option("--tol", f.tol, "relative log-likelihood tolerance")
      ->check(CLI::PositiveNumber);
  sub->add_option("--max-iter", f.max_iter, "EM iteration cap")->check(CLI::Range(1, 100000000));
  sub->add_option("--threads", f.threads, "concurrent starts (default MIXSEM_THREADS or 1)")
      ->check(CLI::Range(1, 1024));
}

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("MIXSEM_THREADS")) {
    try {
      const int t = std::stoi(env);
      if (t >= 1) return t;
    } catch (const std::exception&) {
    }
    throw DataError(std::string("MIXSEM_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

EmConfig make_config(const RunConfig& rc, std::ostream& out, std::mutex& mu) {
  EmConfig cfg;
  cfg.tol = rc.est.tol;
  cfg.max_iter = rc.est.max_iter;
  cfg.n_random_starts = rc.est.starts - 1;
  cfg.master_seed = rc.est.seed;
  cfg.threads = resolve_threads(rc.est.threads);
  if (rc.verbosity >= 2) {
    cfg.on_iteration = [&out, &mu](const IterationInfo& it) {
      std::lock_guard<std::mutex> lock(mu);
      out << "iteration " << it.iteration << "  loglik " << std::setprecision(10) << it.loglik
          << "  max rel change " << std::setprecision(3) << std::scientific << it.max_rel_change
          << std::defaultfloat << "\n";
    };
  }
  return cfg;
}

void report_ingestion(std::ostream& err, const IngestionReport& r, int verbosity) {
  if (verbosity < 1 && r.errors.empty() && r.dropped_missing == 0 &&
      r.dropped_gestational_age == 0 && r.dropped_birthweight == 0) {
    return;
  }
  err << "read " << r.rows_read << " rows, kept " << r.rows_kept << "; dropped "
      << r.dropped_gestational_age << " (gestational age), " << r.dropped_birthweight
      << " (birthweight), " << r.dropped_missing << " (missing), " << r.errors.size()
      << " (invalid)\n";
  const std::size_t shown = std::min<std::size_t>(r.errors.size(), 5);
  for (std::size_t i = 0; i < shown; ++i) {
    const auto& e = r.errors[i];
    err << "  line " << e.line << (e.column.empty() ? "" : " column '" + e.column + "'") << ": "
        << e.message << "\n";
  }
}

std::filesystem::path sibling_csv(const std::filesystem::path& out) {
  std::filesystem::path p = out;
  p.replace_filename(out.stem().string() + ".coefficients.csv");
  return p;
}

std::string fixed(double v, int prec) {
  if (!std::isfinite(v)) return "NA";
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

// ---------------------------------------------------------------------------

int cmd_fit(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  if (rc.k < 1) {
    err << "error: K must be ≥ 1\n";
    return kExitUsage;
  }
  const SchemaConfig schema = SchemaConfig::load(rc.schema);
  const LoadResult loaded = load_csv(std::filesystem::path(rc.data), schema);
  report_ingestion(err, loaded.report, rc.verbosity);
  const EncodedDesign design = encode_design(loaded.data, schema);
  const ModelSpec spec = design.model_spec(rc.k);
  std::mutex mu;
  const EmConfig cfg = make_config(rc, out, mu);

  const FitResult fit = fit_multistart(design.dataset, spec, cfg);
  ResultsDocument doc{spec, design.dataset.meta(), design.centering, fit.theta, fit, cfg,
                      design.dataset.size(), std::nullopt};
  try {
    doc.inference = build_inference_report(fit.theta, design.dataset, spec);
  } catch (const std::exception& e) {
    err << "warning: standard errors unavailable: " << e.what() << "\n";
  }
  write_results(doc, rc.out, ResultsFormat::json);
  write_results(doc, sibling_csv(rc.out), ResultsFormat::csv);

  out << "K = " << spec.K << ", n = " << doc.n << "\n";
  out << "loglik = " << fixed(fit.loglik, 3) << "\n";
  out << "npar = " << doc.npar() << "\n";
  out << "BIC = " << fixed(doc.bic_value(), 3) << "\n";
  out << "iterations = " << fit.iterations << (fit.converged ? " (converged)" : " (not converged)")
      << "\n";
  out << "weights =";
  for (Index k = 0; k < fit.theta.latent.pi.size(); ++k) out << " " << fixed(fit.theta.latent.pi(k), 4);
  out << "\n";
  if (doc.inference) {
    for (const auto& d : doc.inference->diagnostics) err << "note: " << d << "\n";
  }
  if (!fit.converged) {
    err << "warning: EM did not converge within " << cfg.max_iter << " iterations\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

int cmd_select(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  if (rc.k_max < 1) {
    err << "error: K must be ≥ 1\n";
    return kExitUsage;
  }
  const SchemaConfig schema = SchemaConfig::load(rc.schema);
  const LoadResult loaded = load_csv(std::filesystem::path(rc.data), schema);
  report_ingestion(err, loaded.report, rc.verbosity);
  const EncodedDesign design = encode_design(loaded.data, schema);
  std::mutex mu;
  const EmConfig cfg = make_config(rc, out, mu);

  const SelectionTable table = select_k(design.dataset, design.model_spec(1), rc.k_max, cfg);
  std::ostringstream csv;
  csv << std::setprecision(12);
  csv << "K,loglik,npar,BIC,converged\n";
  out << std::right << std::setw(3) << "K" << std::setw(16) << "loglik" << std::setw(7) << "npar"
      << std::setw(16) << "BIC" << std::setw(11) << "converged" << "\n";
  bool chosen_converged = true;
  for (const auto& r : table.rows) {
    if (r.failed) {
      csv << r.K << ",NA," << r.npar << ",NA,false\n";
      out << std::setw(3) << r.K << std::setw(16) << "failed" << std::setw(7) << r.npar
          << std::setw(16) << "--" << std::setw(11) << "no" << "  " << r.diagnostic << "\n";
      continue;
    }
    csv << r.K << ',' << r.loglik << ',' << r.npar << ',' << r.bic << ','
        << (r.converged ? "true" : "false") << '\n';
    out << std::setw(3) << r.K << std::setw(16) << fixed(r.loglik, 3) << std::setw(7) << r.npar
        << std::setw(16) << fixed(r.bic, 3) << std::setw(11) << (r.converged ? "yes" : "no")
        << "\n";
    if (r.K == table.chosen_K) chosen_converged = r.converged;
  }
  write_file_atomic(rc.out, csv.str());
  out << "chosen K = " << table.chosen_K << "\n";
  return chosen_converged ? kExitOk : kExitNotConverged;
}

int cmd_simulate(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  if (rc.n < 1) {
    err << "error: --n must be ≥ 1\n";
    return kExitUsage;
  }
  const ResultsDocument doc = read_results(rc.params);
  const SchemaConfig schema = SchemaConfig::load(rc.schema);
  std::optional<LoadResult> pool;
  if (!rc.covariates.empty()) {
    pool = load_csv(std::filesystem::path(rc.covariates), schema);
    report_ingestion(err, pool->report, rc.verbosity);
  }
  const SimulatedData sim = simulate(doc.theta, doc.spec, schema, static_cast<std::size_t>(rc.n),
                                     rc.sim_seed, pool ? &pool->data : nullptr);
  std::ostringstream csv;
  write_simulated_csv(csv, sim, schema);
  write_file_atomic(rc.out, csv.str());
  if (rc.verbosity >= 1) out << "wrote " << rc.n << " records to " << rc.out << "\n";
  return kExitOk;
}

void check_columns(const ColumnMetadata& expected, const ColumnMetadata& got) {
  auto names = [](const ColumnMetadata& m) {
    std::string s;
    for (const auto& l : m.x) {
      if (!s.empty()) s += ", ";
      s += l.covariate + (l.category.empty() ? "" : "=" + l.category);
    }
    return s;
  };
  bool same = expected.x.size() == got.x.size();
  for (std::size_t i = 0; same && i < expected.x.size(); ++i) {
    same = expected.x[i].covariate == got.x[i].covariate && expected.x[i].category == got.x[i].category;
  }
  if (!same) {
    throw DataError("params expect covariate columns [" + names(expected) +
                    "] but the data encodes [" + names(got) + "]");
  }
  if (expected.z1_labels != got.z1_labels) {
    throw DataError("params and schema disagree on the levels of '" + expected.z1_name + "'");
  }
  if (expected.z2_labels != got.z2_labels) {
    throw DataError("params and schema disagree on the levels of '" + expected.z2_name + "'");
  }
}

int cmd_classify(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const ResultsDocument doc = read_results(rc.params);
  const SchemaConfig schema = SchemaConfig::load(rc.schema);
  const LoadResult loaded = load_csv(std::filesystem::path(rc.data), schema);
  report_ingestion(err, loaded.report, rc.verbosity);
  const EncodedDesign design = detail::encode_unchecked(loaded.data, schema, doc.centering);
  check_columns(doc.columns, design.dataset.meta());

  const PosteriorMatrix post = e_step(design.dataset, doc.spec, doc.theta);
  const Classification cls = classify(post);
  std::ostringstream csv;
  csv << std::setprecision(17);
  csv << "row_id,line,class,confidence";
  for (int k = 1; k <= doc.spec.K; ++k) csv << ",posterior_" << k;
  csv << "\n";
  for (Index i = 0; i < design.dataset.size(); ++i) {
    const auto s = static_cast<std::size_t>(i);
    csv << (i + 1) << ',' << loaded.data.source_line[s] << ',' << cls.label[s] << ','
        << cls.confidence(i);
    for (Index k = 0; k < post.w.cols(); ++k) csv << ',' << post.w(i, k);
    csv << '\n';
  }
  write_file_atomic(rc.out, csv.str());
  if (rc.verbosity >= 1) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(doc.spec.K), 0);
    for (int l : cls.label) ++counts[static_cast<std::size_t>(l - 1)];
    out << "class sizes:";
    for (auto c : counts) out << " " << c;
    out << "\n";
  }
  return kExitOk;
}

int cmd_report(const RunConfig& rc, std::ostream& out, std::ostream&) {
  const ResultsDocument doc = read_results(rc.params);
  const std::filesystem::path dir(rc.out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory '" + dir.string() + "'");
  const std::string text = render_report(doc);
  write_file_atomic(dir / "report.txt", text);
  write_file_atomic(dir / "coefficients.csv", coefficients_csv(doc));
  out << text;
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Finite mixture structural equation models for ordinal, binary and bivariate "
               "normal responses"};
  app.name("mixsem");
  app.require_subcommand(1);
  RunConfig rc;

  auto* fit = app.add_subcommand("fit", "estimate a K-class model");
  fit->add_option("--data", rc.data, "input CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--schema", rc.schema, "schema JSON")->required()->check(CLI::ExistingFile);
  fit->add_option("--k", rc.k, "number of latent classes")->required();
  fit->add_option("--out", rc.out, "results JSON; coefficients go to <stem>.coefficients.csv")
      ->required();
  add_estimation_flags(fit, rc.est);

  auto* sel = app.add_subcommand("select", "choose K by BIC");
  sel->add_option("--data", rc.data, "input CSV")->required()->check(CLI::ExistingFile);
  sel->add_option("--schema", rc.schema, "schema JSON")->required()->check(CLI::ExistingFile);
  sel->add_option("--k-max", rc.k_max, "largest K to try")->required();
  sel->add_option("--out", rc.out, "selection table CSV")->required();
  add_estimation_flags(sel, rc.est);

  auto* sim = app.add_subcommand("simulate", "draw a synthetic dataset from fitted parameters");
  sim->add_option("--params", rc.params, "results JSON")->required()->check(CLI::ExistingFile);
  sim->add_option("--schema", rc.schema, "schema JSON")->required()->check(CLI::ExistingFile);
  sim->add_option("--n", rc.n, "number of records")->required();
  sim->add_option("--seed", rc.sim_seed, "random seed");
  sim->add_option("--covariates", rc.covariates, "CSV whose covariate rows are resampled")
      ->check(CLI::ExistingFile);
  sim->add_option("--out", rc.out, "output CSV")->required();

  auto* cls = app.add_subcommand("classify", "MAP class assignment");
  cls->add_option("--data", rc.data, "input CSV")->required()->check(CLI::ExistingFile);
  cls->add_option("--schema", rc.schema, "schema JSON")->required()->check(CLI::ExistingFile);
  cls->add_option("--params", rc.params, "results JSON")->required()->check(CLI::ExistingFile);
  cls->add_option("--out", rc.out, "output CSV")->required();

  auto* rep = app.add_subcommand("report", "render coefficient tables");
  rep->add_option("--params", rc.params, "results JSON")->required()->check(CLI::ExistingFile);
  rep->add_option("--out", rc.out, "output directory")->required();

  // one counter per subcommand: CLI11 resets a shared target from unparsed subcommands
  std::array<int, 5> verbose{};
  const std::array<CLI::App*, 5> subs{fit, sel, sim, cls, rep};
  for (std::size_t i = 0; i < subs.size(); ++i) {
    subs[i]->add_flag("-v,--verbose", verbose[i], "repeat for more output (-vv: per-iteration)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failing = &app;
    for (auto* sub : {fit, sel, sim, cls, rep}) {
      if (sub->parsed()) failing = sub;
    }
    err << failing->help();
    return kExitUsage;
  }

  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (subs[i]->parsed()) rc.verbosity = verbose[i];
  }
  try {
    if (fit->parsed()) return cmd_fit(rc, out, err);
    if (sel->parsed()) return cmd_select(rc, out, err);
    if (sim->parsed()) return cmd_simulate(rc, out, err);
    if (cls->parsed()) return cmd_classify(rc, out, err);
    if (rep->parsed()) return cmd_report(rc, out, err);
  } catch (const EstimationError& e) {
    err << "error: estimation failed: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace mixsem
