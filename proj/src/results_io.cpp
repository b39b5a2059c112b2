#include "mixsem/data_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <system_error>
#include <unistd.h>

namespace mixsem {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double get_num(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

json vec_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

Vector vec_from(const json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = get_num(j[i]);
  return v;
}

json mat_json(const Matrix& m) {
  json a = json::array();
  for (Index r = 0; r < m.rows(); ++r) a.push_back(vec_json(m.row(r).transpose()));
  return a;
}

Matrix mat_from(const json& j, Index cols_if_empty = 0) {
  const auto rows = static_cast<Index>(j.size());
  const Index cols = rows ? static_cast<Index>(j[0].size()) : cols_if_empty;
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (static_cast<Index>(row.size()) != cols) throw DataError("ragged matrix in results file");
    for (Index c = 0; c < cols; ++c) m(r, c) = get_num(row[static_cast<std::size_t>(c)]);
  }
  return m;
}

json wald_json(const WaldRow& w) {
  return {{"estimate", num(w.estimate)}, {"se", num(w.se)}, {"t", num(w.t)}, {"p", num(w.p)}};
}

WaldRow wald_from(const json& j) {
  return {get_num(j.at("estimate")), get_num(j.at("se")), get_num(j.at("t")), get_num(j.at("p"))};
}

json named_json(const std::vector<NamedEstimate>& v) {
  json a = json::array();
  for (const auto& e : v) {
    json o = wald_json(e.wald);
    o["name"] = e.name;
    a.push_back(o);
  }
  return a;
}

std::vector<NamedEstimate> named_from(const json& j) {
  std::vector<NamedEstimate> v;
  for (const auto& o : j) v.push_back({o.at("name").get<std::string>(), wald_from(o)});
  return v;
}

json labels_json(const std::vector<ColumnLabel>& v) {
  json a = json::array();
  for (const auto& l : v) a.push_back({{"covariate", l.covariate}, {"category", l.category}});
  return a;
}

std::vector<ColumnLabel> labels_from(const json& j) {
  std::vector<ColumnLabel> v;
  for (const auto& o : j) {
    v.push_back({o.at("covariate").get<std::string>(), o.at("category").get<std::string>()});
  }
  return v;
}

json theta_json(const ParameterSet& t) {
  return {{"ordinal", {{"mu1", num(t.ordinal.mu1)}, {"tau", vec_json(t.ordinal.tau)},
                       {"beta1", vec_json(t.ordinal.beta1)}}},
          {"binary", {{"mu2", num(t.binary.mu2)}, {"beta2", vec_json(t.binary.beta2)},
                      {"gamma", vec_json(t.binary.gamma)}}},
          {"gaussian", {{"nu", vec_json(t.gaussian.nu)}, {"Phi", mat_json(t.gaussian.Phi)},
                        {"Psi", mat_json(t.gaussian.Psi)}, {"Sigma", mat_json(t.gaussian.Sigma)}}},
          {"latent", {{"xi1", vec_json(t.latent.xi1)}, {"xi2", vec_json(t.latent.xi2)},
                      {"zeta", mat_json(t.latent.zeta)}, {"pi", vec_json(t.latent.pi)}}}};
}

ParameterSet theta_from(const json& j, const ModelSpec& spec) {
  ParameterSet t;
  const auto& o = j.at("ordinal");
  t.ordinal.mu1 = get_num(o.at("mu1"));
  t.ordinal.tau = vec_from(o.at("tau"));
  t.ordinal.beta1 = vec_from(o.at("beta1"));
  const auto& b = j.at("binary");
  t.binary.mu2 = get_num(b.at("mu2"));
  t.binary.beta2 = vec_from(b.at("beta2"));
  t.binary.gamma = vec_from(b.at("gamma"));
  const auto& g = j.at("gaussian");
  t.gaussian.nu = vec_from(g.at("nu"));
  t.gaussian.Phi = mat_from(g.at("Phi"), static_cast<Index>(spec.outcome_x.size()));
  t.gaussian.Psi = mat_from(g.at("Psi"), spec.n_outcome_cause_dummies());
  t.gaussian.Sigma = mat_from(g.at("Sigma"));
  const auto& l = j.at("latent");
  t.latent.xi1 = vec_from(l.at("xi1"));
  t.latent.xi2 = vec_from(l.at("xi2"));
  t.latent.zeta = mat_from(l.at("zeta"), spec.d);
  t.latent.pi = vec_from(l.at("pi"));
  // an empty Phi/Psi serializes as [] and loses its row count
  if (t.gaussian.Phi.rows() == 0) t.gaussian.Phi.resize(spec.d, static_cast<Index>(spec.outcome_x.size()));
  if (t.gaussian.Psi.rows() == 0) t.gaussian.Psi.resize(spec.d, spec.n_outcome_cause_dummies());
  return t;
}

json index_json(const std::vector<Index>& v) { return json(std::vector<long long>(v.begin(), v.end())); }

std::vector<Index> index_from(const json& j) {
  std::vector<Index> v;
  for (const auto& e : j) v.push_back(static_cast<Index>(e.get<long long>()));
  return v;
}

std::string fmt(double v, int prec = 4) {
  if (!std::isfinite(v)) return "NA";
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// JSON

json results_to_json(const ResultsDocument& doc) {
  const auto& s = doc.spec;
  json j;
  j["schema_version"] = kResultsSchemaVersion;
  j["spec"] = {{"K", s.K},
               {"J", s.J},
               {"d", s.d},
               {"x_dim", s.x_dim},
               {"ordinal_x", index_json(s.ordinal_x)},
               {"binary_x", index_json(s.binary_x)},
               {"outcome_x", index_json(s.outcome_x)},
               {"binary_uses_z1", s.binary_uses_z1},
               {"outcome_uses_z1", s.outcome_uses_z1},
               {"outcome_uses_z2", s.outcome_uses_z2}};
  const auto& m = doc.columns;
  j["columns"] = {{"x", labels_json(m.x)},
                  {"z1_name", m.z1_name},
                  {"z1_labels", m.z1_labels},
                  {"z2_name", m.z2_name},
                  {"z2_labels", m.z2_labels},
                  {"y_names", m.y_names},
                  {"x_references", labels_json(m.x_references)}};
  json c = json::object();
  if (doc.centering.age_mean) c["age_mean"] = *doc.centering.age_mean;
  if (doc.centering.age_sq_mean) c["age_sq_mean"] = *doc.centering.age_sq_mean;
  if (doc.centering.father_age_mean) c["father_age_mean"] = *doc.centering.father_age_mean;
  if (doc.centering.father_age_sq_mean) c["father_age_sq_mean"] = *doc.centering.father_age_sq_mean;
  j["centering"] = c;
  j["theta"] = theta_json(doc.theta);

  const auto& f = doc.fit;
  json starts = json::array();
  for (const auto& st : f.starts) {
    starts.push_back({{"start_id", st.start_id},
                      {"seed", st.seed},
                      {"loglik", num(st.loglik)},
                      {"iterations", st.iterations},
                      {"converged", st.converged},
                      {"degenerate", st.degenerate},
                      {"failed", st.failed},
                      {"monotonicity_violated", st.monotonicity_violated},
                      {"diagnostic", st.diagnostic}});
  }
  json trace = json::array();
  for (double v : f.loglik_trace) trace.push_back(num(v));
  j["fit"] = {{"loglik", num(f.loglik)},
              {"npar", doc.npar()},
              {"bic", num(doc.bic_value())},
              {"iterations", f.iterations},
              {"converged", f.converged},
              {"start_id", f.start_id},
              {"seed", f.seed},
              {"degenerate", f.degenerate},
              {"failed", f.failed},
              {"monotonicity_violated", f.monotonicity_violated},
              {"diagnostic", f.diagnostic},
              {"loglik_trace", trace},
              {"starts", starts}};
  const auto& cf = doc.config;
  j["config"] = {{"tol", cf.tol},
                 {"max_iter", cf.max_iter},
                 {"inner_max_iter", cf.inner_max_iter},
                 {"inner_tol", cf.inner_tol},
                 {"weight_floor", cf.weight_floor},
                 {"n_random_starts", cf.n_random_starts},
                 {"master_seed", cf.master_seed},
                 {"threads", cf.threads}};
  j["n"] = doc.n;
  if (doc.inference) {
    const auto& r = *doc.inference;
    json contrasts = json::array();
    for (const auto& ct : r.contrasts) {
      json o = wald_json(ct.wald);
      o["dim"] = ct.dim;
      o["k"] = ct.k;
      contrasts.push_back(o);
    }
    json rho = wald_json(r.rho.wald);
    rho["name"] = r.rho.name;
    j["inference"] = {{"parameters", named_json(r.parameters)},
                      {"support_points", named_json(r.support_points)},
                      {"weights", named_json(r.weights)},
                      {"contrasts", contrasts},
                      {"rho", rho},
                      {"information_pd", r.information_pd},
                      {"diagnostics", r.diagnostics}};
  }
  return j;
}

ResultsDocument results_from_json(const json& j) {
  ResultsDocument doc;
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kResultsSchemaVersion) {
      throw DataError("unsupported results schema version " + std::to_string(version));
    }
    const auto& s = j.at("spec");
    doc.spec.K = s.at("K").get<int>();
    doc.spec.J = s.at("J").get<int>();
    doc.spec.d = s.at("d").get<int>();
    doc.spec.x_dim = s.at("x_dim").get<Index>();
    doc.spec.ordinal_x = index_from(s.at("ordinal_x"));
    doc.spec.binary_x = index_from(s.at("binary_x"));
    doc.spec.outcome_x = index_from(s.at("outcome_x"));
    doc.spec.binary_uses_z1 = s.at("binary_uses_z1").get<bool>();
    doc.spec.outcome_uses_z1 = s.at("outcome_uses_z1").get<bool>();
    doc.spec.outcome_uses_z2 = s.at("outcome_uses_z2").get<bool>();
    doc.spec.validate();

    const auto& m = j.at("columns");
    doc.columns.x = labels_from(m.at("x"));
    doc.columns.z1_name = m.at("z1_name").get<std::string>();
    doc.columns.z1_labels = m.at("z1_labels").get<std::vector<std::string>>();
    doc.columns.z2_name = m.at("z2_name").get<std::string>();
    doc.columns.z2_labels = m.at("z2_labels").get<std::vector<std::string>>();
    doc.columns.y_names = m.at("y_names").get<std::vector<std::string>>();
    doc.columns.x_references = labels_from(m.at("x_references"));

    const auto& c = j.at("centering");
    auto opt = [&](const char* key, std::optional<double>& dst) {
      if (c.contains(key) && !c.at(key).is_null()) dst = c.at(key).get<double>();
    };
    opt("age_mean", doc.centering.age_mean);
    opt("age_sq_mean", doc.centering.age_sq_mean);
    opt("father_age_mean", doc.centering.father_age_mean);
    opt("father_age_sq_mean", doc.centering.father_age_sq_mean);

    doc.theta = theta_from(j.at("theta"), doc.spec);
    validate_parameters(doc.theta, doc.spec);

    const auto& f = j.at("fit");
    doc.fit.theta = doc.theta;
    doc.fit.loglik = get_num(f.at("loglik"));
    doc.fit.iterations = f.at("iterations").get<int>();
    doc.fit.converged = f.at("converged").get<bool>();
    doc.fit.start_id = f.at("start_id").get<int>();
    doc.fit.seed = f.at("seed").get<std::uint64_t>();
    doc.fit.degenerate = f.at("degenerate").get<bool>();
    doc.fit.failed = f.at("failed").get<bool>();
    doc.fit.monotonicity_violated = f.at("monotonicity_violated").get<bool>();
    doc.fit.diagnostic = f.at("diagnostic").get<std::string>();
    for (const auto& v : f.at("loglik_trace")) doc.fit.loglik_trace.push_back(get_num(v));
    for (const auto& st : f.at("starts")) {
      StartSummary ss;
      ss.start_id = st.at("start_id").get<int>();
      ss.seed = st.at("seed").get<std::uint64_t>();
      ss.loglik = get_num(st.at("loglik"));
      ss.iterations = st.at("iterations").get<int>();
      ss.converged = st.at("converged").get<bool>();
      ss.degenerate = st.at("degenerate").get<bool>();
      ss.failed = st.at("failed").get<bool>();
      ss.monotonicity_violated = st.value("monotonicity_violated", false);
      ss.diagnostic = st.at("diagnostic").get<std::string>();
      doc.fit.starts.push_back(ss);
    }

    const auto& cf = j.at("config");
    doc.config.tol = cf.at("tol").get<double>();
    doc.config.max_iter = cf.at("max_iter").get<int>();
    doc.config.inner_max_iter = cf.at("inner_max_iter").get<int>();
    doc.config.inner_tol = cf.at("inner_tol").get<double>();
    doc.config.weight_floor = cf.at("weight_floor").get<double>();
    doc.config.n_random_starts = cf.at("n_random_starts").get<int>();
    doc.config.master_seed = cf.at("master_seed").get<std::uint64_t>();
    doc.config.threads = cf.at("threads").get<int>();
    doc.n = j.at("n").get<Index>();

    if (j.contains("inference") && !j.at("inference").is_null()) {
      const auto& r = j.at("inference");
      InferenceReport rep;
      rep.parameters = named_from(r.at("parameters"));
      rep.support_points = named_from(r.at("support_points"));
      rep.weights = named_from(r.at("weights"));
      for (const auto& ct : r.at("contrasts")) {
        rep.contrasts.push_back({ct.at("dim").get<int>(), ct.at("k").get<int>(), wald_from(ct)});
      }
      rep.rho = {r.at("rho").at("name").get<std::string>(), wald_from(r.at("rho"))};
      rep.information_pd = r.at("information_pd").get<bool>();
      rep.diagnostics = r.at("diagnostics").get<std::vector<std::string>>();
      doc.inference = std::move(rep);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed results document: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("inconsistent results document: ") + e.what());
  } catch (const InvalidParameters& e) {
    throw DataError(std::string("inconsistent results document: ") + e.what());
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Coefficient tables

std::vector<TableRow> coefficient_rows(const ResultsDocument& doc) {
  const auto& spec = doc.spec;
  const auto& m = doc.columns;
  const auto& t = doc.theta;
  const FreeParameterMap map(spec, &m);
  const bool have_se = doc.inference && static_cast<Index>(doc.inference->parameters.size()) == map.size();
  auto wald_at = [&](Index idx) -> std::optional<WaldRow> {
    if (!have_se) return std::nullopt;
    return doc.inference->parameters[static_cast<std::size_t>(idx)].wald;
  };
  auto xlabel = [&](Index c) -> ColumnLabel {
    if (static_cast<std::size_t>(c) < m.x.size()) {
      ColumnLabel l = m.x[static_cast<std::size_t>(c)];
      if (l.category.empty()) l.category = "--";
      return l;
    }
    return {"x" + std::to_string(c + 1), "--"};
  };
  auto reference_of = [&](const std::string& covariate) -> std::optional<std::string> {
    for (const auto& r : m.x_references) {
      if (r.covariate == covariate) return r.category;
    }
    return std::nullopt;
  };
  auto z1_label = [&](int j) {
    return static_cast<std::size_t>(j - 1) < m.z1_labels.size() ? m.z1_labels[static_cast<std::size_t>(j - 1)]
                                                               : std::to_string(j);
  };
  auto z2_label = [&](int l) {
    return static_cast<std::size_t>(l) < m.z2_labels.size() ? m.z2_labels[static_cast<std::size_t>(l)]
                                                           : std::to_string(l);
  };

  std::vector<TableRow> rows;
  // x-coefficient rows, with a reference row before each factor's first dummy
  auto add_x = [&](const std::string& table, const std::string& response,
                   const std::vector<Index>& cols, const Vector& coef, Index first_free) {
    std::string last_factor;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      const ColumnLabel l = xlabel(cols[i]);
      if (l.category != "--" && l.covariate != last_factor) {
        if (auto ref = reference_of(l.covariate)) rows.push_back({table, response, l.covariate, *ref, 0.0, {}});
      }
      last_factor = l.category != "--" ? l.covariate : "";
      rows.push_back({table, response, l.covariate, l.category, coef(static_cast<Index>(i)),
                      wald_at(first_free + static_cast<Index>(i))});
    }
  };

  // ordinal
  {
    const std::string resp = m.z1_name;
    Index idx = map.ordinal_offset();
    rows.push_back({"ordinal", resp, "intercept", "--", t.ordinal.mu1, wald_at(idx++)});
    rows.push_back({"ordinal", resp, "threshold", "tau1", 0.0, {}});
    for (int j = 2; j <= spec.J - 1; ++j) {
      rows.push_back({"ordinal", resp, "threshold", "tau" + std::to_string(j),
                      t.ordinal.tau(j - 1), wald_at(idx++)});
    }
    add_x("ordinal", resp, spec.ordinal_x, t.ordinal.beta1, idx);
  }
  // binary
  {
    const std::string resp = m.z2_name;
    Index idx = map.binary_offset();
    rows.push_back({"binary", resp, "intercept", "--", t.binary.mu2, wald_at(idx++)});
    add_x("binary", resp, spec.binary_x, t.binary.beta2, idx);
    idx += static_cast<Index>(spec.binary_x.size());
    if (spec.binary_uses_z1) {
      rows.push_back({"binary", resp, m.z1_name, z1_label(1), 0.0, {}});
      for (int j = 2; j <= spec.J; ++j) {
        rows.push_back({"binary", resp, m.z1_name, z1_label(j), t.binary.gamma(j - 2), wald_at(idx++)});
      }
    }
  }
  // outcome
  {
    Index idx = map.outcome_offset();
    for (Index r = 0; r < spec.d; ++r) {
      const std::string resp = static_cast<std::size_t>(r) < m.y_names.size()
                                   ? m.y_names[static_cast<std::size_t>(r)]
                                   : "y" + std::to_string(r + 1);
      rows.push_back({"outcome", resp, "intercept", "--", t.gaussian.nu(r), wald_at(idx++)});
      add_x("outcome", resp, spec.outcome_x, t.gaussian.Phi.row(r).transpose(), idx);
      idx += static_cast<Index>(spec.outcome_x.size());
      Index psi = 0;
      if (spec.outcome_uses_z1) {
        rows.push_back({"outcome", resp, m.z1_name, z1_label(1), 0.0, {}});
        for (int j = 2; j <= spec.J; ++j) {
          rows.push_back({"outcome", resp, m.z1_name, z1_label(j), t.gaussian.Psi(r, psi++), wald_at(idx++)});
        }
      }
      if (spec.outcome_uses_z2) {
        rows.push_back({"outcome", resp, m.z2_name, z2_label(0), 0.0, {}});
        rows.push_back({"outcome", resp, m.z2_name, z2_label(1), t.gaussian.Psi(r, psi++), wald_at(idx++)});
      }
    }
    Index sidx = map.sigma_offset();
    for (Index r = 0; r < spec.d; ++r) {
      for (Index c = r; c < spec.d; ++c) {
        const std::string a = static_cast<std::size_t>(r) < m.y_names.size() ? m.y_names[static_cast<std::size_t>(r)] : "y" + std::to_string(r + 1);
        const std::string b = static_cast<std::size_t>(c) < m.y_names.size() ? m.y_names[static_cast<std::size_t>(c)] : "y" + std::to_string(c + 1);
        rows.push_back({"outcome", "covariance", "sigma", a + "," + b, t.gaussian.Sigma(r, c), wald_at(sidx++)});
      }
    }
    if (spec.d == 2) {
      std::optional<WaldRow> w;
      if (doc.inference) w = doc.inference->rho.wald;
      rows.push_back({"outcome", "covariance", "rho", "--", correlation_from_sigma(t.gaussian.Sigma), w});
    }
  }
  // latent
  {
    const int K = spec.K;
    for (int dim = 0; dim < map.n_latent_dims(); ++dim) {
      for (int k = 0; k < K; ++k) {
        std::optional<WaldRow> w;
        if (doc.inference) {
          const auto pos = static_cast<std::size_t>(dim * K + k);
          if (pos < doc.inference->support_points.size()) w = doc.inference->support_points[pos].wald;
        }
        rows.push_back({"latent", map.latent_dim_name(dim), "class " + std::to_string(k + 1), "--",
                        support_value(t, dim, k), w});
      }
    }
    for (int k = 0; k < K; ++k) {
      std::optional<WaldRow> w;
      if (doc.inference && static_cast<std::size_t>(k) < doc.inference->weights.size()) {
        w = doc.inference->weights[static_cast<std::size_t>(k)].wald;
      }
      rows.push_back({"latent", "pi", "class " + std::to_string(k + 1), "--", t.latent.pi(k), w});
    }
  }
  return rows;
}

std::string coefficients_csv(const ResultsDocument& doc) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "table,response,covariate,category,estimate,se,t,p\n";
  auto cell = [&](double v) {
    if (std::isfinite(v)) os << v;
    else os << "NA";
  };
  for (const auto& r : coefficient_rows(doc)) {
    os << r.table << ',' << csv_field(r.response) << ',' << csv_field(r.covariate) << ','
       << csv_field(r.category) << ',';
    cell(r.estimate);
    if (r.wald) {
      os << ',';
      cell(r.wald->se);
      os << ',';
      cell(r.wald->t);
      os << ',';
      cell(r.wald->p);
    } else {
      os << ",--,--,--";
    }
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Text report

std::string render_report(const ResultsDocument& doc) {
  const auto rows = coefficient_rows(doc);
  std::ostringstream os;
  const auto& f = doc.fit;
  os << "Finite mixture SEM, K = " << doc.spec.K << ", n = " << doc.n << "\n";
  os << "log-likelihood " << fmt(f.loglik, 3) << ", parameters " << doc.npar() << ", BIC "
     << fmt(doc.bic_value(), 3) << "\n";
  os << "EM iterations " << f.iterations << (f.converged ? " (converged)" : " (not converged)")
     << ", best start " << f.start_id << "\n";
  if (!doc.inference) os << "standard errors not computed\n";
  else {
    for (const auto& d : doc.inference->diagnostics) os << "note: " << d << "\n";
  }

  auto header = [&](const std::string& title) {
    os << "\n" << title << "\n";
    os << std::left << std::setw(22) << "covariate" << std::setw(26) << "category" << std::right
       << std::setw(11) << "estimate" << std::setw(10) << "se" << std::setw(10) << "p" << "\n";
  };
  auto line = [&](const TableRow& r) {
    os << std::left << std::setw(22) << r.covariate << std::setw(26) << r.category << std::right
       << std::setw(11) << fmt(r.estimate);
    if (r.wald) os << std::setw(10) << fmt(r.wald->se) << std::setw(10) << fmt(r.wald->p);
    else os << std::setw(10) << "--" << std::setw(10) << "--";
    os << "\n";
  };

  std::string current;
  for (const auto& r : rows) {
    if (r.table == "latent") continue;
    const std::string key = r.table + "/" + r.response;
    if (key != current) {
      current = key;
      std::string title;
      if (r.table == "ordinal") title = "Ordinal equation: " + r.response;
      else if (r.table == "binary") title = "Binary equation: " + r.response;
      else if (r.response == "covariance") title = "Outcome residual covariance";
      else title = "Outcome equation: " + r.response;
      header(title);
    }
    line(r);
  }

  // latent structure: one column per class
  const int K = doc.spec.K;
  const FreeParameterMap map(doc.spec, &doc.columns);
  os << "\nLatent structure\n" << std::left << std::setw(14) << "" << std::right;
  for (int k = 0; k < K; ++k) os << std::setw(12) << ("class " + std::to_string(k + 1));
  os << "\n";
  auto latent_row = [&](const std::string& name) {
    std::vector<const TableRow*> cells;
    for (const auto& r : rows) {
      if (r.table == "latent" && r.response == name) cells.push_back(&r);
    }
    os << std::left << std::setw(14) << name << std::right;
    for (const auto* c : cells) os << std::setw(12) << fmt(c->estimate);
    os << "\n";
    if (doc.inference) {
      os << std::left << std::setw(14) << "  se" << std::right;
      for (const auto* c : cells) os << std::setw(12) << (c->wald ? "(" + fmt(c->wald->se) + ")" : "--");
      os << "\n";
    }
  };
  for (int dim = 0; dim < map.n_latent_dims(); ++dim) {
    const std::string name = map.latent_dim_name(dim);
    latent_row(name);
    if (doc.inference && K > 1) {
      os << std::left << std::setw(14) << "  p vs class 1" << std::right << std::setw(12) << "--";
      for (int k = 1; k < K; ++k) {
        double p = std::numeric_limits<double>::quiet_NaN();
        for (const auto& c : doc.inference->contrasts) {
          if (c.dim == dim && c.k == k) p = c.wald.p;
        }
        os << std::setw(12) << fmt(p);
      }
      os << "\n";
    }
  }
  latent_row("pi");
  return os.str();
}

// ---------------------------------------------------------------------------
// Files

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  namespace fs = std::filesystem;
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  const fs::path tmp = dir / ("." + path.filename().string() + ".tmp" + std::to_string(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw DataError("write to '" + tmp.string() + "' failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw DataError("cannot replace '" + path.string() + "'");
  }
}

void write_results(const ResultsDocument& doc, const std::filesystem::path& path,
                   ResultsFormat format) {
  if (format == ResultsFormat::json) {
    write_file_atomic(path, results_to_json(doc).dump(2) + "\n");
  } else {
    write_file_atomic(path, coefficients_csv(doc));
  }
}

ResultsDocument read_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open results file '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("results file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return results_from_json(j);
}

}  // namespace mixsem
