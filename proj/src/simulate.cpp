#include "data_io_internal.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

namespace mixsem {

namespace {

int draw_discrete(std::mt19937_64& rng, const std::vector<double>& probs) {
  std::discrete_distribution<int> dist(probs.begin(), probs.end());
  return dist(rng);
}

std::vector<double> citizenship_probs(std::size_t levels, int reference) {
  if (levels == 3 && reference == 0) return {0.801, 0.126, 0.073};
  std::vector<double> p(levels, 0.2 / static_cast<double>(levels - 1));
  p[static_cast<std::size_t>(reference)] = 0.8;
  return p;
}

double draw_age(std::mt19937_64& rng, double mean, double sd, double lo, double hi) {
  std::normal_distribution<double> dist(mean, sd);
  return std::clamp(std::round(dist(rng)), lo, hi);
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

SimulatedData simulate(const ParameterSet& theta, const ModelSpec& spec,
                       const SchemaConfig& schema, std::size_t n, std::uint64_t seed,
                       const RawDataset* covariates) {
  if (n == 0) throw std::invalid_argument("sample size must be positive");
  spec.validate();
  validate_parameters(theta, spec);
  schema.validate();
  std::mt19937_64 rng(seed);

  const bool father = covariates ? covariates->has_father() : schema.has_father();
  const int J = static_cast<int>(schema.education.labels.size());
  if (J != spec.J) throw DimensionMismatch("schema education levels do not match the model's J");
  const auto n_cit = schema.citizenship.labels.size();
  const int cit_ref = schema.citizenship.reference_level();

  RawDataset raw;
  if (covariates) {
    if (covariates->size() == 0) throw DataError("covariate pool is empty");
    std::uniform_int_distribution<std::size_t> pick(0, covariates->size() - 1);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t r = pick(rng);
      raw.age.push_back(covariates->age[r]);
      raw.citizenship.push_back(covariates->citizenship[r]);
      if (father) {
        raw.father_age.push_back(covariates->father_age[r]);
        raw.father_citizenship.push_back(covariates->father_citizenship[r]);
        raw.father_education.push_back(covariates->father_education[r]);
      }
    }
  } else {
    const auto cit_p = citizenship_probs(n_cit, cit_ref);
    std::vector<double> edu_p(static_cast<std::size_t>(J), 1.0);
    std::bernoulli_distribution same_cit(0.9);
    for (std::size_t i = 0; i < n; ++i) {
      const double age = draw_age(rng, 30.0, 5.3, 15.0, 50.0);
      const int cit = draw_discrete(rng, cit_p);
      raw.age.push_back(age);
      raw.citizenship.push_back(cit);
      if (father) {
        raw.father_age.push_back(draw_age(rng, age + 3.0, 3.0, 15.0, 70.0));
        raw.father_citizenship.push_back(same_cit(rng) ? cit : draw_discrete(rng, cit_p));
        raw.father_education.push_back(draw_discrete(rng, edu_p) + 1);
      }
    }
  }
  // placeholders so the covariates can be encoded before the causes are drawn
  raw.education.assign(n, 1);
  raw.marital.assign(n, 0);
  raw.gestational_age.assign(n, 0.0);
  raw.birthweight.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) raw.source_line.push_back(i + 2);

  const EncodedDesign covs = detail::encode_unchecked(raw, schema, schema.centering);
  if (covs.dataset.x_dim() != spec.x_dim) {
    throw DimensionMismatch("encoded covariates have " + std::to_string(covs.dataset.x_dim()) +
                            " columns, the model expects " + std::to_string(spec.x_dim));
  }
  if (spec.d != 2) throw DimensionMismatch("the record layout holds two outcomes");

  const auto& lat = theta.latent;
  const std::vector<double> pi(lat.pi.data(), lat.pi.data() + lat.pi.size());
  const Eigen::LLT<Matrix> chol(theta.gaussian.Sigma);
  const Matrix L = chol.matrixL();
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<int> true_class(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector x = covs.dataset.x().row(static_cast<Index>(i)).transpose();
    const int k = draw_discrete(rng, pi);
    true_class[i] = k + 1;

    const Vector p1 = ordinal_category_probs(select_columns(x, spec.ordinal_x), lat.xi1(k),
                                             theta.ordinal);
    const int z1 = draw_discrete(rng, std::vector<double>(p1.data(), p1.data() + p1.size())) + 1;
    const double p2 = binary_prob(select_columns(x, spec.binary_x), spec.binary_uses_z1 ? z1 : 1,
                                  lat.xi2(k), theta.binary);
    const int z2 = unif(rng) < p2 ? 1 : 0;

    const auto& g = theta.gaussian;
    Vector e(spec.d);
    for (Index r = 0; r < spec.d; ++r) e(r) = std_normal(rng);
    const Vector mean = g.nu + lat.zeta.row(k).transpose() +
                        g.Phi * select_columns(x, spec.outcome_x) +
                        g.Psi * outcome_cause_dummies(spec, z1, z2);
    const Vector y = mean + L * e;

    raw.education[i] = z1;
    raw.marital[i] = z2;
    raw.gestational_age[i] = y(0);
    raw.birthweight[i] = y(1);
  }
  EncodedDesign design = detail::encode_unchecked(raw, schema, schema.centering);
  return SimulatedData{std::move(raw), std::move(design), std::move(true_class)};
}

void write_simulated_csv(std::ostream& out, const SimulatedData& sim, const SchemaConfig& schema) {
  const auto& c = schema.columns;
  const auto& raw = sim.raw;
  const bool father = raw.has_father();
  out << csv_field(c.gestational_age) << ',' << csv_field(c.birthweight) << ',' << csv_field(c.age)
      << ',' << csv_field(c.citizenship) << ',' << csv_field(c.education) << ','
      << csv_field(c.marital);
  if (father) {
    out << ',' << csv_field(c.father_age.value_or("father_age")) << ','
        << csv_field(c.father_citizenship.value_or("father_citizenship")) << ','
        << csv_field(c.father_education.value_or("father_education"));
  }
  out << ",_true_class\n";

  const int mar_ref = schema.marital.reference_level();
  const auto label = [](const FactorSchema& f, int level) {
    return csv_field(f.labels[static_cast<std::size_t>(level)]);
  };
  std::ostringstream line;
  line << std::setprecision(10);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    line.str("");
    line << raw.gestational_age[i] << ',' << raw.birthweight[i] << ',' << raw.age[i] << ','
         << label(schema.citizenship, raw.citizenship[i]) << ','
         << label(schema.education, raw.education[i] - 1) << ','
         << label(schema.marital, raw.marital[i] == 0 ? mar_ref : 1 - mar_ref);
    if (father) {
      line << ',' << raw.father_age[i] << ',' << label(schema.citizenship, raw.father_citizenship[i])
           << ',' << label(schema.education, raw.father_education[i] - 1);
    }
    line << ',' << (i < sim.true_class.size() ? sim.true_class[i] : 0) << '\n';
    out << line.str();
  }
}

}  // namespace mixsem
