#include "data_io_internal.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace mixsem {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// RFC 4180-style split: commas, optional double quotes with "" escapes.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

FactorSchema factor_from_json(const json& j, const FactorSchema& fallback) {
  FactorSchema f = fallback;
  if (j.is_array()) {
    f.labels = j.get<std::vector<std::string>>();
    f.codes.clear();
  } else if (j.is_object()) {
    f.labels = j.at("labels").get<std::vector<std::string>>();
    f.codes.clear();
    if (j.contains("codes")) {
      for (const auto& c : j.at("codes")) {
        f.codes.push_back(c.is_string() ? c.get<std::string>() : c.dump());
      }
    }
  } else {
    throw DataError("schema: a category entry must be a list of labels or an object");
  }
  if (!f.labels.empty() &&
      std::find(f.labels.begin(), f.labels.end(), f.reference) == f.labels.end()) {
    f.reference = f.labels.front();
  }
  return f;
}

json factor_to_json(const FactorSchema& f) {
  json j;
  j["labels"] = f.labels;
  if (!f.codes.empty()) j["codes"] = f.codes;
  return j;
}

void validate_factor(const FactorSchema& f, const std::string& name) {
  if (f.labels.size() < 2) throw DataError("schema: factor '" + name + "' needs at least two labels");
  std::set<std::string> seen(f.labels.begin(), f.labels.end());
  if (seen.size() != f.labels.size()) throw DataError("schema: factor '" + name + "' repeats a label");
  if (!f.codes.empty() && f.codes.size() != f.labels.size()) {
    throw DataError("schema: factor '" + name + "' codes must parallel its labels");
  }
  if (std::find(f.labels.begin(), f.labels.end(), f.reference) == f.labels.end()) {
    throw DataError("schema: reference '" + f.reference + "' is not a level of '" + name + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Schema

std::optional<int> FactorSchema::level_of(const std::string& value) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == value) return static_cast<int>(i);
  }
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] == value) return static_cast<int>(i);
  }
  return std::nullopt;
}

int FactorSchema::reference_level() const {
  const auto it = std::find(labels.begin(), labels.end(), reference);
  if (it == labels.end()) throw DataError("reference category '" + reference + "' not among labels");
  return static_cast<int>(it - labels.begin());
}

bool SchemaConfig::has_father() const {
  return columns.father_age.has_value();
}

void SchemaConfig::validate() const {
  validate_factor(citizenship, "citizenship");
  validate_factor(education, "education");
  validate_factor(marital, "marital");
  if (education.reference != education.labels.front()) {
    throw DataError("schema: the education reference must be its lowest level");
  }
  if (marital.labels.size() != 2) throw DataError("schema: marital must have exactly two labels");
  if (!(min_gestational_weeks > 0.0) || !(min_birthweight_kg > 0.0)) {
    throw DataError("schema: filter thresholds must be positive");
  }
  const int father_cols = columns.father_age.has_value() + columns.father_citizenship.has_value() +
                          columns.father_education.has_value();
  if (father_cols != 0 && father_cols != 3) {
    throw DataError("schema: father_age, father_citizenship and father_education go together");
  }
}

SchemaConfig SchemaConfig::from_json(const json& j) {
  SchemaConfig s;
  try {
    if (j.contains("columns")) {
      const auto& c = j.at("columns");
      auto get = [&](const char* key, std::string& dst) {
        if (c.contains(key)) dst = c.at(key).get<std::string>();
      };
      get("gestational_age", s.columns.gestational_age);
      get("birthweight", s.columns.birthweight);
      get("age", s.columns.age);
      get("citizenship", s.columns.citizenship);
      get("education", s.columns.education);
      get("marital", s.columns.marital);
      auto get_opt = [&](const char* key, std::optional<std::string>& dst) {
        if (c.contains(key) && !c.at(key).is_null()) dst = c.at(key).get<std::string>();
      };
      get_opt("father_age", s.columns.father_age);
      get_opt("father_citizenship", s.columns.father_citizenship);
      get_opt("father_education", s.columns.father_education);
    }
    if (j.contains("categories")) {
      const auto& c = j.at("categories");
      if (c.contains("citizenship")) s.citizenship = factor_from_json(c.at("citizenship"), s.citizenship);
      if (c.contains("education")) s.education = factor_from_json(c.at("education"), s.education);
      if (c.contains("marital")) s.marital = factor_from_json(c.at("marital"), s.marital);
    }
    if (j.contains("references")) {
      const auto& r = j.at("references");
      if (r.contains("citizenship")) s.citizenship.reference = r.at("citizenship").get<std::string>();
      if (r.contains("education")) s.education.reference = r.at("education").get<std::string>();
      if (r.contains("marital")) s.marital.reference = r.at("marital").get<std::string>();
    }
    if (j.contains("filters")) {
      const auto& f = j.at("filters");
      if (f.contains("min_gestational_weeks")) s.min_gestational_weeks = f.at("min_gestational_weeks").get<double>();
      if (f.contains("min_birthweight_kg")) s.min_birthweight_kg = f.at("min_birthweight_kg").get<double>();
    }
    if (j.contains("centering")) {
      const auto& c = j.at("centering");
      auto get = [&](const char* key, std::optional<double>& dst) {
        if (c.contains(key) && !c.at(key).is_null()) dst = c.at(key).get<double>();
      };
      get("age_mean", s.centering.age_mean);
      get("age_sq_mean", s.centering.age_sq_mean);
      get("father_age_mean", s.centering.father_age_mean);
      get("father_age_sq_mean", s.centering.father_age_sq_mean);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("schema: ") + e.what());
  }
  s.validate();
  return s;
}

json SchemaConfig::to_json() const {
  json j;
  j["columns"] = {{"gestational_age", columns.gestational_age},
                  {"birthweight", columns.birthweight},
                  {"age", columns.age},
                  {"citizenship", columns.citizenship},
                  {"education", columns.education},
                  {"marital", columns.marital}};
  if (has_father()) {
    j["columns"]["father_age"] = *columns.father_age;
    j["columns"]["father_citizenship"] = *columns.father_citizenship;
    j["columns"]["father_education"] = *columns.father_education;
  }
  j["categories"] = {{"citizenship", factor_to_json(citizenship)},
                     {"education", factor_to_json(education)},
                     {"marital", factor_to_json(marital)}};
  j["references"] = {{"citizenship", citizenship.reference},
                     {"education", education.reference},
                     {"marital", marital.reference}};
  j["filters"] = {{"min_gestational_weeks", min_gestational_weeks},
                  {"min_birthweight_kg", min_birthweight_kg}};
  j["centering"] = json::object();
  if (centering.age_mean) j["centering"]["age_mean"] = *centering.age_mean;
  if (centering.age_sq_mean) j["centering"]["age_sq_mean"] = *centering.age_sq_mean;
  if (centering.father_age_mean) j["centering"]["father_age_mean"] = *centering.father_age_mean;
  if (centering.father_age_sq_mean) j["centering"]["father_age_sq_mean"] = *centering.father_age_sq_mean;
  return j;
}

SchemaConfig SchemaConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("schema file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------
// CSV ingestion

LoadResult load_csv(std::istream& in, const SchemaConfig& schema) {
  schema.validate();
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
      header = split_csv_line(line);
      break;
    }
  }
  if (header.empty()) throw DataError("input has no header row");

  std::map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < header.size(); ++c) index.emplace(header[c], c);
  auto column = [&](const std::string& name) -> std::size_t {
    const auto it = index.find(name);
    if (it == index.end()) throw DataError("missing column '" + name + "'");
    return it->second;
  };
  const auto& cols = schema.columns;
  const std::size_t c_gest = column(cols.gestational_age);
  const std::size_t c_bw = column(cols.birthweight);
  const std::size_t c_age = column(cols.age);
  const std::size_t c_cit = column(cols.citizenship);
  const std::size_t c_edu = column(cols.education);
  const std::size_t c_mar = column(cols.marital);
  const bool father = schema.has_father();
  std::size_t c_fage = 0, c_fcit = 0, c_fedu = 0;
  if (father) {
    c_fage = column(*cols.father_age);
    c_fcit = column(*cols.father_citizenship);
    c_fedu = column(*cols.father_education);
  }
  const int marital_ref = schema.marital.reference_level();

  LoadResult res;
  RawDataset& d = res.data;
  IngestionReport& rep = res.report;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++rep.rows_read;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) {
      rep.errors.push_back({line_no, "", "expected " + std::to_string(header.size()) +
                                             " fields, found " + std::to_string(f.size())});
      continue;
    }
    std::vector<std::size_t> required = {c_gest, c_bw, c_age, c_cit, c_edu, c_mar};
    if (father) required.insert(required.end(), {c_fage, c_fcit, c_fedu});
    if (std::any_of(required.begin(), required.end(), [&](std::size_t c) {
          return f[c].empty() || f[c] == "NA";
        })) {
      ++rep.dropped_missing;
      continue;
    }
    bool ok = true;
    auto number = [&](std::size_t c) {
      auto v = parse_double(f[c]);
      if (!v) {
        rep.errors.push_back({line_no, header[c], "non-numeric value '" + f[c] + "'"});
        ok = false;
        return 0.0;
      }
      return *v;
    };
    auto level = [&](std::size_t c, const FactorSchema& fs) {
      auto v = fs.level_of(f[c]);
      if (!v) {
        rep.errors.push_back({line_no, header[c], "unmappable category '" + f[c] + "'"});
        ok = false;
        return 0;
      }
      return *v;
    };
    const double gest = number(c_gest);
    const double bw = number(c_bw);
    const double age = number(c_age);
    const int cit = level(c_cit, schema.citizenship);
    const int edu = level(c_edu, schema.education);
    const int mar = level(c_mar, schema.marital);
    double fage = 0.0;
    int fcit = 0, fedu = 0;
    if (father) {
      fage = number(c_fage);
      fcit = level(c_fcit, schema.citizenship);
      fedu = level(c_fedu, schema.education);
    }
    if (!ok) continue;
    if (gest < schema.min_gestational_weeks) {
      ++rep.dropped_gestational_age;
      continue;
    }
    if (bw < schema.min_birthweight_kg) {
      ++rep.dropped_birthweight;
      continue;
    }
    d.gestational_age.push_back(gest);
    d.birthweight.push_back(bw);
    d.age.push_back(age);
    d.citizenship.push_back(cit);
    d.education.push_back(edu + 1);
    d.marital.push_back(mar == marital_ref ? 0 : 1);
    if (father) {
      d.father_age.push_back(fage);
      d.father_citizenship.push_back(fcit);
      d.father_education.push_back(fedu + 1);
    }
    d.source_line.push_back(line_no);
  }
  rep.rows_kept = d.size();
  const std::size_t invalid = rep.errors.size() + rep.dropped_missing;
  if (rep.rows_read > 0 && 2 * invalid > rep.rows_read) {
    std::ostringstream os;
    os << invalid << " of " << rep.rows_read << " rows are invalid";
    if (!rep.errors.empty()) {
      const auto& e = rep.errors.front();
      os << " (first: line " << e.line << (e.column.empty() ? "" : ", column '" + e.column + "'")
         << ": " << e.message << ")";
    }
    throw DataError(os.str());
  }
  if (d.size() == 0) throw DataError("no valid records");
  return res;
}

LoadResult load_csv(const std::filesystem::path& path, const SchemaConfig& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path.string() + "'");
  return load_csv(in, schema);
}

// ---------------------------------------------------------------------------
// Encoding

namespace {

void require_all_levels(const std::vector<int>& values, int n_levels, int first,
                        const std::string& column, const std::vector<std::string>& labels) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_levels), 0);
  for (int v : values) {
    const int l = v - first;
    if (l >= 0 && l < n_levels) ++counts[static_cast<std::size_t>(l)];
  }
  for (int l = 0; l < n_levels; ++l) {
    if (counts[static_cast<std::size_t>(l)] == 0) {
      throw DataError("factor column '" + column + "' is constant in category '" +
                      labels[static_cast<std::size_t>(l)] + "' (no records); its dummy cannot be estimated");
    }
  }
}

struct AgeColumns {
  std::vector<double> centered;
  std::vector<double> centered_sq;
  double mean = 0.0;
  double sq_mean = 0.0;
};

AgeColumns center_age(const std::vector<double>& age, std::optional<double> mean,
                      std::optional<double> sq_mean) {
  AgeColumns a;
  const double n = static_cast<double>(age.size());
  a.mean = mean ? *mean : std::accumulate(age.begin(), age.end(), 0.0) / n;
  a.centered.resize(age.size());
  std::vector<double> sq(age.size());
  for (std::size_t i = 0; i < age.size(); ++i) {
    a.centered[i] = age[i] - a.mean;
    sq[i] = a.centered[i] * a.centered[i];
  }
  a.sq_mean = sq_mean ? *sq_mean : std::accumulate(sq.begin(), sq.end(), 0.0) / n;
  a.centered_sq.resize(age.size());
  for (std::size_t i = 0; i < age.size(); ++i) a.centered_sq[i] = sq[i] - a.sq_mean;
  return a;
}

std::optional<double> pick(const std::optional<double>& a, const std::optional<double>& b) {
  return a ? a : b;
}

}  // namespace

ModelSpec EncodedDesign::model_spec(int K) const {
  ModelSpec spec;
  spec.K = K;
  spec.J = static_cast<int>(dataset.meta().z1_labels.size());
  spec.d = static_cast<int>(dataset.y_dim());
  spec.x_dim = dataset.x_dim();
  // mother's block ends at the first father column
  Index n_mother = dataset.x_dim();
  for (Index c = 0; c < dataset.x_dim(); ++c) {
    if (dataset.meta().x[static_cast<std::size_t>(c)].covariate.rfind("father", 0) == 0) {
      n_mother = c;
      break;
    }
  }
  for (Index c = 0; c < n_mother; ++c) {
    spec.ordinal_x.push_back(c);
    spec.binary_x.push_back(c);
  }
  for (Index c = 0; c < dataset.x_dim(); ++c) spec.outcome_x.push_back(c);
  return spec;
}

EncodedDesign detail::encode_unchecked(const RawDataset& raw, const SchemaConfig& schema,
                                       const Centering& fixed) {
  schema.validate();
  const std::size_t n = raw.size();
  if (n == 0) throw DataError("no valid records");
  const bool father = raw.has_father();
  const int J = static_cast<int>(schema.education.labels.size());
  const int n_cit = static_cast<int>(schema.citizenship.labels.size());
  const int cit_ref = schema.citizenship.reference_level();
  Centering used;
  const AgeColumns age = center_age(raw.age, pick(fixed.age_mean, schema.centering.age_mean),
                                    pick(fixed.age_sq_mean, schema.centering.age_sq_mean));
  used.age_mean = age.mean;
  used.age_sq_mean = age.sq_mean;

  ColumnMetadata meta;
  meta.x.push_back({"age", ""});
  meta.x.push_back({"age^2", ""});
  std::vector<int> cit_levels;
  for (int l = 0; l < n_cit; ++l) {
    if (l == cit_ref) continue;
    cit_levels.push_back(l);
    meta.x.push_back({"citizenship", schema.citizenship.labels[static_cast<std::size_t>(l)]});
  }
  meta.x_references.push_back({"citizenship", schema.citizenship.reference});

  AgeColumns fage;
  if (father) {
    fage = center_age(raw.father_age, pick(fixed.father_age_mean, schema.centering.father_age_mean),
                      pick(fixed.father_age_sq_mean, schema.centering.father_age_sq_mean));
    used.father_age_mean = fage.mean;
    used.father_age_sq_mean = fage.sq_mean;
    meta.x.push_back({"father age", ""});
    meta.x.push_back({"father age^2", ""});
    for (int l : cit_levels) {
      meta.x.push_back({"father citizenship", schema.citizenship.labels[static_cast<std::size_t>(l)]});
    }
    for (int j = 2; j <= J; ++j) {
      meta.x.push_back({"father education", schema.education.labels[static_cast<std::size_t>(j - 1)]});
    }
    meta.x_references.push_back({"father citizenship", schema.citizenship.reference});
    meta.x_references.push_back({"father education", schema.education.reference});
  }
  meta.z1_name = "education";
  meta.z1_labels = schema.education.labels;
  meta.z2_name = "marital";
  {
    const int ref = schema.marital.reference_level();
    meta.z2_labels = {schema.marital.labels[static_cast<std::size_t>(ref)],
                      schema.marital.labels[static_cast<std::size_t>(1 - ref)]};
  }
  meta.y_names = {"gestational age", "birthweight"};

  const Index p = static_cast<Index>(meta.x.size());
  const Index rows = static_cast<Index>(n);
  Matrix x = Matrix::Zero(rows, p);
  Matrix y(rows, 2);
  IntVector z1(rows), z2(rows);
  for (Index i = 0; i < rows; ++i) {
    const auto s = static_cast<std::size_t>(i);
    Index c = 0;
    x(i, c++) = age.centered[s];
    x(i, c++) = age.centered_sq[s];
    for (int l : cit_levels) x(i, c++) = raw.citizenship[s] == l ? 1.0 : 0.0;
    if (father) {
      x(i, c++) = fage.centered[s];
      x(i, c++) = fage.centered_sq[s];
      for (int l : cit_levels) x(i, c++) = raw.father_citizenship[s] == l ? 1.0 : 0.0;
      for (int j = 2; j <= J; ++j) x(i, c++) = raw.father_education[s] == j ? 1.0 : 0.0;
    }
    y(i, 0) = raw.gestational_age[s];
    y(i, 1) = raw.birthweight[s];
    z1(i) = raw.education[s];
    z2(i) = raw.marital[s];
  }
  return EncodedDesign{Dataset(std::move(x), std::move(z1), std::move(z2), std::move(y), std::move(meta)),
                       used, father};
}

EncodedDesign encode_design(const RawDataset& raw, const SchemaConfig& schema,
                            const Centering& fixed) {
  schema.validate();
  if (raw.size() == 0) throw DataError("no valid records");
  const bool father = raw.has_father();
  const int J = static_cast<int>(schema.education.labels.size());
  const int n_cit = static_cast<int>(schema.citizenship.labels.size());

  require_all_levels(raw.citizenship, n_cit, 0, schema.columns.citizenship, schema.citizenship.labels);
  require_all_levels(raw.education, J, 1, schema.columns.education, schema.education.labels);
  {
    const int ref = schema.marital.reference_level();
    std::vector<std::string> ordered = {schema.marital.labels[static_cast<std::size_t>(ref)],
                                        schema.marital.labels[static_cast<std::size_t>(1 - ref)]};
    require_all_levels(raw.marital, 2, 0, schema.columns.marital, ordered);
  }
  if (father) {
    require_all_levels(raw.father_citizenship, n_cit, 0, *schema.columns.father_citizenship,
                       schema.citizenship.labels);
    require_all_levels(raw.father_education, J, 1, *schema.columns.father_education,
                       schema.education.labels);
  }

  return detail::encode_unchecked(raw, schema, fixed);
}

std::vector<std::string> decode_citizenship(const EncodedDesign& design, const SchemaConfig& schema) {
  const auto& meta = design.dataset.meta();
  std::vector<std::string> out;
  for (Index i = 0; i < design.dataset.size(); ++i) {
    std::string label = schema.citizenship.reference;
    for (Index c = 0; c < design.dataset.x_dim(); ++c) {
      const auto& l = meta.x[static_cast<std::size_t>(c)];
      if (l.covariate == "citizenship" && design.dataset.x()(i, c) == 1.0) label = l.category;
    }
    out.push_back(label);
  }
  return out;
}

std::vector<std::string> decode_education(const EncodedDesign& design, const SchemaConfig& schema) {
  std::vector<std::string> out;
  for (Index i = 0; i < design.dataset.size(); ++i) {
    out.push_back(schema.education.labels[static_cast<std::size_t>(design.dataset.z1()(i) - 1)]);
  }
  return out;
}

std::vector<std::string> decode_marital(const EncodedDesign& design, const SchemaConfig& schema) {
  (void)schema;
  std::vector<std::string> out;
  const auto& labels = design.dataset.meta().z2_labels;
  for (Index i = 0; i < design.dataset.size(); ++i) {
    out.push_back(labels[static_cast<std::size_t>(design.dataset.z2()(i))]);
  }
  return out;
}

}  // namespace mixsem
