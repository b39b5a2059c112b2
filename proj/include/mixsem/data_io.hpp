#pragma once

// Ingestion of analysis-ready birth-record extracts, design encoding,
// synthetic data generation and results (de)serialization.

#include "mixsem/em.hpp"
#include "mixsem/inference.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mixsem {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Schema

struct FactorSchema {
  std::vector<std::string> labels;  // level order; for education this is the ordinal order
  std::vector<std::string> codes;   // optional alternate spellings, parallel to labels
  std::string reference;

  // 0-based level of a raw field value, matched against labels then codes.
  std::optional<int> level_of(const std::string& value) const;
  int reference_level() const;
};

struct Centering {
  std::optional<double> age_mean;
  std::optional<double> age_sq_mean;
  std::optional<double> father_age_mean;
  std::optional<double> father_age_sq_mean;
};

struct SchemaConfig {
  struct Columns {
    std::string gestational_age = "gestational_age";
    std::string birthweight = "birthweight";
    std::string age = "age";
    std::string citizenship = "citizenship";
    std::string education = "education";
    std::string marital = "marital";
    std::optional<std::string> father_age;
    std::optional<std::string> father_citizenship;
    std::optional<std::string> father_education;
  } columns;

  FactorSchema citizenship{{"Italian", "east-Europe", "other"}, {}, "Italian"};
  FactorSchema education{
      {"middle school or less", "high school", "degree or above"}, {}, "middle school or less"};
  FactorSchema marital{{"married", "not married"}, {}, "married"};

  double min_gestational_weeks = 23.0;
  double min_birthweight_kg = 0.5;
  Centering centering;  // unset fields are computed in-sample

  bool has_father() const;
  void validate() const;

  static SchemaConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static SchemaConfig load(const std::filesystem::path& path);
};

// ---------------------------------------------------------------------------
// Raw records

struct RawDataset {
  std::vector<double> gestational_age;  // weeks
  std::vector<double> birthweight;      // kg
  std::vector<double> age;
  std::vector<int> citizenship;  // 0-based level
  std::vector<int> education;    // 1..J
  std::vector<int> marital;      // 0 = reference, 1 = other
  std::vector<double> father_age;
  std::vector<int> father_citizenship;
  std::vector<int> father_education;  // 1..J
  std::vector<std::size_t> source_line;  // 1-based line in the input file

  std::size_t size() const { return gestational_age.size(); }
  bool has_father() const { return !father_age.empty(); }
};

struct RowError {
  std::size_t line = 0;
  std::string column;
  std::string message;
};

struct IngestionReport {
  std::size_t rows_read = 0;
  std::size_t rows_kept = 0;
  std::size_t dropped_gestational_age = 0;
  std::size_t dropped_birthweight = 0;
  std::size_t dropped_missing = 0;
  std::vector<RowError> errors;  // rows dropped for unparseable values
};

struct LoadResult {
  RawDataset data;
  IngestionReport report;
};

LoadResult load_csv(std::istream& in, const SchemaConfig& schema);
LoadResult load_csv(const std::filesystem::path& path, const SchemaConfig& schema);

// ---------------------------------------------------------------------------
// Design encoding

struct EncodedDesign {
  Dataset dataset;
  Centering centering;  // constants actually used
  bool has_father = false;

  // Mother's covariates (centered age, centered squared age, citizenship
  // dummies) in every equation; father's covariates only in the outcome
  // equation; both causes enter downstream equations.
  ModelSpec model_spec(int K) const;
};

// x columns: age, age^2, citizenship dummies, then (if present) father's
// age, age^2, citizenship and education dummies. age^2 is the square of the
// centered age, itself centered. Throws DataError naming any factor with an
// empty level.
EncodedDesign encode_design(const RawDataset& raw, const SchemaConfig& schema,
                            const Centering& fixed = {});

// Category labels recovered from the encoded dataset.
std::vector<std::string> decode_citizenship(const EncodedDesign& design, const SchemaConfig& schema);
std::vector<std::string> decode_education(const EncodedDesign& design, const SchemaConfig& schema);
std::vector<std::string> decode_marital(const EncodedDesign& design, const SchemaConfig& schema);

// ---------------------------------------------------------------------------
// Simulation

struct SimulatedData {
  RawDataset raw;
  EncodedDesign design;
  std::vector<int> true_class;  // 1-based
};

// Forward-samples the model. Covariates are resampled from `covariates` when
// given, otherwise drawn from the synthetic generator (age ~ rounded
// N(30, 5.3) on [15, 50]; citizenship 80/13/7%).
SimulatedData simulate(const ParameterSet& theta, const ModelSpec& spec,
                       const SchemaConfig& schema, std::size_t n, std::uint64_t seed,
                       const RawDataset* covariates = nullptr);

// Writes the raw records in the schema's CSV layout plus `_true_class`.
void write_simulated_csv(std::ostream& out, const SimulatedData& sim, const SchemaConfig& schema);

// ---------------------------------------------------------------------------
// Results

inline constexpr int kResultsSchemaVersion = 1;

struct ResultsDocument {
  ModelSpec spec;
  ColumnMetadata columns;
  Centering centering;
  ParameterSet theta;
  FitResult fit;
  EmConfig config;
  Index n = 0;
  std::optional<InferenceReport> inference;

  int npar() const { return count_parameters(spec); }
  double bic_value() const { return bic(fit.loglik, npar(), n); }
};

enum class ResultsFormat { json, csv };

nlohmann::json results_to_json(const ResultsDocument& doc);
ResultsDocument results_from_json(const nlohmann::json& j);

// One row of a Table 4/5/6-shaped coefficient table.
struct TableRow {
  std::string table;     // ordinal | binary | outcome | latent
  std::string response;  // outcome name, or latent dimension
  std::string covariate;
  std::string category;  // "--" when not a factor level
  double estimate = 0.0;
  std::optional<WaldRow> wald;  // empty for reference and fixed rows
};

std::vector<TableRow> coefficient_rows(const ResultsDocument& doc);

// Plain-text tables for the ordinal, binary, outcome and latent equations.
std::string render_report(const ResultsDocument& doc);

// json: the full document. csv: coefficient_rows as
// table,response,covariate,category,estimate,se,t,p.
void write_results(const ResultsDocument& doc, const std::filesystem::path& path,
                   ResultsFormat format);
std::string coefficients_csv(const ResultsDocument& doc);
// Reads a JSON results document; throws DataError on version or shape errors.
ResultsDocument read_results(const std::filesystem::path& path);

// Writes via a temporary file and rename so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace mixsem
