#ifndef HSTACK_IO_HPP
#define HSTACK_IO_HPP

#include "hstack/core.hpp"
#include "hstack/hier.hpp"
#include "hstack/optimize.hpp"
#include "hstack/psis.hpp"
#include "hstack/sampler.hpp"
#include "hstack/theory.hpp"

#include "json.hpp"

#include <optional>
#include <string>
#include <vector>

namespace hstack {

using Json = nlohmann::json;

/// Comma-separated table with a header row. Values stay text; `number`
/// parses one field and reports path:line on failure.
struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_of_row;  // 1-based source line

  double number(std::size_t row, std::size_t col) const;
};

/// Throws ValidationError("file_not_found") naming the path when it cannot be
/// opened and ValidationError("parse_error") on ragged rows.
CsvTable read_csv(const std::string& path);

/// `obs_id,M1,...,MK`; model column names are free.
LpdMatrix read_lpd_csv(const std::string& path, std::vector<std::string>* model_names = nullptr);
void write_lpd_csv(const std::string& path, const LpdMatrix& lpd,
                   const std::vector<std::string>& model_names = {});

/// `obs_id[,cell],f1,...,fM`. Cell labels are integers, relabeled to 0..J-1.
struct FeatureFile {
  std::vector<std::string> obs_ids;
  FeatureSet features;
  std::vector<std::string> feature_names;
};
FeatureFile read_features_csv(const std::string& path);
void write_features_csv(const std::string& path, const FeatureSet& feats,
                        const std::vector<std::string>& obs_ids);

/// S rows by n columns; the header holds observation ids.
LogLikDraws read_loglik_csv(const std::string& path);
void write_loglik_csv(const std::string& path, const LogLikDraws& draws);

/// Flat draw table `chain,draw,<param>...`.
struct DrawTable {
  std::vector<std::string> names;
  Matrix draws;  // S x dim
  int chains = 1;
};
void write_draws_csv(const std::string& path, const DrawTable& table);
DrawTable read_draws_csv(const std::string& path);

Json read_json(const std::string& path);
void write_json(const std::string& path, const Json& j);
void write_text(const std::string& path, const std::string& text);

Json matrix_to_json(const Matrix& m);  // array of rows
Matrix matrix_from_json(const Json& j);
Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j);

Json to_json(const LpdMatrix& lpd);
LpdMatrix lpd_from_json(const Json& j);
Json to_json(const FeatureSet& feats);
FeatureSet features_from_json(const Json& j);
Json to_json(const StackingFit& fit);
Json to_json(const Diagnostics& d);
Json to_json(const PriorSpec& p);
PriorSpec prior_from_json(const Json& j);
Json to_json(const SamplerConfig& c);
SamplerConfig sampler_from_json(const Json& j, SamplerConfig base = {});
Json to_json(const SeparationReport& r);
Json to_json(const TheoremReport& r);
Json to_json(const PsisLoo& r);
Json to_json(const StackedLoo& r);

/// Everything `fit --method hier` reads from its config file:
/// {"prior": {...}, "sampler": {...}, "diagnostics": {...},
///  "non_centered": bool, "group_of_feature": [1-based groups],
///  "time": {"t": [...], "horizon": T, "gamma": g} or {"pi": [...]}}.
/// Every key is optional.
struct FitConfig {
  PriorSpec prior;
  SamplerConfig sampler;
  HierOptions hier;
  std::vector<int> group_of_feature;  // 0-based
  std::optional<TimeWeights> time;
};
FitConfig fit_config_from_json(const Json& j);
Json to_json(const FitConfig& c);

}  // namespace hstack

#endif  // HSTACK_IO_HPP
