#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "triage/context.hpp"
#include "triage/embeddings.hpp"
#include "triage/io.hpp"
#include "triage/routing.hpp"
#include "triage/tabular.hpp"

namespace triage::corpus {

enum class Role { tenant, prospective_tenant, owner, agent, photographer };

std::string to_string(Role role);

struct ReasonSpec {
  std::string code;
  std::string department;
  Role role = Role::tenant;
  int group = 0;                       // reasons sharing a group share ambiguous templates
  std::vector<std::string> templates;  // unique to this reason
};

struct Catalog {
  std::vector<ReasonSpec> reasons;  // listed from most to least frequent
  std::vector<std::vector<std::string>> group_templates;
  std::vector<std::string> departments;

  const ReasonSpec& find(const std::string& code) const;
  std::size_t index_of(const std::string& code) const;
  routing::DepartmentMap department_map() const;
  routing::HeuristicLookup heuristic_lookup() const;
};

/// 24 reasons in 8 ambiguity groups of 3 over 6 departments.
const Catalog& default_catalog();

/// Representative user-relationship features carried by every ticket.
tabular::FeatureSchema profile_schema();

/// Type of the automatic message a department sends ("visit_reminder" for visits, ...).
std::string auto_message_type(const std::string& department);

struct CorpusSpec {
  std::uint64_t seed = 42;
  std::size_t size = 5000;
  double ambiguity_rate = 0.3;
  double power_law_exponent = 1.0;
  double label_noise = 0.03;
  double role_noise = 0.05;
  double auto_message_match = 0.6;  // chance the last automatic message came from the right department
  std::size_t context_size = 4000;
  double no_context_rate = 0.3;
  double low_value_rate = 0.12;
  double returning_client_rate = 0.08;
  double context_label_noise = 0.02;
  std::size_t embedding_dimension = 16;
  double embedding_noise = 0.35;

  void validate(const Catalog& catalog) const;
};

struct Ticket {
  std::string id;
  std::int64_t timestamp = 0;  // seconds since the Unix epoch
  std::string text;
  tabular::TabularRecord profile;
  std::string reason;
  std::string department;

  bool operator==(const Ticket&) const = default;
};

struct Corpus {
  std::vector<Ticket> tickets;
  std::vector<context::ContextAnnotation> context;
  /// Reason centroid plus noise; tickets with ambiguous text get their group centroid.
  reason::EmbeddingTable planted;
  /// One-hot of the labeled reason over the catalog.
  reason::EmbeddingTable oracle;
};

/// Deterministic for a given spec; the only randomness source is triage::Rng.
Corpus generate(const CorpusSpec& spec, const Catalog& catalog = default_catalog());

/// Tab-separated with a header row. Columns, in order:
///   id, timestamp, reason, department, text (escaped), profile (compact JSON object)
void write_dataset(std::span<const Ticket> tickets, const std::filesystem::path& path);

/// Streams tickets from a dataset file; memory use does not grow with the file.
class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& path);

  /// Empty at end of file. Malformed rows throw malformed_row naming the line.
  std::optional<Ticket> next();

 private:
  io::LineReader lines_;
};

std::vector<Ticket> read_dataset(const std::filesystem::path& path);

/// Writes dataset.tsv, context.tsv, embeddings_planted.bin, embeddings_oracle.bin,
/// plus the matching departments/schema/heuristic config files.
void write_corpus(const Corpus& corpus, const Catalog& catalog, const std::filesystem::path& dir);

}  // namespace triage::corpus
