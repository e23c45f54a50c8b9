#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace dedupkit {

// One person instance: true class, predicted class and one label per
// sensitive attribute. Several records may share a sample id.
struct LabelRecord {
  std::string id;
  std::string true_class;
  std::string predicted;
  std::vector<std::string> attributes;
};

class LabeledTable {
 public:
  LabeledTable() = default;
  explicit LabeledTable(std::vector<std::string> attribute_names);

  void add(LabelRecord record);

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<LabelRecord>& records() const { return records_; }
  const std::vector<std::string>& attribute_names() const { return names_; }

  // Throws VocabularyError for unknown attributes.
  std::size_t attribute_index(const std::string& name) const;

  // Sorted distinct non-empty values of an attribute.
  std::vector<std::string> vocabulary(const std::string& attribute) const;
  std::vector<std::string> classes() const;

  // First record per id.
  const LabelRecord* find(const std::string& id) const;

  // Records whose id is in `ids`, original order preserved.
  LabeledTable restrict_to(const std::vector<std::string>& ids) const;

  // CSV with header: id, class, predicted, attr1, attr2, ...
  static LabeledTable read_csv(const std::filesystem::path& path);
  static LabeledTable parse_csv(const std::string& text);
  void write_csv(const std::filesystem::path& path) const;
  std::string to_csv() const;

 private:
  void index_record(std::size_t i);

  std::vector<std::string> names_;
  std::vector<LabelRecord> records_;
  std::unordered_map<std::string, std::size_t> first_by_id_;
};

// Relabels raw attribute values (e.g. ages) into coarser groups. Exact
// string matches win; otherwise numeric values fall into half-open ranges
// [lo, hi).
struct LabelMapping {
  std::string attribute;
  std::map<std::string, std::string> exact;
  struct Range {
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    std::string label;
  };
  std::vector<Range> ranges;

  std::string map_value(const std::string& raw) const;
  // Throws VocabularyError for values neither matched nor in a range.
  void apply(LabeledTable& table) const;

  static LabelMapping from_json_file(const std::filesystem::path& path);
  static LabelMapping from_json_text(const std::string& text);
  // younger 0-19, middle 20-49, older 50+ (including the 9 FairFace age
  // buckets).
  static LabelMapping default_age_bins(const std::string& attribute = "age");
};

}  // namespace dedupkit
