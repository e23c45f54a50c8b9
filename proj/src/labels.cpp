#include "dedupkit/labels.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <unordered_set>

#include "dedupkit/error.hpp"

namespace dedupkit {

namespace {

std::vector<std::vector<std::string>> parse_csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_row();
    } else if (c == '\r') {
      // tolerated before \n
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  if (quoted) throw FormatError("unterminated quoted CSV field");
  if (field_started || !row.empty()) end_row();
  return rows;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

bool parse_number(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

}  // namespace

LabeledTable::LabeledTable(std::vector<std::string> attribute_names)
    : names_(std::move(attribute_names)) {}

void LabeledTable::add(LabelRecord record) {
  if (record.attributes.size() != names_.size()) {
    throw ValidationError("record '" + record.id + "' has " +
                          std::to_string(record.attributes.size()) +
                          " attribute labels, table declares " +
                          std::to_string(names_.size()));
  }
  records_.push_back(std::move(record));
  index_record(records_.size() - 1);
}

void LabeledTable::index_record(std::size_t i) {
  first_by_id_.try_emplace(records_[i].id, i);
}

std::size_t LabeledTable::attribute_index(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) {
    throw VocabularyError("unknown attribute '" + name + "'");
  }
  return static_cast<std::size_t>(it - names_.begin());
}

std::vector<std::string> LabeledTable::vocabulary(
    const std::string& attribute) const {
  const std::size_t a = attribute_index(attribute);
  std::set<std::string> values;
  for (const auto& r : records_) {
    if (!r.attributes[a].empty()) values.insert(r.attributes[a]);
  }
  return {values.begin(), values.end()};
}

std::vector<std::string> LabeledTable::classes() const {
  std::set<std::string> values;
  for (const auto& r : records_) {
    if (!r.true_class.empty()) values.insert(r.true_class);
  }
  return {values.begin(), values.end()};
}

const LabelRecord* LabeledTable::find(const std::string& id) const {
  auto it = first_by_id_.find(id);
  return it == first_by_id_.end() ? nullptr : &records_[it->second];
}

LabeledTable LabeledTable::restrict_to(
    const std::vector<std::string>& ids) const {
  std::unordered_set<std::string> keep(ids.begin(), ids.end());
  LabeledTable out(names_);
  for (const auto& r : records_) {
    if (keep.contains(r.id)) out.add(r);
  }
  return out;
}

LabeledTable LabeledTable::parse_csv(const std::string& text) {
  auto rows = parse_csv_rows(text);
  if (rows.empty()) throw ValidationError("label table has no header");
  const auto& header = rows.front();
  if (header.size() < 3 || header[0] != "id" || header[1] != "class" ||
      header[2] != "predicted") {
    throw FormatError("label CSV header must start with id,class,predicted");
  }
  LabeledTable table(std::vector<std::string>(header.begin() + 3, header.end()));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    auto& row = rows[i];
    if (row.size() != header.size()) {
      throw FormatError("label CSV row " + std::to_string(i + 1) + " has " +
                        std::to_string(row.size()) + " fields, expected " +
                        std::to_string(header.size()));
    }
    LabelRecord r;
    r.id = std::move(row[0]);
    r.true_class = std::move(row[1]);
    r.predicted = std::move(row[2]);
    r.attributes.assign(std::make_move_iterator(row.begin() + 3),
                        std::make_move_iterator(row.end()));
    table.add(std::move(r));
  }
  return table;
}

LabeledTable LabeledTable::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open label table '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

std::string LabeledTable::to_csv() const {
  std::string out = "id,class,predicted";
  for (const auto& n : names_) out += "," + csv_escape(n);
  out += "\n";
  for (const auto& r : records_) {
    out += csv_escape(r.id) + "," + csv_escape(r.true_class) + "," +
           csv_escape(r.predicted);
    for (const auto& a : r.attributes) out += "," + csv_escape(a);
    out += "\n";
  }
  return out;
}

void LabeledTable::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << to_csv();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string LabelMapping::map_value(const std::string& raw) const {
  if (auto it = exact.find(raw); it != exact.end()) return it->second;
  double v = 0.0;
  if (parse_number(raw, v)) {
    for (const auto& r : ranges) {
      if (v >= r.lo && v < r.hi) return r.label;
    }
  }
  throw VocabularyError("value '" + raw + "' of attribute '" + attribute +
                        "' has no mapping");
}

void LabelMapping::apply(LabeledTable& table) const {
  const std::size_t a = table.attribute_index(attribute);
  LabeledTable mapped(table.attribute_names());
  for (auto r : table.records()) {
    if (!r.attributes[a].empty()) r.attributes[a] = map_value(r.attributes[a]);
    mapped.add(std::move(r));
  }
  table = std::move(mapped);
}

LabelMapping LabelMapping::from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("label mapping is not valid JSON: ") +
                      e.what());
  }
  LabelMapping m;
  try {
    m.attribute = j.at("attribute").get<std::string>();
    if (j.contains("exact")) {
      m.exact = j.at("exact").get<std::map<std::string, std::string>>();
    }
    if (j.contains("ranges")) {
      for (const auto& r : j.at("ranges")) {
        Range range;
        range.lo = r.at("lo").get<double>();
        range.hi = r.contains("hi") && !r.at("hi").is_null()
                       ? r.at("hi").get<double>()
                       : std::numeric_limits<double>::infinity();
        range.label = r.at("label").get<std::string>();
        m.ranges.push_back(std::move(range));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("label mapping: ") + e.what());
  }
  return m;
}

LabelMapping LabelMapping::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open label mapping '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

LabelMapping LabelMapping::default_age_bins(const std::string& attribute) {
  LabelMapping m;
  m.attribute = attribute;
  m.exact = {{"0-2", "younger"},   {"3-9", "younger"},
             {"10-19", "younger"}, {"20-29", "middle"},
             {"30-39", "middle"},  {"40-49", "middle"},
             {"50-59", "older"},   {"60-69", "older"},
             {"more than 70", "older"}};
  m.ranges = {{0.0, 20.0, "younger"},
              {20.0, 50.0, "middle"},
              {50.0, std::numeric_limits<double>::infinity(), "older"}};
  return m;
}

}  // namespace dedupkit
