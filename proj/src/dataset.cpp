#include "kteval/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "kteval/util.hpp"

namespace kteval {
namespace {

using ordered_json = nlohmann::ordered_json;

// Minimal CSV row splitter with double-quote support.
std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(current);
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(current);
  return fields;
}

std::optional<int> parse_correct_label(const std::string& raw) {
  const std::string value = to_lower(trim(raw));
  if (value == "1" || value == "true") {
    return 1;
  }
  if (value == "0" || value == "false") {
    return 0;
  }
  return std::nullopt;
}

// Numeric-aware comparison so order_id/timestamp columns sort as numbers
// when they are numbers and as strings otherwise.
bool time_key_less(const std::string& a, const std::string& b) {
  const bool a_num = !a.empty() && a.find_first_not_of("0123456789") == std::string::npos;
  const bool b_num = !b.empty() && b.find_first_not_of("0123456789") == std::string::npos;
  if (a_num && b_num) {
    if (a.size() != b.size()) {
      return a.size() < b.size();
    }
  }
  return a < b;
}

struct RawRow {
  std::string learner_id;
  std::string time_key;
  std::size_t file_order = 0;  // tie-break, preserves source order
  Interaction interaction;
};

std::vector<std::string> parse_kc_list(const std::string& joined) {
  std::vector<std::string> kcs;
  for (const std::string& part : split(joined, ';')) {
    std::string kc = trim(part);
    if (!kc.empty()) {
      kcs.push_back(std::move(kc));
    }
  }
  return kcs;
}

std::optional<std::string> parse_option_field(const std::string& raw) {
  std::string value = trim(raw);
  if (value.empty() || to_lower(value) == "nan") {
    return std::nullopt;
  }
  return value;
}

std::vector<std::string> data_lines(const std::filesystem::path& path) {
  std::vector<std::string> lines = read_lines(path);
  if (!lines.empty()) {
    lines.erase(lines.begin());  // header row
  }
  return lines;
}

void require_columns(const std::vector<std::string>& fields, std::size_t expected,
                     const std::filesystem::path& source, std::size_t line_no) {
  if (fields.size() < expected) {
    throw DatasetError("malformed row in " + source.string() + " line " +
                       std::to_string(line_no + 2) + ": expected " + std::to_string(expected) +
                       " columns, got " + std::to_string(fields.size()));
  }
}

// assist09: order_id, user_id, problem_id, skill_id, answer_id, correct.
// Rows sharing (user_id, order_id, problem_id) are one interaction listed
// once per skill; they merge into a single interaction with the union of
// skills, counted in merged_duplicates.
void parse_assist09(const std::filesystem::path& source, std::vector<RawRow>& rows,
                    ParseResult& result) {
  const std::vector<std::string> lines = data_lines(source);
  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> row_index;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) {
      continue;
    }
    const auto fields = split_csv_row(lines[i]);
    require_columns(fields, 6, source, i);
    const auto correct = parse_correct_label(fields[5]);
    if (!correct) {
      ++result.dropped_rows;
      continue;
    }
    RawRow row;
    row.learner_id = trim(fields[1]);
    row.time_key = trim(fields[0]);
    row.file_order = i;
    row.interaction.question_id = trim(fields[2]);
    row.interaction.kc_ids = parse_kc_list(fields[3]);
    row.interaction.selected_option = parse_option_field(fields[4]);
    row.interaction.correct = *correct;

    const auto key = std::make_tuple(row.learner_id, row.time_key, row.interaction.question_id);
    const auto found = row_index.find(key);
    if (found != row_index.end()) {
      Interaction& existing = rows[found->second].interaction;
      for (const std::string& kc : row.interaction.kc_ids) {
        if (std::find(existing.kc_ids.begin(), existing.kc_ids.end(), kc) ==
            existing.kc_ids.end()) {
          existing.kc_ids.push_back(kc);
        }
      }
      ++result.merged_duplicates;
      continue;
    }
    row_index.emplace(key, rows.size());
    rows.push_back(std::move(row));
  }
}

// dbekt22: student_id, question_id, skill_ids (semicolon-joined), option_id,
// is_correct, timestamp.
void parse_dbekt22(const std::filesystem::path& source, std::vector<RawRow>& rows,
                   ParseResult& result) {
  const std::vector<std::string> lines = data_lines(source);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) {
      continue;
    }
    const auto fields = split_csv_row(lines[i]);
    require_columns(fields, 6, source, i);
    const auto correct = parse_correct_label(fields[4]);
    if (!correct) {
      ++result.dropped_rows;
      continue;
    }
    RawRow row;
    row.learner_id = trim(fields[0]);
    row.time_key = trim(fields[5]);
    row.file_order = i;
    row.interaction.question_id = trim(fields[1]);
    row.interaction.kc_ids = parse_kc_list(fields[2]);
    row.interaction.selected_option = parse_option_field(fields[3]);
    row.interaction.correct = *correct;
    rows.push_back(std::move(row));
  }
}

// ednet: a directory of per-learner CSV files named <learner_id>.csv with
// columns timestamp, question_id, tags (semicolon-joined), user_answer,
// correct.
void parse_ednet(const std::filesystem::path& source, std::vector<RawRow>& rows,
                 ParseResult& result) {
  if (!std::filesystem::is_directory(source)) {
    throw DatasetError("ednet source must be a directory of per-learner CSV files: " +
                       source.string());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(source)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    const std::string learner_id = file.stem().string();
    const std::vector<std::string> lines = data_lines(file);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (trim(lines[i]).empty()) {
        continue;
      }
      const auto fields = split_csv_row(lines[i]);
      require_columns(fields, 5, file, i);
      const auto correct = parse_correct_label(fields[4]);
      if (!correct) {
        ++result.dropped_rows;
        continue;
      }
      RawRow row;
      row.learner_id = learner_id;
      row.time_key = trim(fields[0]);
      row.file_order = i;
      row.interaction.question_id = trim(fields[1]);
      row.interaction.kc_ids = parse_kc_list(fields[2]);
      row.interaction.selected_option = parse_option_field(fields[3]);
      row.interaction.correct = *correct;
      rows.push_back(std::move(row));
    }
  }
}

std::vector<LearnerSequence> assemble_sequences(std::vector<RawRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const RawRow& a, const RawRow& b) {
    if (a.learner_id != b.learner_id) {
      return a.learner_id < b.learner_id;
    }
    if (a.time_key != b.time_key) {
      return time_key_less(a.time_key, b.time_key);
    }
    return a.file_order < b.file_order;
  });
  std::vector<LearnerSequence> sequences;
  for (RawRow& row : rows) {
    if (sequences.empty() || sequences.back().learner_id != row.learner_id) {
      sequences.push_back(LearnerSequence{row.learner_id, {}});
    }
    sequences.back().interactions.push_back(std::move(row.interaction));
  }
  return sequences;
}

ordered_json interaction_to_json(const Interaction& interaction) {
  ordered_json doc;
  doc["q"] = interaction.question_id;
  doc["kcs"] = interaction.kc_ids;
  if (interaction.selected_option) {
    doc["opt"] = *interaction.selected_option;
  } else {
    doc["opt"] = nullptr;
  }
  doc["y"] = interaction.correct;
  return doc;
}

Interaction interaction_from_json(const nlohmann::json& doc) {
  Interaction interaction;
  interaction.question_id = doc.at("q").get<std::string>();
  interaction.kc_ids = doc.at("kcs").get<std::vector<std::string>>();
  if (!doc.at("opt").is_null()) {
    interaction.selected_option = doc.at("opt").get<std::string>();
  }
  interaction.correct = doc.at("y").get<int>();
  return interaction;
}

}  // namespace

void OptionWeightTable::set(const std::string& question_id, const std::string& option,
                            double frequency) {
  frequencies_[{question_id, option}] = frequency;
  seen_questions_[question_id] = true;
}

void OptionWeightTable::mark_question_seen(const std::string& question_id) {
  seen_questions_[question_id] = true;
}

bool OptionWeightTable::question_seen(const std::string& question_id) const {
  return seen_questions_.count(question_id) > 0;
}

std::optional<double> OptionWeightTable::lookup(const std::string& question_id,
                                                const std::string& option) const {
  if (!question_seen(question_id)) {
    return std::nullopt;
  }
  const auto found = frequencies_.find({question_id, option});
  if (found == frequencies_.end()) {
    return 0.0;  // question observed in training, this option never selected
  }
  return found->second;
}

DatasetFormat parse_dataset_format(const std::string& tag) {
  const std::string lowered = to_lower(trim(tag));
  if (lowered == "assist09") {
    return DatasetFormat::Assist09;
  }
  if (lowered == "dbekt22") {
    return DatasetFormat::Dbekt22;
  }
  if (lowered == "ednet") {
    return DatasetFormat::Ednet;
  }
  throw DatasetError("unknown dataset format tag: " + tag);
}

std::string dataset_format_name(DatasetFormat format) {
  switch (format) {
    case DatasetFormat::Assist09:
      return "assist09";
    case DatasetFormat::Dbekt22:
      return "dbekt22";
    case DatasetFormat::Ednet:
      return "ednet";
  }
  return "unknown";
}

ParseResult parse_dataset(DatasetFormat format, const std::filesystem::path& source) {
  if (!std::filesystem::exists(source)) {
    throw DatasetError("dataset source does not exist: " + source.string());
  }
  ParseResult result;
  std::vector<RawRow> rows;
  switch (format) {
    case DatasetFormat::Assist09:
      parse_assist09(source, rows, result);
      break;
    case DatasetFormat::Dbekt22:
      parse_dbekt22(source, rows, result);
      break;
    case DatasetFormat::Ednet:
      parse_ednet(source, rows, result);
      break;
  }
  result.sequences = assemble_sequences(rows);
  if (result.sequences.empty()) {
    throw DatasetError("no usable rows in dataset source: " + source.string());
  }
  return result;
}

std::pair<std::vector<LearnerSequence>, std::vector<LearnerSequence>> split_learners(
    const std::vector<LearnerSequence>& sequences, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw DatasetError("split ratio must be in (0, 1)");
  }
  if (sequences.size() < 2) {
    throw DatasetError("need at least 2 learners to split");
  }
  const std::size_t n = sequences.size();
  const std::size_t n_train =
      static_cast<std::size_t>(std::lround(ratio * static_cast<double>(n)));
  const std::vector<std::size_t> order = shuffled_indices(n, seed);
  std::vector<bool> in_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) {
    in_train[order[i]] = true;
  }
  std::pair<std::vector<LearnerSequence>, std::vector<LearnerSequence>> out;
  for (std::size_t i = 0; i < n; ++i) {
    (in_train[i] ? out.first : out.second).push_back(sequences[i]);
  }
  return out;
}

std::vector<LearnerSequence> subsample_learners(const std::vector<LearnerSequence>& sequences,
                                                std::size_t n, std::uint64_t seed) {
  if (n > sequences.size()) {
    throw DatasetError("cannot subsample " + std::to_string(n) + " learners from " +
                       std::to_string(sequences.size()));
  }
  const std::vector<std::size_t> order = shuffled_indices(sequences.size(), seed);
  std::vector<bool> keep(sequences.size(), false);
  for (std::size_t i = 0; i < n; ++i) {
    keep[order[i]] = true;
  }
  std::vector<LearnerSequence> out;
  out.reserve(n);
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    if (keep[i]) {
      out.push_back(sequences[i]);
    }
  }
  return out;
}

std::vector<EvalInstance> build_instances(const std::vector<LearnerSequence>& sequences,
                                          std::size_t history_len,
                                          std::size_t last_k_positions) {
  if (history_len < 1) {
    throw DatasetError("history length must be >= 1");
  }
  std::vector<EvalInstance> instances;
  for (const LearnerSequence& sequence : sequences) {
    const std::size_t len = sequence.interactions.size();
    if (len < 2) {
      continue;
    }
    std::size_t first_t = 1;
    if (last_k_positions > 0 && len - 1 > last_k_positions) {
      first_t = len - last_k_positions;
    }
    for (std::size_t t = first_t; t < len; ++t) {
      EvalInstance instance;
      instance.learner_id = sequence.learner_id;
      const std::size_t window = std::min(t, history_len);
      instance.history.assign(sequence.interactions.begin() + static_cast<long>(t - window),
                              sequence.interactions.begin() + static_cast<long>(t));
      const Interaction& target = sequence.interactions[t];
      instance.target = TargetItem{target.question_id, target.kc_ids};
      instance.target_correct = target.correct;
      instance.instance_id = sequence.learner_id + ":" + std::to_string(t);
      instances.push_back(std::move(instance));
    }
  }
  return instances;
}

std::vector<EvalInstance> cap_instances(const std::vector<EvalInstance>& instances,
                                        std::size_t cap, std::uint64_t seed) {
  if (cap == 0 || cap >= instances.size()) {
    return instances;
  }
  const std::vector<std::size_t> order = shuffled_indices(instances.size(), seed);
  std::vector<bool> keep(instances.size(), false);
  for (std::size_t i = 0; i < cap; ++i) {
    keep[order[i]] = true;
  }
  std::vector<EvalInstance> out;
  out.reserve(cap);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (keep[i]) {
      out.push_back(instances[i]);
    }
  }
  return out;
}

OptionWeightTable compute_option_stats(const std::vector<LearnerSequence>& train_sequences) {
  std::map<std::string, std::size_t> question_counts;
  std::map<std::pair<std::string, std::string>, std::size_t> option_counts;
  for (const LearnerSequence& sequence : train_sequences) {
    for (const Interaction& interaction : sequence.interactions) {
      ++question_counts[interaction.question_id];
      if (interaction.selected_option) {
        ++option_counts[{interaction.question_id, *interaction.selected_option}];
      }
    }
  }
  OptionWeightTable table;
  for (const auto& [question_id, count] : question_counts) {
    table.mark_question_seen(question_id);
  }
  for (const auto& [key, count] : option_counts) {
    const double denom = static_cast<double>(question_counts.at(key.first));
    table.set(key.first, key.second, static_cast<double>(count) / denom);
  }
  return table;
}

std::string to_normalized_jsonl(const std::vector<LearnerSequence>& sequences) {
  std::string out;
  for (const LearnerSequence& sequence : sequences) {
    ordered_json doc;
    doc["learner_id"] = sequence.learner_id;
    ordered_json items = ordered_json::array();
    for (const Interaction& interaction : sequence.interactions) {
      items.push_back(interaction_to_json(interaction));
    }
    doc["interactions"] = std::move(items);
    out += doc.dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<LearnerSequence> from_normalized_jsonl(const std::string& jsonl) {
  std::vector<LearnerSequence> sequences;
  for (const std::string& line : split(jsonl, '\n')) {
    if (trim(line).empty()) {
      continue;
    }
    const auto doc = nlohmann::json::parse(line);
    LearnerSequence sequence;
    sequence.learner_id = doc.at("learner_id").get<std::string>();
    for (const auto& item : doc.at("interactions")) {
      sequence.interactions.push_back(interaction_from_json(item));
    }
    sequences.push_back(std::move(sequence));
  }
  return sequences;
}

}  // namespace kteval
