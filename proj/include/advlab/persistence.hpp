#pragma once

// Model JSON documents, CSV tables and report summaries.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advlab/errors.hpp"
#include "advlab/nn.hpp"

namespace advlab {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

// Shortest decimal string that parses back to the same double.
inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline json model_to_json(const Model& m) {
  m.validate();
  json j;
  j["schema_version"] = kSchemaVersion;
  j["layer_dims"] = m.layer_dims;
  j["activation"] = to_string(m.hidden_activation);
  j["output"] = to_string(m.output_head);
  j["temperature"] = m.temperature;
  json weights = json::array();
  for (const auto& w : m.weights) {
    json rows = json::array();
    for (std::size_t r = 0; r < w.rows; ++r) {
      auto row = w.row(r);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    weights.push_back(std::move(rows));
  }
  j["weights"] = std::move(weights);
  j["biases"] = m.biases;
  return j;
}

inline Model model_from_json(const json& j, const std::string& where = "model") {
  try {
    if (!j.is_object()) throw ParseError(where + ": model document must be a JSON object");
    if (!j.contains("schema_version")) throw ParseError(where + ": missing schema_version");
    const int version = j.at("schema_version").get<int>();
    if (version != kSchemaVersion) {
      throw MigrationError(where + ": schema_version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kSchemaVersion) + ")");
    }
    Model m;
    m.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    m.hidden_activation = parse_activation(j.at("activation").get<std::string>());
    m.output_head = j.contains("output") ? parse_output_head(j.at("output").get<std::string>()) : OutputHead::softmax;
    m.temperature = j.at("temperature").get<double>();
    const auto& weights = j.at("weights");
    for (const auto& rows : weights) {
      const std::size_t r = rows.size();
      const std::size_t c = r == 0 ? 0 : rows.at(0).size();
      Matrix w(r, c);
      for (std::size_t i = 0; i < r; ++i) {
        const auto row = rows.at(i).get<std::vector<double>>();
        if (row.size() != c) throw ParseError(where + ": ragged weight matrix");
        std::copy(row.begin(), row.end(), w.data.begin() + static_cast<std::ptrdiff_t>(i * c));
      }
      m.weights.push_back(std::move(w));
    }
    m.biases = j.at("biases").get<std::vector<Vec>>();
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw ParseError(where + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ParseError(where + ": " + e.what());
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << text;
  if (!f) throw ConfigError("write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline json read_json(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline void save_model(const Model& m, const std::filesystem::path& path) { write_json(path, model_to_json(m)); }

inline Model load_model(const std::filesystem::path& path) { return model_from_json(read_json(path), path.string()); }

// ---------------------------------------------------------------------------
// CSV

class CsvTable {
 public:
  CsvTable() = default;
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  CsvTable& add(std::vector<std::string> row) {
    if (row.size() != header_.size()) {
      throw ShapeError("CSV row has " + std::to_string(row.size()) + " cells, header has " +
                       std::to_string(header_.size()));
    }
    rows_.push_back(std::move(row));
    return *this;
  }

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

  std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }

  void write(const std::filesystem::path& path) const { write_text(path, str()); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Reads a table written by CsvTable (no quoting).
inline CsvTable read_csv_table(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(s);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty CSV");
  CsvTable t(split(line));
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.header().size()) throw ParseError(path.string() + ": ragged row " + std::to_string(row));
    t.add(std::move(cells));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Report summary

struct Report {
  std::string experiment_id;
  std::map<std::string, double> metrics;
  std::map<std::string, std::string> tables;  // name -> csv file name, relative to the report

  json to_json() const {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["experiment_id"] = experiment_id;
    json m = json::object();
    for (const auto& [k, v] : metrics) m[k] = std::isfinite(v) ? json(v) : json(format_real(v));
    j["metrics"] = std::move(m);
    json t = json::object();
    for (const auto& [k, v] : tables) t[k] = v;
    j["tables"] = std::move(t);
    return j;
  }

  static Report from_json(const json& j, const std::string& where) {
    try {
      const int version = j.at("schema_version").get<int>();
      if (version != kSchemaVersion) {
        throw MigrationError(where + ": report schema_version " + std::to_string(version) + " is not supported");
      }
      Report r;
      r.experiment_id = j.at("experiment_id").get<std::string>();
      for (const auto& [k, v] : j.at("metrics").items()) {
        r.metrics[k] = v.is_number() ? v.get<double>() : std::stod(v.get<std::string>());
      }
      for (const auto& [k, v] : j.at("tables").items()) r.tables[k] = v.get<std::string>();
      return r;
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
};

}  // namespace advlab
