#pragma once

// Ingestion of utterance embeddings and metadata, and the seen / OOD /
// unlabeled views the pipeline stages consume.
//
// Embeddings are stored single precision on disk and held as doubles in
// memory. Two on-disk forms are accepted:
//
//   EMB1  "EMB1" | u32 N | u32 D | N x (u16 len, utf-8 id) | N*D f32, row-major
//         (all integers and floats little-endian)
//   TSV   one row per line: id TAB v_1 TAB ... TAB v_D

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "nid/detail/files.hpp"
#include "nid/error.hpp"
#include "nid/matrix.hpp"

namespace nid {

enum class Split { train_seen, ood, unlabeled, validation };
enum class SpaceTag { raw, E, Emb };

inline std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::train_seen: return "train_seen";
    case Split::ood: return "ood";
    case Split::unlabeled: return "unlabeled";
    case Split::validation: return "validation";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view s) noexcept {
  if (s == "train_seen") return Split::train_seen;
  if (s == "ood") return Split::ood;
  if (s == "unlabeled") return Split::unlabeled;
  if (s == "validation") return Split::validation;
  return std::nullopt;
}

struct Utterance {
  std::string id;
  std::optional<std::string> text;
  std::optional<std::string> intent;
  std::optional<std::string> domain;
  Split split = Split::unlabeled;
};

// N x D vectors keyed by unique, order-stable ids.
struct EmbeddingSet {
  std::vector<std::string> ids;
  Matrix matrix;
  SpaceTag space = SpaceTag::raw;

  std::size_t size() const noexcept { return ids.size(); }
  std::size_t dim() const noexcept { return matrix.cols(); }
  bool empty() const noexcept { return ids.empty(); }

  // Throws DataError on any broken invariant.
  void validate() const {
    if (matrix.rows() != ids.size()) {
      throw DataError("embedding set: " + std::to_string(ids.size()) + " ids but " +
                      std::to_string(matrix.rows()) + " rows");
    }
    if (!ids.empty() && matrix.cols() == 0) throw DataError("embedding set: dimension is 0");
    std::unordered_set<std::string_view> seen;
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (!seen.insert(ids[r]).second) throw DataError("duplicate id '" + ids[r] + "'");
      for (double v : matrix.row(r)) {
        if (!std::isfinite(v)) throw DataError("non-finite value in row '" + ids[r] + "'");
      }
    }
  }
};

namespace detail {

template <typename T>
T read_le(std::string_view bytes, std::size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

template <typename T>
void append_le(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace detail

inline EmbeddingSet parse_emb1(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.substr(0, 4) != "EMB1") throw DataError("EMB1: bad magic");
  const auto n = detail::read_le<std::uint32_t>(bytes, 4);
  const auto d = detail::read_le<std::uint32_t>(bytes, 8);
  if (n > 0 && d == 0) throw DataError("EMB1: dimension is 0");

  EmbeddingSet set;
  set.ids.reserve(n);
  std::size_t pos = 12;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (pos + 2 > bytes.size()) throw DataError("EMB1: truncated id table");
    const auto len = detail::read_le<std::uint16_t>(bytes, pos);
    pos += 2;
    if (pos + len > bytes.size()) throw DataError("EMB1: truncated id table");
    set.ids.emplace_back(bytes.substr(pos, len));
    pos += len;
  }
  const std::size_t payload = static_cast<std::size_t>(n) * d * sizeof(float);
  const std::size_t remaining = bytes.size() - pos;
  if (remaining < payload) {
    throw DataError("EMB1: truncated payload (header declares " + std::to_string(n) + "x" +
                    std::to_string(d) + ")");
  }
  if (remaining > payload) throw DataError("EMB1: trailing bytes after payload");

  set.matrix = Matrix(n, d);
  auto& out = set.matrix.storage();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = detail::read_le<float>(bytes, pos + i * sizeof(float));
  }
  set.validate();
  return set;
}

inline std::string serialize_emb1(const EmbeddingSet& set) {
  set.validate();
  std::string out = "EMB1";
  detail::append_le(out, static_cast<std::uint32_t>(set.size()));
  detail::append_le(out, static_cast<std::uint32_t>(set.dim()));
  for (const auto& id : set.ids) {
    if (id.size() > 0xFFFF) throw DataError("EMB1: id longer than 65535 bytes");
    detail::append_le(out, static_cast<std::uint16_t>(id.size()));
    out += id;
  }
  for (double v : set.matrix.storage()) detail::append_le(out, static_cast<float>(v));
  return out;
}

inline EmbeddingSet parse_tsv(std::string_view text) {
  EmbeddingSet set;
  std::size_t line_no = 0;
  std::vector<double> row;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    const auto tab = line.find('\t');
    if (tab == std::string_view::npos || tab == 0) {
      throw DataError("TSV line " + std::to_string(line_no) + ": expected id<TAB>values");
    }
    std::string id(line.substr(0, tab));
    row.clear();
    std::string_view rest = line.substr(tab + 1);
    while (true) {
      const auto next = rest.find('\t');
      const auto field = rest.substr(0, next);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw DataError("TSV line " + std::to_string(line_no) + ": bad number '" +
                        std::string(field) + "'");
      }
      row.push_back(v);
      if (next == std::string_view::npos) break;
      rest = rest.substr(next + 1);
    }
    if (!set.ids.empty() && row.size() != set.dim()) {
      throw DataError("TSV line " + std::to_string(line_no) + ": expected " +
                      std::to_string(set.dim()) + " values, got " + std::to_string(row.size()));
    }
    set.ids.push_back(std::move(id));
    set.matrix.append_row(row);
  }
  set.validate();
  return set;
}

inline std::string serialize_tsv(const EmbeddingSet& set) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t r = 0; r < set.size(); ++r) {
    out << set.ids[r];
    for (double v : set.matrix.row(r)) out << '\t' << v;
    out << '\n';
  }
  return out.str();
}

// Files ending in .tsv or .txt are read as text; everything else as EMB1.
inline EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const auto ext = path.extension().string();
  try {
    if (ext == ".tsv" || ext == ".txt") return parse_tsv(bytes);
    return parse_emb1(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  detail::write_file_atomic(path, ext == ".tsv" || ext == ".txt" ? serialize_tsv(set)
                                                                 : serialize_emb1(set));
}

inline Utterance parse_utterance(const nlohmann::json& obj) {
  if (!obj.is_object()) throw DataError("expected a JSON object");
  auto optional_string = [&](const char* key) -> std::optional<std::string> {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw DataError(std::string("field '") + key + "' must be a string");
    return it->get<std::string>();
  };
  Utterance u;
  auto id = optional_string("id");
  if (!id || id->empty()) throw DataError("missing id");
  u.id = std::move(*id);
  auto split = optional_string("split");
  if (!split) throw DataError("utterance '" + u.id + "': missing split");
  auto parsed = parse_split(*split);
  if (!parsed) throw DataError("utterance '" + u.id + "': unknown split '" + *split + "'");
  u.split = *parsed;
  u.text = optional_string("text");
  u.intent = optional_string("intent");
  u.domain = optional_string("domain");
  if (u.split == Split::train_seen && (!u.intent || !u.domain)) {
    throw DataError("utterance '" + u.id + "': train_seen requires intent and domain");
  }
  return u;
}

inline nlohmann::json to_json(const Utterance& u) {
  nlohmann::json obj;
  obj["id"] = u.id;
  if (u.text) obj["text"] = *u.text;
  if (u.intent) obj["intent"] = *u.intent;
  if (u.domain) obj["domain"] = *u.domain;
  obj["split"] = std::string(to_string(u.split));
  return obj;
}

inline std::vector<Utterance> parse_utterances(std::string_view text) {
  std::vector<Utterance> out;
  std::unordered_set<std::string> ids;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto u = parse_utterance(nlohmann::json::parse(line));
      if (!ids.insert(u.id).second) throw DataError("duplicate id '" + u.id + "'");
      out.push_back(std::move(u));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("utterances line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("utterances line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Utterance> load_utterances(const std::filesystem::path& path) {
  try {
    return parse_utterances(detail::read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// Utterances aligned with embedding rows: utterances[i].id == embeddings.ids[i].
struct Dataset {
  std::vector<Utterance> utterances;
  EmbeddingSet embeddings;

  std::size_t size() const noexcept { return utterances.size(); }
};

inline Dataset join(std::vector<Utterance> utterances, EmbeddingSet embeddings) {
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    if (!by_id.emplace(utterances[i].id, i).second) {
      throw DataError("duplicate utterance id '" + utterances[i].id + "'");
    }
  }
  std::vector<std::string> no_metadata;
  std::vector<bool> matched(utterances.size(), false);
  Dataset ds;
  ds.utterances.reserve(embeddings.size());
  for (const auto& id : embeddings.ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      no_metadata.push_back(id);
      continue;
    }
    matched[it->second] = true;
    ds.utterances.push_back(utterances[it->second]);
  }
  std::vector<std::string> no_embedding;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    if (!matched[i]) no_embedding.push_back(utterances[i].id);
  }
  if (!no_metadata.empty() || !no_embedding.empty()) {
    std::string msg = "id mismatch between utterances and embeddings;";
    auto list = [&msg](const char* what, const std::vector<std::string>& ids) {
      if (ids.empty()) return;
      msg += std::string(" ") + what + ":";
      for (std::size_t i = 0; i < ids.size() && i < 10; ++i) msg += " '" + ids[i] + "'";
      if (ids.size() > 10) msg += " (+" + std::to_string(ids.size() - 10) + " more)";
    };
    list("missing embedding", no_embedding);
    list("missing metadata", no_metadata);
    throw DataError(msg);
  }
  ds.embeddings = std::move(embeddings);
  return ds;
}

// A row subset of a Dataset with its labels copied out.
struct View {
  std::vector<std::string> ids;
  Matrix x;
  std::vector<std::optional<std::string>> intents;
  std::vector<std::optional<std::string>> domains;

  std::size_t size() const noexcept { return ids.size(); }
  bool empty() const noexcept { return ids.empty(); }

  void push_back(const Utterance& u, std::span<const double> row) {
    ids.push_back(u.id);
    x.append_row(row);
    intents.push_back(u.intent);
    domains.push_back(u.domain);
  }

  EmbeddingSet embeddings(SpaceTag space = SpaceTag::raw) const { return {ids, x, space}; }

  // True when every row carries an intent label.
  bool fully_labeled() const noexcept {
    for (const auto& i : intents) {
      if (!i) return false;
    }
    return true;
  }

  View concat(const View& other) const {
    View out = *this;
    if (out.x.cols() == 0) out.x = Matrix(0, other.x.cols());
    for (std::size_t r = 0; r < other.size(); ++r) {
      out.ids.push_back(other.ids[r]);
      out.x.append_row(other.x.row(r));
      out.intents.push_back(other.intents[r]);
      out.domains.push_back(other.domains[r]);
    }
    return out;
  }
};

// Disjoint views by split tag. `validation` belongs to the seen side; use
// seen_all() for the union.
struct SplitViews {
  View seen;
  View validation;
  View ood;
  View unlabeled;

  View seen_all() const { return seen.concat(validation); }
};

inline SplitViews split_views(const Dataset& ds) {
  SplitViews views;
  const std::size_t dim = ds.embeddings.dim();
  for (View* v : {&views.seen, &views.validation, &views.ood, &views.unlabeled}) {
    v->x = Matrix(0, dim);
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& u = ds.utterances[i];
    const auto row = ds.embeddings.matrix.row(i);
    switch (u.split) {
      case Split::train_seen: views.seen.push_back(u, row); break;
      case Split::validation: views.validation.push_back(u, row); break;
      case Split::ood: views.ood.push_back(u, row); break;
      case Split::unlabeled: views.unlabeled.push_back(u, row); break;
    }
  }
  std::set<std::string> seen_intents;
  for (const auto& i : views.seen.intents) seen_intents.insert(*i);
  for (std::size_t r = 0; r < views.ood.size(); ++r) {
    const auto& intent = views.ood.intents[r];
    if (intent && seen_intents.count(*intent)) {
      throw DataError("OOD utterance '" + views.ood.ids[r] + "' has seen intent '" + *intent +
                      "'; OOD and seen intents must be disjoint");
    }
  }
  return views;
}

}  // namespace nid
