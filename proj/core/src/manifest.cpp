#include "binary_io.hpp"
#include "sipfuse/data.hpp"
#include "sipfuse/errors.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <unordered_map>

namespace sipfuse {

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::eval: return "eval";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  for (auto s : {Split::train, Split::dev, Split::eval}) {
    if (to_string(s) == text) return s;
  }
  throw DataError("unknown split '" + std::string(text) + "'");
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

double parse_label(std::string_view text, const std::string& where) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, v);
  if (text.empty() || res.ec != std::errc() || res.ptr != end) {
    throw DataError(where + ": malformed label '" + std::string(text) + "'");
  }
  if (!std::isfinite(v) || v < 0.0 || v > 100.0) {
    throw DataError(where + ": label " + std::string(text) + " outside [0, 100]");
  }
  return v;
}

}  // namespace

Manifest parse_manifest(const std::string& text, const std::string& context) {
  Manifest m;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  bool header_seen = false;
  std::set<std::string> seen;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim_cr(raw);
    std::string where = context + " line " + std::to_string(line_no);
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (header_seen) throw DataError(where + ": metadata after header");
      const std::string_view body = line.substr(1);
      const std::size_t eq = body.find('=');
      if (eq == std::string_view::npos) throw DataError(where + ": metadata line without '='");
      m.metadata[std::string(body.substr(0, eq))] = std::string(body.substr(eq + 1));
      continue;
    }
    if (!header_seen) {
      if (line != kManifestHeader) {
        throw DataError(where + ": expected header '" + std::string(kManifestHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    where = context + " row " + std::to_string(m.rows.size() + 1) + " (line " + std::to_string(line_no) + ")";
    const auto f = split_fields(line);
    if (f.size() != 6) {
      throw DataError(where + ": expected 6 fields, found " + std::to_string(f.size()));
    }
    ManifestRow row;
    row.utterance_id = std::string(f[0]);
    if (row.utterance_id.empty()) throw DataError(where + ": empty utterance_id");
    row.scene_token = std::string(f[1]);
    if (row.scene_token.empty()) throw DataError(where + ": empty scene_token");
    try {
      row.severity = parse_severity(f[2]);
      row.split = parse_split(f[5]);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    row.system_id = std::string(f[3]);
    row.label = parse_label(f[4], where);
    if (!seen.insert(row.utterance_id).second) {
      throw DataError(where + ": duplicate utterance_id '" + row.utterance_id + "'");
    }
    m.rows.push_back(std::move(row));
  }
  if (!header_seen) throw DataError(context + ": missing header");
  return m;
}

std::string format_manifest(const Manifest& manifest) {
  std::string out;
  for (const auto& [k, v] : manifest.metadata) out += "#" + k + "=" + v + "\n";
  out += kManifestHeader;
  out += '\n';
  char buf[64];
  for (const ManifestRow& r : manifest.rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.label);
    out += r.utterance_id + "," + r.scene_token + "," + std::string(to_string(r.severity)) + "," + r.system_id +
           "," + buf + "," + std::string(to_string(r.split)) + "\n";
  }
  return out;
}

Manifest read_manifest(const std::string& path) {
  const auto bytes = detail::read_file(path);
  return parse_manifest(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()), path);
}

void write_manifest(const std::string& path, const Manifest& manifest) {
  const std::string text = format_manifest(manifest);
  const auto* p = reinterpret_cast<const std::byte*>(text.data());
  detail::write_file_atomic(path, std::vector<std::byte>(p, p + text.size()));
}

namespace {

struct Slots {
  std::array<const CacheRecord*, 4> rec{};
  int duplicates = 0;
};

int slot_of(const CacheRecord& r) { return static_cast<int>(r.backbone) * 2 + static_cast<int>(r.ear); }

std::unordered_map<std::string, Slots> index_records(const std::vector<CacheRecord>& records) {
  std::unordered_map<std::string, Slots> by_id;
  for (const CacheRecord& r : records) {
    Slots& s = by_id[r.utterance_id];
    const CacheRecord*& slot = s.rec[static_cast<std::size_t>(slot_of(r))];
    if (slot != nullptr) {
      ++s.duplicates;
    } else {
      slot = &r;
    }
  }
  return by_id;
}

}  // namespace

std::vector<std::string> validate_dataset(const Manifest& manifest, const std::vector<CacheRecord>& records) {
  std::vector<std::string> problems;
  const auto by_id = index_records(records);
  Index dim[2] = {-1, -1};
  for (const ManifestRow& row : manifest.rows) {
    const std::string who = "utterance '" + row.utterance_id + "'";
    const auto it = by_id.find(row.utterance_id);
    if (it == by_id.end()) {
      problems.push_back(who + ": no cache records");
      continue;
    }
    const Slots& s = it->second;
    if (s.duplicates > 0) problems.push_back(who + ": duplicate cache records");
    bool complete = true;
    for (int k = 0; k < 4; ++k) {
      if (s.rec[static_cast<std::size_t>(k)] == nullptr) {
        problems.push_back(who + ": missing " + std::string(to_string(static_cast<Backbone>(k / 2))) + " " +
                           std::string(to_string(static_cast<Ear>(k % 2))) + " record");
        complete = false;
      }
    }
    if (!complete) continue;
    for (int b = 0; b < 2; ++b) {
      const CacheRecord& l = *s.rec[static_cast<std::size_t>(2 * b)];
      const CacheRecord& r = *s.rec[static_cast<std::size_t>(2 * b + 1)];
      const std::string bb(to_string(static_cast<Backbone>(b)));
      if (!(l.frame_rate_hz > 0.0) || l.frame_rate_hz != r.frame_rate_hz) {
        problems.push_back(who + ": inconsistent " + bb + " frame rates");
      }
      if (l.frames.cols() != r.frames.cols()) problems.push_back(who + ": inconsistent " + bb + " feature dims");
      if (dim[b] < 0) dim[b] = l.frames.cols();
      if (l.frames.cols() != dim[b]) {
        problems.push_back(who + ": " + bb + " feature dim " + std::to_string(l.frames.cols()) +
                           " differs from dataset dim " + std::to_string(dim[b]));
      }
    }
    const double ratio = s.rec[2]->frame_rate_hz / s.rec[0]->frame_rate_hz;
    if (!(ratio >= 3.0 && ratio <= 5.0)) {
      problems.push_back(who + ": wavlm/canary frame-rate ratio outside [3, 5]");
    }
  }
  return problems;
}

std::vector<Item> assemble_items(const Manifest& manifest, const std::vector<CacheRecord>& records) {
  const auto problems = validate_dataset(manifest, records);
  if (!problems.empty()) {
    std::string msg = "dataset invalid (" + std::to_string(problems.size()) + " problems)";
    for (std::size_t i = 0; i < problems.size() && i < 5; ++i) msg += "; " + problems[i];
    throw DataError(msg);
  }
  const auto by_id = index_records(records);
  std::vector<Item> items;
  items.reserve(manifest.rows.size());
  for (const ManifestRow& row : manifest.rows) {
    const Slots& s = by_id.at(row.utterance_id);
    Item item{row, {}};
    for (int e = 0; e < 2; ++e) {
      const CacheRecord& c = *s.rec[static_cast<std::size_t>(e)];
      const CacheRecord& w = *s.rec[static_cast<std::size_t>(2 + e)];
      item.input.canary[static_cast<std::size_t>(e)] = MaskedSeq<float>::dense(c.frames, c.frame_rate_hz);
      item.input.wavlm[static_cast<std::size_t>(e)] = MaskedSeq<float>::dense(w.frames, w.frame_rate_hz);
    }
    item.input.severity = row.severity;
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace sipfuse
