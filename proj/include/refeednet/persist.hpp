#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "refeednet/refeed.hpp"

namespace refeednet {

/// Writes `content` to a sibling temp file, fsyncs it and renames it over
/// `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::string tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error(ErrorKind::Io, "cannot write " + tmp);
  std::size_t done = 0;
  while (done < content.size()) {
    const ssize_t n = ::write(fd, content.data() + done, content.size() - done);
    if (n <= 0) {
      ::close(fd);
      throw Error(ErrorKind::Io, "short write to " + tmp);
    }
    done += static_cast<std::size_t>(n);
  }
  const bool synced = ::fsync(fd) == 0;
  ::close(fd);
  if (!synced) throw Error(ErrorKind::Io, "fsync failed for " + tmp);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot replace " + path.string() + ": " + ec.message());
}

// One line per entry, bottom to top: {"class":..,"pushed_at":..,"source_id":..}
inline std::string stack_to_jsonl(const ReFeedStack& stack) {
  std::string out;
  for (const auto& e : stack.entries()) {
    nlohmann::json j{{"source_id", e.item.source_id}, {"class", to_string(e.item.label)}, {"pushed_at", e.pushed_at}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

using ImageResolver = std::function<Tensor(const std::string& source_id)>;

/// Parses stack lines written by stack_to_jsonl; images are fetched through
/// `resolve`.
inline ReFeedStack stack_from_jsonl(const std::string& text, std::size_t capacity, const ImageResolver& resolve) {
  ReFeedStack stack(capacity);
  std::deque<ReFeedStack::Entry> entries;
  std::uint64_t next = 0;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto cls = parse_class(j.at("class").get<std::string>());
      if (!cls) throw Error(ErrorKind::Validation, "unknown class");
      ReFeedStack::Entry e;
      e.item.source_id = j.at("source_id").get<std::string>();
      e.item.label = *cls;
      e.item.pixels = resolve(e.item.source_id);
      e.pushed_at = j.at("pushed_at").get<std::uint64_t>();
      next = std::max(next, e.pushed_at + 1);
      entries.push_back(std::move(e));
    } catch (const Error& e) {
      throw Error(ErrorKind::Format, "stack line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorKind::Format, "stack line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  stack.restore(std::move(entries), next, 0);
  return stack;
}

inline void save_stack(const ReFeedStack& stack, const std::filesystem::path& path) {
  write_file_atomic(path, stack_to_jsonl(stack));
}

inline ReFeedStack load_stack(const std::filesystem::path& path, std::size_t capacity, const ImageResolver& resolve) {
  std::ifstream in(path);
  if (!in) return ReFeedStack(capacity);
  std::stringstream ss;
  ss << in.rdbuf();
  return stack_from_jsonl(ss.str(), capacity, resolve);
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json();
}

/// Metrics report: {p0, pf, r, gain, q, rounds}; absent values are null.
inline nlohmann::json metrics_json(const std::optional<GainMetrics>& m, double q, int rounds) {
  nlohmann::json j;
  j["p0"] = m ? nlohmann::json(m->p0) : nlohmann::json();
  j["pf"] = m ? optional_json(m->pf) : nlohmann::json();
  j["r"] = m ? optional_json(m->r) : nlohmann::json();
  j["gain"] = m ? optional_json(m->gain) : nlohmann::json();
  j["q"] = m ? m->q : q;
  j["rounds"] = rounds;
  return j;
}

inline nlohmann::json metrics_json(const GainMetrics& m, int rounds) { return metrics_json(std::optional(m), m.q, rounds); }

}  // namespace refeednet
