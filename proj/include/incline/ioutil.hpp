#pragma once

#include <cstdint>
#include <string>

namespace incline {

// Format a double with 17 significant digits; round-trips every finite value.
std::string format_real(double value);

// Whole-file helpers. write_file_atomic stages to "<path>.tmp" and renames,
// so a crashed run never leaves a half-written artifact behind.
std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, const std::string& content);

// FNV-1a 64-bit digest, hex-encoded; used to fingerprint input files in run
// manifests and to stamp checkpoints into alignment files.
uint64_t fnv1a64(const std::string& bytes);
std::string digest_hex(const std::string& bytes);

// Minimal line-oriented reader used by all text format parsers. Keeps the
// current line number so errors can point at the offending line.
class LineReader {
 public:
  explicit LineReader(const std::string& text) : text_(text) {}

  // false at end of input
  bool next(std::string& line);
  int line_number() const { return line_number_; }
  [[noreturn]] void fail(const std::string& message) const;

 private:
  const std::string& text_;
  size_t pos_ = 0;
  int line_number_ = 0;
};

}  // namespace incline
