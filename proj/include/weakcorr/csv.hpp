#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace weakcorr {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

/// RFC-4180 CSV body (CRLF records, quoted fields when needed) preceded by
/// '#'-prefixed metadata lines.
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  void metadata(const std::string& key, const std::string& value) {
    out_ << "# " << key << "=" << value << "\r\n";
  }

  void header(const std::vector<std::string>& names) { row_strings(names); }

  void row(const std::vector<double>& values) {
    std::vector<std::string> fields;
    fields.reserve(values.size());
    for (double v : values) fields.push_back(format_double(v));
    row_strings(fields);
  }

  void row_strings(const std::vector<std::string>& fields) {
    for (size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      write_field(fields[i]);
    }
    out_ << "\r\n";
  }

 private:
  void write_field(const std::string& f) {
    const bool need_quotes =
        f.find_first_of(",\"\r\n") != std::string::npos;
    if (!need_quotes) {
      out_ << f;
      return;
    }
    out_ << '"';
    for (char c : f) {
      if (c == '"') out_ << '"';
      out_ << c;
    }
    out_ << '"';
  }

  std::ostream& out_;
};

}  // namespace weakcorr
