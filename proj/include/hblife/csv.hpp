// Minimal CSV reading/writing. Fields are never quoted; lines starting
// with '#' are comments (used to embed the producing manifest hash).
#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hblife/common.hpp"

namespace hblife::csv {

struct Row {
    std::vector<std::string> fields;
    int line_no = 0; // 1-based line in the source file
};

struct Table {
    std::vector<std::string> header;
    std::vector<Row> rows;
    std::optional<std::string> manifest_hash; // from a leading "# manifest_hash=..." comment
};

inline Table read_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("csv: cannot open '" + path.string() + "'");
    Table t;
    std::string line;
    int line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.front() == '#') {
            const std::string key = "# manifest_hash=";
            if (line.rfind(key, 0) == 0) t.manifest_hash = line.substr(key.size());
            continue;
        }
        if (!have_header) {
            t.header = split(line, ',');
            have_header = true;
        } else {
            t.rows.push_back({split(line, ','), line_no});
        }
    }
    if (!have_header) fail("csv: '" + path.string() + "' has no header row");
    return t;
}

inline void expect_header(const Table& t, const std::vector<std::string>& expected,
                          const std::string& path) {
    if (t.header != expected) {
        std::ostringstream os;
        os << "csv: '" << path << "' header mismatch; expected ";
        for (std::size_t i = 0; i < expected.size(); ++i) os << (i ? "," : "") << expected[i];
        fail(os.str());
    }
}

class Writer {
  public:
    explicit Writer(const std::filesystem::path& path,
                    const std::optional<std::string>& manifest_hash = std::nullopt)
        : out_(path) {
        if (!out_) fail("csv: cannot write '" + path.string() + "'");
        if (manifest_hash) out_ << "# manifest_hash=" << *manifest_hash << "\n";
    }

    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) out_ << (i ? "," : "") << fields[i];
        out_ << "\n";
    }

  private:
    std::ofstream out_;
};

} // namespace hblife::csv
