#pragma once

#include <istream>
#include <string>
#include <vector>

namespace explora {

// Minimal streaming CSV reader: quoted fields, doubled quotes, embedded
// commas and newlines, CRLF line ends. Reads one record at a time so
// arbitrarily large files never have to fit in memory.
class CsvReader {
public:
    explicit CsvReader(std::istream& in) : in_(in) {}

    // Row number of the record last returned (1-based, header included).
    std::size_t row_number() const { return row_; }

    bool read_row(std::vector<std::string>& fields) {
        fields.clear();
        int c = in_.get();
        if (c == EOF) return false;
        ++row_;
        std::string cur;
        bool in_quotes = false;
        while (true) {
            if (c == EOF) {
                fields.push_back(cur);
                return true;
            }
            if (in_quotes) {
                if (c == '"') {
                    if (in_.peek() == '"') {
                        in_.get();
                        cur.push_back('"');
                    } else {
                        in_quotes = false;
                    }
                } else {
                    cur.push_back(static_cast<char>(c));
                }
            } else if (c == '"') {
                in_quotes = true;
            } else if (c == ',') {
                fields.push_back(cur);
                cur.clear();
            } else if (c == '\n') {
                if (!cur.empty() && cur.back() == '\r') cur.pop_back();
                fields.push_back(cur);
                return true;
            } else {
                cur.push_back(static_cast<char>(c));
            }
            c = in_.get();
        }
    }

private:
    std::istream& in_;
    std::size_t row_ = 0;
};

}  // namespace explora
