#pragma once

#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

namespace cuspflow {

// Ordered JSON document with fixed 17-significant-digit float formatting, so
// that identical inputs produce byte-identical report files. Parsing of
// inputs is done with nlohmann/json; this type is for outputs only.
class JValue {
public:
    JValue() : v_(nullptr) {}
    JValue(bool b) : v_(b) {}
    JValue(int i) : v_(static_cast<long long>(i)) {}
    JValue(long long i) : v_(i) {}
    JValue(std::size_t i) : v_(static_cast<long long>(i)) {}
    JValue(double d) : v_(d) {}
    JValue(const char* s) : v_(std::string(s)) {}
    JValue(std::string s) : v_(std::move(s)) {}

    static JValue array();
    static JValue object();

    JValue& operator[](const std::string& key); // object: append-or-get
    void push_back(JValue val);                 // array

    bool is_object() const;
    bool is_array() const;

    std::string dump(int indent = 2) const;

private:
    using Arr = std::vector<JValue>;
    using Obj = std::vector<std::pair<std::string, JValue>>;
    std::variant<std::nullptr_t, bool, long long, double, std::string, Arr, Obj> v_;
    void dump_to(std::string& out, int indent, int depth) const;
};

std::string format_double17(double x);

// Writes content to path via a temp file in the same directory + rename.
void write_file_atomic(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

} // namespace cuspflow
