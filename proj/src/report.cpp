#include "cuspflow/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

namespace cuspflow {

JValue JValue::array() {
    JValue v;
    v.v_ = Arr{};
    return v;
}

JValue JValue::object() {
    JValue v;
    v.v_ = Obj{};
    return v;
}

bool JValue::is_object() const { return std::holds_alternative<Obj>(v_); }
bool JValue::is_array() const { return std::holds_alternative<Arr>(v_); }

JValue& JValue::operator[](const std::string& key) {
    if (!is_object()) v_ = Obj{};
    auto& obj = std::get<Obj>(v_);
    for (auto& [k, val] : obj)
        if (k == key) return val;
    obj.emplace_back(key, JValue());
    return obj.back().second;
}

void JValue::push_back(JValue val) {
    if (!is_array()) v_ = Arr{};
    std::get<Arr>(v_).push_back(std::move(val));
}

std::string format_double17(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

namespace {

void dump_string(std::string& out, const std::string& s) {
    out += '"';
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case '\r': out += "\\r"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof(buf), "\\u%04x", c);
                    out += buf;
                } else {
                    out += c;
                }
        }
    }
    out += '"';
}

void newline_indent(std::string& out, int indent, int depth) {
    if (indent <= 0) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent) * depth, ' ');
}

} // namespace

void JValue::dump_to(std::string& out, int indent, int depth) const {
    if (std::holds_alternative<std::nullptr_t>(v_)) {
        out += "null";
    } else if (auto* b = std::get_if<bool>(&v_)) {
        out += *b ? "true" : "false";
    } else if (auto* i = std::get_if<long long>(&v_)) {
        out += std::to_string(*i);
    } else if (auto* d = std::get_if<double>(&v_)) {
        // JSON numbers cannot carry nonfinite values; emit them as strings
        if (!std::isfinite(*d))
            dump_string(out, format_double17(*d));
        else
            out += format_double17(*d);
    } else if (auto* s = std::get_if<std::string>(&v_)) {
        dump_string(out, *s);
    } else if (auto* a = std::get_if<Arr>(&v_)) {
        if (a->empty()) {
            out += "[]";
            return;
        }
        out += '[';
        for (std::size_t k = 0; k < a->size(); ++k) {
            if (k) out += ',';
            newline_indent(out, indent, depth + 1);
            (*a)[k].dump_to(out, indent, depth + 1);
        }
        newline_indent(out, indent, depth);
        out += ']';
    } else {
        const auto& obj = std::get<Obj>(v_);
        if (obj.empty()) {
            out += "{}";
            return;
        }
        out += '{';
        for (std::size_t k = 0; k < obj.size(); ++k) {
            if (k) out += ',';
            newline_indent(out, indent, depth + 1);
            dump_string(out, obj[k].first);
            out += indent > 0 ? ": " : ":";
            obj[k].second.dump_to(out, indent, depth + 1);
        }
        newline_indent(out, indent, depth);
        out += '}';
    }
}

std::string JValue::dump(int indent) const {
    std::string out;
    dump_to(out, indent, 0);
    out += '\n';
    return out;
}

void write_file_atomic(const std::string& path, const std::string& content) {
    std::string tmp = path + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open for write: " + tmp);
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!f) throw std::runtime_error("write failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("rename failed: " + tmp + " -> " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

} // namespace cuspflow
