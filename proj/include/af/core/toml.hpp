// Small TOML reader covering the config surface: [section] tables flattened
// to dotted keys, strings, ints, floats, bools, flat arrays, # comments.
#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace af {

struct TomlValue {
    enum Kind { kString, kInt, kFloat, kBool, kArray } kind = kString;
    std::string s;
    int64_t i = 0;
    double f = 0.0;
    bool b = false;
    std::vector<TomlValue> arr;
};

class Toml {
public:
    static Toml parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("toml: cannot open " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path);
    }

    static Toml parse(const std::string& text, const std::string& origin = "<string>") {
        Toml t;
        std::string section;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string s = strip_comment(line);
            s = trim(s);
            if (s.empty()) continue;
            if (s.front() == '[') {
                if (s.back() != ']') fail(origin, lineno, "unterminated section header");
                section = trim(s.substr(1, s.size() - 2));
                if (section.empty()) fail(origin, lineno, "empty section name");
                continue;
            }
            size_t eq = find_eq(s);
            if (eq == std::string::npos) fail(origin, lineno, "expected key = value");
            std::string key = trim(s.substr(0, eq));
            std::string val = trim(s.substr(eq + 1));
            if (key.empty() || val.empty()) fail(origin, lineno, "expected key = value");
            std::string full = section.empty() ? key : section + "." + key;
            t.values_[full] = parse_value(val, origin, lineno);
        }
        return t;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        if (it->second.kind != TomlValue::kString) throw std::runtime_error("toml: " + key + " is not a string");
        return it->second.s;
    }

    int64_t get_int(const std::string& key, int64_t dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        if (it->second.kind == TomlValue::kInt) return it->second.i;
        throw std::runtime_error("toml: " + key + " is not an integer");
    }

    double get_float(const std::string& key, double dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        if (it->second.kind == TomlValue::kFloat) return it->second.f;
        if (it->second.kind == TomlValue::kInt) return double(it->second.i);
        throw std::runtime_error("toml: " + key + " is not a number");
    }

    bool get_bool(const std::string& key, bool dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        if (it->second.kind != TomlValue::kBool) throw std::runtime_error("toml: " + key + " is not a bool");
        return it->second.b;
    }

    std::vector<double> get_float_array(const std::string& key, const std::vector<double>& dflt) const {
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        if (it->second.kind != TomlValue::kArray) throw std::runtime_error("toml: " + key + " is not an array");
        std::vector<double> out;
        for (const auto& v : it->second.arr) {
            if (v.kind == TomlValue::kFloat) out.push_back(v.f);
            else if (v.kind == TomlValue::kInt) out.push_back(double(v.i));
            else throw std::runtime_error("toml: " + key + " has non-numeric element");
        }
        return out;
    }

    const std::map<std::string, TomlValue>& values() const { return values_; }

private:
    static void fail(const std::string& origin, int line, const std::string& msg) {
        throw std::runtime_error("toml: " + origin + ":" + std::to_string(line) + ": " + msg);
    }

    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    // Comments start at a # outside quotes.
    static std::string strip_comment(const std::string& s) {
        bool q = false;
        for (size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '"') q = !q;
            else if (s[i] == '#' && !q) return s.substr(0, i);
        }
        return s;
    }

    static size_t find_eq(const std::string& s) {
        bool q = false;
        for (size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '"') q = !q;
            else if (s[i] == '=' && !q) return i;
        }
        return std::string::npos;
    }

    static TomlValue parse_value(const std::string& v, const std::string& origin, int lineno) {
        TomlValue out;
        if (v.front() == '"') {
            if (v.size() < 2 || v.back() != '"') fail(origin, lineno, "unterminated string");
            out.kind = TomlValue::kString;
            out.s = v.substr(1, v.size() - 2);
            return out;
        }
        if (v.front() == '[') {
            if (v.back() != ']') fail(origin, lineno, "unterminated array");
            out.kind = TomlValue::kArray;
            std::string body = trim(v.substr(1, v.size() - 2));
            size_t pos = 0;
            while (pos < body.size()) {
                size_t comma = body.find(',', pos);
                std::string elem = trim(comma == std::string::npos ? body.substr(pos)
                                                                   : body.substr(pos, comma - pos));
                if (!elem.empty()) out.arr.push_back(parse_value(elem, origin, lineno));
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
            return out;
        }
        if (v == "true" || v == "false") {
            out.kind = TomlValue::kBool;
            out.b = (v == "true");
            return out;
        }
        // Number: integer unless it carries a decimal point or exponent.
        char* end = nullptr;
        if (v.find('.') == std::string::npos && v.find('e') == std::string::npos &&
            v.find('E') == std::string::npos && v != "inf" && v != "-inf" && v != "nan") {
            long long iv = strtoll(v.c_str(), &end, 10);
            if (end && *end == '\0') {
                out.kind = TomlValue::kInt;
                out.i = iv;
                return out;
            }
        }
        double fv = strtod(v.c_str(), &end);
        if (end && *end == '\0') {
            out.kind = TomlValue::kFloat;
            out.f = fv;
            return out;
        }
        fail(origin, lineno, "cannot parse value: " + v);
        return out;
    }

    std::map<std::string, TomlValue> values_;
};

} // namespace af
