#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace tgls {

// Flat `key=value` text: one pair per line, `#` comments, blank lines
// ignored, whitespace trimmed around keys and values. Later assignments to
// the same key overwrite earlier ones.
class KeyValueConfig {
  public:
    static KeyValueConfig load(const std::string& path);
    static KeyValueConfig from_string(const std::string& text);

    bool has(const std::string& key) const { return entries_.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { entries_[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    // Throw std::runtime_error naming the key when the stored text does not
    // parse as the requested type.
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

  private:
    std::map<std::string, std::string> entries_;
};

}  // namespace tgls
