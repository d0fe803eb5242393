#pragma once

#include <initializer_list>
#include <json.hpp>
#include <stdexcept>
#include <string>

namespace sanet {

// Config files fail loudly on misspelled keys instead of silently keeping the
// default for the field the author meant to set.
template <class J>
void require_known_keys(const J& j, std::initializer_list<const char*> keys,
                        const std::string& what) {
  if (!j.is_object()) throw std::invalid_argument(what + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) throw std::invalid_argument(what + ": unknown key \"" + it.key() + "\"");
  }
}

}  // namespace sanet
