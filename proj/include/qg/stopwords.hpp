#pragma once

#include <span>
#include <string_view>

namespace qg {

/// The bundled English stop list.
std::span<const std::string_view> stop_words();

/// Expects an already case-folded token.
bool is_stop_word(std::string_view lower);

}  // namespace qg
