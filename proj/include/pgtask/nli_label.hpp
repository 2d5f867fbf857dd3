#pragma once

#include <array>
#include <string_view>

namespace pgtask {

/// Three-way entailment label. The declaration order is also the argmax
/// tie-break order: on an exact tie the earlier label wins.
enum class NliLabel : int { Contradiction = 0, Neutral = 1, Entailment = 2 };

inline constexpr std::array<NliLabel, 3> kAllLabels = {NliLabel::Contradiction, NliLabel::Neutral,
                                                       NliLabel::Entailment};

inline constexpr std::size_t index_of(NliLabel l) { return static_cast<std::size_t>(l); }

inline constexpr std::string_view short_name(NliLabel l) {
    switch (l) {
        case NliLabel::Contradiction: return "C";
        case NliLabel::Neutral: return "N";
        case NliLabel::Entailment: return "E";
    }
    return "N";
}

inline constexpr std::string_view long_name(NliLabel l) {
    switch (l) {
        case NliLabel::Contradiction: return "contradiction";
        case NliLabel::Neutral: return "neutral";
        case NliLabel::Entailment: return "entailment";
    }
    return "neutral";
}

}  // namespace pgtask
