#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "crowdkernel/errors.hpp"

namespace crowdkernel {

using ObjectId = std::size_t;

/// "Is `head` more similar to `left` or to `right`?"
struct Triple {
  ObjectId head = 0;
  ObjectId left = 0;
  ObjectId right = 1;

  bool distinct() const { return head != left && head != right && left != right; }

  void validate() const {
    if (!distinct()) {
      throw ArgumentError("triple members must be pairwise distinct: (" + std::to_string(head) +
                          "," + std::to_string(left) + "," + std::to_string(right) + ")");
    }
  }

  friend bool operator==(const Triple&, const Triple&) = default;
};

enum class Choice : std::uint8_t { Left, Right };

inline std::string_view to_string(Choice c) { return c == Choice::Left ? "left" : "right"; }

inline Choice choice_from_string(std::string_view s) {
  if (s == "left") return Choice::Left;
  if (s == "right") return Choice::Right;
  throw ProtocolError("choice must be \"left\" or \"right\", got \"" + std::string(s) + "\"");
}

inline Choice flip(Choice c) { return c == Choice::Left ? Choice::Right : Choice::Left; }

struct TripleResponse {
  Triple triple;
  Choice choice = Choice::Left;
  std::string worker;
  bool gold = false;
  int round = 0;

  /// The member rated more similar to the head.
  ObjectId winner() const { return choice == Choice::Left ? triple.left : triple.right; }
  ObjectId loser() const { return choice == Choice::Left ? triple.right : triple.left; }

  friend bool operator==(const TripleResponse&, const TripleResponse&) = default;
};

}  // namespace crowdkernel
