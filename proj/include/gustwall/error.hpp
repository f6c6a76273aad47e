#pragma once

#include <stdexcept>
#include <string>

namespace gustwall {

// Base for every error raised by the library. The category decides how the
// command-line tool reports it (usage, bad input data, network).
class Error : public std::runtime_error {
 public:
  enum class Category { Usage, InputData, Network, Internal };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

}  // namespace gustwall
