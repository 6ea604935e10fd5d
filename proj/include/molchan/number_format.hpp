#ifndef MOLCHAN_NUMBER_FORMAT_HPP
#define MOLCHAN_NUMBER_FORMAT_HPP

#include <string>
#include <string_view>

namespace molchan {

/// Shortest decimal text that parses back to exactly `value`.
std::string format_shortest(double value);

/// Strict decimal parse of the whole field (surrounding blanks allowed).
/// Throws std::invalid_argument when the field is not a finite number.
double parse_decimal(std::string_view field);

/// Strict integer parse of the whole field.
long long parse_integer(std::string_view field);

} // namespace molchan

#endif
