#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace toneshift::text {

// Lenient UTF-8 decoding: invalid sequences decode to U+FFFD.
std::u32string decode_utf8(std::string_view s);
std::string encode_utf8(std::u32string_view s);
void append_utf8(std::string& out, char32_t cp);
size_t code_point_count(std::string_view s);

// Whitespace as understood by Python's str.split() / str.isspace().
bool is_space(char32_t cp);
std::vector<std::string> split_whitespace(std::string_view s);
std::string_view trim(std::string_view s);

// Full Unicode lowercase mapping (ICU root locale), matching Python str.lower().
std::string to_lower(std::string_view s);
// Python str.isupper(): at least one cased character and no lowercase or
// titlecase characters.
bool is_upper(std::string_view s);

// Decodes the HTML entities forum dumps carry (&amp; &lt; &gt; &quot; &apos;
// &#39; &nbsp; and numeric forms). Unknown named entities are left verbatim.
std::string html_unescape(std::string_view s);

}  // namespace toneshift::text
