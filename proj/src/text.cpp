#include "toneshift/text.hpp"

#include <algorithm>
#include <array>
#include <charconv>

#include <unicode/uchar.h>
#include <unicode/ustring.h>

namespace toneshift::text {

std::u32string decode_utf8(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  size_t i = 0;
  while (i < s.size()) {
    auto b0 = static_cast<unsigned char>(s[i]);
    char32_t cp = 0xFFFD;
    size_t len = 1;
    if (b0 < 0x80) {
      cp = b0;
    } else if ((b0 >> 5) == 0x6) {
      len = 2;
    } else if ((b0 >> 4) == 0xE) {
      len = 3;
    } else if ((b0 >> 3) == 0x1E) {
      len = 4;
    }
    if (len > 1) {
      bool ok = i + len <= s.size();
      char32_t value = b0 & (0xFF >> (len + 1));
      for (size_t k = 1; ok && k < len; ++k) {
        auto b = static_cast<unsigned char>(s[i + k]);
        if ((b >> 6) != 0x2) {
          ok = false;
          break;
        }
        value = (value << 6) | (b & 0x3F);
      }
      static constexpr std::array<char32_t, 5> kMin{0, 0, 0x80, 0x800, 0x10000};
      if (ok && value >= kMin[len] && value <= 0x10FFFF &&
          !(value >= 0xD800 && value <= 0xDFFF)) {
        cp = value;
      } else {
        len = 1;
      }
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string encode_utf8(std::u32string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t cp : s) append_utf8(out, cp);
  return out;
}

size_t code_point_count(std::string_view s) {
  size_t n = 0;
  for (char c : s) {
    if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) ++n;
  }
  return n;
}

bool is_space(char32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D:
    case 0x1C: case 0x1D: case 0x1E: case 0x1F: case 0x20:
    case 0x85: case 0xA0: case 0x1680:
    case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::string current;
  bool in_token = false;
  for (char32_t cp : decode_utf8(s)) {
    if (is_space(cp)) {
      if (in_token) {
        out.push_back(std::move(current));
        current.clear();
        in_token = false;
      }
    } else {
      append_utf8(current, cp);
      in_token = true;
    }
  }
  if (in_token) out.push_back(std::move(current));
  return out;
}

std::string_view trim(std::string_view s) {
  auto ascii_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  };
  while (!s.empty() && ascii_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && ascii_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string to_lower(std::string_view s) {
  bool ascii = std::all_of(s.begin(), s.end(),
                           [](char c) { return static_cast<unsigned char>(c) < 0x80; });
  if (ascii) {
    std::string out(s);
    for (char& c : out) {
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
  }
  UErrorCode status = U_ZERO_ERROR;
  int32_t wide_len = 0;
  u_strFromUTF8WithSub(nullptr, 0, &wide_len, s.data(), static_cast<int32_t>(s.size()), 0xFFFD,
                       nullptr, &status);
  status = U_ZERO_ERROR;
  std::u16string wide(static_cast<size_t>(wide_len), u'\0');
  u_strFromUTF8WithSub(wide.data(), wide_len, nullptr, s.data(), static_cast<int32_t>(s.size()),
                       0xFFFD, nullptr, &status);
  status = U_ZERO_ERROR;
  int32_t lower_len = u_strToLower(nullptr, 0, wide.data(), wide_len, "", &status);
  status = U_ZERO_ERROR;
  std::u16string lower(static_cast<size_t>(lower_len), u'\0');
  u_strToLower(lower.data(), lower_len, wide.data(), wide_len, "", &status);
  status = U_ZERO_ERROR;
  int32_t out_len = 0;
  u_strToUTF8(nullptr, 0, &out_len, lower.data(), lower_len, &status);
  status = U_ZERO_ERROR;
  std::string out(static_cast<size_t>(out_len), '\0');
  u_strToUTF8(out.data(), out_len, nullptr, lower.data(), lower_len, &status);
  return out;
}

bool is_upper(std::string_view s) {
  bool cased = false;
  for (char32_t cp : decode_utf8(s)) {
    auto c = static_cast<UChar32>(cp);
    if (u_hasBinaryProperty(c, UCHAR_LOWERCASE) || u_istitle(c)) return false;
    if (u_hasBinaryProperty(c, UCHAR_UPPERCASE)) cased = true;
  }
  return cased;
}

std::string html_unescape(std::string_view s) {
  struct Named {
    std::string_view name;
    char32_t cp;
  };
  static constexpr std::array<Named, 6> kNamed{{{"amp", U'&'},
                                                {"lt", U'<'},
                                                {"gt", U'>'},
                                                {"quot", U'"'},
                                                {"apos", U'\''},
                                                {"nbsp", 0xA0}}};
  std::string out;
  out.reserve(s.size());
  size_t i = 0;
  while (i < s.size()) {
    if (s[i] != '&') {
      out.push_back(s[i++]);
      continue;
    }
    size_t semi = s.find(';', i + 1);
    if (semi == std::string_view::npos || semi - i > 10) {
      out.push_back(s[i++]);
      continue;
    }
    std::string_view entity = s.substr(i + 1, semi - i - 1);
    bool decoded = false;
    if (entity.size() > 1 && entity[0] == '#') {
      uint32_t value = 0;
      const char* first = entity.data() + 1;
      const char* last = entity.data() + entity.size();
      int base = 10;
      if (*first == 'x' || *first == 'X') {
        ++first;
        base = 16;
      }
      auto res = std::from_chars(first, last, value, base);
      if (res.ec == std::errc() && res.ptr == last && value > 0 && value <= 0x10FFFF &&
          !(value >= 0xD800 && value <= 0xDFFF)) {
        append_utf8(out, static_cast<char32_t>(value));
        decoded = true;
      }
    } else {
      for (const auto& named : kNamed) {
        if (entity == named.name) {
          append_utf8(out, named.cp);
          decoded = true;
          break;
        }
      }
    }
    if (decoded) {
      i = semi + 1;
    } else {
      out.push_back(s[i++]);
    }
  }
  return out;
}

}  // namespace toneshift::text
