#include "skillmoo/util.hpp"

#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>

#include "skillmoo/error.hpp"

namespace skillmoo {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::UnknownTarget: return "UnknownTarget";
    case ErrorKind::InvalidPermutation: return "InvalidPermutation";
    case ErrorKind::InvalidEdit: return "InvalidEdit";
    case ErrorKind::EmptyResult: return "EmptyResult";
    case ErrorKind::MalformedManifest: return "MalformedManifest";
    case ErrorKind::MissingSkillFile: return "MissingSkillFile";
    case ErrorKind::DuplicateSkillId: return "DuplicateSkillId";
    case ErrorKind::InvalidTask: return "InvalidTask";
    case ErrorKind::EvaluationTimeout: return "EvaluationTimeout";
    case ErrorKind::VerifierCrash: return "VerifierCrash";
    case ErrorKind::EndpointError: return "EndpointError";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::ProposerFailure: return "ProposerFailure";
    case ErrorKind::NoValidOperation: return "NoValidOperation";
    case ErrorKind::ZeroBaseline: return "ZeroBaseline";
    case ErrorKind::MissingBaseline: return "MissingBaseline";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Config: return "Config";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

std::vector<std::string_view> split_tokens(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.push_back(text.substr(start, i - start));
  }
  return out;
}

std::size_t count_tokens(std::string_view text) {
  std::size_t n = 0;
  bool in_token = false;
  for (char c : text) {
    bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_token) ++n;
    in_token = !space;
  }
  return n;
}

std::string normalize_word(std::string_view token) {
  std::size_t b = 0;
  std::size_t e = token.size();
  auto punct = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; };
  while (b < e && punct(token[b])) ++b;
  while (e > b && punct(token[e - 1])) --e;
  std::string out;
  out.reserve(e - b);
  for (std::size_t i = b; i < e; ++i) {
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(token[i]))));
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t counter) {
  return splitmix64(splitmix64(master ^ fnv1a64(stream)) + counter);
}

double unit_interval_signed(std::uint64_t bits) {
  double u = static_cast<double>(bits >> 11) * 0x1.0p-53;  // [0, 1)
  return 2.0 * u - 1.0;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string utc_timestamp() {
  using namespace std::chrono;
  auto now = system_clock::now();
  auto secs = system_clock::to_time_t(now);
  auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03lldZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                static_cast<long long>(ms));
  return buf;
}

}  // namespace skillmoo
