#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "skillmoo/bundle.hpp"

namespace fixture {

inline std::filesystem::path dir() { return SKILLMOO_FIXTURES; }
inline std::filesystem::path sim_task() { return dir() / "tasks" / "sim_task.json"; }
inline std::filesystem::path noisy_task() { return dir() / "tasks" / "sim_task_noisy.json"; }
inline std::filesystem::path bundle8() { return dir() / "bundle8"; }

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Removes itself on scope exit.
class TempDir {
public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "skillmoo-test-XXXXXX").string();
    path_ = mkdtemp(tmpl.data());
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
  std::filesystem::path path_;
};

inline skillmoo::Skill skill(std::string id, std::string body, std::string name = {}, std::string desc = {}) {
  if (name.empty()) name = id;
  if (desc.empty()) desc = "about " + id;
  return skillmoo::Skill{std::move(id), std::move(name), std::move(desc), std::move(body)};
}

inline skillmoo::SkillBundle bundle(std::vector<skillmoo::Skill> skills, std::string id = "b0") {
  return skillmoo::SkillBundle{std::move(id), std::move(skills), std::nullopt};
}

}  // namespace fixture
