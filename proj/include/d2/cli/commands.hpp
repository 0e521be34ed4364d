#pragma once

#include <optional>
#include <string>
#include <vector>

namespace d2::cli {

struct CommonOptions {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::optional<unsigned long long> seed;
  std::optional<int> samples;
  std::string estimator;
  std::vector<int> ns;
};

int cmd_train(const CommonOptions& o);
int cmd_eval(const CommonOptions& o);
int cmd_sample(const CommonOptions& o);
int cmd_dn_sweep(const CommonOptions& o);
int cmd_verify(const CommonOptions& o);

// Parses argv and dispatches; returns the process exit code.
int run(int argc, char** argv);

}  // namespace d2::cli
