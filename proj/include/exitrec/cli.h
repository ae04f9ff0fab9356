// Copyright 2026 The exitrec Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef EXITREC_CLI_H_
#define EXITREC_CLI_H_

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "exitrec/model.h"
#include "exitrec/record.h"

namespace exitrec {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitNotConverged = 4,
  kExitParse = 5,
};

// Runs one command line; `args` excludes the program name.
int RunCli(const std::vector<std::string>& args, std::ostream& out,
           std::ostream& err);

// Candidate file for `explain`: a header whose first columns are the record
// feature names, then one integer row per candidate. Extra trailing columns
// are ignored. Throws ParseError.
std::vector<InteractionRecord> ReadCandidates(const std::filesystem::path& path);

struct ExplainRow {
  std::size_t candidate = 0;  // 1-based position in the input
  std::int32_t item_id = 0;
  Prediction prediction;
  std::size_t rank = 0;  // 1-based, by clamped score
  bool exposed = false;
};

// Rows in input order. Ranks break ties by input position.
std::vector<ExplainRow> Explain(const ExitModel& model,
                                const std::vector<InteractionRecord>& candidates,
                                std::size_t cutoff);
std::string FormatExplain(const std::vector<ExplainRow>& rows, int precision);

}  // namespace exitrec

#endif  // EXITREC_CLI_H_
