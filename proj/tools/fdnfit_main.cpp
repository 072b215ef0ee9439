// Copyright 2026 The fdnfit Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "fdnfit/cli.hpp"

int main(int argc, char** argv) { return fdnfit::cli::run(argc, argv); }
