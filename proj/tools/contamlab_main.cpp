// SPDX-License-Identifier: Apache-2.0
#include "contamlab/cli_io.hpp"

int main(int argc, char** argv) { return contamlab::cli_main(argc, argv); }
