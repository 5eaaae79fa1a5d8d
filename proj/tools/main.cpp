// Copyright 2026 The Climber-Pilot Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli_app.hpp"

int main(int argc, char** argv) { return climber::cli::run(argc, argv); }
