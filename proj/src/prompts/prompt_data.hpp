// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace dialogtune::prompts {

// Criterion rubrics, verbatim from data/geval/*.txt.
extern const char* const kCoherence;
extern const char* const kConsistency;
extern const char* const kFluency;
extern const char* const kRelevance;

// Default system prompt for the base variant.
extern const char* const kBaseSystemPrompt;

}  // namespace dialogtune::prompts
