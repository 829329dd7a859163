#pragma once

#include "tiermem/embedder.hpp"
#include "tiermem/errors.hpp"
#include "tiermem/eval.hpp"
#include "tiermem/gateway.hpp"
#include "tiermem/orchestrator.hpp"
#include "tiermem/page_store.hpp"
#include "tiermem/prompts.hpp"
#include "tiermem/research.hpp"
#include "tiermem/router.hpp"
#include "tiermem/summary_index.hpp"
#include "tiermem/text.hpp"
#include "tiermem/tokens.hpp"
#include "tiermem/writeback.hpp"
