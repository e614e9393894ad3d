// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "common/jsonl.hpp"
#include "common/variant.hpp"
#include "dataset/dataset.hpp"
#include "serve/generator.hpp"
#include "serve/sampling.hpp"
#include "train/backend.hpp"

namespace dialogtune::serve {

struct Message {
    dataset::Role role = dataset::Role::kUser;
    std::string text;
    std::optional<ModelVariant> variant;   // assistant messages only
    std::optional<GenerationParams> params;  // assistant messages only
    std::size_t token_count = 0;
    std::int64_t timestamp_ms = 0;
};

struct ConversationState {
    std::string conversation_id;
    std::vector<Message> messages;
    /// Assistant messages replaced by regeneration, oldest first.
    std::vector<Message> audit_trail;
    std::int64_t created_ms = 0;
};

Json to_json(const Message& message);
Message message_from_json(const Json& value);
Json to_json(const ConversationState& state);
ConversationState conversation_from_json(const Json& value);

/// True iff roles alternate user/assistant (after an optional leading
/// system message) and the sequence starts with a user turn.
bool roles_alternate(const std::vector<Message>& messages);

struct VariantSpec {
    /// Adapter checkpoint directory; empty means the bare base model.
    std::filesystem::path checkpoint;
    std::optional<std::string> system_prompt;
};

enum class BusyPolicy { kReject, kQueue };

struct ServiceConfig {
    train::BackendLoadSpec load;
    std::string backend = "toy";
    std::map<ModelVariant, VariantSpec> variants;
    GenerationParams default_params;
    ModelVariant default_variant = ModelVariant::kDpo;
    BusyPolicy busy_policy = BusyPolicy::kReject;
    std::chrono::milliseconds generation_timeout{30000};
    std::optional<std::filesystem::path> state_dir;  // file-backed conversations
    std::uint64_t seed = 0;
};

/// Default variant table: base with the dialogue system prompt and no
/// adapter; sft and dpo with their checkpoints and no system prompt.
std::map<ModelVariant, VariantSpec> default_variants(const std::filesystem::path& sft_checkpoint,
                                                     const std::filesystem::path& dpo_checkpoint);

/// Builds a generator for one variant or throws Error(kUnavailable) naming
/// what is missing.
using GeneratorFactory = std::function<std::unique_ptr<ResponseGenerator>(ModelVariant, const VariantSpec&)>;

/// Loads a backend per variant and applies its checkpoint.
GeneratorFactory backend_generator_factory(const ServiceConfig& config);

struct VariantStatus {
    ModelVariant variant = ModelVariant::kBase;
    bool available = false;
    std::string checkpoint;
    std::string error;
};

class ChatService {
public:
    ChatService(ServiceConfig config, GeneratorFactory factory);
    ~ChatService();

    /// Exactly one loader runs even under concurrent first requests.
    void load_models();
    bool ready() const;
    std::vector<VariantStatus> list_variants() const;

    ConversationState create_conversation();
    ConversationState get_conversation(const std::string& id) const;

    /// Returns the stored assistant message.
    Message chat(const std::string& id, const std::string& user_text, const std::optional<GenerationParams>& params,
                 std::optional<ModelVariant> variant);
    /// Replaces the latest assistant message; `params` defaults to those the
    /// replaced message used.
    Message regenerate_last(const std::string& id, ModelVariant variant,
                            const std::optional<GenerationParams>& params = std::nullopt);

    const ServiceConfig& config() const { return config_; }

private:
    struct Slot;
    std::shared_ptr<Slot> slot(const std::string& id) const;
    Generation run(ModelVariant variant, std::vector<dataset::ChatTurn> history, const GenerationParams& params,
                   std::uint64_t seed);
    void persist(const ConversationState& state) const;

    ServiceConfig config_;
    GeneratorFactory factory_;
    std::once_flag load_once_;
    mutable std::mutex mutex_;
    bool ready_ = false;
    std::map<ModelVariant, std::unique_ptr<ResponseGenerator>> generators_;
    std::map<ModelVariant, VariantStatus> status_;
    std::map<std::string, std::shared_ptr<Slot>> conversations_;
    std::uint64_t next_id_ = 0;
};

}  // namespace dialogtune::serve
