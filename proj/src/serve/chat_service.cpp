// Copyright (c) 2026, dialogtune contributors
// SPDX-License-Identifier: Apache-2.0

#include "serve/chat_service.hpp"

#include <algorithm>

#include "common/error.hpp"
#include "common/hash.hpp"
#include "common/rng.hpp"
#include "prompts/prompt_data.hpp"

namespace dialogtune::serve {
namespace {

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

const char* role_name(dataset::Role role) {
    switch (role) {
        case dataset::Role::kSystem: return "system";
        case dataset::Role::kUser: return "user";
        case dataset::Role::kAssistant: return "assistant";
    }
    return "user";
}

dataset::Role parse_role(const std::string& name) {
    if (name == "system") return dataset::Role::kSystem;
    if (name == "assistant") return dataset::Role::kAssistant;
    require(name == "user", ErrorCode::kInvalidArgument, "unknown role " + name);
    return dataset::Role::kUser;
}

// Owns a backend so the generator's reference stays valid.
class OwningBackendGenerator final : public ResponseGenerator {
public:
    explicit OwningBackendGenerator(std::unique_ptr<train::ModelBackend> backend)
        : backend_(std::move(backend)), inner_(*backend_) {}
    Generation generate(const std::vector<dataset::ChatTurn>& history, const GenerationParams& params,
                        std::uint64_t seed, Deadline deadline) override {
        return inner_.generate(history, params, seed, deadline);
    }

private:
    std::unique_ptr<train::ModelBackend> backend_;
    BackendGenerator inner_;
};

}  // namespace

struct ChatService::Slot {
    std::mutex busy;  // held for the duration of one generation
    std::mutex state_mutex;
    ConversationState state;
};

Json to_json(const Message& m) {
    Json out{{"role", role_name(m.role)}, {"text", m.text}, {"timestamp_ms", m.timestamp_ms}};
    out["variant"] = m.variant ? Json(to_string(*m.variant)) : Json(nullptr);
    out["params"] = m.params ? to_json(*m.params) : Json(nullptr);
    if (m.role == dataset::Role::kAssistant) {
        out["token_count"] = m.token_count;
    }
    return out;
}

Message message_from_json(const Json& v) {
    Message m;
    m.role = parse_role(v.at("role").get<std::string>());
    m.text = v.at("text").get<std::string>();
    m.timestamp_ms = v.value("timestamp_ms", std::int64_t{0});
    if (v.contains("variant") && !v["variant"].is_null()) {
        m.variant = parse_variant(v["variant"].get<std::string>());
    }
    if (v.contains("params") && !v["params"].is_null()) {
        m.params = params_from_json(v["params"]);
    }
    m.token_count = v.value("token_count", std::size_t{0});
    return m;
}

Json to_json(const ConversationState& s) {
    Json messages = Json::array();
    for (const auto& m : s.messages) {
        messages.push_back(to_json(m));
    }
    Json audit = Json::array();
    for (const auto& m : s.audit_trail) {
        audit.push_back(to_json(m));
    }
    return Json{{"conversation_id", s.conversation_id},
                {"created_ms", s.created_ms},
                {"messages", std::move(messages)},
                {"audit_trail", std::move(audit)}};
}

ConversationState conversation_from_json(const Json& v) {
    ConversationState s;
    s.conversation_id = v.at("conversation_id").get<std::string>();
    s.created_ms = v.value("created_ms", std::int64_t{0});
    for (const auto& m : v.at("messages")) {
        s.messages.push_back(message_from_json(m));
    }
    for (const auto& m : v.at("audit_trail")) {
        s.audit_trail.push_back(message_from_json(m));
    }
    return s;
}

bool roles_alternate(const std::vector<Message>& messages) {
    std::size_t i = 0;
    if (!messages.empty() && messages[0].role == dataset::Role::kSystem) {
        i = 1;
    }
    for (std::size_t k = 0; i < messages.size(); ++i, ++k) {
        const auto expected = k % 2 == 0 ? dataset::Role::kUser : dataset::Role::kAssistant;
        if (messages[i].role != expected) {
            return false;
        }
    }
    return true;
}

std::map<ModelVariant, VariantSpec> default_variants(const std::filesystem::path& sft_checkpoint,
                                                     const std::filesystem::path& dpo_checkpoint) {
    return {{ModelVariant::kBase, {{}, std::string(prompts::kBaseSystemPrompt)}},
            {ModelVariant::kSft, {sft_checkpoint, std::nullopt}},
            {ModelVariant::kDpo, {dpo_checkpoint, std::nullopt}}};
}

GeneratorFactory backend_generator_factory(const ServiceConfig& config) {
    return [backend = config.backend, load = config.load](ModelVariant variant,
                                                          const VariantSpec& spec) -> std::unique_ptr<ResponseGenerator> {
        if (!spec.checkpoint.empty() && !std::filesystem::exists(spec.checkpoint / "adapter.bin")) {
            fail(ErrorCode::kUnavailable, std::string("variant ") + to_string(variant) +
                                              ": missing checkpoint " + (spec.checkpoint / "adapter.bin").string());
        }
        auto model = train::make_backend(backend);
        model->load(load);
        if (spec.checkpoint.empty()) {
            model->set_adapters_enabled(false);
        } else {
            train::load_checkpoint(spec.checkpoint, *model);
        }
        model->set_mode(train::Mode::kEval);
        return std::make_unique<OwningBackendGenerator>(std::move(model));
    };
}

ChatService::ChatService(ServiceConfig config, GeneratorFactory factory)
    : config_(std::move(config)), factory_(std::move(factory)) {
    validate(config_.default_params);
    require(static_cast<bool>(factory_), ErrorCode::kConfig, "chat service needs a generator factory");
    for (auto v : kAllVariants) {
        const auto it = config_.variants.find(v);
        status_[v] = {v, false, it == config_.variants.end() ? "" : it->second.checkpoint.string(), "not loaded"};
    }
    if (config_.state_dir && std::filesystem::exists(*config_.state_dir)) {
        for (const auto& entry : std::filesystem::directory_iterator(*config_.state_dir)) {
            if (entry.path().extension() == ".json") {
                auto slot = std::make_shared<Slot>();
                slot->state = conversation_from_json(read_json(entry.path()));
                conversations_.emplace(slot->state.conversation_id, std::move(slot));
            }
        }
    }
}

ChatService::~ChatService() = default;

void ChatService::load_models() {
    std::call_once(load_once_, [this] {
        std::map<ModelVariant, std::unique_ptr<ResponseGenerator>> loaded;
        std::map<ModelVariant, VariantStatus> status;
        for (auto v : kAllVariants) {
            VariantStatus st{v, false, "", ""};
            const auto it = config_.variants.find(v);
            if (it == config_.variants.end()) {
                st.error = std::string("variant ") + to_string(v) + " is not configured";
            } else {
                st.checkpoint = it->second.checkpoint.string();
                try {
                    loaded[v] = factory_(v, it->second);
                    st.available = true;
                } catch (const std::exception& e) {
                    st.error = e.what();
                }
            }
            status[v] = st;
        }
        std::lock_guard lock(mutex_);
        generators_ = std::move(loaded);
        status_ = std::move(status);
        ready_ = true;
    });
}

bool ChatService::ready() const {
    std::lock_guard lock(mutex_);
    return ready_;
}

std::vector<VariantStatus> ChatService::list_variants() const {
    std::lock_guard lock(mutex_);
    std::vector<VariantStatus> out;
    for (const auto& [v, st] : status_) {
        out.push_back(st);
    }
    return out;
}

ConversationState ChatService::create_conversation() {
    auto slot = std::make_shared<Slot>();
    std::lock_guard lock(mutex_);
    const std::string salt = std::to_string(now_ms()) + "/" + std::to_string(next_id_++) + "/" +
                             std::to_string(config_.seed) + "/" + std::to_string(conversations_.size());
    std::string id = "c-" + sha256_hex(salt).substr(0, 16);
    slot->state.conversation_id = id;
    slot->state.created_ms = now_ms();
    conversations_.emplace(id, slot);
    persist(slot->state);
    return slot->state;
}

std::shared_ptr<ChatService::Slot> ChatService::slot(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = conversations_.find(id);
    if (it == conversations_.end()) {
        fail(ErrorCode::kNotFound, "unknown conversation " + id);
    }
    return it->second;
}

ConversationState ChatService::get_conversation(const std::string& id) const {
    auto s = slot(id);
    std::lock_guard lock(s->state_mutex);
    return s->state;
}

Generation ChatService::run(ModelVariant variant, std::vector<dataset::ChatTurn> history, const GenerationParams& params,
                            std::uint64_t seed) {
    load_models();
    ResponseGenerator* generator = nullptr;
    std::optional<std::string> system_prompt;
    {
        std::lock_guard lock(mutex_);
        const auto it = generators_.find(variant);
        if (it == generators_.end()) {
            fail(ErrorCode::kUnavailable, std::string("variant ") + to_string(variant) +
                                              " is unavailable: " + status_[variant].error);
        }
        generator = it->second.get();
        system_prompt = config_.variants.at(variant).system_prompt;
    }
    if (system_prompt) {
        history.insert(history.begin(), {dataset::Role::kSystem, *system_prompt});
    }
    const auto deadline = std::chrono::steady_clock::now() + config_.generation_timeout;
    return generator->generate(history, params, seed, deadline);
}

namespace {

std::vector<dataset::ChatTurn> turns_of(const std::vector<Message>& messages, std::size_t count) {
    std::vector<dataset::ChatTurn> turns;
    for (std::size_t i = 0; i < count; ++i) {
        turns.push_back({messages[i].role, messages[i].text});
    }
    return turns;
}

class BusyGuard {
public:
    BusyGuard(std::mutex& m, BusyPolicy policy) : lock_(m, std::defer_lock) {
        if (policy == BusyPolicy::kQueue) {
            lock_.lock();
        } else if (!lock_.try_lock()) {
            fail(ErrorCode::kLocked, "a generation is already in flight for this conversation");
        }
    }

private:
    std::unique_lock<std::mutex> lock_;
};

}  // namespace

Message ChatService::chat(const std::string& id, const std::string& user_text,
                          const std::optional<GenerationParams>& params, std::optional<ModelVariant> variant) {
    require(!user_text.empty(), ErrorCode::kInvalidArgument, "message text must be non-empty");
    const GenerationParams p = params.value_or(config_.default_params);
    validate(p);
    const ModelVariant v = variant.value_or(config_.default_variant);
    auto s = slot(id);
    BusyGuard busy(s->busy, config_.busy_policy);

    std::vector<Message> snapshot;
    {
        std::lock_guard lock(s->state_mutex);
        snapshot = s->state.messages;
    }
    Message user{dataset::Role::kUser, user_text, std::nullopt, std::nullopt, 0, now_ms()};
    snapshot.push_back(user);
    const std::uint64_t seed = derive_seed(derive_seed(config_.seed, stable_hash64(id)), snapshot.size());
    // Generation happens before anything is stored: a failure leaves state untouched.
    const Generation g = run(v, turns_of(snapshot, snapshot.size()), p, seed);
    Message reply{dataset::Role::kAssistant, g.text, v, p, g.token_count, now_ms()};

    std::lock_guard lock(s->state_mutex);
    s->state.messages.push_back(std::move(user));
    s->state.messages.push_back(reply);
    persist(s->state);
    return reply;
}

Message ChatService::regenerate_last(const std::string& id, ModelVariant variant,
                                     const std::optional<GenerationParams>& params) {
    auto s = slot(id);
    BusyGuard busy(s->busy, config_.busy_policy);
    std::vector<Message> snapshot;
    std::size_t regenerations = 0;
    {
        std::lock_guard lock(s->state_mutex);
        snapshot = s->state.messages;
        regenerations = s->state.audit_trail.size();
    }
    if (snapshot.empty() || snapshot.back().role != dataset::Role::kAssistant) {
        fail(ErrorCode::kConflict, "conversation " + id + " has no assistant message to regenerate");
    }
    const Message& previous = snapshot.back();
    const GenerationParams p = params.value_or(previous.params.value_or(config_.default_params));
    validate(p);
    const std::uint64_t seed = derive_seed(derive_seed(config_.seed, stable_hash64(id)),
                                           (regenerations + 1) * 1000003ULL + snapshot.size());
    const Generation g = run(variant, turns_of(snapshot, snapshot.size() - 1), p, seed);
    Message reply{dataset::Role::kAssistant, g.text, variant, p, g.token_count, now_ms()};

    std::lock_guard lock(s->state_mutex);
    s->state.audit_trail.push_back(s->state.messages.back());
    s->state.messages.back() = reply;
    persist(s->state);
    return reply;
}

void ChatService::persist(const ConversationState& state) const {
    if (config_.state_dir) {
        write_json(*config_.state_dir / (state.conversation_id + ".json"), to_json(state));
    }
}

}  // namespace dialogtune::serve
